//! Versioned output files. Every file is listed with its SHA-256 in
//! `manifest.json`; nothing written depends on wall-clock time, so equal
//! inputs give byte-identical directories.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use tsms_core::orchestrator::{pareto_tradeoff_curve, DayRun};

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub artifact_version: u32,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn to_json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

pub struct ArtifactDir {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl ArtifactDir {
    pub fn create(dir: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn bytes(&mut self, name: &str, data: &[u8]) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, data).with_context(|| format!("writing {}", path.display()))?;
        self.files.retain(|f| f.name != name);
        self.files.push(FileEntry {
            name: name.into(),
            sha256: sha256_hex(data),
        });
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        self.bytes(name, to_json(value)?.as_bytes())
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = T>) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in rows {
            w.serialize(row)?;
        }
        let data = w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
        self.bytes(name, &data)
    }

    pub fn finish(self, command: &str, scenario_hash: Option<String>, seed: Option<u64>) -> anyhow::Result<Manifest> {
        let mut files = self.files;
        files.sort_by(|a, b| a.name.cmp(&b.name));
        let manifest = Manifest {
            tool: "tsms".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            artifact_version: ARTIFACT_VERSION,
            command: command.into(),
            scenario_hash,
            seed,
            files,
        };
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, to_json(&manifest)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}

#[derive(Serialize)]
struct FrontRow {
    hour: u32,
    index: usize,
    z1: f64,
    z2_eur: f64,
    z3_eur: f64,
    z4_eur: f64,
    shifts: usize,
    feasible: bool,
}

#[derive(Serialize)]
struct ShiftRow<'a> {
    group: &'a str,
    category: &'a str,
    share_pct: f64,
}

#[derive(Serialize)]
struct CorridorRow<'a> {
    corridor: &'a str,
    base_eur: f64,
    optimized_eur: f64,
    gain_eur: f64,
}

/// Report, both outcomes and the plot-ready tables of a day run.
pub fn write_day(out: &mut ArtifactDir, run: &DayRun) -> anyhow::Result<()> {
    out.json("report.json", &run.report)?;
    out.json("base.json", &run.base)?;
    out.json("optimized.json", &run.optimized)?;
    out.csv("slots.csv", &run.report.slots)?;
    let fronts: Vec<_> = run.fronts.iter().map(|f| f.front.clone()).collect();
    out.csv("tradeoff.csv", pareto_tradeoff_curve(&fronts))?;
    out.csv(
        "front.csv",
        run.fronts.iter().flat_map(|f| {
            f.front.members.iter().enumerate().map(move |(index, m)| FrontRow {
                hour: f.hour,
                index,
                z1: m.objectives.z1_disutility,
                z2_eur: m.objectives.z2_waiting_eur,
                z3_eur: m.objectives.z3_crane_eur,
                z4_eur: m.objectives.z4_traffic_eur,
                shifts: m.shifts,
                feasible: m.feasible,
            })
        }),
    )?;
    let shifts = &run.report.shifts;
    out.csv(
        "shifts.csv",
        shifts
            .by_commodity
            .iter()
            .map(|(k, v)| ("commodity", k, *v))
            .chain(shifts.by_container_type.iter().map(|(k, v)| ("container_type", k, *v)))
            .map(|(group, category, share_pct)| ShiftRow {
                group,
                category,
                share_pct,
            }),
    )?;
    out.csv(
        "traffic.csv",
        run.base
            .corridors
            .iter()
            .zip(run.base.traffic_eur.iter().zip(&run.optimized.traffic_eur))
            .map(|(c, (b, o))| CorridorRow {
                corridor: c,
                base_eur: *b,
                optimized_eur: *o,
                gain_eur: b - o,
            }),
    )?;
    out.csv(
        "committed.csv",
        run.state.committed.iter().flat_map(|w| w.assignments.iter()),
    )?;
    Ok(())
}
