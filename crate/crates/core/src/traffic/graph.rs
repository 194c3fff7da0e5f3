use serde::{Deserialize, Serialize};

use super::TrafficError;
use crate::domain::Violation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub corridor: usize,
    /// Length of the segment represented by this detector, km.
    pub length_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

/// A truck demand generation zone attached to one or more nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub name: String,
    pub nodes: Vec<usize>,
}

/// Directed detector graph with weighted adjacency and demand centroids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkGraph {
    pub corridors: Vec<String>,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub centroids: Vec<Centroid>,
}

/// Row-normalised in-adjacency in compressed row form: row `i` lists the
/// upstream nodes of `i` with weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl NormalizedAdjacency {
    /// `y = Â x` for a single node signal.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (yi, row) in y.iter_mut().zip(&self.rows) {
            *yi = row.iter().map(|&(j, w)| w * x[j]).sum();
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|(_, w)| w).sum()).collect()
    }
}

impl LinkGraph {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.nodes.len();
        if n == 0 {
            out.push(Violation {
                path: "graph.nodes".into(),
                message: "graph has no nodes".into(),
            });
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.corridor >= self.corridors.len() {
                out.push(Violation {
                    path: format!("graph.nodes[{i}].corridor"),
                    message: "unknown corridor".into(),
                });
            }
            if !(node.length_km.is_finite() && node.length_km > 0.0) {
                out.push(Violation {
                    path: format!("graph.nodes[{i}].length_km"),
                    message: "must be > 0".into(),
                });
            }
        }
        for (k, e) in self.edges.iter().enumerate() {
            if e.from >= n || e.to >= n {
                out.push(Violation {
                    path: format!("graph.edges[{k}]"),
                    message: "endpoint out of range".into(),
                });
            }
            if !(e.weight.is_finite() && e.weight >= 0.0) {
                out.push(Violation {
                    path: format!("graph.edges[{k}].weight"),
                    message: "adjacency weights must be >= 0".into(),
                });
            }
        }
        for (c, centroid) in self.centroids.iter().enumerate() {
            if centroid.nodes.is_empty() || centroid.nodes.iter().any(|&i| i >= n) {
                out.push(Violation {
                    path: format!("graph.centroids[{c}]"),
                    message: "attachment nodes must exist".into(),
                });
            }
        }
        out
    }

    pub fn check(&self) -> Result<(), TrafficError> {
        match self.validate().into_iter().next() {
            None => Ok(()),
            Some(v) => Err(TrafficError::InvalidGraph(format!("{}: {}", v.path, v.message))),
        }
    }

    pub fn normalized_adjacency(&self) -> NormalizedAdjacency {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            if e.weight > 0.0 {
                rows[e.to].push((e.from, e.weight));
            }
        }
        for row in &mut rows {
            row.sort_by_key(|(j, _)| *j);
            let sum: f64 = row.iter().map(|(_, w)| w).sum();
            if sum > 0.0 {
                row.iter_mut().for_each(|(_, w)| *w /= sum);
            }
        }
        NormalizedAdjacency { rows }
    }

    /// Spreads one value per centroid evenly over its attachment nodes.
    pub fn centroid_injection(&self, demand: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (c, centroid) in self.centroids.iter().enumerate() {
            let share = demand.get(c).copied().unwrap_or(0.0) / centroid.nodes.len() as f64;
            for &i in &centroid.nodes {
                out[i] += share;
            }
        }
    }

    /// Hop distance from `source` following edge direction; `None` if unreachable.
    pub fn hop_distances(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.nodes.len()];
        let mut frontier = vec![source];
        dist[source] = Some(0);
        let mut d = 0;
        while !frontier.is_empty() {
            d += 1;
            let mut next = Vec::new();
            for &u in &frontier {
                for e in self.edges.iter().filter(|e| e.from == u && e.weight > 0.0) {
                    if dist[e.to].is_none() {
                        dist[e.to] = Some(d);
                        next.push(e.to);
                    }
                }
            }
            frontier = next;
        }
        dist
    }

    /// A straight chain `0 → 1 → … → n-1` on one corridor.
    pub fn chain(n: usize, length_km: f64) -> Self {
        Self {
            corridors: vec!["chain".into()],
            nodes: (0..n)
                .map(|i| Node {
                    id: format!("n{i}"),
                    corridor: 0,
                    length_km,
                })
                .collect(),
            edges: (1..n)
                .map(|i| Edge {
                    from: i - 1,
                    to: i,
                    weight: 1.0,
                })
                .collect(),
            centroids: vec![Centroid {
                name: "port".into(),
                nodes: vec![0],
            }],
        }
    }

    /// Port hub with outbound corridors. Each corridor is a chain of
    /// `ceil(length / segment)` detectors fed by the hub; each centroid
    /// attaches to the hub and to the first detector of every corridor.
    pub fn port_network(corridors: &[(&str, f64)], segment_km: f64, n_centroids: usize) -> Self {
        let mut nodes = vec![Node {
            id: "hub".into(),
            corridor: 0,
            length_km: segment_km,
        }];
        let mut edges = Vec::new();
        let mut heads = Vec::new();
        for (c, (_, km)) in corridors.iter().enumerate() {
            let count = ((km / segment_km) - 1e-9).ceil().max(1.0) as usize;
            let mut prev = 0usize;
            for k in 0..count {
                let idx = nodes.len();
                let remaining = km - k as f64 * segment_km;
                nodes.push(Node {
                    id: format!("{}-{k}", corridors[c].0),
                    corridor: c,
                    length_km: remaining.min(segment_km),
                });
                if k == 0 {
                    heads.push(idx);
                }
                edges.push(Edge {
                    from: prev,
                    to: idx,
                    weight: 1.0,
                });
                prev = idx;
            }
        }
        let centroids = (0..n_centroids)
            .map(|c| {
                let mut attach = vec![0];
                attach.extend(&heads);
                Centroid {
                    name: format!("zone-{c}"),
                    nodes: attach,
                }
            })
            .collect();
        Self {
            corridors: corridors.iter().map(|(n, _)| n.to_string()).collect(),
            nodes,
            edges,
            centroids,
        }
    }

    /// The five motorway corridors around the port at 600 m resolution
    /// (166 detectors including the hub).
    pub fn rotterdam_like(n_centroids: usize) -> Self {
        Self::port_network(
            &[
                ("A15", 55.0),
                ("A4", 4.8),
                ("A16N", 7.1),
                ("A16S", 20.1),
                ("A29", 11.4),
            ],
            0.6,
            n_centroids,
        )
    }

    pub fn nodes_of_corridor(&self, corridor: usize) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.corridor == corridor)
            .map(|(i, _)| i)
    }
}
