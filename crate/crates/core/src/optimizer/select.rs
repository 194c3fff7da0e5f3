use serde::{Deserialize, Serialize};

use super::nsga2::FrontMember;
use super::OptimizerError;
use crate::domain::CostVector;

/// How one solution is picked from a front.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// Largest saving of z2 + z3 + z4 against the base; z1 is ignored.
    MaxMonetaryGain,
    MinZ1,
    MinZ2,
    MinZ3,
    MinZ4,
    /// Smallest weighted sum of the four objectives.
    Weighted([f64; 4]),
}

impl std::str::FromStr for SelectionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "max_monetary_gain" | "max-monetary-gain" => Ok(Self::MaxMonetaryGain),
            "min_z1" => Ok(Self::MinZ1),
            "min_z2" => Ok(Self::MinZ2),
            "min_z3" => Ok(Self::MinZ3),
            "min_z4" => Ok(Self::MinZ4),
            other => Err(format!("unknown selection policy {other}")),
        }
    }
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

/// Picks a member by `policy`. Ties in the policy score go to fewer shifted
/// requests, then to the lower z1. Exact euro ties mostly come from requests
/// trading slots, which changes no cost; such trades are not worth making.
pub fn select_solution<'a>(
    front: &'a [FrontMember],
    base: &CostVector,
    policy: SelectionPolicy,
) -> Result<&'a FrontMember, OptimizerError> {
    let score = |m: &FrontMember| -> f64 {
        let z = m.objectives.as_array();
        match policy {
            SelectionPolicy::MaxMonetaryGain => -(base.euro_total() - m.objectives.euro_total()),
            SelectionPolicy::MinZ1 => z[0],
            SelectionPolicy::MinZ2 => z[1],
            SelectionPolicy::MinZ3 => z[2],
            SelectionPolicy::MinZ4 => z[3],
            SelectionPolicy::Weighted(w) => z.iter().zip(w).map(|(a, b)| a * b).sum(),
        }
    };
    let mut best: Option<&FrontMember> = None;
    for m in front.iter().filter(|m| m.feasible) {
        best = Some(match best {
            None => m,
            Some(b) => {
                let (sm, sb) = (score(m), score(b));
                if near(sm, sb) {
                    let (zm, zb) = (m.objectives.z1_disutility, b.objectives.z1_disutility);
                    if m.shifts != b.shifts {
                        if m.shifts < b.shifts {
                            m
                        } else {
                            b
                        }
                    } else if zm < zb && !near(zm, zb) {
                        m
                    } else {
                        b
                    }
                } else if sm < sb {
                    m
                } else {
                    b
                }
            }
        });
    }
    best.ok_or(OptimizerError::EmptyFront)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::Solution;

    fn member(z: [f64; 4], shifts: usize) -> FrontMember {
        FrontMember {
            solution: Solution {
                slots: vec![],
                lanes: vec![],
            },
            objectives: CostVector::from_array(z),
            feasible: true,
            violations: 0,
            shifts,
        }
    }

    #[test]
    fn examples() {
        let base = CostVector::from_array([0.0, 300.0, 0.0, 0.0]);
        let one = [member([1.0, 250.0, 0.0, 0.0], 1)];
        assert_eq!(select_solution(&one, &base, SelectionPolicy::MaxMonetaryGain).unwrap(), &one[0]);
        let two = [member([9.0, 200.0, 0.0, 0.0], 1), member([1.0, 250.0, 0.0, 0.0], 1)];
        assert_eq!(select_solution(&two, &base, SelectionPolicy::MaxMonetaryGain).unwrap(), &two[0]);
        let tie = [member([5.0, 200.0, 0.0, 0.0], 2), member([3.0, 180.0, 20.0, 0.0], 2)];
        assert_eq!(select_solution(&tie, &base, SelectionPolicy::MaxMonetaryGain).unwrap(), &tie[1]);
        let tie = [member([3.0, 200.0, 0.0, 0.0], 4), member([5.0, 180.0, 20.0, 0.0], 2)];
        assert_eq!(select_solution(&tie, &base, SelectionPolicy::MaxMonetaryGain).unwrap(), &tie[1]);
        assert_eq!(select_solution(&two, &base, SelectionPolicy::MinZ1).unwrap(), &two[1]);
        assert!(matches!(
            select_solution(&[], &base, SelectionPolicy::MinZ2),
            Err(OptimizerError::EmptyFront)
        ));
        assert_eq!("max_monetary_gain".parse::<SelectionPolicy>(), Ok(SelectionPolicy::MaxMonetaryGain));
    }
}
