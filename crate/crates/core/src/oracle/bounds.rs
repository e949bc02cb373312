//! Cut-style upper bounds on uniform flow volume.

use serde::{Deserialize, Serialize};

use crate::capacities::CapacityNetwork;
use crate::error::{Error, Result};
use crate::flowcore::compensated_sum;
use crate::hypercube::{distance, Cube, Vertex};

/// The commodities of a uniform flow problem.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSet {
    /// {u, ū} for every u.
    Opp,
    /// Every unordered pair.
    All,
    Custom(Vec<(Vertex, Vertex)>),
}

impl PairSet {
    /// Unordered pairs (u < v) of the set.
    pub fn pairs(&self, cube: Cube) -> Result<Vec<(Vertex, Vertex)>> {
        let n = cube.vertex_count() as Vertex;
        Ok(match self {
            PairSet::Opp => (0..n / 2).map(|u| (u, cube.antipode(u))).collect(),
            PairSet::All => (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect(),
            PairSet::Custom(list) => {
                for &(u, v) in list {
                    cube.check_vertex(u)?;
                    cube.check_vertex(v)?;
                    if u == v {
                        return Err(Error::SameVertex(u));
                    }
                }
                list.clone()
            }
        })
    }

    /// Σ d(u,v) over the set.
    pub fn distance_sum(&self, cube: Cube) -> Result<f64> {
        let d = cube.dim() as f64;
        let n = cube.vertex_count() as f64;
        Ok(match self {
            PairSet::Opp => d * n / 2.0,
            PairSet::All => n * n * d / 4.0,
            PairSet::Custom(_) => self.pairs(cube)?.iter().map(|&(u, v)| distance(u, v) as f64).sum(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BoundReport {
    pub c_av: f64,
    /// φ ≤ c_av for antipodal pairs.
    pub opp_bound: f64,
    /// φ ≤ 2^{1−d}·c_av for all pairs.
    pub all_bound: f64,
    /// Σ d(u,v) over the requested set.
    pub distance_sum: f64,
    /// Σ c_e / Σ d(u,v) for the requested set.
    pub bound: f64,
}

/// φ·Σ d(u,v) ≤ Σ c_e, evaluated for the pair set.
pub fn upper_bounds(base: &CapacityNetwork, pairs: &PairSet) -> Result<BoundReport> {
    let cube = base.cube();
    let distance_sum = pairs.distance_sum(cube)?;
    if distance_sum == 0.0 {
        return Err(Error::InvalidParameter("pair set is empty".into()));
    }
    let total = compensated_sum(base.capacities().iter().copied());
    let c_av = total / cube.edge_count() as f64;
    Ok(BoundReport {
        c_av,
        opp_bound: c_av,
        all_bound: c_av * 2f64.powi(1 - cube.dim() as i32),
        distance_sum,
        bound: total / distance_sum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_examples() {
        let net = CapacityNetwork::constant(Cube::new(3).unwrap(), 1.0);
        let b = upper_bounds(&net, &PairSet::Opp).unwrap();
        assert!((b.bound - 1.0).abs() < 1e-15 && (b.opp_bound - 1.0).abs() < 1e-15);
        let net = CapacityNetwork::constant(Cube::new(2).unwrap(), 1.0);
        let b = upper_bounds(&net, &PairSet::All).unwrap();
        assert!((b.bound - 0.5).abs() < 1e-15 && (b.all_bound - 0.5).abs() < 1e-15);
        let custom = PairSet::Custom(vec![(0, 3), (1, 2)]);
        assert_eq!(custom.distance_sum(Cube::new(2).unwrap()).unwrap(), 4.0);
        assert!(upper_bounds(&net, &PairSet::Custom(vec![])).is_err());
    }

    #[test]
    fn distance_sums_match_enumeration() {
        for d in 1..=6 {
            let cube = Cube::new(d).unwrap();
            for set in [PairSet::Opp, PairSet::All] {
                let direct: f64 = set.pairs(cube).unwrap().iter().map(|&(u, v)| distance(u, v) as f64).sum();
                assert_eq!(direct, set.distance_sum(cube).unwrap());
            }
        }
    }
}
