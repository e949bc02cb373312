//! Per-commodity scaled capacity views and superposition audits.

use serde::{Deserialize, Serialize};

use crate::capacities::CapacityNetwork;
use crate::error::{Error, Result};
use crate::hypercube::{binomial, distance, subsets_of_size, Cube, EdgeId, Subcube, Vertex};

/// Anything that assigns a capacity to canonical edge indices.
pub trait EdgeCapacity {
    fn capacity_of(&self, edge: usize) -> f64;
}

impl EdgeCapacity for CapacityNetwork {
    fn capacity_of(&self, edge: usize) -> f64 {
        self.capacity(edge)
    }
}

impl EdgeCapacity for [f64] {
    fn capacity_of(&self, edge: usize) -> f64 {
        self[edge]
    }
}

impl EdgeCapacity for Vec<f64> {
    fn capacity_of(&self, edge: usize) -> f64 {
        self[edge]
    }
}

/// κ, M and an optional fixed ℓ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ScalingParams {
    pub kappa: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub ell_override: Option<u32>,
}

impl Default for ScalingParams {
    fn default() -> Self {
        ScalingParams { kappa: 0.6, m: crate::escape::shell_m(crate::escape::DEFAULT_ALPHA), ell_override: None }
    }
}

impl ScalingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.5 && self.kappa < 1.0) {
            return Err(Error::InvalidParameter(format!("kappa = {} must lie in (1/2, 1)", self.kappa)));
        }
        if !(self.m >= 1.0 && self.m.is_finite()) {
            return Err(Error::InvalidParameter(format!("M = {} must be >= 1", self.m)));
        }
        Ok(())
    }

    /// ℓ = override, else max(1, min(⌊d^κ⌋, ⌊(d−5)/2⌋)).
    pub fn ell(&self, d: u32) -> u32 {
        if let Some(l) = self.ell_override {
            return l;
        }
        let power = (d as f64).powf(self.kappa).floor() as i64;
        let clamp = (d as i64 - 5).div_euclid(2);
        power.min(clamp).max(1) as u32
    }

    /// ε_d = 2(M−1)(ℓ+2)/d.
    pub fn epsilon_d(&self, d: u32) -> f64 {
        2.0 * (self.m - 1.0) * (self.ell(d) as f64 + 2.0) / d as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    Antipodal,
    Subcube,
}

/// Scaled view 𝒩^M(u) (antipodal) or 𝒩^M(u,v) (subcube) of a base network.
#[derive(Clone, Copy, Debug)]
pub struct ScaledNetwork<'a> {
    base: &'a CapacityNetwork,
    frame: Subcube,
    mode: ScaleMode,
    params: ScalingParams,
    ell: u32,
}

impl<'a> ScaledNetwork<'a> {
    pub fn antipodal(base: &'a CapacityNetwork, u: Vertex, params: ScalingParams) -> Result<Self> {
        let cube = base.cube();
        cube.check_vertex(u)?;
        let frame = Subcube::spanning(u, cube.antipode(u));
        Ok(ScaledNetwork { base, frame, mode: ScaleMode::Antipodal, params, ell: params.ell(cube.dim()) })
    }

    pub fn subcube(base: &'a CapacityNetwork, u: Vertex, v: Vertex, params: ScalingParams) -> Result<Self> {
        let cube = base.cube();
        let frame = cube.subcube(u, v)?;
        Ok(ScaledNetwork { base, frame, mode: ScaleMode::Subcube, params, ell: params.ell(cube.dim()) })
    }

    /// Use a different shell radius for this view (short subcubes).
    pub fn with_ell(mut self, ell: u32) -> Self {
        self.ell = ell;
        self
    }

    pub fn base(&self) -> &'a CapacityNetwork {
        self.base
    }

    pub fn cube(&self) -> Cube {
        self.base.cube()
    }

    pub fn frame(&self) -> &Subcube {
        &self.frame
    }

    pub fn mode(&self) -> ScaleMode {
        self.mode
    }

    pub fn params(&self) -> &ScalingParams {
        &self.params
    }

    pub fn source(&self) -> Vertex {
        self.frame.u
    }

    pub fn sink(&self) -> Vertex {
        self.frame.v
    }

    pub fn k(&self) -> u32 {
        self.frame.k
    }

    pub fn ell(&self) -> u32 {
        self.ell
    }

    /// 2^{1−d} in subcube mode, 1 otherwise.
    pub fn mode_factor(&self) -> f64 {
        match self.mode {
            ScaleMode::Antipodal => 1.0,
            ScaleMode::Subcube => 2f64.powi(1 - self.cube().dim() as i32),
        }
    }

    /// |E_m| of the k-cube.
    pub fn layer_edges(&self, m: u32) -> f64 {
        m as f64 * binomial(self.frame.k, m) as f64
    }

    /// Whether edge layer m carries the factor M.
    pub fn is_scaled_layer(&self, m: u32) -> bool {
        m <= self.ell + 2 || m as i64 >= self.frame.k as i64 - self.ell as i64 - 1
    }

    /// Edge layer of `e` inside the frame.
    pub fn edge_layer(&self, e: EdgeId) -> Option<u32> {
        self.frame.edge_layer(e)
    }

    /// c_e/|E_m| (times 2^{1−d} in subcube mode), without the factor M.
    pub fn middle_capacity(&self, e: EdgeId) -> f64 {
        match self.edge_layer(e) {
            Some(m) => self.mode_factor() * self.base.capacity(self.cube().edge_index(e)) / self.layer_edges(m),
            None => 0.0,
        }
    }

    /// Scaled capacity: M·c_e/|E_m| in the outer layers, c_e/|E_m| in the middle.
    pub fn scaled_capacity(&self, e: EdgeId) -> f64 {
        match self.edge_layer(e) {
            Some(m) => {
                let factor = if self.is_scaled_layer(m) { self.params.m } else { 1.0 };
                factor * self.middle_capacity(e)
            }
            None => 0.0,
        }
    }
}

impl EdgeCapacity for ScaledNetwork<'_> {
    fn capacity_of(&self, edge: usize) -> f64 {
        self.scaled_capacity(self.cube().edge_at(edge))
    }
}

/// Per-edge superposed demand of all antipodal networks.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AntipodalAudit {
    pub ell: u32,
    pub epsilon_d: f64,
    /// ½ Σ_v scaled capacity of the edge in 𝒩^M(v).
    pub demand: Vec<f64>,
    /// Σ_v c_e/|E_m|, which equals 2c_e.
    pub part1: Vec<f64>,
    /// Σ_v over scaled layers of (M−1)c_e/|E_m|, which equals 2ε_d·c_e.
    pub part2: Vec<f64>,
}

/// Superpose 𝒩^M(v) over every vertex v by direct summation.
pub fn audit_antipodal_superposition(base: &CapacityNetwork, params: &ScalingParams) -> Result<AntipodalAudit> {
    params.validate()?;
    let cube = base.cube();
    let d = cube.dim();
    let ell = params.ell(d);
    if 2 * ell + 5 > d {
        return Err(Error::DegenerateLayering { d, ell, constraint: "2*ell + 5 <= d (middle region ell+3..d-ell-2 nonempty)" });
    }
    let inv_edges: Vec<f64> = (0..=d).map(|m| if m == 0 { 0.0 } else { 1.0 / (m as f64 * binomial(d, m) as f64) }).collect();
    let scaled = |m: u32| m <= ell + 2 || m + ell + 1 >= d;
    // For a fixed edge the sum over v depends only on how many v see it in each layer;
    // count those per edge by direct enumeration.
    let n = cube.vertex_count() as u32;
    let mut demand = Vec::with_capacity(cube.edge_count());
    let mut part1 = Vec::with_capacity(cube.edge_count());
    let mut part2 = Vec::with_capacity(cube.edge_count());
    let mut counts = vec![0u64; d as usize + 1];
    for e in cube.edges() {
        counts.iter_mut().for_each(|c| *c = 0);
        let up = e.upper();
        for v in 0..n {
            let m = distance(v, e.lower).max(distance(v, up));
            counts[m as usize] += 1;
        }
        let c = base.capacity(cube.edge_index(e));
        let mut p1 = 0.0;
        let mut p2 = 0.0;
        for m in 1..=d {
            let term = counts[m as usize] as f64 * c * inv_edges[m as usize];
            p1 += term;
            if scaled(m) {
                p2 += (params.m - 1.0) * term;
            }
        }
        part1.push(p1);
        part2.push(p2);
        demand.push(0.5 * (p1 + p2));
    }
    Ok(AntipodalAudit { ell, epsilon_d: params.epsilon_d(d), demand, part1, part2 })
}

/// Which subcube commodities and layers enter the superposition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubcubeAuditOptions {
    /// Only pairs with d(u,v) > d/4.
    pub far_only: bool,
    /// Only the middle layers ell_k+1..k−ell_k with ell_k = min(ell, ⌊k/2⌋).
    pub middle_only: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubcubeAudit {
    pub ell: u32,
    pub demand: Vec<f64>,
    /// Demand/c_e, identical for every edge by symmetry.
    pub multiplier: f64,
    /// Whether every edge was enumerated (otherwise one edge per coordinate).
    pub exhaustive: bool,
}

/// Shell radius used for a subcube of dimension k.
pub fn subcube_ell(ell: u32, k: u32) -> u32 {
    ell.min(k / 2)
}

fn subcube_multiplier(cube: Cube, e: EdgeId, ell: u32, opts: SubcubeAuditOptions) -> f64 {
    let d = cube.dim();
    let others = cube.full_mask() & !(1 << e.dim);
    let base = 2f64.powi(1 - d as i32);
    let mut total = 0.0;
    for k in 1..=d {
        if opts.far_only && 4 * k <= d {
            continue;
        }
        let ell_k = subcube_ell(ell, k);
        for rest in subsets_of_size(others, k - 1) {
            let free = rest | (1 << e.dim);
            let lo = e.lower & free;
            let hi = e.upper() & free;
            // Every u-pattern on the free coordinates; each unordered pair appears twice.
            let mut x = free;
            loop {
                let m = distance(x, lo).max(distance(x, hi));
                if !(opts.middle_only && (m <= ell_k || m > k - ell_k)) {
                    total += 0.5 * base / (m as f64 * binomial(k, m) as f64);
                }
                if x == 0 {
                    break;
                }
                x = (x - 1) & free;
            }
        }
    }
    total
}

/// Superpose the subcube networks 𝒩(u,v) (M = 1) over the selected pairs.
pub fn audit_subcube_superposition(
    base: &CapacityNetwork,
    params: &ScalingParams,
    opts: SubcubeAuditOptions,
) -> Result<SubcubeAudit> {
    params.validate()?;
    let cube = base.cube();
    let d = cube.dim();
    let ell = params.ell(d);
    let exhaustive = d <= 9;
    let per_dim: Vec<f64> = if exhaustive {
        Vec::new()
    } else {
        (0..d).map(|j| subcube_multiplier(cube, EdgeId { lower: 0, dim: j }, ell, opts)).collect()
    };
    let mut demand = Vec::with_capacity(cube.edge_count());
    let mut multiplier: f64 = 0.0;
    for (i, e) in cube.edges().enumerate() {
        let mult = if exhaustive { subcube_multiplier(cube, e, ell, opts) } else { per_dim[e.dim as usize] };
        multiplier = multiplier.max(mult);
        demand.push(mult * base.capacity(i));
    }
    Ok(SubcubeAudit { ell, demand, multiplier, exhaustive })
}

/// Σ_{k=1}^{d} (k/d)·C(d,k)·2^{1−d}, the closed form of the all-pairs subcube sum.
pub fn subcube_identity(d: u32) -> f64 {
    (1..=d).map(|k| k as f64 / d as f64 * binomial(d, k) as f64).sum::<f64>() * 2f64.powi(1 - d as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(d: u32) -> CapacityNetwork {
        CapacityNetwork::constant(Cube::new(d).unwrap(), 1.0)
    }

    #[test]
    fn ell_rule() {
        let p = ScalingParams { kappa: 0.6, m: 7.0, ell_override: None };
        assert_eq!(p.ell(16), 5);
        assert_eq!(p.ell(7), 1);
        assert_eq!(p.ell(12), 3);
        assert_eq!(p.ell(4), 1);
        assert_eq!(ScalingParams { ell_override: Some(2), ..p }.ell(7), 2);
    }

    #[test]
    fn scaled_capacity_examples() {
        let net = unit(16);
        let p = ScalingParams { kappa: 0.6, m: 7.0, ell_override: None };
        let s = ScaledNetwork::antipodal(&net, 0, p).unwrap();
        assert_eq!(s.ell(), 5);
        // Edge from layer 7 to layer 8.
        let e = EdgeId { lower: 0b0111_1111, dim: 7 };
        assert_eq!(s.edge_layer(e), Some(8));
        assert!((s.scaled_capacity(e) - 1.0 / 102960.0).abs() < 1e-18);
        let e2 = EdgeId { lower: 1, dim: 1 };
        assert_eq!(s.edge_layer(e2), Some(2));
        assert!((s.scaled_capacity(e2) - 7.0 / 240.0).abs() < 1e-15);
        let sub = ScaledNetwork::subcube(&net, 0, 0xffff, p).unwrap();
        assert!((sub.scaled_capacity(e) - s.scaled_capacity(e) * 2f64.powi(-15)).abs() < 1e-22);
    }

    #[test]
    fn subcube_outside_edges_are_zero() {
        let net = unit(4);
        let p = ScalingParams { kappa: 0.6, m: 7.0, ell_override: None };
        let s = ScaledNetwork::subcube(&net, 0, 0b0011, p).unwrap();
        assert_eq!(s.scaled_capacity(EdgeId { lower: 0, dim: 2 }), 0.0);
        assert!(s.scaled_capacity(EdgeId { lower: 0, dim: 0 }) > 0.0);
    }

    #[test]
    fn antipodal_audit_identity() {
        for m in [1.0, 7.0] {
            let p = ScalingParams { kappa: 0.6, m, ell_override: None };
            let a = audit_antipodal_superposition(&unit(8), &p).unwrap();
            for i in 0..a.demand.len() {
                assert!((a.part1[i] - 2.0).abs() < 1e-12);
                assert!((a.part2[i] - 2.0 * a.epsilon_d).abs() < 1e-12);
                assert!((a.demand[i] - (1.0 + a.epsilon_d)).abs() < 1e-12);
            }
        }
        let p = ScalingParams { kappa: 0.6, m: 7.0, ell_override: None };
        assert!((ScalingParams { ell_override: Some(5), ..p }.epsilon_d(16) - 5.25).abs() < 1e-12);
        assert!(matches!(
            audit_antipodal_superposition(&unit(6), &p),
            Err(Error::DegenerateLayering { .. })
        ));
    }

    #[test]
    fn subcube_audit_sums() {
        let p = ScalingParams { kappa: 0.6, m: 7.0, ell_override: None };
        let all = audit_subcube_superposition(&unit(6), &p, SubcubeAuditOptions { far_only: false, middle_only: false })
            .unwrap();
        assert!(all.demand.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        let far = audit_subcube_superposition(&unit(6), &p, SubcubeAuditOptions { far_only: true, middle_only: true })
            .unwrap();
        assert!(far.demand.iter().all(|&x| x <= 1.0 + 1e-12));
        assert!((subcube_identity(8) - 1.0).abs() < 1e-15);
    }
}
