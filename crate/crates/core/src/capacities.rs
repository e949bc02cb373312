//! Capacity distributions, instance sampling, Bernoulli truncation and finite discretization.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypercube::Cube;
use crate::rng::{StreamTag, UnitStream, GENERATOR};

/// Step of the c* search grid.
pub const TRUNCATION_GRID: f64 = 1.0 / 128.0;
/// Required excess of Pr[C ≥ c*] over 1/2.
pub const TRUNCATION_MARGIN: f64 = 1.0 / 1024.0;

/// One point mass of a finite distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub value: f64,
    pub prob: f64,
}

/// Law of a single edge capacity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum CapacityDistribution {
    Bernoulli { p: f64 },
    ScaledBernoulli { a: f64, p: f64 },
    /// Atoms with strictly increasing nonnegative values.
    FiniteDiscrete { atoms: Vec<Atom> },
    Uniform01,
}

/// Result of reducing a law to c*·Ber(p*).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub c_star: f64,
    pub p_star: f64,
}

fn check_prob(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) || !p.is_finite() {
        return Err(Error::InvalidDistribution(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

impl CapacityDistribution {
    pub fn bernoulli(p: f64) -> Result<Self> {
        let d = CapacityDistribution::Bernoulli { p };
        d.validate()?;
        Ok(d)
    }

    pub fn finite(atoms: Vec<(f64, f64)>) -> Result<Self> {
        let d = CapacityDistribution::FiniteDiscrete {
            atoms: atoms.into_iter().map(|(value, prob)| Atom { value, prob }).collect(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CapacityDistribution::Bernoulli { p } => check_prob(*p),
            CapacityDistribution::ScaledBernoulli { a, p } => {
                check_prob(*p)?;
                if !(a.is_finite() && *a >= 0.0) {
                    return Err(Error::InvalidDistribution(format!("scale {a} must be finite and >= 0")));
                }
                Ok(())
            }
            CapacityDistribution::FiniteDiscrete { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::InvalidDistribution("no atoms".into()));
                }
                let mut total = 0.0;
                for (i, a) in atoms.iter().enumerate() {
                    check_prob(a.prob)?;
                    if !(a.value.is_finite() && a.value >= 0.0) {
                        return Err(Error::InvalidDistribution(format!("atom value {} must be finite and >= 0", a.value)));
                    }
                    if i > 0 && a.value <= atoms[i - 1].value {
                        return Err(Error::InvalidDistribution("atom values must be strictly increasing".into()));
                    }
                    total += a.prob;
                }
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidDistribution(format!("probabilities sum to {total}, not 1")));
                }
                Ok(())
            }
            CapacityDistribution::Uniform01 => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            CapacityDistribution::Bernoulli { p } => *p,
            CapacityDistribution::ScaledBernoulli { a, p } => a * p,
            CapacityDistribution::FiniteDiscrete { atoms } => atoms.iter().map(|a| a.value * a.prob).sum(),
            CapacityDistribution::Uniform01 => 0.5,
        }
    }

    /// Monotone quantile map: a uniform draw `u` in [0,1) becomes a capacity.
    /// Bernoulli(p) is open exactly when u ≥ 1 − p.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            CapacityDistribution::Bernoulli { p } => (u >= 1.0 - p) as u8 as f64,
            CapacityDistribution::ScaledBernoulli { a, p } => {
                if u >= 1.0 - p {
                    *a
                } else {
                    0.0
                }
            }
            CapacityDistribution::FiniteDiscrete { atoms } => {
                let mut cum = 0.0;
                for a in &atoms[..atoms.len() - 1] {
                    cum += a.prob;
                    if u < cum {
                        return a.value;
                    }
                }
                atoms[atoms.len() - 1].value
            }
            CapacityDistribution::Uniform01 => u,
        }
    }

    /// Pr[C ≥ c].
    pub fn prob_at_least(&self, c: f64) -> f64 {
        match self {
            CapacityDistribution::Bernoulli { p } => {
                if c <= 0.0 {
                    1.0
                } else if c <= 1.0 {
                    *p
                } else {
                    0.0
                }
            }
            CapacityDistribution::ScaledBernoulli { a, p } => {
                if c <= 0.0 {
                    1.0
                } else if c <= *a {
                    *p
                } else {
                    0.0
                }
            }
            CapacityDistribution::FiniteDiscrete { atoms } => {
                atoms.iter().filter(|a| a.value >= c).map(|a| a.prob).sum()
            }
            CapacityDistribution::Uniform01 => (1.0 - c).clamp(0.0, 1.0),
        }
    }

    /// Pr[C > 0].
    pub fn prob_positive(&self) -> f64 {
        match self {
            CapacityDistribution::Bernoulli { p } => *p,
            CapacityDistribution::ScaledBernoulli { a, p } => {
                if *a > 0.0 {
                    *p
                } else {
                    0.0
                }
            }
            CapacityDistribution::FiniteDiscrete { atoms } => {
                atoms.iter().filter(|a| a.value > 0.0).map(|a| a.prob).sum()
            }
            CapacityDistribution::Uniform01 => 1.0,
        }
    }

    fn positive_atoms(&self) -> Vec<f64> {
        match self {
            CapacityDistribution::Bernoulli { .. } => vec![1.0],
            CapacityDistribution::ScaledBernoulli { a, .. } => vec![*a],
            CapacityDistribution::FiniteDiscrete { atoms } => {
                atoms.iter().filter(|a| a.value > 0.0 && a.prob > 0.0).map(|a| a.value).collect()
            }
            CapacityDistribution::Uniform01 => Vec::new(),
        }
    }

    /// Largest candidate c* with Pr[C ≥ c*] > 1/2 (plus margin), and p* = Pr[C ≥ c*].
    /// Candidates: the 2⁻⁷ grid over (0, q₉₉] together with the positive atoms.
    pub fn truncate_to_bernoulli(&self) -> Result<Truncation> {
        let positive = self.prob_positive();
        if positive <= 0.5 {
            return Err(Error::ConditionViolated { prob: positive });
        }
        let q = self.quantile(0.99);
        let steps = (q / TRUNCATION_GRID).floor() as u64;
        let mut candidates: Vec<f64> = (1..=steps).map(|k| k as f64 * TRUNCATION_GRID).collect();
        candidates.extend(self.positive_atoms());
        candidates.sort_by(|a, b| b.total_cmp(a));
        let pick = |margin: f64| {
            candidates.iter().copied().find(|&c| c > 0.0 && self.prob_at_least(c) > 0.5 + margin)
        };
        let c_star = pick(TRUNCATION_MARGIN)
            .or_else(|| pick(0.0))
            .ok_or(Error::ConditionViolated { prob: positive })?;
        Ok(Truncation { c_star, p_star: self.prob_at_least(c_star) })
    }

    /// Finite law C⁽ᵉ⁾ ≤ C under the quantile coupling with E[C⁽ᵉ⁾] > E[C] − eps.
    /// Finite laws are returned as their atom list; uniform01 is floored to the grid of
    /// step 2^⌊log₂ eps⌋.
    pub fn discretize(&self, eps: f64) -> Result<CapacityDistribution> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("discretization eps {eps} must be positive")));
        }
        let atoms = match self {
            CapacityDistribution::Bernoulli { p } => {
                vec![Atom { value: 0.0, prob: 1.0 - p }, Atom { value: 1.0, prob: *p }]
            }
            CapacityDistribution::ScaledBernoulli { a, p } => {
                if *a == 0.0 {
                    vec![Atom { value: 0.0, prob: 1.0 }]
                } else {
                    vec![Atom { value: 0.0, prob: 1.0 - p }, Atom { value: *a, prob: *p }]
                }
            }
            CapacityDistribution::FiniteDiscrete { atoms } => atoms.clone(),
            CapacityDistribution::Uniform01 => {
                let step = 2f64.powi(eps.log2().floor() as i32).min(1.0);
                let n = (1.0 / step).round() as usize;
                (0..n).map(|j| Atom { value: j as f64 * step, prob: step }).collect()
            }
        };
        let atoms: Vec<Atom> = atoms.into_iter().filter(|a| a.prob > 0.0).collect();
        Ok(CapacityDistribution::FiniteDiscrete { atoms })
    }

    /// Atoms of a finite law (empty for uniform01).
    pub fn atoms(&self) -> Vec<Atom> {
        match (self, self.discretize(1.0)) {
            (CapacityDistribution::Uniform01, _) => Vec::new(),
            (_, Ok(CapacityDistribution::FiniteDiscrete { atoms })) => atoms,
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for CapacityDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CapacityDistribution::Bernoulli { p } => write!(f, "bernoulli:{p:?}"),
            CapacityDistribution::ScaledBernoulli { a, p } => write!(f, "scaled_bernoulli:{a:?}:{p:?}"),
            CapacityDistribution::FiniteDiscrete { atoms } => {
                write!(f, "discrete:")?;
                for (i, a) in atoms.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{:?}@{:?}", a.value, a.prob)?;
                }
                Ok(())
            }
            CapacityDistribution::Uniform01 => write!(f, "uniform01"),
        }
    }
}

impl FromStr for CapacityDistribution {
    type Err = Error;

    /// Forms: `bernoulli:P`, `scaled_bernoulli:A:P`, `discrete:V@P,V@P,...`, `uniform01`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidDistribution(format!("cannot parse '{s}'"));
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let dist = match kind.trim() {
            "bernoulli" => CapacityDistribution::Bernoulli { p: num(rest)? },
            "scaled_bernoulli" => {
                let (a, p) = rest.split_once(':').ok_or_else(bad)?;
                CapacityDistribution::ScaledBernoulli { a: num(a)?, p: num(p)? }
            }
            "discrete" => {
                let atoms = rest
                    .split(',')
                    .map(|part| {
                        let (v, p) = part.split_once('@').ok_or_else(bad)?;
                        Ok(Atom { value: num(v)?, prob: num(p)? })
                    })
                    .collect::<Result<Vec<_>>>()?;
                CapacityDistribution::FiniteDiscrete { atoms }
            }
            "uniform01" if rest.is_empty() => CapacityDistribution::Uniform01,
            _ => return Err(bad()),
        };
        dist.validate()?;
        Ok(dist)
    }
}

impl TryFrom<String> for CapacityDistribution {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CapacityDistribution> for String {
    fn from(d: CapacityDistribution) -> String {
        d.to_string()
    }
}

/// How an instance was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub distribution: CapacityDistribution,
    pub seed: u64,
    pub generator: String,
}

/// One capacity per canonical edge index.
#[derive(Clone, Debug, PartialEq)]
pub struct CapacityNetwork {
    cube: Cube,
    caps: Vec<f64>,
    provenance: Option<Provenance>,
}

impl CapacityNetwork {
    /// i.i.d. capacities; edge `i` uses the uniform draw at index `i` of the sample stream.
    pub fn sample(dist: &CapacityDistribution, cube: Cube, seed: u64) -> Result<Self> {
        dist.validate()?;
        let mut stream = UnitStream::new(seed, StreamTag::Sample);
        let caps = (0..cube.edge_count()).map(|i| dist.quantile(stream.at(i as u64))).collect();
        Ok(CapacityNetwork {
            cube,
            caps,
            provenance: Some(Provenance { distribution: dist.clone(), seed, generator: GENERATOR.to_string() }),
        })
    }

    pub fn from_capacities(cube: Cube, caps: Vec<f64>) -> Result<Self> {
        if caps.len() != cube.edge_count() {
            return Err(Error::Format(format!(
                "expected {} capacities for d = {}, got {}",
                cube.edge_count(),
                cube.dim(),
                caps.len()
            )));
        }
        if let Some(c) = caps.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::Format(format!("capacity {c} must be finite and >= 0")));
        }
        Ok(CapacityNetwork { cube, caps, provenance: None })
    }

    pub fn with_provenance(mut self, provenance: Option<Provenance>) -> Self {
        self.provenance = provenance;
        self
    }

    /// Every edge has capacity `c`.
    pub fn constant(cube: Cube, c: f64) -> Self {
        CapacityNetwork { cube, caps: vec![c; cube.edge_count()], provenance: None }
    }

    pub fn cube(&self) -> Cube {
        self.cube
    }

    #[inline]
    pub fn capacity(&self, edge: usize) -> f64 {
        self.caps[edge]
    }

    pub fn capacities(&self) -> &[f64] {
        &self.caps
    }

    pub fn capacities_mut(&mut self) -> &mut [f64] {
        &mut self.caps
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    /// Average edge capacity c_av.
    pub fn average(&self) -> f64 {
        self.caps.iter().sum::<f64>() / self.caps.len() as f64
    }

    /// Fraction of edges with positive capacity.
    pub fn open_fraction(&self) -> f64 {
        self.caps.iter().filter(|&&c| c > 0.0).count() as f64 / self.caps.len() as f64
    }

    /// The law used by the constructive builders: the provenance distribution when
    /// known, otherwise the empirical law of the instance.
    pub fn model_distribution(&self) -> CapacityDistribution {
        if let Some(p) = &self.provenance {
            return p.distribution.clone();
        }
        let mut values = self.caps.clone();
        values.sort_by(f64::total_cmp);
        let n = values.len() as f64;
        let mut atoms: Vec<Atom> = Vec::new();
        for v in values {
            match atoms.last_mut() {
                Some(a) if a.value == v => a.prob += 1.0,
                _ => atoms.push(Atom { value: v, prob: 1.0 }),
            }
        }
        for a in &mut atoms {
            a.prob /= n;
        }
        let total: f64 = atoms.iter().map(|a| a.prob).sum();
        if let Some(last) = atoms.last_mut() {
            last.prob += 1.0 - total;
        }
        CapacityDistribution::FiniteDiscrete { atoms }
    }
}

/// Reductions of a law used by the builders.
#[derive(Clone, Debug, PartialEq)]
pub struct CapacityModel {
    pub distribution: CapacityDistribution,
    pub truncation: Truncation,
    /// Positive atoms of C⁽ᵉ⁾.
    pub atoms: Vec<Atom>,
    pub discretization_eps: f64,
}

impl CapacityModel {
    pub fn new(distribution: CapacityDistribution, discretization_eps: f64) -> Result<Self> {
        let truncation = distribution.truncate_to_bernoulli()?;
        let atoms = match distribution.discretize(discretization_eps)? {
            CapacityDistribution::FiniteDiscrete { atoms } => atoms.into_iter().filter(|a| a.value > 0.0).collect(),
            _ => unreachable!("discretize returns a finite law"),
        };
        Ok(CapacityModel { distribution, truncation, atoms, discretization_eps })
    }

    /// E[C⁽ᵉ⁾] = Σ aᵢpᵢ.
    pub fn discrete_mean(&self) -> f64 {
        self.atoms.iter().map(|a| a.value * a.prob).sum()
    }

    /// Index of the atom a realized capacity floors to (largest positive atom ≤ c).
    pub fn atom_of(&self, c: f64) -> Option<usize> {
        self.atoms.iter().rposition(|a| a.value <= c)
    }
}

/// Edge-wise comparison of C with its two reductions, all driven by one uniform stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CouplingReport {
    pub edges: usize,
    pub truncation: Truncation,
    pub discretization_eps: f64,
    /// Edges with c*·1{C ≥ c*} > C.
    pub truncation_violations: usize,
    /// Edges with C⁽ᵉ⁾ > C.
    pub discretization_violations: usize,
    pub mean: f64,
    pub truncated_mean: f64,
    pub discrete_mean: f64,
    /// E[C] − E[C⁽ᵉ⁾] of the laws.
    pub law_gap: f64,
}

impl CouplingReport {
    /// Orderings hold on every edge and both mean gaps (sample and law) are below ε.
    pub fn holds(&self) -> bool {
        self.truncation_violations == 0
            && self.discretization_violations == 0
            && self.mean - self.discrete_mean < self.discretization_eps
            && self.law_gap < self.discretization_eps
    }
}

/// Samples C, c*·1{C ≥ c*} and C⁽ᵉ⁾ from the same per-edge uniforms and compares them.
pub fn coupled_reductions(dist: &CapacityDistribution, cube: Cube, seed: u64, eps: f64) -> Result<CouplingReport> {
    dist.validate()?;
    let truncation = dist.truncate_to_bernoulli()?;
    let discrete = dist.discretize(eps)?;
    let mut stream = UnitStream::new(seed, StreamTag::Sample);
    let m = cube.edge_count();
    let (mut t_bad, mut d_bad) = (0, 0);
    let (mut sum, mut sum_t, mut sum_d) = (0.0, 0.0, 0.0);
    for i in 0..m {
        let u = stream.at(i as u64);
        let c = dist.quantile(u);
        let ct = if c >= truncation.c_star { truncation.c_star } else { 0.0 };
        let cd = discrete.quantile(u);
        t_bad += (ct > c) as usize;
        d_bad += (cd > c) as usize;
        sum += c;
        sum_t += ct;
        sum_d += cd;
    }
    let n = m as f64;
    Ok(CouplingReport {
        edges: m,
        truncation,
        discretization_eps: eps,
        truncation_violations: t_bad,
        discretization_violations: d_bad,
        mean: sum / n,
        truncated_mean: sum_t / n,
        discrete_mean: sum_d / n,
        law_gap: dist.mean() - discrete.mean(),
    })
}
