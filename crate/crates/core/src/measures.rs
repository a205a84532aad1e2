//! Candidate invariant measures, Birkhoff integrals and fiber entropy.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potentials::Potential;
use crate::stats::{mean, regression_slope, shannon_entropy, standard_error};
use crate::system::{OrbitRecord, Phase, RandomSystem};

const WEIGHT_TOL: f64 = 1e-10;
const RETURN_TOL: f64 = 1e-8;
/// Upper bound on breakpoints of a refined partition.
pub const MAX_REFINED_POINTS: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoomingFlag {
    ZoomingLike,
    NonZoomingLike,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasureKind {
    Empirical { orbit: OrbitRecord, burn_in: usize },
    /// Orbit of a periodic point of `f^p_w` for the periodic word `word`.
    PeriodicOrbit { word: Vec<usize>, point: f64, orbit: Vec<f64> },
    UlamStationary { probabilities: Vec<f64> },
    Dirac { symbol: usize, point: f64 },
}

/// A candidate measure with per-symbol cell weights on `cells` uniform
/// intervals of the fiber.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureCandidate {
    pub label: String,
    pub kind: MeasureKind,
    pub cells: usize,
    /// `weights[s][i]`: mass of cell `i` on the fiber over symbol `s`.
    pub weights: Vec<Vec<f64>>,
    pub flag: ZoomingFlag,
}

fn cell_of(x: f64, cells: usize) -> usize {
    ((x * cells as f64).floor().max(0.0) as usize).min(cells - 1)
}

fn histogram(points: &[f64], cells: usize) -> Vec<f64> {
    let mut h = vec![0.0; cells];
    for &x in points {
        h[cell_of(x, cells)] += 1.0;
    }
    let total = points.len() as f64;
    h.iter_mut().for_each(|v| *v /= total);
    h
}

fn check_cells(cells: usize) -> Result<()> {
    if cells < 2 {
        return Err(Error::Domain(format!("partition needs at least 2 cells, got {cells}")));
    }
    Ok(())
}

/// Smallest uniform partition with cell diameter below `delta`.
pub fn min_cells(delta: f64) -> usize {
    ((1.0 / delta).ceil() as usize).max(2)
}

impl MeasureCandidate {
    /// Empirical measure of `orbit` after dropping `burn_in` points; the fiber
    /// weights over symbol `s` histogram the points visited while reading `s`.
    pub fn empirical(sys: &RandomSystem, orbit: OrbitRecord, burn_in: usize, cells: usize) -> Result<Self> {
        check_cells(cells)?;
        let n = orbit.len();
        if burn_in >= n {
            return Err(Error::Domain(format!("burn-in {burn_in} leaves no points of an orbit of length {n}")));
        }
        let all = &orbit.points[burn_in..n];
        let overall = histogram(all, cells);
        let weights = (0..sys.base.alphabet_size())
            .map(|s| {
                let pts: Vec<f64> = (burn_in..n).filter(|&i| orbit.symbols[i] == s).map(|i| orbit.points[i]).collect();
                if pts.is_empty() {
                    overall.clone()
                } else {
                    histogram(&pts, cells)
                }
            })
            .collect();
        Ok(Self {
            label: format!("empirical(x0={})", orbit.x0),
            kind: MeasureKind::Empirical { orbit, burn_in },
            cells,
            weights,
            flag: ZoomingFlag::Unknown,
        })
    }

    /// Periodic orbit of `f^p_w`, `p = |word|`, whose points follow the given
    /// branch itinerary. Found by iterating the inverse branches.
    pub fn periodic_orbit(sys: &RandomSystem, word: &[usize], branches: &[usize], cells: usize) -> Result<Self> {
        check_cells(cells)?;
        if word.is_empty() || word.len() != branches.len() {
            return Err(Error::Domain("periodic word and branch itinerary must be non-empty and equal length".into()));
        }
        for (&s, &b) in word.iter().zip(branches) {
            if s >= sys.fibers.len() || b >= sys.fiber(s).branches().len() {
                return Err(Error::Domain(format!("branch {b} of symbol {s} does not exist")));
            }
        }
        let mut x = 0.5;
        for _ in 0..2000 {
            let mut y = x;
            for (&s, &b) in word.iter().zip(branches).rev() {
                y = sys.fiber(s).branches()[b].inverse(y);
            }
            let done = (y - x).abs() < 1e-16;
            x = y;
            if done {
                break;
            }
        }
        let mut orbit = Vec::with_capacity(word.len() + 1);
        orbit.push(x);
        for &s in word {
            orbit.push(sys.step(s, *orbit.last().unwrap()));
        }
        let back = *orbit.last().unwrap();
        if sys.distance(back, x) > RETURN_TOL {
            return Err(Error::Domain(format!("inverse iteration did not converge to a periodic point (returned {back} vs {x})")));
        }
        orbit.pop();
        let h = histogram(&orbit, cells);
        Ok(Self {
            label: format!("periodic({word:?},{branches:?})"),
            kind: MeasureKind::PeriodicOrbit { word: word.to_vec(), point: x, orbit },
            cells,
            weights: vec![h; sys.base.alphabet_size()],
            flag: ZoomingFlag::Unknown,
        })
    }

    /// Dirac mass at `point` over the fiber of `symbol`.
    pub fn dirac(sys: &RandomSystem, symbol: usize, point: f64, cells: usize) -> Result<Self> {
        check_cells(cells)?;
        if symbol >= sys.fibers.len() {
            return Err(Error::Domain(format!("symbol {symbol} outside the alphabet")));
        }
        let mut w = vec![0.0; cells];
        w[cell_of(point, cells)] = 1.0;
        Ok(Self {
            label: format!("dirac({point})"),
            kind: MeasureKind::Dirac { symbol, point },
            cells,
            weights: vec![w; sys.base.alphabet_size()],
            flag: ZoomingFlag::Unknown,
        })
    }

    /// Stationary cell weights of an Ulam model, one vector per symbol.
    pub fn ulam_stationary(probabilities: Vec<f64>, weights: Vec<Vec<f64>>) -> Result<Self> {
        let cells = weights.first().map_or(0, Vec::len);
        check_cells(cells)?;
        if weights.len() != probabilities.len() || weights.iter().any(|w| w.len() != cells) {
            return Err(Error::Domain("one weight vector of equal length per symbol required".into()));
        }
        let c = Self {
            label: "ulam-equilibrium".into(),
            kind: MeasureKind::UlamStationary { probabilities },
            cells,
            weights,
            flag: ZoomingFlag::Unknown,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_flag(mut self, flag: ZoomingFlag) -> Self {
        self.flag = flag;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (s, w) in self.weights.iter().enumerate() {
            let total: f64 = w.iter().sum();
            if (total - 1.0).abs() > WEIGHT_TOL || w.iter().any(|&v| v < 0.0) {
                return Err(Error::Domain(format!("weights over symbol {s} sum to {total}")));
            }
        }
        Ok(())
    }

    /// Point masses, for the atomic kinds.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match &self.kind {
            MeasureKind::Dirac { point, .. } => Some(vec![(*point, 1.0)]),
            MeasureKind::PeriodicOrbit { orbit, .. } => {
                let m = 1.0 / orbit.len() as f64;
                Some(orbit.iter().map(|&x| (x, m)).collect())
            }
            _ => None,
        }
    }

    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.cells as f64
    }
}

/// `∫ φ dμ` for a candidate.
pub fn birkhoff_integral(m: &MeasureCandidate, phi: &Potential, phase: Phase) -> f64 {
    match &m.kind {
        MeasureKind::Empirical { orbit, burn_in } => {
            let n = orbit.len();
            let vals: Vec<f64> = (*burn_in..n).map(|i| phi.eval(orbit.symbols[i], orbit.points[i], phase)).collect();
            mean(&vals)
        }
        MeasureKind::PeriodicOrbit { word, orbit, .. } => {
            let vals: Vec<f64> = word.iter().zip(orbit).map(|(&s, &x)| phi.eval(s, x, phase)).collect();
            mean(&vals)
        }
        MeasureKind::UlamStationary { probabilities } => probabilities
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(s, &p)| {
                p * m.weights[s].iter().enumerate().map(|(i, &w)| w * phi.eval(s, m.center(i), phase)).sum::<f64>()
            })
            .sum(),
        MeasureKind::Dirac { symbol, point } => phi.eval(*symbol, *point, phase),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub depth: usize,
    /// Word-averaged `H(⋁_{j<n} f_w^{−j} ξ)`.
    pub entropy: f64,
    pub standard_error: f64,
    /// Word-averaged number of refined cells carrying mass.
    pub mean_cells: f64,
    /// Word-averaged `log(#cells)`.
    pub mean_log_cells: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub value: f64,
    pub cells: usize,
    pub words: usize,
    pub table: Vec<EntropyRow>,
}

impl EntropyEstimate {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Domain(format!("csv write failed: {e}"));
        w.write_record(["depth", "entropy", "standard_error", "mean_cells", "mean_log_cells"]).map_err(io)?;
        for r in &self.table {
            w.write_record([
                r.depth.to_string(),
                r.entropy.to_string(),
                r.standard_error.to_string(),
                r.mean_cells.to_string(),
                r.mean_log_cells.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Domain(e.to_string()))
    }
}

/// Entropy of the refined partitions `⋁_{j<n} f_w^{−j} ξ`, `n = 1 … depth`,
/// with `ξ` the uniform partition into `cells` intervals, averaged over
/// `base_samples` words. The value is the regression slope of the averaged
/// entropies over the last third of depths.
pub fn entropy_estimate(
    m: &MeasureCandidate,
    sys: &RandomSystem,
    cells: usize,
    depth: usize,
    base_samples: usize,
    seed: u64,
) -> Result<EntropyEstimate> {
    check_cells(cells)?;
    if depth < 2 {
        return Err(Error::Domain("entropy depth must be at least 2".into()));
    }
    if base_samples == 0 {
        return Err(Error::Domain("at least one base word is required".into()));
    }
    m.validate()?;
    let words: Vec<Vec<usize>> = (0..base_samples as u64)
        .map(|i| match &m.kind {
            MeasureKind::PeriodicOrbit { word, .. } => (0..depth).map(|j| word[j % word.len()]).collect(),
            MeasureKind::Dirac { symbol, .. } if sys.base.alphabet_size() > 1 => {
                let mut w = sys.base.word(depth, seed, i);
                w[0] = *symbol;
                w
            }
            _ => sys.base.word(depth, seed, i),
        })
        .collect();
    // per word, per depth: (entropy, #cells with mass)
    let per_word: Vec<Vec<(f64, usize)>> = words
        .par_iter()
        .map(|w| (1..=depth).map(|n| refined_entropy(m, sys, cells, &w[..n])).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let table: Vec<EntropyRow> = (0..depth)
        .map(|k| {
            let hs: Vec<f64> = per_word.iter().map(|r| r[k].0).collect();
            let cs: Vec<f64> = per_word.iter().map(|r| r[k].1 as f64).collect();
            let ls: Vec<f64> = per_word.iter().map(|r| (r[k].1.max(1) as f64).ln()).collect();
            EntropyRow {
                depth: k + 1,
                entropy: mean(&hs),
                standard_error: standard_error(&hs),
                mean_cells: mean(&cs),
                mean_log_cells: mean(&ls),
            }
        })
        .collect();
    let start = depth - (depth / 3).max(2);
    let xs: Vec<f64> = table[start..].iter().map(|r| r.depth as f64).collect();
    let ys: Vec<f64> = table[start..].iter().map(|r| r.entropy).collect();
    Ok(EntropyEstimate { value: regression_slope(&xs, &ys), cells, words: base_samples, table })
}

/// Entropy of `⋁_{j<n} f_w^{−j} ξ` under the fiber measure over `w_0`, and the
/// number of refined cells with positive mass.
fn refined_entropy(m: &MeasureCandidate, sys: &RandomSystem, cells: usize, word: &[usize]) -> Result<(f64, usize)> {
    let itinerary = |x: f64| -> Vec<u32> {
        let mut y = x;
        word.iter()
            .enumerate()
            .map(|(j, &s)| {
                let c = cell_of(y, cells) as u32;
                if j + 1 < word.len() {
                    y = sys.step(s, y);
                }
                c
            })
            .collect()
    };
    let mut index: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut masses: Vec<f64> = Vec::new();
    let mut add = |key: Vec<u32>, mass: f64| {
        let k = *index.entry(key).or_insert_with(|| {
            masses.push(0.0);
            masses.len() - 1
        });
        masses[k] += mass;
    };
    if let Some(atoms) = m.atoms() {
        for (x, mass) in atoms {
            add(itinerary(x), mass);
        }
    } else {
        let weights = &m.weights[word[0]];
        let mut cdf = Vec::with_capacity(m.cells + 1);
        cdf.push(0.0);
        for w in weights {
            cdf.push(cdf.last().unwrap() + w);
        }
        let mass_below = |x: f64| -> f64 {
            let t = x.clamp(0.0, 1.0) * m.cells as f64;
            let k = (t.floor() as usize).min(m.cells - 1);
            cdf[k] + weights[k] * (t - k as f64)
        };
        let points = refinement_points(sys, cells, word)?;
        for pair in points.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b <= a {
                continue;
            }
            let mass = mass_below(b) - mass_below(a);
            add(itinerary(0.5 * (a + b)), mass.max(0.0));
        }
    }
    let h = shannon_entropy(masses.iter().copied());
    let occupied = masses.iter().filter(|&&v| v > 0.0).count();
    Ok((h, occupied))
}

/// Sorted points of `[0, 1]` between which every `f^j_w` (`j < n`) is
/// monotone and stays in one cell of `ξ`.
fn refinement_points(sys: &RandomSystem, cells: usize, word: &[usize]) -> Result<Vec<f64>> {
    let base: Vec<f64> = (0..=cells).map(|i| i as f64 / cells as f64).collect();
    let mut set = base.clone();
    for j in (0..word.len().saturating_sub(1)).rev() {
        let map = sys.fiber(word[j]);
        let mut next = base.clone();
        for b in map.branches() {
            next.push(b.lo);
            next.push(b.hi);
            let (lo, hi) = b.image();
            next.extend(set.iter().filter(|&&y| y >= lo && y <= hi).map(|&y| b.inverse(y)));
        }
        next.sort_by(|a, b| a.total_cmp(b));
        next.dedup();
        if next.len() > MAX_REFINED_POINTS {
            return Err(Error::Resolution(format!(
                "refined partition exceeds {MAX_REFINED_POINTS} breakpoints; lower the depth or cell count"
            )));
        }
        set = next;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{iterate, BaseProcess, FiberMap};

    const LN2: f64 = std::f64::consts::LN_2;

    fn doubling() -> RandomSystem {
        RandomSystem::deterministic(FiberMap::doubling(), Phase::Circle).unwrap()
    }

    fn uniform(cells: usize) -> MeasureCandidate {
        MeasureCandidate::ulam_stationary(vec![1.0], vec![vec![1.0 / cells as f64; cells]]).unwrap()
    }

    #[test]
    fn constants_integrate_to_themselves() {
        let sys = doubling();
        let phi = Potential::Constant { value: 1.7 };
        let orbit = iterate(&sys, 0.1234, &[0; 100], None).unwrap();
        let cands = vec![
            MeasureCandidate::empirical(&sys, orbit, 10, 16).unwrap(),
            MeasureCandidate::periodic_orbit(&sys, &[0, 0], &[0, 1], 16).unwrap(),
            MeasureCandidate::dirac(&sys, 0, 0.0, 16).unwrap(),
            uniform(16),
        ];
        for c in &cands {
            assert!((birkhoff_integral(c, &phi, sys.phase) - 1.7).abs() < 1e-12, "{}", c.label);
        }
    }

    #[test]
    fn dirac_integral_is_point_value() {
        let sys = doubling();
        let phi = Potential::Bump { center: 0.0, radius: 0.1, height: 1.0, scale: 1.0 };
        let d = MeasureCandidate::dirac(&sys, 0, 0.0, 8).unwrap();
        assert_eq!(birkhoff_integral(&d, &phi, sys.phase), 1.0);
    }

    #[test]
    fn empirical_coordinate_average_is_lebesgue() {
        // floating-point doubling shifts out every mantissa bit and reaches 0
        // within 60 steps, so the long-orbit check runs on the tripling map
        let sys = doubling();
        let collapsed = iterate(&sys, 0.1234567, &[0; 80], None).unwrap();
        assert_eq!(*collapsed.points.last().unwrap(), 0.0);

        let tri = RandomSystem::deterministic(FiberMap::linear(3), Phase::Circle).unwrap();
        let orbit = iterate(&tri, 0.1234567, &vec![0; 100_000], None).unwrap();
        let m = MeasureCandidate::empirical(&tri, orbit, 100, 64).unwrap();
        let v = birkhoff_integral(&m, &Potential::Coordinate, tri.phase);
        assert!((v - 0.5).abs() < 0.01, "{v}");
    }

    #[test]
    fn periodic_point_returns() {
        let sys = doubling();
        let m = MeasureCandidate::periodic_orbit(&sys, &[0, 0, 0], &[0, 1, 1], 8).unwrap();
        let MeasureKind::PeriodicOrbit { point, .. } = m.kind else { unreachable!() };
        // 0.011 repeating in binary = 3/7
        assert!((point - 3.0 / 7.0).abs() < 1e-12, "{point}");
        assert!(MeasureCandidate::periodic_orbit(&sys, &[0], &[2], 8).is_err());
    }

    #[test]
    fn entropy_examples() {
        let sys = doubling();
        let d = MeasureCandidate::dirac(&sys, 0, 0.0, 8).unwrap();
        assert_eq!(entropy_estimate(&d, &sys, 8, 6, 2, 1).unwrap().value, 0.0);

        let two = MeasureCandidate::ulam_stationary(vec![1.0], vec![vec![0.5, 0.5]]).unwrap();
        let e = entropy_estimate(&two, &sys, 2, 12, 1, 1).unwrap();
        assert!((e.value - LN2).abs() < 0.05, "{}", e.value);

        let u = uniform(10);
        let e = entropy_estimate(&u, &sys, 10, 2, 1, 1).unwrap();
        assert!((e.table[0].entropy - 10f64.ln()).abs() < 1e-12);
        assert_eq!(e.table[0].mean_cells, 10.0);
    }

    #[test]
    fn doubling_uniform_ulam_entropy_is_log_two() {
        let sys = doubling();
        let e = entropy_estimate(&uniform(64), &sys, 64, 10, 1, 3).unwrap();
        assert!((e.value - LN2).abs() < 0.05, "{}", e.value);
        for row in &e.table {
            assert!(row.entropy <= row.mean_log_cells + 1e-9);
        }
    }

    #[test]
    fn random_base_entropy_averages_branch_counts() {
        let sys = RandomSystem::new(
            BaseProcess::iid(vec![0.5, 0.5]).unwrap(),
            vec![FiberMap::doubling(), FiberMap::linear(3)],
            Phase::Circle,
        )
        .unwrap();
        let u = MeasureCandidate::ulam_stationary(vec![0.5, 0.5], vec![vec![1.0 / 16.0; 16]; 2]).unwrap();
        let e = entropy_estimate(&u, &sys, 16, 9, 40, 9).unwrap();
        let target = 0.5 * (2f64.ln() + 3f64.ln());
        assert!((e.value - target).abs() < 0.15, "{}", e.value);
    }

    #[test]
    fn periodic_entropy_vanishes() {
        let sys = doubling();
        let m = MeasureCandidate::periodic_orbit(&sys, &[0, 0, 0], &[0, 1, 1], 8).unwrap();
        let e = entropy_estimate(&m, &sys, 8, 9, 1, 1).unwrap();
        assert!(e.value.abs() < 1e-12);
        assert!(e.table.last().unwrap().entropy <= 3f64.ln() + 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let sys = doubling();
        assert!(entropy_estimate(&uniform(4), &sys, 1, 4, 1, 0).is_err());
        assert!(entropy_estimate(&uniform(4), &sys, 4, 1, 1, 0).is_err());
        assert!(MeasureCandidate::ulam_stationary(vec![1.0], vec![vec![0.3, 0.3]]).is_err());
        assert_eq!(min_cells(0.1), 10);
    }
}
