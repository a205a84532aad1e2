//! Random topological pressure from separated sets and from Carathéodory
//! covers by dynamic balls, and the variational inequality check.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{birkhoff_integral, entropy_estimate, MeasureCandidate, ZoomingFlag};
use crate::potentials::Potential;
use crate::stats::{log_sum_exp, mean, standard_error, with_resolution};
use crate::system::{Phase, RandomSystem};

/// Grid points must be at least this many times denser than `1/ε`.
pub const MIN_POINTS_PER_EPS: f64 = 4.0;
/// Relative floating-point resolution folded into reported standard errors.
pub const VALUE_RESOLUTION: f64 = 1e-12;

/// Greedy selection of Bowen-separated centers along one word.
struct Centers<'a> {
    sys: &'a RandomSystem,
    n: usize,
    eps: f64,
    buckets: usize,
    index: HashMap<u64, Vec<u32>>,
    /// Orbit segments `x_0 … x_{n−1}` of the centers, flattened.
    orbits: Vec<f64>,
    weights: Vec<f64>,
}

impl<'a> Centers<'a> {
    fn new(sys: &'a RandomSystem, n: usize, eps: f64) -> Self {
        let buckets = ((1.0 / eps).floor() as usize).max(1);
        Self { sys, n, eps, buckets, index: HashMap::new(), orbits: Vec::new(), weights: Vec::new() }
    }

    fn bucket(&self, x: f64) -> usize {
        ((x * self.buckets as f64).floor().max(0.0) as usize).min(self.buckets - 1)
    }

    fn neighbours(&self, b: usize) -> Vec<usize> {
        let nb = self.buckets as i64;
        let mut v: Vec<usize> = (-1..=1)
            .filter_map(|d| {
                let k = b as i64 + d;
                match self.sys.phase {
                    Phase::Circle => Some(k.rem_euclid(nb) as usize),
                    Phase::Interval => (0..nb).contains(&k).then_some(k as usize),
                }
            })
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    fn key(&self, first: usize, last: usize) -> u64 {
        (first * self.buckets + last) as u64
    }

    /// First stored center within Bowen distance `ε` of `orbit`.
    fn find_close(&self, orbit: &[f64]) -> Option<usize> {
        let n = self.n;
        let phase = self.sys.phase;
        for b0 in self.neighbours(self.bucket(orbit[0])) {
            for b1 in self.neighbours(self.bucket(orbit[n - 1])) {
                let Some(list) = self.index.get(&self.key(b0, b1)) else { continue };
                for &c in list {
                    let stored = &self.orbits[c as usize * n..(c as usize + 1) * n];
                    if (0..n).rev().all(|j| phase.distance(stored[j], orbit[j]) <= self.eps) {
                        return Some(c as usize);
                    }
                }
            }
        }
        None
    }

    fn insert(&mut self, orbit: &[f64], weight: f64) {
        let c = self.weights.len() as u32;
        let key = self.key(self.bucket(orbit[0]), self.bucket(orbit[self.n - 1]));
        self.index.entry(key).or_default().push(c);
        self.orbits.extend_from_slice(orbit);
        self.weights.push(weight);
    }
}

/// Fills `orbit` with `x_0 … x_{n−1}` and returns `S_n φ`.
fn orbit_sum(sys: &RandomSystem, phi: &Potential, word: &[usize], x: f64, orbit: &mut [f64]) -> f64 {
    let mut y = x;
    let mut s = 0.0;
    let n = orbit.len();
    for (j, slot) in orbit.iter_mut().enumerate() {
        *slot = y;
        s += phi.eval(word[j], y, sys.phase);
        if j + 1 < n {
            y = sys.step(word[j], y);
        }
    }
    s
}

fn grid_point(k: usize, grid: usize) -> f64 {
    (k as f64 + 0.5) / grid as f64
}

fn check_inputs(sys: &RandomSystem, n: usize, eps: f64, word: &[usize], grid: usize) -> Result<()> {
    if n == 0 || word.len() < n {
        return Err(Error::Domain(format!("need a word of length at least n = {n}")));
    }
    if !(eps > 0.0) {
        return Err(Error::Domain("epsilon must be positive".into()));
    }
    if eps <= MIN_POINTS_PER_EPS / grid as f64 {
        return Err(Error::Resolution(format!(
            "grid of {grid} points is too coarse for epsilon {eps}; need epsilon > {}/grid",
            MIN_POINTS_PER_EPS
        )));
    }
    if let Some(&s) = word[..n].iter().find(|&&s| s >= sys.fibers.len()) {
        return Err(Error::Domain(format!("symbol {s} outside the alphabet")));
    }
    Ok(())
}

/// `log Σ_{y∈F} e^{S_nφ(w,y)}` over a maximal `(w, n, ε)`-separated set `F`
/// built greedily from `grid` points in order of decreasing `S_nφ`.
pub fn separated_pressure(
    sys: &RandomSystem,
    phi: &Potential,
    n: usize,
    eps: f64,
    word: &[usize],
    grid: usize,
) -> Result<f64> {
    check_inputs(sys, n, eps, word, grid)?;
    let word = &word[..n];
    let mut buf = vec![0.0; n];
    let sums: Vec<f64> = (0..grid).map(|k| orbit_sum(sys, phi, word, grid_point(k, grid), &mut buf)).collect();
    let mut order: Vec<usize> = (0..grid).collect();
    order.sort_by(|&a, &b| sums[b].total_cmp(&sums[a]).then(a.cmp(&b)));
    let mut centers = Centers::new(sys, n, eps);
    for k in order {
        orbit_sum(sys, phi, word, grid_point(k, grid), &mut buf);
        if centers.find_close(&buf).is_none() {
            centers.insert(&buf, sums[k]);
        }
    }
    Ok(log_sum_exp(centers.weights.iter().copied()))
}

/// Greedy cover of the `members` grid points by dynamic balls `B_w(x, n, ε)`
/// in index order; returns `log Σ_B e^{S_nφ(B)}` with `S_nφ(B)` the largest
/// sum over sampled members of `B`.
fn cover_log_sum(sys: &RandomSystem, phi: &Potential, n: usize, eps: f64, word: &[usize], members: &[f64]) -> f64 {
    let word = &word[..n];
    let mut buf = vec![0.0; n];
    let mut centers = Centers::new(sys, n, eps);
    for &x in members {
        let s = orbit_sum(sys, phi, word, x, &mut buf);
        match centers.find_close(&buf) {
            Some(c) => centers.weights[c] = centers.weights[c].max(s),
            None => centers.insert(&buf, s),
        }
    }
    log_sum_exp(centers.weights.iter().copied())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSettings {
    /// Grid points per Bowen-ball width `ε / Λ_w`.
    pub grid_factor: f64,
    pub max_grid: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self { grid_factor: 4.0, max_grid: 1 << 22 }
    }
}

impl GridSettings {
    /// Grid size resolving Bowen balls of depth `n` along `word`, and whether
    /// it hit the cap.
    pub fn grid_for(&self, sys: &RandomSystem, word: &[usize], n: usize, eps: f64) -> (usize, bool) {
        let log_lambda: f64 = word[..n.saturating_sub(1)].iter().map(|&s| sys.fiber(s).max_abs_derivative().max(1.0).ln()).sum();
        let want = self.grid_factor * log_lambda.exp() / eps;
        let floor = (MIN_POINTS_PER_EPS / eps).floor() + 1.0;
        let want = want.max(floor).ceil();
        if want > self.max_grid as f64 {
            ((self.max_grid as f64).max(floor) as usize, true)
        } else {
            (want as usize, false)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureRow {
    pub n: usize,
    pub eps: f64,
    /// Word average of `log Σ e^{S_nφ}`.
    pub mean_log_sum: f64,
    /// Word average of `(1/n) log Σ e^{S_nφ}`.
    pub rate: f64,
    pub standard_error: f64,
    pub max_grid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureEstimate {
    pub value: f64,
    pub n: usize,
    pub eps: f64,
    pub samples: usize,
    pub standard_error: f64,
    pub table: Vec<PressureRow>,
    /// Per-word growth rates behind `value`.
    pub per_word: Vec<f64>,
    pub warnings: Vec<String>,
}

impl PressureEstimate {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Domain(format!("csv write failed: {e}"));
        w.write_record(["n", "eps", "mean_log_sum", "rate", "standard_error", "max_grid"]).map_err(io)?;
        for r in &self.table {
            w.write_record([
                r.n.to_string(),
                r.eps.to_string(),
                r.mean_log_sum.to_string(),
                r.rate.to_string(),
                r.standard_error.to_string(),
                r.max_grid.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Domain(e.to_string()))
    }
}

/// Separated-set pressure over `base_samples` words.
///
/// The reading at the smallest `ε` is the mean over words of the growth
/// rate `(L(n_last) − L(n_ref)) / (n_last − n_ref)`, `L = log Σ e^{S_nφ}`,
/// with `n_ref` the middle entry of the `n` schedule; this cancels the
/// `log(1/ε)` offset that `L/n` carries at finite `n`.
pub fn pressure_estimate(
    sys: &RandomSystem,
    phi: &Potential,
    eps_schedule: &[f64],
    n_schedule: &[usize],
    base_samples: usize,
    seed: u64,
    grid: &GridSettings,
) -> Result<PressureEstimate> {
    if eps_schedule.is_empty() || n_schedule.is_empty() || base_samples == 0 {
        return Err(Error::Config("pressure schedules and base samples must be non-empty".into()));
    }
    if eps_schedule.windows(2).any(|w| w[1] >= w[0]) || n_schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("epsilon schedule must decrease and n schedule increase".into()));
    }
    if n_schedule[0] == 0 {
        return Err(Error::Config("n schedule entries must be positive".into()));
    }
    let n_max = *n_schedule.last().unwrap();
    let words: Vec<Vec<usize>> = (0..base_samples as u64).map(|i| sys.base.word(n_max, seed, i)).collect();

    // identical prefixes share one computation
    let mut tasks: Vec<(usize, usize, &[usize])> = Vec::new();
    let mut task_of: HashMap<(usize, usize, &[usize]), usize> = HashMap::new();
    let mut lookup = vec![vec![vec![0usize; n_schedule.len()]; eps_schedule.len()]; base_samples];
    for (wi, w) in words.iter().enumerate() {
        for (ei, _) in eps_schedule.iter().enumerate() {
            for (ni, &n) in n_schedule.iter().enumerate() {
                let key = (ei, n, &w[..n]);
                let t = *task_of.entry(key).or_insert_with(|| {
                    tasks.push(key);
                    tasks.len() - 1
                });
                lookup[wi][ei][ni] = t;
            }
        }
    }
    let results: Vec<(f64, usize, bool)> = tasks
        .par_iter()
        .map(|&(ei, n, w)| {
            let eps = eps_schedule[ei];
            let (g, capped) = grid.grid_for(sys, w, n, eps);
            separated_pressure(sys, phi, n, eps, w, g).map(|v| (v, g, capped))
        })
        .collect::<Result<_>>()?;

    let mut warnings = Vec::new();
    if results.iter().any(|r| r.2) {
        warnings.push(format!("grid capped at {} points; Bowen balls under-resolved for some cells", grid.max_grid));
    }
    let mut table = Vec::new();
    for (ei, &eps) in eps_schedule.iter().enumerate() {
        for (ni, &n) in n_schedule.iter().enumerate() {
            let ls: Vec<f64> = (0..base_samples).map(|wi| results[lookup[wi][ei][ni]].0).collect();
            let rates: Vec<f64> = ls.iter().map(|l| l / n as f64).collect();
            let max_grid = (0..base_samples).map(|wi| results[lookup[wi][ei][ni]].1).max().unwrap_or(0);
            table.push(PressureRow {
                n,
                eps,
                mean_log_sum: mean(&ls),
                rate: mean(&rates),
                standard_error: standard_error(&rates),
                max_grid,
            });
        }
    }

    let ei = eps_schedule.len() - 1;
    let last = n_schedule.len() - 1;
    let r = last / 2;
    let per_word: Vec<f64> = (0..base_samples)
        .map(|wi| {
            let l_last = results[lookup[wi][ei][last]].0;
            if last == 0 {
                l_last / n_max as f64
            } else {
                let l_ref = results[lookup[wi][ei][r]].0;
                (l_last - l_ref) / (n_max - n_schedule[r]) as f64
            }
        })
        .collect();
    let value = mean(&per_word);
    let se = with_resolution(standard_error(&per_word), value, VALUE_RESOLUTION);

    // growth between consecutive depths should settle
    if n_schedule.len() >= 3 {
        let rows: Vec<&PressureRow> = table.iter().filter(|row| row.eps == eps_schedule[ei]).collect();
        let increments: Vec<f64> =
            rows.windows(2).map(|w| (w[1].mean_log_sum - w[0].mean_log_sum) / (w[1].n - w[0].n) as f64).collect();
        let spread = increments.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
            - increments.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        if spread > (3.0 * se).max(0.1) {
            warnings.push(format!("per-n growth has not stabilised (spread {spread:.4})"));
        }
    }
    Ok(PressureEstimate {
        value,
        n: n_max,
        eps: eps_schedule[ei],
        samples: base_samples,
        standard_error: se,
        table,
        per_word,
        warnings,
    })
}

/// Settings of the Carathéodory estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaratheodorySettings {
    pub eps: f64,
    /// Depth of the shallow cover `N_min`.
    pub n_min: usize,
    /// The deep cover uses depth `N_min + span`.
    pub span: usize,
    pub beta_bracket: (f64, f64),
    /// Largest `|β|` the bracket may be widened to.
    pub beta_cap: f64,
    pub tolerance: f64,
    pub grid: GridSettings,
}

impl Default for CaratheodorySettings {
    fn default() -> Self {
        Self {
            eps: 1.0 / 32.0,
            n_min: 4,
            span: 4,
            beta_bracket: (-1.0, 3.0),
            beta_cap: 1e3,
            tolerance: 1e-9,
            grid: GridSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaratheodoryEstimate {
    /// `−∞` when no sampled point lies in the subset.
    pub value: f64,
    pub per_word: Vec<Option<f64>>,
    pub words_used: usize,
    pub standard_error: f64,
    pub bracket_widened: bool,
    pub warnings: Vec<String>,
}

/// Carathéodory pressure of the subset selected by `classifier`.
///
/// For each word the classified-in grid points are covered greedily by
/// dynamic balls of uniform depth `N_min` and `N_min + span`; the critical
/// `β` is where `m_β(N_min + span) = m_β(N_min)`, found by bisection.
pub fn caratheodory_pressure<C>(
    sys: &RandomSystem,
    phi: &Potential,
    classifier: &C,
    settings: &CaratheodorySettings,
    word_samples: usize,
    seed: u64,
) -> Result<CaratheodoryEstimate>
where
    C: Fn(f64, &[usize]) -> bool + Sync,
{
    let s = settings;
    if s.n_min == 0 || s.span == 0 || word_samples == 0 {
        return Err(Error::Config("Carathéodory depths and word samples must be positive".into()));
    }
    if !(s.beta_bracket.0 < s.beta_bracket.1) {
        return Err(Error::Config("beta bracket must be increasing".into()));
    }
    let n_hi = s.n_min + s.span;
    let per_word: Vec<(Option<f64>, bool, bool)> = (0..word_samples as u64)
        .into_par_iter()
        .map(|i| {
            let word = sys.base.word(n_hi, seed, i);
            let (g, capped) = s.grid.grid_for(sys, &word, n_hi, s.eps);
            check_inputs(sys, n_hi, s.eps, &word, g)?;
            let members: Vec<f64> = (0..g).map(|k| grid_point(k, g)).filter(|&x| classifier(x, &word)).collect();
            if members.is_empty() {
                return Ok((None, false, capped));
            }
            let l_lo = cover_log_sum(sys, phi, s.n_min, s.eps, &word, &members);
            let l_hi = cover_log_sum(sys, phi, n_hi, s.eps, &word, &members);
            let transition = |beta: f64| (l_hi - beta * n_hi as f64) - (l_lo - beta * s.n_min as f64);
            let (beta, widened) = bisect_decreasing(transition, s.beta_bracket, s.beta_cap, s.tolerance)?;
            Ok((Some(beta), widened, capped))
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = per_word.iter().filter_map(|r| r.0).collect();
    let mut warnings = Vec::new();
    if per_word.iter().any(|r| r.2) {
        warnings.push(format!("grid capped at {} points", s.grid.max_grid));
    }
    let bracket_widened = per_word.iter().any(|r| r.1);
    if values.is_empty() {
        warnings.push("classifier selected no sampled point; empty-set pressure".into());
        return Ok(CaratheodoryEstimate {
            value: f64::NEG_INFINITY,
            per_word: per_word.iter().map(|r| r.0).collect(),
            words_used: 0,
            standard_error: 0.0,
            bracket_widened,
            warnings,
        });
    }
    let value = mean(&values);
    Ok(CaratheodoryEstimate {
        value,
        per_word: per_word.iter().map(|r| r.0).collect(),
        words_used: values.len(),
        standard_error: with_resolution(standard_error(&values), value, s.tolerance.max(VALUE_RESOLUTION)),
        bracket_widened,
        warnings,
    })
}

/// Root of a decreasing function, widening the bracket up to `cap`.
fn bisect_decreasing(f: impl Fn(f64) -> f64, bracket: (f64, f64), cap: f64, tol: f64) -> Result<(f64, bool)> {
    let (mut a, mut b) = bracket;
    let mut widened = false;
    while f(a) < 0.0 {
        if a <= -cap {
            return Err(Error::Domain(format!("no β crossing above −{cap}")));
        }
        a = (a - (b - a)).max(-cap);
        widened = true;
    }
    while f(b) > 0.0 {
        if b >= cap {
            return Err(Error::Domain(format!("no β crossing below {cap}")));
        }
        b = (b + (b - a)).min(cap);
        widened = true;
    }
    while b - a > tol {
        let m = 0.5 * (a + b);
        if f(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    Ok((0.5 * (a + b), widened))
}

/// Entropy settings used when evaluating candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropySettings {
    pub cells: usize,
    pub depth: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for EntropySettings {
    fn default() -> Self {
        Self { cells: 64, depth: 10, samples: 8, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateValue {
    pub label: String,
    pub flag: ZoomingFlag,
    pub entropy: f64,
    pub integral: f64,
    /// `h_μ + ∫φ dμ`.
    pub value: f64,
}

/// `h_μ + ∫φ dμ` for one candidate.
pub fn free_energy(sys: &RandomSystem, phi: &Potential, m: &MeasureCandidate, es: &EntropySettings) -> Result<CandidateValue> {
    let entropy = entropy_estimate(m, sys, es.cells, es.depth, es.samples, es.seed)?.value;
    let integral = birkhoff_integral(m, phi, sys.phase);
    Ok(CandidateValue { label: m.label.clone(), flag: m.flag, entropy, integral, value: entropy + integral })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalReport {
    pub pressure: f64,
    pub tolerance: f64,
    pub candidates: Vec<CandidateValue>,
    pub best: f64,
    pub best_label: String,
    /// `pressure − best`.
    pub gap: f64,
    /// Every candidate satisfies `h + ∫φ ≤ pressure + tol`.
    pub pass: bool,
}

pub fn variational_check(
    sys: &RandomSystem,
    phi: &Potential,
    candidates: &[MeasureCandidate],
    pressure: &PressureEstimate,
    tol: f64,
    es: &EntropySettings,
) -> Result<VariationalReport> {
    if candidates.is_empty() {
        return Err(Error::Domain("variational check needs at least one candidate".into()));
    }
    let values: Vec<CandidateValue> =
        candidates.par_iter().map(|m| free_energy(sys, phi, m, es)).collect::<Result<_>>()?;
    let (bi, best) = values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v.value > acc.1 { (i, v.value) } else { acc });
    Ok(VariationalReport {
        pressure: pressure.value,
        tolerance: tol,
        pass: values.iter().all(|v| v.value <= pressure.value + tol),
        best,
        best_label: values[bi].label.clone(),
        gap: pressure.value - best,
        candidates: values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{BaseProcess, FiberMap};

    const LN2: f64 = std::f64::consts::LN_2;

    fn doubling() -> RandomSystem {
        RandomSystem::deterministic(FiberMap::doubling(), Phase::Circle).unwrap()
    }

    fn doubling_tripling() -> RandomSystem {
        RandomSystem::new(
            BaseProcess::iid(vec![0.5, 0.5]).unwrap(),
            vec![FiberMap::doubling(), FiberMap::linear(3)],
            Phase::Circle,
        )
        .unwrap()
    }

    #[test]
    fn separated_count_matches_grid_oracle() {
        // on the grid, doubling-map centers sit m steps apart with m the least
        // integer such that 2^{n−1}·m/M > ε, and the wrap gap removes the last
        let sys = doubling();
        let (n, eps) = (10, 2f64.powi(-6));
        let grid = (4.0 * 2f64.powi(9) / eps) as usize;
        let v = separated_pressure(&sys, &Potential::Null, n, eps, &[0; 10], grid).unwrap();
        let m = (1..).find(|&m| 2f64.powi(n as i32 - 1) * m as f64 / grid as f64 > eps).unwrap();
        let oracle = ((grid / m) as f64).ln();
        assert!((v - oracle).abs() < 1e-12, "{v} vs {oracle}");
        // the count is 2^{n−1}/ε up to the grid factor 4/5, and grows by log 2
        assert!((v - (2f64.powi(9) / eps * 0.8).ln()).abs() < 0.01);
        let v11 = separated_pressure(&sys, &Potential::Null, 11, eps, &[0; 11], 2 * grid).unwrap();
        assert!((v11 - v - LN2).abs() < 0.01);
    }

    #[test]
    fn single_point_when_eps_exceeds_diameter() {
        let sys = doubling();
        let v = separated_pressure(&sys, &Potential::Null, 1, 0.6, &[0], 64).unwrap();
        assert_eq!(v, 0.0);
        assert!(matches!(separated_pressure(&sys, &Potential::Null, 4, 0.01, &[0; 4], 100), Err(Error::Resolution(_))));
    }

    #[test]
    fn constant_potential_shifts_by_n_c() {
        let sys = doubling();
        let word = [0; 8];
        let base = separated_pressure(&sys, &Potential::Null, 8, 1.0 / 16.0, &word, 4096).unwrap();
        let shifted = separated_pressure(&sys, &Potential::Constant { value: 0.3 }, 8, 1.0 / 16.0, &word, 4096).unwrap();
        assert!((shifted - base - 8.0 * 0.3).abs() < 1e-12);
    }

    #[test]
    fn doubling_pressure_estimate() {
        let sys = doubling();
        let est = pressure_estimate(&sys, &Potential::Null, &[1.0 / 16.0, 1.0 / 32.0], &[4, 6, 8], 3, 1, &GridSettings::default())
            .unwrap();
        assert!((est.value - LN2).abs() < 0.05, "{}", est.value);
        assert_eq!(est.table.len(), 6);
        let shifted = pressure_estimate(
            &sys,
            &Potential::Constant { value: -LN2 },
            &[1.0 / 16.0, 1.0 / 32.0],
            &[4, 6, 8],
            3,
            1,
            &GridSettings::default(),
        )
        .unwrap();
        assert!(shifted.value.abs() < 0.05);
    }

    #[test]
    fn random_doubling_tripling_pressure() {
        let sys = doubling_tripling();
        let est = pressure_estimate(&sys, &Potential::Null, &[1.0 / 16.0], &[4, 6, 8], 40, 3, &GridSettings::default()).unwrap();
        let target = 0.5 * (2f64.ln() + 3f64.ln());
        assert!((est.value - target).abs() < 0.05 + 2.0 * est.standard_error, "{} ± {}", est.value, est.standard_error);
    }

    #[test]
    fn schedule_validation() {
        let sys = doubling();
        let g = GridSettings::default();
        assert!(pressure_estimate(&sys, &Potential::Null, &[0.1, 0.2], &[4], 1, 0, &g).is_err());
        assert!(pressure_estimate(&sys, &Potential::Null, &[0.1], &[6, 4], 1, 0, &g).is_err());
        assert!(pressure_estimate(&sys, &Potential::Null, &[], &[4], 1, 0, &g).is_err());
    }

    #[test]
    fn caratheodory_full_set_and_empty() {
        let sys = doubling();
        let s = CaratheodorySettings::default();
        let full = caratheodory_pressure(&sys, &Potential::Null, &|_, _| true, &s, 2, 0).unwrap();
        assert!((full.value - LN2).abs() < 0.1, "{}", full.value);
        let shifted = caratheodory_pressure(&sys, &Potential::Constant { value: 0.5 }, &|_, _| true, &s, 2, 0).unwrap();
        assert!((shifted.value - full.value - 0.5).abs() < 0.1);
        let empty = caratheodory_pressure(&sys, &Potential::Null, &|_, _| false, &s, 2, 0).unwrap();
        assert_eq!(empty.value, f64::NEG_INFINITY);
    }

    #[test]
    fn bisection_widens_bracket() {
        let (root, widened) = bisect_decreasing(|b| 7.5 - b, (0.0, 1.0), 100.0, 1e-10).unwrap();
        assert!((root - 7.5).abs() < 1e-9);
        assert!(widened);
        assert!(bisect_decreasing(|_| 1.0, (0.0, 1.0), 10.0, 1e-6).is_err());
    }

    #[test]
    fn variational_doubling() {
        let sys = doubling();
        let p = pressure_estimate(&sys, &Potential::Null, &[1.0 / 32.0], &[4, 6, 8], 1, 0, &GridSettings::default()).unwrap();
        let cands = vec![
            MeasureCandidate::ulam_stationary(vec![1.0], vec![vec![1.0 / 64.0; 64]]).unwrap(),
            MeasureCandidate::dirac(&sys, 0, 0.0, 64).unwrap(),
        ];
        let r = variational_check(&sys, &Potential::Null, &cands, &p, 0.05, &EntropySettings::default()).unwrap();
        assert!(r.pass);
        assert!((r.candidates[0].value - LN2).abs() < 0.05);
        assert_eq!(r.candidates[1].value, 0.0);
        assert!(r.gap.abs() <= 0.05);
    }
}
