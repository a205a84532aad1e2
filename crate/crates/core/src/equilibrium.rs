//! Ulam discretization of the fiber maps and weighted transfer-operator
//! cocycles for pressure and equilibrium-state candidates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::MeasureCandidate;
use crate::potentials::Potential;
use crate::pressure::VALUE_RESOLUTION;
use crate::stats::{mean, standard_error, with_resolution, CompensatedSum};
use crate::system::{BaseProcess, Phase, RandomSystem};

const ROW_TOL: f64 = 1e-10;
pub const DEFAULT_BURN_IN: usize = 100;

/// Row-sparse matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRows {
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i].iter().filter(|e| e.0 == j).map(|e| e.1).sum()
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|e| e.1).sum()
    }

    /// `out = (v ∘ d) M` for a row vector `v` and diagonal `d`.
    fn left_mul(&self, v: &[f64], d: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, row) in self.rows.iter().enumerate() {
            let a = v[i] * d[i];
            if a == 0.0 {
                continue;
            }
            for &(j, m) in row {
                out[j] += a * m;
            }
        }
    }

    /// `out = d ∘ (M x)` for a column vector `x`.
    fn right_mul(&self, x: &[f64], d: &[f64], out: &mut [f64]) {
        for (i, row) in self.rows.iter().enumerate() {
            out[i] = d[i] * row.iter().map(|&(j, m)| m * x[j]).sum::<f64>();
        }
    }

    /// Sparse triplets `(i, j, value)`.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        self.rows.iter().enumerate().flat_map(|(i, r)| r.iter().map(move |&(j, v)| (i, j, v))).collect()
    }
}

/// Per-symbol Ulam matrices on `cells` uniform intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UlamModel {
    pub cells: usize,
    pub base: BaseProcess,
    pub phase: Phase,
    /// `A_s[i][j] = |cell_i ∩ f_s^{−1} cell_j| / |cell_i|`, row-stochastic.
    pub transition: Vec<SparseRows>,
    /// `C_s[i][j] = |f_s(cell_i) ∩ cell_j| / |cell_j|`, the discretized
    /// transfer operator used in weighted products.
    pub coverage: Vec<SparseRows>,
    /// Rows whose cell image has zero length, per symbol.
    pub degenerate: Vec<Vec<usize>>,
}

fn push(row: &mut Vec<(usize, f64)>, j: usize, v: f64) {
    if v <= 0.0 {
        return;
    }
    match row.iter_mut().find(|e| e.0 == j) {
        Some(e) => e.1 += v,
        None => row.push((j, v)),
    }
}

/// Builds the Ulam model from exact branch inverses.
pub fn build_ulam(sys: &RandomSystem, cells: usize) -> Result<UlamModel> {
    if cells < 2 {
        return Err(Error::Domain(format!("Ulam model needs at least 2 cells, got {cells}")));
    }
    let width = 1.0 / cells as f64;
    let edge = |k: usize| k as f64 / cells as f64;
    let mut transition = Vec::new();
    let mut coverage = Vec::new();
    let mut degenerate = Vec::new();
    for map in &sys.fibers {
        let mut a_rows = vec![Vec::new(); cells];
        let mut c_rows = vec![Vec::new(); cells];
        let mut bad = Vec::new();
        for i in 0..cells {
            let (ci0, ci1) = (edge(i), edge(i + 1));
            for b in map.branches() {
                let (lo, hi) = (ci0.max(b.lo), ci1.min(b.hi));
                if hi <= lo {
                    continue;
                }
                let (ya, yb) = (b.eval(lo), b.eval(hi));
                let (u, v) = (ya.min(yb), ya.max(yb));
                let j0 = ((u * cells as f64).floor() as usize).min(cells - 1);
                let j1 = ((v * cells as f64).ceil() as usize).clamp(j0 + 1, cells);
                for j in j0..j1 {
                    let (p, q) = (u.max(edge(j)), v.min(edge(j + 1)));
                    if q <= p {
                        continue;
                    }
                    push(&mut c_rows[i], j, (q - p) / width);
                    let pre = (b.inverse(q) - b.inverse(p)).abs();
                    push(&mut a_rows[i], j, pre / width);
                }
            }
            let total: f64 = a_rows[i].iter().map(|e: &(usize, f64)| e.1).sum();
            if (total - 1.0).abs() > ROW_TOL {
                bad.push(i);
                let y = map.apply(0.5 * (ci0 + ci1), sys.phase);
                a_rows[i] = vec![(((y * cells as f64).floor() as usize).min(cells - 1), 1.0)];
            } else {
                a_rows[i].iter_mut().for_each(|e| e.1 /= total);
            }
            a_rows[i].sort_by_key(|e| e.0);
            c_rows[i].sort_by_key(|e| e.0);
        }
        transition.push(SparseRows { rows: a_rows });
        coverage.push(SparseRows { rows: c_rows });
        degenerate.push(bad);
    }
    Ok(UlamModel { cells, base: sys.base.clone(), phase: sys.phase, transition, coverage, degenerate })
}

impl UlamModel {
    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.cells as f64
    }

    /// `e^{φ_s}` at the cell centers.
    pub fn potential_weights(&self, phi: &Potential, symbol: usize) -> Vec<f64> {
        (0..self.cells).map(|i| phi.eval(symbol, self.center(i), self.phase).exp()).collect()
    }

    fn all_weights(&self, phi: &Potential) -> Vec<Vec<f64>> {
        (0..self.transition.len()).map(|s| self.potential_weights(phi, s)).collect()
    }

    pub fn write_weights_csv<W: std::io::Write>(&self, weights: &[f64], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Domain(format!("csv write failed: {e}"));
        w.write_record(["cell", "center", "weight"]).map_err(io)?;
        for (i, v) in weights.iter().enumerate() {
            w.write_record([i.to_string(), self.center(i).to_string(), v.to_string()]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Domain(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocycleEstimate {
    /// `−∞` when some product vanishes.
    pub value: f64,
    pub per_word: Vec<f64>,
    pub standard_error: f64,
    pub length: usize,
    pub burn_in: usize,
}

/// Lyapunov exponent of the weighted cocycle `v ↦ v·diag(e^{φ_s}) C_s`
/// along sampled words, after `burn_in` discarded steps.
pub fn cocycle_pressure(
    model: &UlamModel,
    phi: &Potential,
    word_samples: usize,
    n: usize,
    seed: u64,
    burn_in: usize,
) -> Result<CocycleEstimate> {
    if n < 10 {
        return Err(Error::Domain(format!("cocycle length {n} below 10")));
    }
    if word_samples == 0 {
        return Err(Error::Domain("at least one word is required".into()));
    }
    let weights = model.all_weights(phi);
    let per_word: Vec<f64> = (0..word_samples as u64)
        .into_par_iter()
        .map(|i| {
            let word = model.base.word(burn_in + n, seed, i);
            let mut v = vec![1.0 / model.cells as f64; model.cells];
            let mut next = vec![0.0; model.cells];
            let mut acc = CompensatedSum::new();
            for (t, &s) in word.iter().enumerate() {
                model.coverage[s].left_mul(&v, &weights[s], &mut next);
                let norm: f64 = next.iter().sum();
                if !(norm > 0.0) {
                    return f64::NEG_INFINITY;
                }
                next.iter_mut().for_each(|x| *x /= norm);
                std::mem::swap(&mut v, &mut next);
                if t >= burn_in {
                    acc.add(norm.ln());
                }
            }
            acc.value() / n as f64
        })
        .collect();
    let value = if per_word.iter().any(|v| *v == f64::NEG_INFINITY) { f64::NEG_INFINITY } else { mean(&per_word) };
    let se = with_resolution(standard_error(&per_word), value, VALUE_RESOLUTION);
    Ok(CocycleEstimate { value, standard_error: se, per_word, length: n, burn_in })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub candidate: MeasureCandidate,
    pub weights: Vec<f64>,
    /// Total variation moved by one averaged random step.
    pub stationarity_tv: f64,
    pub warnings: Vec<String>,
}

fn normalize(v: &mut [f64]) -> f64 {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
    s
}

fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// One averaged step `μ ↦ Σ_s p_s μ A_s`.
pub fn push_forward(model: &UlamModel, mu: &[f64]) -> Vec<f64> {
    let ones = vec![1.0; model.cells];
    let mut out = vec![0.0; model.cells];
    let mut tmp = vec![0.0; model.cells];
    for (s, &p) in model.base.probabilities().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        model.transition[s].left_mul(mu, &ones, &mut tmp);
        out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += p * t);
    }
    out
}

/// Equilibrium-state candidate `μ_i ∝ h_i ν_i`, with `h` the forward
/// (row) and `ν` the backward (column) normalized weighted products.
///
/// With a single symbol both are leading eigenvectors found by power
/// iteration; otherwise each sampled word contributes forward products over
/// its first half and backward products over its second half.
pub fn equilibrium_candidate(model: &UlamModel, phi: &Potential, word_samples: usize, n: usize, seed: u64) -> Result<EquilibriumResult> {
    if n < 10 {
        return Err(Error::Domain(format!("product length {n} below 10")));
    }
    if word_samples == 0 {
        return Err(Error::Domain("at least one word is required".into()));
    }
    let cells = model.cells;
    let weights = model.all_weights(phi);
    let mut warnings = Vec::new();
    let product = |word: &[usize]| -> Vec<f64> {
        let half = word.len() / 2;
        let mut h = vec![1.0 / cells as f64; cells];
        let mut next = vec![0.0; cells];
        for &s in &word[..half] {
            model.coverage[s].left_mul(&h, &weights[s], &mut next);
            normalize(&mut next);
            std::mem::swap(&mut h, &mut next);
        }
        let mut nu = vec![1.0 / cells as f64; cells];
        for &s in word[half..].iter().rev() {
            model.coverage[s].right_mul(&nu, &weights[s], &mut next);
            normalize(&mut next);
            std::mem::swap(&mut nu, &mut next);
        }
        let mut mu: Vec<f64> = h.iter().zip(&nu).map(|(a, b)| a * b).collect();
        normalize(&mut mu);
        mu
    };
    let weights_out = if model.base.alphabet_size() == 1 {
        let (mu, converged) = power_pair(model, &weights[0], n.max(1000));
        if !converged {
            warnings.push("power iteration did not reach 1e-12 relative change".into());
        }
        mu
    } else {
        let per_word: Vec<Vec<f64>> = (0..word_samples as u64)
            .into_par_iter()
            .map(|i| product(&model.base.word(n, seed, i)))
            .collect();
        let average = |ws: &[Vec<f64>]| -> Vec<f64> {
            let mut acc = vec![0.0; cells];
            for w in ws {
                acc.iter_mut().zip(w).for_each(|(a, b)| *a += b);
            }
            normalize(&mut acc);
            acc
        };
        let all = average(&per_word);
        if per_word.len() >= 2 {
            let k = per_word.len() / 2;
            let tv = total_variation(&average(&per_word[..k]), &average(&per_word[k..]));
            if tv > 0.05 {
                warnings.push(format!("word-averaged density oscillates: halves differ by {tv:.4} in total variation"));
            }
        }
        all
    };
    if weights_out.iter().sum::<f64>() == 0.0 {
        return Err(Error::Domain("weighted products vanished; disconnected model".into()));
    }
    let stationarity_tv = total_variation(&push_forward(model, &weights_out), &weights_out);
    let candidate = MeasureCandidate::ulam_stationary(
        model.base.probabilities().to_vec(),
        vec![weights_out.clone(); model.base.alphabet_size()],
    )?;
    Ok(EquilibriumResult { candidate, weights: weights_out, stationarity_tv, warnings })
}

/// Left and right leading eigenvectors of `diag(d) C`, multiplied.
fn power_pair(model: &UlamModel, d: &[f64], max_iter: usize) -> (Vec<f64>, bool) {
    let cells = model.cells;
    let c = &model.coverage[0];
    let mut h = vec![1.0 / cells as f64; cells];
    let mut nu = h.clone();
    let mut next = vec![0.0; cells];
    let mut converged = false;
    for _ in 0..max_iter {
        c.left_mul(&h, d, &mut next);
        normalize(&mut next);
        let dh = total_variation(&h, &next);
        std::mem::swap(&mut h, &mut next);
        c.right_mul(&nu, d, &mut next);
        normalize(&mut next);
        let dn = total_variation(&nu, &next);
        std::mem::swap(&mut nu, &mut next);
        if dh < 1e-13 && dn < 1e-13 {
            converged = true;
            break;
        }
    }
    let mut mu: Vec<f64> = h.iter().zip(&nu).map(|(a, b)| a * b).collect();
    normalize(&mut mu);
    (mu, converged)
}

/// Leading eigenvalue of `diag(d) C` by power iteration (deterministic models).
pub fn leading_eigenvalue(model: &UlamModel, phi: &Potential, iterations: usize) -> f64 {
    let d = model.potential_weights(phi, 0);
    let mut v = vec![1.0 / model.cells as f64; model.cells];
    let mut next = vec![0.0; model.cells];
    let mut lambda = 0.0;
    for _ in 0..iterations {
        model.coverage[0].left_mul(&v, &d, &mut next);
        lambda = normalize(&mut next);
        std::mem::swap(&mut v, &mut next);
    }
    lambda
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{BranchSpec, FiberMap, FiberRule};

    const LN2: f64 = std::f64::consts::LN_2;

    fn deterministic(rule: FiberRule, phase: Phase) -> RandomSystem {
        RandomSystem::deterministic(FiberMap::new(rule).unwrap(), phase).unwrap()
    }

    fn doubling() -> RandomSystem {
        RandomSystem::deterministic(FiberMap::doubling(), Phase::Circle).unwrap()
    }

    #[test]
    fn doubling_rows_split_in_half() {
        let m = build_ulam(&doubling(), 4).unwrap();
        for i in 0..4 {
            let row = &m.transition[0].rows[i];
            assert_eq!(row.len(), 2);
            assert!(row.iter().all(|e| (e.1 - 0.5).abs() < 1e-15));
            let expected: Vec<usize> = vec![(2 * i) % 4, (2 * i + 1) % 4];
            assert_eq!(row.iter().map(|e| e.0).collect::<Vec<_>>(), expected);
        }
    }

    #[test]
    fn identity_map_gives_identity_matrix() {
        let sys = deterministic(
            FiberRule::Piecewise { breakpoints: vec![0.0, 1.0], branches: vec![BranchSpec::Affine { start: 0.0, end: 1.0 }] },
            Phase::Interval,
        );
        let m = build_ulam(&sys, 8).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(m.transition[0].get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn tent_rows_mirror_doubling() {
        let tent = build_ulam(&deterministic(FiberRule::Tent { slope: 2.0 }, Phase::Interval), 4).unwrap();
        let dbl = build_ulam(&doubling(), 4).unwrap();
        for i in 0..4 {
            let mirror = if i < 2 { i } else { 3 - i };
            for j in 0..4 {
                assert!((tent.transition[0].get(i, j) - dbl.transition[0].get(mirror, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rows_stochastic_and_supported_on_images() {
        let sys = deterministic(FiberRule::Quadratic { a: 2.0, coupling: 0.0, shift: 0.0 }, Phase::Interval);
        let m = build_ulam(&sys, 64).unwrap();
        let map = sys.fiber(0);
        for i in 0..64 {
            assert!((m.transition[0].row_sum(i) - 1.0).abs() < 1e-10);
            let (a, b) = (i as f64 / 64.0, (i + 1) as f64 / 64.0);
            // image of the cell through every branch it meets
            let images: Vec<(f64, f64)> = map
                .branches()
                .iter()
                .filter(|br| br.hi > a && br.lo < b)
                .map(|br| {
                    let (p, q) = (br.eval(a.max(br.lo)), br.eval(b.min(br.hi)));
                    (p.min(q), p.max(q))
                })
                .collect();
            for &(j, v) in &m.transition[0].rows[i] {
                let (c, d) = (j as f64 / 64.0, (j + 1) as f64 / 64.0);
                assert!(v > 0.0);
                assert!(images.iter().any(|&(p, q)| q > c && p < d), "row {i} col {j}");
            }
        }
    }

    #[test]
    fn doubling_cocycle_is_log_two() {
        let m = build_ulam(&doubling(), 64).unwrap();
        let est = cocycle_pressure(&m, &Potential::Null, 2, 50, 0, DEFAULT_BURN_IN).unwrap();
        assert!((est.value - LN2).abs() < 1e-6);
        let c = 0.7;
        let shifted = cocycle_pressure(&m, &Potential::Constant { value: c }, 2, 50, 0, DEFAULT_BURN_IN).unwrap();
        assert!((shifted.value - LN2 - c).abs() < 1e-6);
        assert!(cocycle_pressure(&m, &Potential::Null, 2, 5, 0, 0).is_err());
    }

    #[test]
    fn random_doubling_tripling_cocycle() {
        let sys = RandomSystem::new(
            BaseProcess::iid(vec![0.5, 0.5]).unwrap(),
            vec![FiberMap::doubling(), FiberMap::linear(3)],
            Phase::Circle,
        )
        .unwrap();
        let m = build_ulam(&sys, 64).unwrap();
        let est = cocycle_pressure(&m, &Potential::Null, 200, 500, 4, DEFAULT_BURN_IN).unwrap();
        let target = 0.5 * (2f64.ln() + 3f64.ln());
        assert!((est.value - target).abs() < 0.01, "{}", est.value);
        // each step's normalizer is exactly the branch count
        for (i, v) in est.per_word.iter().enumerate().take(5) {
            let word = m.base.word(DEFAULT_BURN_IN + 500, 4, i as u64);
            let exact: f64 = word[DEFAULT_BURN_IN..].iter().map(|&s| ((s + 2) as f64).ln()).sum::<f64>() / 500.0;
            assert!((v - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_cocycle_matches_eigenvalue() {
        let sys = deterministic(FiberRule::Quadratic { a: 2.0, coupling: 0.0, shift: 0.0 }, Phase::Interval);
        let m = build_ulam(&sys, 128).unwrap();
        let phi = Potential::Bump { center: 0.0, radius: 0.2, height: 1.0, scale: 1.5 };
        let lambda = leading_eigenvalue(&m, &phi, 5000);
        let est = cocycle_pressure(&m, &phi, 1, 400, 0, DEFAULT_BURN_IN).unwrap();
        assert!((est.value - lambda.ln()).abs() < 1e-9, "{} vs {}", est.value, lambda.ln());
    }

    #[test]
    fn equilibrium_examples() {
        let m = build_ulam(&doubling(), 64).unwrap();
        let eq = equilibrium_candidate(&m, &Potential::Null, 1, 100, 0).unwrap();
        assert!(eq.weights.iter().all(|w| (w - 1.0 / 64.0).abs() < 1e-8));

        let three = RandomSystem::deterministic(FiberMap::linear(3), Phase::Circle).unwrap();
        let m3 = build_ulam(&three, 63).unwrap();
        let eq = equilibrium_candidate(&m3, &Potential::Null, 1, 100, 0).unwrap();
        assert!(eq.weights.iter().all(|w| (w - 1.0 / 63.0).abs() < 1e-8));

        let bump = Potential::Bump { center: 0.0, radius: 0.1, height: 1.0, scale: 8.0 };
        let eq = equilibrium_candidate(&m, &bump, 1, 100, 0).unwrap();
        let near: f64 = (0..64).filter(|&i| m.phase.distance(m.center(i), 0.0) < 0.1).map(|i| eq.weights[i]).sum();
        assert!(near > 0.5, "{near}");
    }

    #[test]
    fn equilibrium_is_nearly_stationary() {
        // the Lebesgue-based push is only meaningful for equilibrium states
        // with a cell-wise uniform density, as on linear full-branch maps
        let m = build_ulam(&doubling(), 256).unwrap();
        let eq = equilibrium_candidate(&m, &Potential::Null, 1, 100, 0).unwrap();
        assert!(eq.stationarity_tv <= 0.01);

        let sys = RandomSystem::new(
            BaseProcess::iid(vec![0.5, 0.5]).unwrap(),
            vec![FiberMap::doubling(), FiberMap::linear(3)],
            Phase::Circle,
        )
        .unwrap();
        let m = build_ulam(&sys, 256).unwrap();
        let eq = equilibrium_candidate(&m, &Potential::Null, 20, 100, 0).unwrap();
        assert!(eq.stationarity_tv <= 0.01);
        assert!(eq.warnings.is_empty());
    }

    #[test]
    fn logistic_equilibrium_approaches_arcsine_law() {
        // the maximal entropy measure of 4u(1−u) is the arcsine law; the
        // coverage-matrix discretization is not Markov here, so agreement is
        // only up to the discretization error at 256 cells
        let logistic = deterministic(FiberRule::Quadratic { a: 2.0, coupling: 0.0, shift: 0.0 }, Phase::Interval);
        let m = build_ulam(&logistic, 256).unwrap();
        let eq = equilibrium_candidate(&m, &Potential::Null, 1, 100, 0).unwrap();
        let arcsine = |x: f64| (2.0 / std::f64::consts::PI) * x.sqrt().asin();
        let tv: f64 = 0.5
            * (0..256)
                .map(|i| (eq.weights[i] - (arcsine((i + 1) as f64 / 256.0) - arcsine(i as f64 / 256.0))).abs())
                .sum::<f64>();
        assert!(tv < 0.05, "{tv}");
        assert!(eq.stationarity_tv < 0.05, "{}", eq.stationarity_tv);
    }
}
