//! Zooming contraction families `α_n(r)` and a sampled check of the four
//! defining axioms (sub-identity, monotonicity, composition, summability).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::task_rng;

/// Additive slack on the composition axiom.
pub const COMPOSITION_SLACK: f64 = 1e-12;

/// Coefficient rule `a_n` of a Lipschitz contraction `α_n(r) = a_n r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum LipschitzRule {
    /// `a_n = (n + offset)^(-exponent)`.
    Power { exponent: f64, offset: f64 },
    /// `a_n = ratio^n`.
    Geometric { ratio: f64 },
}

impl LipschitzRule {
    pub fn coefficient(&self, n: usize) -> f64 {
        match *self {
            LipschitzRule::Power { exponent, offset } => (n as f64 + offset).powf(-exponent),
            LipschitzRule::Geometric { ratio } => ratio.powi(n as i32),
        }
    }
}

/// Closed-form contraction rules that are neither exponential nor Lipschitz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum CustomRule {
    /// `α_n(r) = r / (1 + scale·n·√r)²`, the contraction of an intermittent
    /// branch with a neutral fixed point (scale 1 gives `(1/(1+n√r))² r`).
    RationalSqrt { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContractionKind {
    Exponential { rate: f64 },
    Lipschitz { coefficients: LipschitzRule },
    Custom { form: CustomRule },
}

/// A contraction family together with the largest `n` it is queried at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoomingContraction {
    pub kind: ContractionKind,
    pub horizon: usize,
}

impl ZoomingContraction {
    pub fn exponential(rate: f64, horizon: usize) -> Self {
        Self { kind: ContractionKind::Exponential { rate }, horizon }
    }

    pub fn lipschitz(coefficients: LipschitzRule, horizon: usize) -> Self {
        Self { kind: ContractionKind::Lipschitz { coefficients }, horizon }
    }

    pub fn rational_sqrt(scale: f64, horizon: usize) -> Self {
        Self { kind: ContractionKind::Custom { form: CustomRule::RationalSqrt { scale } }, horizon }
    }

    /// `α_n(r)`.
    pub fn evaluate(&self, n: usize, r: f64) -> Result<f64> {
        if n == 0 || n > self.horizon {
            return Err(Error::Horizon { n, max: self.horizon });
        }
        if !(r >= 0.0) {
            return Err(Error::Domain(format!("contraction argument r = {r} must be nonnegative")));
        }
        Ok(self.eval_unchecked(n, r))
    }

    pub(crate) fn eval_unchecked(&self, n: usize, r: f64) -> f64 {
        if r == 0.0 {
            return 0.0;
        }
        match self.kind {
            ContractionKind::Exponential { rate } => (-rate * n as f64).exp() * r,
            ContractionKind::Lipschitz { coefficients } => coefficients.coefficient(n) * r,
            ContractionKind::Custom { form: CustomRule::RationalSqrt { scale } } => {
                let d = 1.0 + scale * n as f64 * r.sqrt();
                r / (d * d)
            }
        }
    }
}

/// Settings for the finite axiom check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AxiomSettings {
    /// Upper end of the `r` range used for axioms 1-3.
    pub r_max: f64,
    /// Number of deterministic grid points in (0,1) for the summability axiom.
    pub summability_grid: usize,
    /// Largest allowed tail `Σ_{n=N/2+1}^{N} α_n(r)`.
    pub tail_bound: f64,
}

impl Default for AxiomSettings {
    fn default() -> Self {
        Self { r_max: 2.0, summability_grid: 64, tail_bound: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub m: Option<usize>,
    pub n: usize,
    pub r: f64,
    pub s: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomCheck {
    pub passed: bool,
    pub counterexample: Option<Counterexample>,
}

impl AxiomCheck {
    fn new() -> Self {
        Self { passed: true, counterexample: None }
    }

    fn fail(&mut self, c: Counterexample) {
        if self.passed {
            self.passed = false;
            self.counterexample = Some(c);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub samples: usize,
    pub seed: u64,
    pub sub_identity: AxiomCheck,
    pub monotone: AxiomCheck,
    pub composition: AxiomCheck,
    pub summability: AxiomCheck,
    /// Largest partial sum `Σ_{n≤N} α_n(r)` seen over the tested `r`.
    pub sup_partial_sum: f64,
    /// Largest tail over the tested `r`.
    pub max_tail: f64,
}

impl AxiomReport {
    pub fn all_passed(&self) -> bool {
        self.sub_identity.passed && self.monotone.passed && self.composition.passed && self.summability.passed
    }
}

pub fn check_axioms(c: &ZoomingContraction, samples: usize, seed: u64) -> Result<AxiomReport> {
    check_axioms_with(c, samples, seed, &AxiomSettings::default())
}

pub fn check_axioms_with(
    c: &ZoomingContraction,
    samples: usize,
    seed: u64,
    settings: &AxiomSettings,
) -> Result<AxiomReport> {
    if samples == 0 {
        return Err(Error::Domain("axiom check needs at least one sample".into()));
    }
    if c.horizon < 2 {
        return Err(Error::Horizon { n: c.horizon, max: 2 });
    }
    let big_n = c.horizon;
    let mut rng = task_rng(seed, 0);
    let mut sub_identity = AxiomCheck::new();
    let mut monotone = AxiomCheck::new();
    let mut composition = AxiomCheck::new();
    let mut summability_rs = Vec::with_capacity(samples + settings.summability_grid + 1);

    for _ in 0..samples {
        let n = rng.gen_range(1..big_n);
        let m = rng.gen_range(1..=big_n - n);
        let r = sample_open(&mut rng, settings.r_max);
        let s = sample_open(&mut rng, settings.r_max);
        let (lo, hi) = if r <= s { (r, s) } else { (s, r) };

        let a = c.eval_unchecked(n, r);
        if !(a < r) {
            sub_identity.fail(Counterexample { m: None, n, r, s: None, lhs: a, rhs: r });
        }
        if lo < hi {
            let (al, ah) = (c.eval_unchecked(n, lo), c.eval_unchecked(n, hi));
            if !(al < ah) {
                monotone.fail(Counterexample { m: None, n, r: lo, s: Some(hi), lhs: al, rhs: ah });
            }
        }
        let lhs = c.eval_unchecked(m, a);
        let rhs = c.eval_unchecked(m + n, r);
        if !(lhs <= rhs + COMPOSITION_SLACK) {
            composition.fail(Counterexample { m: Some(m), n, r, s: None, lhs, rhs });
        }
        summability_rs.push(sample_open(&mut rng, 1.0));
    }

    let g = settings.summability_grid;
    summability_rs.extend((1..=g).map(|k| k as f64 / (g + 1) as f64));
    summability_rs.push(1.0 - 1e-12);

    let mut summability = AxiomCheck::new();
    let mut sup_partial_sum: f64 = 0.0;
    let mut max_tail: f64 = 0.0;
    let mut worst: Option<(f64, f64)> = None;
    for &r in &summability_rs {
        let mut total = 0.0;
        let mut tail = 0.0;
        for n in 1..=big_n {
            let a = c.eval_unchecked(n, r);
            total += a;
            if n > big_n / 2 {
                tail += a;
            }
        }
        sup_partial_sum = sup_partial_sum.max(total);
        if tail > max_tail || worst.is_none() {
            max_tail = max_tail.max(tail);
            worst = Some((r, tail));
        }
        if !total.is_finite() {
            summability.fail(Counterexample { m: None, n: big_n, r, s: None, lhs: total, rhs: f64::INFINITY });
        }
    }
    if let Some((r, tail)) = worst {
        if !(tail <= settings.tail_bound) {
            summability.fail(Counterexample { m: None, n: big_n, r, s: None, lhs: tail, rhs: settings.tail_bound });
        }
    }

    Ok(AxiomReport {
        samples,
        seed,
        sub_identity,
        monotone,
        composition,
        summability,
        sup_partial_sum,
        max_tail,
    })
}

/// Uniform draw from the open interval `(0, hi]`, never returning 0.
fn sample_open<R: Rng>(rng: &mut R, hi: f64) -> f64 {
    loop {
        let u: f64 = rng.gen::<f64>() * hi;
        if u > 0.0 {
            return u;
        }
    }
}
