//! Random skew products over a Bernoulli shift with one-dimensional fibers.
//!
//! Every fiber map is stored as a list of monotone branches on consecutive
//! subintervals of `[0, 1]`. Each branch knows its value, derivative and
//! inverse in closed form, which is what the pull-back, Ulam and entropy
//! routines rely on.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potentials::Potential;
use crate::seeds::task_rng;

/// Floor applied to truncated distances before taking logarithms.
pub const DISTANCE_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    #[default]
    Interval,
    Circle,
}

impl Phase {
    /// Metric on the phase space; arc length on the circle (at most 1/2).
    pub fn distance(self, x: f64, y: f64) -> f64 {
        let d = (x - y).abs();
        match self {
            Phase::Interval => d,
            Phase::Circle => {
                let d = d.rem_euclid(1.0);
                d.min(1.0 - d)
            }
        }
    }

    /// Brings a coordinate back into the phase space.
    pub fn normalize(self, x: f64) -> f64 {
        match self {
            Phase::Interval => x.clamp(0.0, 1.0),
            Phase::Circle => {
                let y = x.rem_euclid(1.0);
                if y >= 1.0 {
                    0.0
                } else {
                    y
                }
            }
        }
    }

    pub fn diameter(self) -> f64 {
        match self {
            Phase::Interval => 1.0,
            Phase::Circle => 0.5,
        }
    }
}

/// How base words are realized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Realization {
    /// i.i.d. symbols drawn with the base probabilities.
    #[default]
    Iid,
    /// A fixed finite word, extended periodically.
    Word { symbols: Vec<usize> },
}

/// One-sided Bernoulli shift on a finite alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseProcess {
    probabilities: Vec<f64>,
    realization: Realization,
}

impl BaseProcess {
    pub fn new(probabilities: Vec<f64>, realization: Realization) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::Config("base alphabet must be non-empty".into()));
        }
        if probabilities.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Config("symbol probabilities must be nonnegative".into()));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("symbol probabilities sum to {total}, not 1")));
        }
        if let Realization::Word { symbols } = &realization {
            if symbols.is_empty() || symbols.iter().any(|&s| s >= probabilities.len()) {
                return Err(Error::Config("explicit word must be non-empty and use alphabet symbols".into()));
            }
        }
        Ok(Self { probabilities, realization })
    }

    pub fn iid(probabilities: Vec<f64>) -> Result<Self> {
        Self::new(probabilities, Realization::Iid)
    }

    /// Single-symbol base (a deterministic system).
    pub fn single() -> Self {
        Self { probabilities: vec![1.0], realization: Realization::Iid }
    }

    pub fn alphabet_size(&self) -> usize {
        self.probabilities.len()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn realization(&self) -> &Realization {
        &self.realization
    }

    /// Draws word number `index` of length `n` from the stream keyed by `seed`.
    pub fn word(&self, n: usize, seed: u64, index: u64) -> Vec<usize> {
        match &self.realization {
            Realization::Word { symbols } => (0..n).map(|i| symbols[i % symbols.len()]).collect(),
            Realization::Iid => {
                if self.probabilities.len() == 1 {
                    return vec![0; n];
                }
                let mut rng = task_rng(seed, index);
                (0..n).map(|_| self.draw(rng.gen::<f64>())).collect()
            }
        }
    }

    fn draw(&self, u: f64) -> usize {
        let mut acc = 0.0;
        let last = self.probabilities.iter().rposition(|&p| p > 0.0).unwrap_or(0);
        for (s, &p) in self.probabilities.iter().enumerate() {
            acc += p;
            if p > 0.0 && u < acc {
                return s;
            }
        }
        last
    }
}

/// `count` words of length `n`, deterministic in `seed`.
pub fn sample_base(base: &BaseProcess, n: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    (0..count as u64).map(|i| base.word(n, seed, i)).collect()
}

/// Closed-form rule of a single monotone branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BranchRule {
    /// `x ↦ slope·x + offset`.
    Affine { slope: f64, offset: f64 },
    /// `x ↦ amplitude·4x(1−x)` restricted to one side of 1/2.
    Quadratic { amplitude: f64 },
    /// `x ↦ t/(1 − scale·√t)²` with `t = x − lo`; neutral fixed point at `lo`.
    Intermittent { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub lo: f64,
    pub hi: f64,
    pub rule: BranchRule,
}

impl Branch {
    pub fn eval(&self, x: f64) -> f64 {
        match self.rule {
            BranchRule::Affine { slope, offset } => slope * x + offset,
            BranchRule::Quadratic { amplitude } => amplitude * 4.0 * x * (1.0 - x),
            BranchRule::Intermittent { scale } => {
                let t = (x - self.lo).max(0.0);
                let d = 1.0 - scale * t.sqrt();
                t / (d * d)
            }
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self.rule {
            BranchRule::Affine { slope, .. } => slope,
            BranchRule::Quadratic { amplitude } => amplitude * (4.0 - 8.0 * x),
            BranchRule::Intermittent { scale } => {
                let t = (x - self.lo).max(0.0);
                (1.0 - scale * t.sqrt()).powi(-3)
            }
        }
    }

    pub fn increasing(&self) -> bool {
        self.eval(self.hi) > self.eval(self.lo)
    }

    /// Image interval `[min, max]` of the closed branch.
    pub fn image(&self) -> (f64, f64) {
        let (a, b) = (self.eval(self.lo), self.eval(self.hi));
        (a.min(b), a.max(b))
    }

    /// Inverse of the branch at `y`, clamped to the branch domain.
    pub fn inverse(&self, y: f64) -> f64 {
        let x = match self.rule {
            BranchRule::Affine { slope, offset } => (y - offset) / slope,
            BranchRule::Quadratic { amplitude } => {
                let root = (1.0 - y / amplitude).max(0.0).sqrt();
                if self.hi <= 0.5 {
                    0.5 * (1.0 - root)
                } else {
                    0.5 * (1.0 + root)
                }
            }
            BranchRule::Intermittent { scale } => {
                let y = y.max(0.0);
                let d = 1.0 + scale * y.sqrt();
                self.lo + y / (d * d)
            }
        };
        x.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Branch description used by `piecewise` fiber maps in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum BranchSpec {
    /// Maps its interval affinely onto `[start, end]` (decreasing when `end < start`).
    Affine { start: f64, end: f64 },
    /// Increasing branch with a neutral fixed point at its left end.
    Intermittent { scale: f64 },
}

/// Family rule of a fiber map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FiberRule {
    Doubling,
    /// `x ↦ d·x mod 1`.
    Linear { degree: u32 },
    /// `x ↦ slope·min(x, 1−x)`.
    Tent { slope: f64 },
    /// Quadratic fiber `u ↦ A·4u(1−u)` with `A = ((a+2)/4)(1 − coupling·shift)`;
    /// `a = 2`, `coupling = 0` is the full map conjugate to `x ↦ 2 − x²`.
    Quadratic {
        a: f64,
        #[serde(default)]
        coupling: f64,
        #[serde(default)]
        shift: f64,
    },
    Piecewise { breakpoints: Vec<f64>, branches: Vec<BranchSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiberMap {
    rule: FiberRule,
    branches: Vec<Branch>,
    critical: Vec<f64>,
}

impl<'de> Deserialize<'de> for FiberMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rule = FiberRule::deserialize(d)?;
        FiberMap::new(rule).map_err(serde::de::Error::custom)
    }
}

const IMAGE_TOL: f64 = 1e-12;

impl FiberMap {
    pub fn new(rule: FiberRule) -> Result<Self> {
        let (branches, critical) = match &rule {
            FiberRule::Doubling => (linear_branches(2), vec![]),
            FiberRule::Linear { degree } => {
                if *degree == 0 {
                    return Err(Error::Config("linear fiber degree must be positive".into()));
                }
                (linear_branches(*degree), vec![])
            }
            FiberRule::Tent { slope } => {
                if !(*slope > 0.0 && *slope <= 2.0) {
                    return Err(Error::Config(format!("tent slope {slope} outside (0, 2]")));
                }
                (
                    vec![
                        Branch { lo: 0.0, hi: 0.5, rule: BranchRule::Affine { slope: *slope, offset: 0.0 } },
                        Branch { lo: 0.5, hi: 1.0, rule: BranchRule::Affine { slope: -slope, offset: *slope } },
                    ],
                    vec![0.5],
                )
            }
            FiberRule::Quadratic { a, coupling, shift } => {
                let amplitude = (a + 2.0) / 4.0 * (1.0 - coupling * shift);
                if !(amplitude > 0.0 && amplitude <= 1.0) {
                    return Err(Error::Config(format!(
                        "quadratic amplitude {amplitude} outside (0, 1]; need a <= 2 and coupling*shift in [0, 1)"
                    )));
                }
                (
                    vec![
                        Branch { lo: 0.0, hi: 0.5, rule: BranchRule::Quadratic { amplitude } },
                        Branch { lo: 0.5, hi: 1.0, rule: BranchRule::Quadratic { amplitude } },
                    ],
                    vec![0.5],
                )
            }
            FiberRule::Piecewise { breakpoints, branches } => piecewise_branches(breakpoints, branches)?,
        };
        for b in &branches {
            let (lo, hi) = b.image();
            if lo < -IMAGE_TOL || hi > 1.0 + IMAGE_TOL {
                return Err(Error::Config(format!("branch on [{}, {}] leaves [0, 1]", b.lo, b.hi)));
            }
        }
        Ok(Self { rule, branches, critical })
    }

    pub fn doubling() -> Self {
        Self::new(FiberRule::Doubling).expect("doubling is valid")
    }

    pub fn linear(degree: u32) -> Self {
        Self::new(FiberRule::Linear { degree }).expect("positive degree")
    }

    pub fn rule(&self) -> &FiberRule {
        &self.rule
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn critical_set(&self) -> &[f64] {
        &self.critical
    }

    /// Index of the branch used at `x` (right-continuous at breakpoints).
    pub fn branch_index(&self, x: f64) -> usize {
        let k = self.branches.partition_point(|b| b.lo <= x);
        k.saturating_sub(1).min(self.branches.len() - 1)
    }

    /// `f(x)` brought back into the phase space.
    pub fn apply(&self, x: f64, phase: Phase) -> f64 {
        if let FiberRule::Linear { degree } = self.rule {
            if phase == Phase::Circle {
                return phase.normalize(degree as f64 * x);
            }
        }
        let b = &self.branches[self.branch_index(x)];
        phase.normalize(b.eval(x))
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.branches[self.branch_index(x)].derivative(x)
    }

    /// `log|f'(x)|`, or `None` on the critical set or where `f'` vanishes.
    pub fn log_derivative(&self, x: f64) -> Option<f64> {
        if self.critical.iter().any(|&c| c == x) {
            return None;
        }
        let d = self.derivative(x).abs();
        (d > 0.0 && d.is_finite()).then(|| d.ln())
    }

    /// Largest `|f'|` over the interval.
    pub fn max_abs_derivative(&self) -> f64 {
        self.branches
            .iter()
            .map(|b| b.derivative(b.lo).abs().max(b.derivative(b.hi).abs()))
            .fold(0.0, f64::max)
    }

    /// All branches increasing and onto `[0, 1]`, so the map has a monotone
    /// degree-`k` lift and is continuous on the circle.
    pub fn is_circle_map(&self) -> bool {
        self.branches.iter().all(|b| {
            (b.eval(b.lo)).abs() <= IMAGE_TOL && (b.eval(b.hi) - 1.0).abs() <= IMAGE_TOL && b.increasing()
        })
    }

    /// Whether every branch is affine.
    pub fn is_piecewise_linear(&self) -> bool {
        self.branches.iter().all(|b| matches!(b.rule, BranchRule::Affine { .. }))
    }
}

fn linear_branches(degree: u32) -> Vec<Branch> {
    let d = degree as f64;
    (0..degree)
        .map(|k| Branch {
            lo: k as f64 / d,
            hi: (k + 1) as f64 / d,
            rule: BranchRule::Affine { slope: d, offset: -(k as f64) },
        })
        .collect()
}

fn piecewise_branches(breakpoints: &[f64], specs: &[BranchSpec]) -> Result<(Vec<Branch>, Vec<f64>)> {
    if breakpoints.len() != specs.len() + 1 || specs.is_empty() {
        return Err(Error::Config("piecewise map needs one more breakpoint than branches".into()));
    }
    if breakpoints[0] != 0.0 || *breakpoints.last().unwrap() != 1.0 {
        return Err(Error::Config("piecewise breakpoints must start at 0 and end at 1".into()));
    }
    if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("piecewise breakpoints must be strictly increasing".into()));
    }
    let mut branches = Vec::with_capacity(specs.len());
    for (k, spec) in specs.iter().enumerate() {
        let (lo, hi) = (breakpoints[k], breakpoints[k + 1]);
        let rule = match *spec {
            BranchSpec::Affine { start, end } => {
                let slope = (end - start) / (hi - lo);
                if slope == 0.0 {
                    return Err(Error::Config(format!("branch {k} is constant; branches must be strictly monotone")));
                }
                BranchRule::Affine { slope, offset: start - slope * lo }
            }
            BranchSpec::Intermittent { scale } => {
                if !(scale > 0.0) || !(1.0 - scale * (hi - lo).sqrt() > 0.0) {
                    return Err(Error::Config(format!("intermittent branch {k} blows up on [{lo}, {hi}]")));
                }
                BranchRule::Intermittent { scale }
            }
        };
        branches.push(Branch { lo, hi, rule });
    }
    let critical = branches
        .windows(2)
        .filter(|w| w[0].increasing() != w[1].increasing())
        .map(|w| w[0].hi)
        .collect();
    Ok((branches, critical))
}

/// Skew product with a Bernoulli base and one fiber map per symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSystem {
    pub base: BaseProcess,
    pub fibers: Vec<FiberMap>,
    pub phase: Phase,
}

impl RandomSystem {
    pub fn new(base: BaseProcess, fibers: Vec<FiberMap>, phase: Phase) -> Result<Self> {
        if fibers.len() != base.alphabet_size() {
            return Err(Error::Config(format!(
                "{} fiber maps for an alphabet of size {}",
                fibers.len(),
                base.alphabet_size()
            )));
        }
        if phase == Phase::Circle && !fibers.iter().all(FiberMap::is_circle_map) {
            return Err(Error::Config("circle phase space needs increasing full-branch fiber maps".into()));
        }
        Ok(Self { base, fibers, phase })
    }

    /// Deterministic system with a single fiber map.
    pub fn deterministic(map: FiberMap, phase: Phase) -> Result<Self> {
        Self::new(BaseProcess::single(), vec![map], phase)
    }

    pub fn fiber(&self, symbol: usize) -> &FiberMap {
        &self.fibers[symbol]
    }

    /// One fiber step `f_{w_0}(x)`.
    pub fn step(&self, symbol: usize, x: f64) -> f64 {
        self.fibers[symbol].apply(x, self.phase)
    }

    /// `f^n_w(x)` for the whole word.
    pub fn compose(&self, word: &[usize], x: f64) -> f64 {
        word.iter().fold(x, |y, &s| self.step(s, y))
    }

    pub fn distance(&self, x: f64, y: f64) -> f64 {
        self.phase.distance(x, y)
    }

    pub fn is_piecewise_linear(&self) -> bool {
        self.fibers.iter().all(FiberMap::is_piecewise_linear)
    }

    fn check_word(&self, word: &[usize]) -> Result<()> {
        if let Some(&s) = word.iter().find(|&&s| s >= self.fibers.len()) {
            return Err(Error::Domain(format!("symbol {s} outside the alphabet")));
        }
        Ok(())
    }
}

/// Finite orbit segment along a word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitRecord {
    pub x0: f64,
    pub symbols: Vec<usize>,
    /// `x_0 … x_n`.
    pub points: Vec<f64>,
    /// `log|f'_{w_i}(x_i)|` for `i < n`; `None` at critical points.
    pub log_derivs: Vec<Option<f64>>,
    /// `S_j φ` for `j = 0 … n` when a potential was supplied.
    pub birkhoff: Option<Vec<f64>>,
}

impl OrbitRecord {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Writes the `step,symbol,x,log_deriv,birkhoff_sum` CSV dump.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Domain(format!("csv write failed: {e}"));
        w.write_record(["step", "symbol", "x", "log_deriv", "birkhoff_sum"]).map_err(io)?;
        for (i, x) in self.points.iter().enumerate() {
            let symbol = self.symbols.get(i).map(|s| s.to_string()).unwrap_or_default();
            let ld = self.log_derivs.get(i).copied().flatten().map(|v| v.to_string()).unwrap_or_default();
            let s = self.birkhoff.as_ref().map(|b| b[i].to_string()).unwrap_or_default();
            w.write_record([i.to_string(), symbol, x.to_string(), ld, s]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Domain(e.to_string()))
    }
}

/// Iterates `x0` along `word`, recording log-derivatives and, when `phi` is
/// given, the Birkhoff sums `S_j φ`.
pub fn iterate(sys: &RandomSystem, x0: f64, word: &[usize], phi: Option<&Potential>) -> Result<OrbitRecord> {
    if word.is_empty() {
        return Err(Error::Domain("orbit word must be non-empty".into()));
    }
    if !x0.is_finite() || (sys.phase == Phase::Interval && !(0.0..=1.0).contains(&x0)) {
        return Err(Error::Domain(format!("initial point {x0} outside the phase space")));
    }
    sys.check_word(word)?;
    let n = word.len();
    let mut points = Vec::with_capacity(n + 1);
    let mut log_derivs = Vec::with_capacity(n);
    let mut birkhoff = phi.map(|_| {
        let mut v = Vec::with_capacity(n + 1);
        v.push(0.0);
        v
    });
    let mut x = sys.phase.normalize(x0);
    points.push(x);
    for &s in word {
        let map = sys.fiber(s);
        log_derivs.push(map.log_derivative(x));
        if let (Some(phi), Some(b)) = (phi, birkhoff.as_mut()) {
            let last = *b.last().unwrap();
            b.push(last + phi.eval(s, x, sys.phase));
        }
        x = map.apply(x, sys.phase);
        points.push(x);
    }
    Ok(OrbitRecord { x0: points[0], symbols: word.to_vec(), points, log_derivs, birkhoff })
}

/// `dist(x, C)` truncated at `delta`, floored at [`DISTANCE_FLOOR`].
pub fn truncated_distance(x: f64, critical: &[f64], delta: f64, phase: Phase) -> f64 {
    let d = critical.iter().map(|&c| phase.distance(x, c)).fold(f64::INFINITY, f64::min);
    if d < delta {
        d.max(DISTANCE_FLOOR)
    } else {
        delta
    }
}
