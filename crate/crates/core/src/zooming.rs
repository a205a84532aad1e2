//! Random zooming times along finite orbits.
//!
//! A time `j` is certified in two steps. Condition (i) pulls the ball
//! `B_δ(x_j)` back through the branches visited by the orbit and fails if
//! the ball leaves a branch image or the pulled-back interval stops being a
//! neighbourhood of the orbit point (a fold). Condition (ii) is checked on a
//! grid of `g` points spread over the ball and pulled back with it, comparing
//! every pairwise distance at level `i` with `α_{j−i}` of the distance at the
//! top.
//!
//! For exponential contractions detection runs a Pliss-type scan of the
//! derivative sums first, and only those candidates are pulled back.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contraction::{ContractionKind, ZoomingContraction};
use crate::error::{Error, Result};
use crate::seeds::task_rng;
use crate::system::{iterate, truncated_distance, OrbitRecord, Phase, RandomSystem};

/// Multiplicative slack on condition (ii).
pub const RATIO_SLACK: f64 = 1e-6;
/// Above this many levels the pairwise check samples levels.
pub const LEVEL_CAP: usize = 100;
const IMAGE_TOL: f64 = 1e-12;
const PLISS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoomingConfig {
    pub contraction: ZoomingContraction,
    pub delta: f64,
    /// Grid points used by the condition (ii) check.
    pub grid: usize,
    /// Pliss margin `λ'` for exponential contractions.
    pub pliss_margin: Option<f64>,
    /// Confirm Pliss candidates with the grid check before flagging them.
    pub confirm: bool,
}

impl ZoomingConfig {
    /// Config with the default Pliss margin `λ/2` for exponential kinds.
    pub fn new(contraction: ZoomingContraction, delta: f64, grid: usize) -> Self {
        let pliss_margin = match contraction.kind {
            ContractionKind::Exponential { rate } => Some(rate / 2.0),
            _ => None,
        };
        Self { contraction, delta, grid, pliss_margin, confirm: true }
    }

    pub fn validate(&self, phase: Phase) -> Result<()> {
        if !(self.delta > 0.0 && self.delta <= phase.diameter()) {
            return Err(Error::Config(format!("delta {} outside (0, {}]", self.delta, phase.diameter())));
        }
        if self.grid < 8 {
            return Err(Error::Config(format!("grid resolution {} below 8", self.grid)));
        }
        if let ContractionKind::Exponential { rate } = self.contraction.kind {
            match self.pliss_margin {
                Some(m) if m > 0.0 && m < rate => {}
                Some(m) => return Err(Error::Config(format!("Pliss margin {m} must lie in (0, {rate})"))),
                None => return Err(Error::Config("exponential contraction needs a Pliss margin".into())),
            }
        }
        Ok(())
    }

    /// Contraction used for condition (ii): `e^{−λ' n}` for exponential kinds.
    fn check_contraction(&self, horizon: usize) -> ZoomingContraction {
        match (self.contraction.kind, self.pliss_margin) {
            (ContractionKind::Exponential { .. }, Some(m)) => {
                ZoomingContraction::exponential(m, horizon.max(self.contraction.horizon))
            }
            _ => self.contraction,
        }
    }
}

/// Why a pull-back left the monotone branch chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainFailure {
    /// Orbit index `i` at which the pull-back through `f_{w_i}` failed.
    pub level: usize,
    pub reason: String,
}

/// The intervals `J_0 … J_j` obtained by pulling back `B_δ(x_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PullBack {
    /// Interval around `x_i` for `i = 0 … j`; lifted coordinates on the circle.
    pub levels: Vec<(f64, f64)>,
    steps: Vec<InverseStep>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct InverseStep {
    symbol: usize,
    branch: usize,
    /// Integer lift offset between the branch value and `x_{i+1}`.
    offset: f64,
}

impl PullBack {
    pub fn pre_ball(&self) -> (f64, f64) {
        self.levels[0]
    }

    /// Pulls a point at level `i + 1` back to level `i`.
    fn invert(&self, sys: &RandomSystem, i: usize, y: f64) -> f64 {
        let step = self.steps[i];
        let map = sys.fiber(step.symbol);
        match sys.phase {
            Phase::Interval => map.branches()[step.branch].inverse(y),
            Phase::Circle => {
                let nb = map.branches().len() as i64;
                let y = y + step.offset;
                let m = y.floor();
                let idx = step.branch as i64 + m as i64;
                let wraps = idx.div_euclid(nb) as f64;
                let b = &map.branches()[idx.rem_euclid(nb) as usize];
                b.inverse(y - m) + wraps
            }
        }
    }
}

/// Pulls `B_δ(x_j)` back along the orbit through the branches it visits.
pub fn pull_back(
    sys: &RandomSystem,
    orbit: &OrbitRecord,
    j: usize,
    delta: f64,
) -> std::result::Result<PullBack, ChainFailure> {
    let xj = orbit.points[j];
    let top = match sys.phase {
        Phase::Interval => ((xj - delta).max(0.0), (xj + delta).min(1.0)),
        Phase::Circle => (xj - delta, xj + delta),
    };
    let mut levels = vec![(0.0, 0.0); j + 1];
    let mut steps = vec![InverseStep { symbol: 0, branch: 0, offset: 0.0 }; j];
    levels[j] = top;
    for i in (0..j).rev() {
        let symbol = orbit.symbols[i];
        let xi = orbit.points[i];
        let map = sys.fiber(symbol);
        let bi = map.branch_index(xi);
        let branch = &map.branches()[bi];
        let (a, b) = levels[i + 1];
        let interval = match sys.phase {
            Phase::Interval => {
                let (lo, hi) = branch.image();
                if a < lo - IMAGE_TOL || b > hi + IMAGE_TOL {
                    return Err(ChainFailure {
                        level: i,
                        reason: format!("ball [{a}, {b}] not inside branch image [{lo}, {hi}]"),
                    });
                }
                let (p, q) = (branch.inverse(a), branch.inverse(b));
                let (p, q) = (p.min(q), p.max(q));
                // The pre-image is relatively open in the branch domain, so it
                // only fails to be a neighbourhood at an interior branch end.
                let left_end = xi <= branch.lo && branch.lo > 0.0;
                let right_end = xi >= branch.hi && branch.hi < 1.0;
                if left_end || right_end {
                    return Err(ChainFailure {
                        level: i,
                        reason: format!("x_{i} = {xi} sits on an interior branch end (fold or jump)"),
                    });
                }
                steps[i] = InverseStep { symbol, branch: bi, offset: 0.0 };
                (p, q)
            }
            Phase::Circle => {
                if b - a >= 1.0 {
                    return Err(ChainFailure { level: i, reason: "ball wraps the whole circle".into() });
                }
                let offset = (branch.eval(xi) - orbit.points[i + 1]).round();
                steps[i] = InverseStep { symbol, branch: bi, offset };
                let pb = PullBack { levels: vec![], steps: steps.clone() };
                (pb.invert(sys, i, a), pb.invert(sys, i, b))
            }
        };
        levels[i] = interval;
    }
    Ok(PullBack { levels, steps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub time: usize,
    pub pass: bool,
    /// Largest `d(f^i y, f^i z) / α_{j−i}(d(f^j y, f^j z))` over the grid.
    pub worst_ratio: f64,
    pub pre_ball: Option<(f64, f64)>,
    pub chain_failure: Option<ChainFailure>,
}

impl Verdict {
    /// Passed only because of the multiplicative slack.
    pub fn near_miss(&self) -> bool {
        self.pass && self.worst_ratio > 1.0
    }
}

/// Checks conditions (i) and (ii) at time `j` using `cfg.contraction`
/// (exponential kinds use the rate `λ'`).
pub fn verify_time(sys: &RandomSystem, orbit: &OrbitRecord, j: usize, cfg: &ZoomingConfig) -> Result<Verdict> {
    if j == 0 || j > orbit.len() {
        return Err(Error::Domain(format!("candidate time {j} outside 1..={}", orbit.len())));
    }
    let contraction = cfg.check_contraction(orbit.len());
    if j > contraction.horizon {
        return Err(Error::Horizon { n: j, max: contraction.horizon });
    }
    let chain = match pull_back(sys, orbit, j, cfg.delta) {
        Ok(c) => c,
        Err(f) => {
            return Ok(Verdict { time: j, pass: false, worst_ratio: f64::INFINITY, pre_ball: None, chain_failure: Some(f) })
        }
    };
    let worst_ratio = grid_worst_ratio(sys, &chain, j, cfg.grid, &contraction);
    Ok(Verdict {
        time: j,
        pass: worst_ratio <= 1.0 + RATIO_SLACK,
        worst_ratio,
        pre_ball: Some(chain.pre_ball()),
        chain_failure: None,
    })
}

fn grid_worst_ratio(sys: &RandomSystem, chain: &PullBack, j: usize, g: usize, contraction: &ZoomingContraction) -> f64 {
    let (a, b) = chain.levels[j];
    let h = (b - a) / (g - 1) as f64;
    // positions[i][k]: grid point k pulled back to level i
    let mut positions = vec![vec![0.0; g]; j + 1];
    for k in 0..g {
        positions[j][k] = if k + 1 == g { b } else { a + h * k as f64 };
    }
    for i in (0..j).rev() {
        for k in 0..g {
            positions[i][k] = chain.invert(sys, i, positions[i + 1][k]);
        }
    }
    let levels: Vec<usize> = if j <= LEVEL_CAP {
        (0..j).collect()
    } else {
        let mut v: Vec<usize> = (0..LEVEL_CAP).map(|t| t * (j - 1) / (LEVEL_CAP - 1)).collect();
        v.dedup();
        v
    };
    let mut worst: f64 = 0.0;
    for &i in &levels {
        let top = &positions[j];
        let low = &positions[i];
        for p in 0..g {
            for q in p + 1..g {
                let d_top = (top[q] - top[p]).abs();
                let d_low = (low[q] - low[p]).abs();
                let alpha = contraction.eval_unchecked(j - i, d_top);
                let ratio = if alpha > 0.0 {
                    d_low / alpha
                } else if d_low == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                };
                worst = worst.max(ratio);
            }
        }
    }
    worst
}

/// Zooming times found along one orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoomingReport {
    pub orbit_length: usize,
    pub times: Vec<usize>,
    /// Pre-ball `V_j` endpoints for each detected time, in the same order.
    pub pre_balls: Vec<(f64, f64)>,
    pub frequency: f64,
    /// Frequency over the first half of the horizon.
    pub frequency_half: f64,
    /// Times accepted only within the ratio slack.
    pub near_misses: Vec<usize>,
}

impl ZoomingReport {
    fn empty(n: usize) -> Self {
        Self { orbit_length: n, times: vec![], pre_balls: vec![], frequency: 0.0, frequency_half: 0.0, near_misses: vec![] }
    }
}

/// Times `j` passing the Pliss condition `Σ_{i=m}^{j−1} log|f'(x_i)| ≥ λ'(j − m)`
/// for every `0 ≤ m < j`. Absent derivatives disqualify every later time.
pub fn pliss_times(orbit: &OrbitRecord, margin: f64) -> Vec<usize> {
    let mut times = Vec::new();
    let mut partial = 0.0;
    // max over m < j of (S_m − λ' m)
    let mut running_max = 0.0f64;
    for (j, ld) in orbit.log_derivs.iter().enumerate() {
        let Some(ld) = ld else { break };
        partial += ld - margin;
        if partial >= running_max - PLISS_TOL {
            times.push(j + 1);
        }
        running_max = running_max.max(partial);
    }
    times
}

pub fn detect_times(sys: &RandomSystem, orbit: &OrbitRecord, cfg: &ZoomingConfig) -> Result<ZoomingReport> {
    let n = orbit.len();
    if n < 2 {
        return Ok(ZoomingReport::empty(n));
    }
    cfg.validate(sys.phase)?;
    let mut times = Vec::new();
    let mut pre_balls = Vec::new();
    let mut near_misses = Vec::new();
    match cfg.contraction.kind {
        ContractionKind::Exponential { .. } => {
            let margin = cfg.pliss_margin.expect("validated");
            for j in pliss_times(orbit, margin) {
                if cfg.confirm {
                    let v = verify_time(sys, orbit, j, cfg)?;
                    if v.pass {
                        if v.near_miss() {
                            near_misses.push(j);
                        }
                        times.push(j);
                        pre_balls.push(v.pre_ball.expect("passed"));
                    }
                } else if let Ok(chain) = pull_back(sys, orbit, j, cfg.delta) {
                    times.push(j);
                    pre_balls.push(chain.pre_ball());
                }
            }
        }
        _ => {
            for j in 1..=n {
                let v = verify_time(sys, orbit, j, cfg)?;
                if v.pass {
                    if v.near_miss() {
                        near_misses.push(j);
                    }
                    times.push(j);
                    pre_balls.push(v.pre_ball.expect("passed"));
                }
            }
        }
    }
    let half = (n / 2).max(1);
    let frequency_half = times.iter().filter(|&&t| t <= half).count() as f64 / half as f64;
    let frequency = times.len() as f64 / n as f64;
    Ok(ZoomingReport { orbit_length: n, times, pre_balls, frequency, frequency_half, near_misses })
}

pub fn frequency(report: &ZoomingReport) -> f64 {
    if report.orbit_length == 0 {
        0.0
    } else {
        report.times.len() as f64 / report.orbit_length as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointClass {
    ZoomingLike,
    NonZoomingLike,
}

pub fn classify_point(
    sys: &RandomSystem,
    x0: f64,
    word: &[usize],
    cfg: &ZoomingConfig,
    threshold: f64,
) -> Result<PointClass> {
    Ok(classify_with_frequency(sys, x0, word, cfg, threshold)?.0)
}

fn classify_with_frequency(
    sys: &RandomSystem,
    x0: f64,
    word: &[usize],
    cfg: &ZoomingConfig,
    threshold: f64,
) -> Result<(PointClass, f64)> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Domain(format!("threshold {threshold} outside (0, 1)")));
    }
    let orbit = iterate(sys, x0, word, None)?;
    let f = detect_times(sys, &orbit, cfg)?.frequency;
    let class = if f >= threshold { PointClass::ZoomingLike } else { PointClass::NonZoomingLike };
    Ok((class, f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedPoint {
    pub x0: f64,
    pub frequency: f64,
    pub class: PointClass,
}

/// Classifies `points` uniformly drawn initial points, each with its own
/// i.i.d. word of length `horizon`; task `i` uses stream `i` of `seed`.
pub fn classify_ensemble(
    sys: &RandomSystem,
    cfg: &ZoomingConfig,
    points: usize,
    horizon: usize,
    threshold: f64,
    seed: u64,
) -> Result<Vec<ClassifiedPoint>> {
    (0..points as u64)
        .into_par_iter()
        .map(|i| {
            let x0: f64 = task_rng(seed ^ 0x5eed_0001, i).gen();
            let word = sys.base.word(horizon, seed, i);
            let (class, frequency) = classify_with_frequency(sys, x0, &word, cfg, threshold)?;
            Ok(ClassifiedPoint { x0, frequency, class })
        })
        .collect()
}

/// `(1/n) Σ_{j<n} −log dist_δ(x_j, C)`.
pub fn slow_approach_statistic(orbit: &OrbitRecord, critical: &[f64], delta: f64, phase: Phase) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::Domain("delta must be positive".into()));
    }
    let n = orbit.len();
    if n == 0 {
        return Ok(0.0);
    }
    let total: f64 = orbit.points[..n].iter().map(|&x| -truncated_distance(x, critical, delta, phase).ln()).sum();
    Ok(total / n as f64)
}

/// First `j ≤ word.len()` with `d(f^j_w x, f^j_w y) > eps`.
pub fn first_separation(sys: &RandomSystem, x: f64, y: f64, word: &[usize], eps: f64) -> Option<usize> {
    let (mut a, mut b) = (x, y);
    if sys.distance(a, b) > eps {
        return Some(0);
    }
    for (j, &s) in word.iter().enumerate() {
        a = sys.step(s, a);
        b = sys.step(s, b);
        if sys.distance(a, b) > eps {
            return Some(j + 1);
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansivityReport {
    pub pairs: usize,
    pub degenerate: usize,
    pub separated: usize,
    /// Fraction of non-degenerate pairs that separated.
    pub fraction: f64,
    /// First separation time per non-degenerate pair.
    pub first_times: Vec<Option<usize>>,
}

/// Samples pairs at distance at most `initial_distance` sharing a word and
/// records when they first `epsilon`-separate within `horizon` steps.
pub fn expansivity_check(
    sys: &RandomSystem,
    pairs: usize,
    epsilon: f64,
    initial_distance: f64,
    horizon: usize,
    seed: u64,
) -> Result<ExpansivityReport> {
    if !(initial_distance > 0.0 && initial_distance <= epsilon) {
        return Err(Error::Domain("initial pair distance must lie in (0, epsilon]".into()));
    }
    let results: Vec<Option<Option<usize>>> = (0..pairs as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(seed ^ 0x5eed_0002, i);
            let x: f64 = rng.gen();
            let d = initial_distance * (1.0 - rng.gen::<f64>());
            let y = match sys.phase {
                Phase::Circle => sys.phase.normalize(x + d),
                Phase::Interval if x + d <= 1.0 => x + d,
                Phase::Interval => x - d,
            };
            if y == x {
                return None;
            }
            let word = sys.base.word(horizon, seed, i);
            Some(first_separation(sys, x, y, &word, epsilon))
        })
        .collect();
    let degenerate = results.iter().filter(|r| r.is_none()).count();
    let first_times: Vec<Option<usize>> = results.into_iter().flatten().collect();
    let separated = first_times.iter().filter(|t| t.is_some()).count();
    let fraction = if first_times.is_empty() { 0.0 } else { separated as f64 / first_times.len() as f64 };
    Ok(ExpansivityReport { pairs, degenerate, separated, fraction, first_times })
}
