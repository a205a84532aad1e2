//! Potentials on the fibers, the fixed-point bump construction, and the
//! zooming / hyperbolic gap evaluations over finite candidate families.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{birkhoff_integral, MeasureCandidate, MeasureKind, ZoomingFlag};
use crate::pressure::{caratheodory_pressure, CandidateValue, CaratheodorySettings};
use crate::system::{Phase, RandomSystem};
use crate::zooming::{classify_point, PointClass, ZoomingConfig};

/// A potential `φ(w, x) = φ_{w_0}(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Potential {
    Null,
    Constant { value: f64 },
    /// One constant per symbol.
    PerSymbol { values: Vec<f64> },
    /// `x ↦ x`.
    Coordinate,
    /// Tent-shaped bump `scale·height·max(0, 1 − d(x, center)/radius)`,
    /// identical on every fiber.
    Bump { center: f64, radius: f64, height: f64, scale: f64 },
    Sum { terms: Vec<Potential> },
}

impl Potential {
    pub fn eval(&self, symbol: usize, x: f64, phase: Phase) -> f64 {
        match self {
            Potential::Null => 0.0,
            Potential::Constant { value } => *value,
            Potential::PerSymbol { values } => values[symbol],
            Potential::Coordinate => x,
            Potential::Bump { center, radius, height, scale } => {
                let d = phase.distance(x, *center);
                scale * height * (1.0 - d / radius).max(0.0)
            }
            Potential::Sum { terms } => terms.iter().map(|t| t.eval(symbol, x, phase)).sum(),
        }
    }

    /// `φ + c`.
    pub fn shifted(&self, c: f64) -> Potential {
        match self {
            Potential::Null => Potential::Constant { value: c },
            Potential::Constant { value } => Potential::Constant { value: value + c },
            other => Potential::Sum { terms: vec![other.clone(), Potential::Constant { value: c }] },
        }
    }

    /// Whether the potential is the same constant everywhere.
    pub fn constant_value(&self) -> Option<f64> {
        match self {
            Potential::Null => Some(0.0),
            Potential::Constant { value } => Some(*value),
            _ => None,
        }
    }

    /// Number of symbols the potential needs values for, if restricted.
    pub fn required_symbols(&self) -> Option<usize> {
        match self {
            Potential::PerSymbol { values } => Some(values.len()),
            Potential::Sum { terms } => terms.iter().filter_map(Potential::required_symbols).min(),
            _ => None,
        }
    }
}

/// Distance below which `x0` counts as fixed by a fiber map.
pub const FIXED_POINT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointPotential {
    /// `kφ` with `φ` the unit tent bump at `x0`.
    pub potential: Potential,
    pub scale: f64,
    /// `1 − sup ∫φ` over the non-zooming family.
    pub gap: f64,
    pub family_sup: f64,
    pub h_top: f64,
}

/// Bump potential at a common fixed point `x0`, scaled so that
/// `∫kφ dδ_{x0} − sup_ν ∫kφ dν > 2·h_top` over the non-zooming family.
pub fn construct_fixed_point_potential(
    sys: &RandomSystem,
    x0: f64,
    rho: f64,
    h_top: f64,
    non_zooming: &[MeasureCandidate],
) -> Result<FixedPointPotential> {
    if !(rho > 0.0) {
        return Err(Error::Domain(format!("bump radius {rho} must be positive")));
    }
    for s in 0..sys.fibers.len() {
        let y = sys.step(s, x0);
        if sys.distance(y, x0) > FIXED_POINT_TOL {
            return Err(Error::Precondition(format!("{x0} is not fixed by the map of symbol {s} (maps to {y})")));
        }
    }
    let unit = Potential::Bump { center: x0, radius: rho, height: 1.0, scale: 1.0 };
    let family_sup = non_zooming.iter().map(|m| birkhoff_integral(m, &unit, sys.phase)).fold(0.0, f64::max);
    let gap = 1.0 - family_sup;
    if gap <= 0.0 {
        return Err(Error::Precondition(format!(
            "a non-zooming candidate integrates the bump to {family_sup}; it must stay below the value 1 at x0"
        )));
    }
    let scale = (2.0 * h_top + 1.0) / gap;
    Ok(FixedPointPotential {
        potential: Potential::Bump { center: x0, radius: rho, height: 1.0, scale },
        scale,
        gap,
        family_sup,
        h_top,
    })
}

/// Flag of a candidate from the zooming classification of its defining
/// point; Ulam candidates stay unknown.
pub fn classify_candidate(
    sys: &RandomSystem,
    m: &MeasureCandidate,
    cfg: &ZoomingConfig,
    threshold: f64,
    horizon: usize,
) -> Result<ZoomingFlag> {
    let (x, word): (f64, Vec<usize>) = match &m.kind {
        MeasureKind::Dirac { symbol, point } => (*point, vec![*symbol; horizon]),
        MeasureKind::PeriodicOrbit { word, point, .. } => (*point, (0..horizon).map(|j| word[j % word.len()]).collect()),
        MeasureKind::Empirical { orbit, .. } => (orbit.x0, orbit.symbols.clone()),
        MeasureKind::UlamStationary { .. } => return Ok(ZoomingFlag::Unknown),
    };
    Ok(match classify_point(sys, x, &word, cfg, threshold)? {
        PointClass::ZoomingLike => ZoomingFlag::ZoomingLike,
        PointClass::NonZoomingLike => ZoomingFlag::NonZoomingLike,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub zooming: Vec<CandidateValue>,
    pub non_zooming: Vec<CandidateValue>,
    pub best_zooming: String,
    pub best_non_zooming: String,
    /// Best zooming value minus best non-zooming value.
    pub gap: f64,
    pub excluded: Vec<String>,
    pub warnings: Vec<String>,
}

fn best(values: &[CandidateValue]) -> (f64, String) {
    values
        .iter()
        .fold((f64::NEG_INFINITY, String::new()), |acc, v| if v.value > acc.0 { (v.value, v.label.clone()) } else { acc })
}

/// Signed gap `sup_𝒵 (h + ∫φ) − sup_{𝒵ᶜ} (h + ∫φ)` over two finite families.
/// `entropy` supplies `h_μ`; candidates whose flag is unknown or does not
/// match their family are left out with a warning.
pub fn zooming_gap<E>(
    sys: &RandomSystem,
    phi: &Potential,
    zooming: &[MeasureCandidate],
    non_zooming: &[MeasureCandidate],
    entropy: E,
) -> Result<GapReport>
where
    E: Fn(&MeasureCandidate) -> Result<f64> + Sync,
{
    let mut excluded = Vec::new();
    let mut warnings = Vec::new();
    let mut evaluate = |family: &[MeasureCandidate], want: ZoomingFlag| -> Result<Vec<CandidateValue>> {
        let kept: Vec<&MeasureCandidate> = family
            .iter()
            .filter(|m| {
                let ok = m.flag == want;
                if !ok {
                    excluded.push(m.label.clone());
                    warnings.push(format!("candidate {} has flag {:?}, excluded from the {:?} family", m.label, m.flag, want));
                }
                ok
            })
            .collect();
        kept.par_iter()
            .map(|m| {
                let h = entropy(m)?;
                let integral = birkhoff_integral(m, phi, sys.phase);
                Ok(CandidateValue { label: m.label.clone(), flag: m.flag, entropy: h, integral, value: h + integral })
            })
            .collect()
    };
    let z = evaluate(zooming, ZoomingFlag::ZoomingLike)?;
    let nz = evaluate(non_zooming, ZoomingFlag::NonZoomingLike)?;
    if z.is_empty() || nz.is_empty() {
        return Err(Error::Domain("both candidate families need at least one correctly flagged member".into()));
    }
    let (bz, lz) = best(&z);
    let (bn, ln) = best(&nz);
    Ok(GapReport { zooming: z, non_zooming: nz, best_zooming: lz, best_non_zooming: ln, gap: bz - bn, excluded, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicityReport {
    pub pressure_zooming: f64,
    pub pressure_complement: f64,
    pub pressure_full: f64,
    /// `P(φ, Λ) − P(φ, Λᶜ)`; `+∞` when no sampled point falls in `Λᶜ`.
    pub gap: f64,
    /// `|P(φ, Λ) − P(φ)|`.
    pub consistency: f64,
    pub notes: Vec<String>,
}

/// Restricted Carathéodory pressures on the classified zooming set and its
/// complement.
pub fn hyperbolicity_gap<C>(
    sys: &RandomSystem,
    phi: &Potential,
    classifier: &C,
    settings: &CaratheodorySettings,
    word_samples: usize,
    seed: u64,
) -> Result<HyperbolicityReport>
where
    C: Fn(f64, &[usize]) -> bool + Sync,
{
    let inside = caratheodory_pressure(sys, phi, classifier, settings, word_samples, seed)?;
    let outside = caratheodory_pressure(sys, phi, &|x: f64, w: &[usize]| !classifier(x, w), settings, word_samples, seed)?;
    let full = caratheodory_pressure(sys, phi, &|_: f64, _: &[usize]| true, settings, word_samples, seed)?;
    let mut notes: Vec<String> = inside.warnings.iter().chain(&outside.warnings).cloned().collect();
    let gap = if outside.value == f64::NEG_INFINITY {
        notes.push("complement of the zooming set is empty in the sample; gap reported as +inf".into());
        f64::INFINITY
    } else {
        inside.value - outside.value
    };
    Ok(HyperbolicityReport {
        pressure_zooming: inside.value,
        pressure_complement: outside.value,
        pressure_full: full.value,
        gap,
        consistency: (inside.value - full.value).abs(),
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contraction::ZoomingContraction;
    use crate::measures::entropy_estimate;
    use crate::system::{BaseProcess, BranchSpec, FiberMap, FiberRule};

    const LN2: f64 = std::f64::consts::LN_2;

    fn doubling() -> RandomSystem {
        RandomSystem::deterministic(FiberMap::doubling(), Phase::Circle).unwrap()
    }

    /// Two expanding full branches and a third branch contracting onto
    /// `[0.8, 0.9]`, which holds an attracting fixed point.
    fn trap() -> RandomSystem {
        let map = FiberMap::new(FiberRule::Piecewise {
            breakpoints: vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0],
            branches: vec![
                BranchSpec::Affine { start: 0.0, end: 1.0 },
                BranchSpec::Affine { start: 1.0, end: 0.0 },
                BranchSpec::Affine { start: 0.8, end: 0.9 },
            ],
        })
        .unwrap();
        RandomSystem::deterministic(map, Phase::Interval).unwrap()
    }

    fn attractor() -> f64 {
        // 0.8 + 0.3(p − 2/3) = p
        0.6 / 0.7
    }

    fn zcfg() -> ZoomingConfig {
        ZoomingConfig::new(ZoomingContraction::exponential(LN2, 1000), 0.05, 16)
    }

    #[test]
    fn potential_evaluation() {
        let b = Potential::Bump { center: 0.0, radius: 0.1, height: 1.0, scale: 2.0 };
        assert_eq!(b.eval(0, 0.0, Phase::Circle), 2.0);
        assert!((b.eval(0, 0.95, Phase::Circle) - 1.0).abs() < 1e-12);
        assert_eq!(b.eval(0, 0.95, Phase::Interval), 0.0);
        let p = Potential::PerSymbol { values: vec![1.0, -1.0] };
        assert_eq!(p.eval(1, 0.3, Phase::Interval), -1.0);
        assert_eq!(p.shifted(0.5).eval(0, 0.3, Phase::Interval), 1.5);
        assert_eq!(Potential::Null.shifted(2.0).constant_value(), Some(2.0));
    }

    #[test]
    fn fixed_point_scale() {
        let sys = doubling();
        let fp = construct_fixed_point_potential(&sys, 0.0, 0.1, LN2, &[]).unwrap();
        assert!((fp.scale - (2.0 * LN2 + 1.0)).abs() < 1e-15);
        assert!((fp.scale - 2.3863).abs() < 1e-4);
        let d0 = MeasureCandidate::dirac(&sys, 0, 0.0, 16).unwrap();
        assert!((birkhoff_integral(&d0, &fp.potential, sys.phase) - fp.scale).abs() < 1e-15);
        let off = MeasureCandidate::dirac(&sys, 0, 0.5, 16).unwrap();
        assert_eq!(birkhoff_integral(&off, &fp.potential, sys.phase), 0.0);
    }

    #[test]
    fn fixed_point_preconditions() {
        let tent = RandomSystem::deterministic(FiberMap::new(FiberRule::Tent { slope: 2.0 }).unwrap(), Phase::Interval).unwrap();
        assert!(matches!(construct_fixed_point_potential(&tent, 0.5, 0.1, LN2, &[]), Err(Error::Precondition(_))));
        // shifted quadratic fibers share no fixed point
        let shifted = RandomSystem::new(
            BaseProcess::iid(vec![0.5, 0.5]).unwrap(),
            vec![
                FiberMap::new(FiberRule::Tent { slope: 2.0 }).unwrap(),
                FiberMap::new(FiberRule::Quadratic { a: 2.0, coupling: 0.2, shift: 1.0 }).unwrap(),
            ],
            Phase::Interval,
        )
        .unwrap();
        assert!(matches!(construct_fixed_point_potential(&shifted, 2.0 / 3.0, 0.1, LN2, &[]), Err(Error::Precondition(_))));
        // a non-zooming candidate sitting on x0 leaves no gap
        let sys = doubling();
        let on = MeasureCandidate::dirac(&sys, 0, 0.0, 16).unwrap();
        assert!(matches!(construct_fixed_point_potential(&sys, 0.0, 0.1, LN2, &[on]), Err(Error::Precondition(_))));
        assert!(construct_fixed_point_potential(&sys, 0.0, 0.0, LN2, &[]).is_err());
    }

    #[test]
    fn constructed_potential_is_zooming_on_trap_system() {
        let sys = trap();
        let cfg = zcfg();
        let d0 = MeasureCandidate::dirac(&sys, 0, 0.0, 32).unwrap();
        let dp = MeasureCandidate::dirac(&sys, 0, attractor(), 32).unwrap();
        let d0 = d0.clone().with_flag(classify_candidate(&sys, &d0, &cfg, 0.1, 100).unwrap());
        let dp = dp.clone().with_flag(classify_candidate(&sys, &dp, &cfg, 0.1, 100).unwrap());
        assert_eq!(d0.flag, ZoomingFlag::ZoomingLike);
        assert_eq!(dp.flag, ZoomingFlag::NonZoomingLike);
        let fp = construct_fixed_point_potential(&sys, 0.0, 0.1, LN2, std::slice::from_ref(&dp)).unwrap();
        let entropy = |m: &MeasureCandidate| Ok(entropy_estimate(m, &sys, 32, 8, 1, 0)?.value);
        let rep = zooming_gap(&sys, &fp.potential, &[d0.clone()], &[dp.clone()], entropy).unwrap();
        assert!(rep.gap >= LN2 - 0.05, "{}", rep.gap);
        assert!((rep.gap - fp.scale).abs() < 1e-12);

        // constants cancel
        let shifted = zooming_gap(&sys, &fp.potential.shifted(3.25), &[d0.clone()], &[dp.clone()], entropy).unwrap();
        assert!((shifted.gap - rep.gap).abs() < 1e-12);

        // unknown flags are dropped with a warning
        let unknown = MeasureCandidate::dirac(&sys, 0, 0.5, 32).unwrap();
        let rep = zooming_gap(&sys, &Potential::Null, &[d0, unknown], &[dp], entropy).unwrap();
        assert_eq!(rep.excluded.len(), 1);
        assert_eq!(rep.warnings.len(), 1);
    }

    #[test]
    fn null_potential_equal_entropy_gap_vanishes() {
        let sys = doubling();
        let a = MeasureCandidate::dirac(&sys, 0, 0.0, 16).unwrap().with_flag(ZoomingFlag::ZoomingLike);
        let b = MeasureCandidate::dirac(&sys, 0, 0.0, 16).unwrap().with_flag(ZoomingFlag::NonZoomingLike);
        let rep = zooming_gap(&sys, &Potential::Null, &[a], &[b], |_| Ok(0.0)).unwrap();
        assert_eq!(rep.gap, 0.0);
    }

    #[test]
    fn doubling_has_empty_complement() {
        let sys = doubling();
        let cfg = zcfg();
        let classifier = |x: f64, w: &[usize]| classify_point(&sys, x, w, &cfg, 0.1).unwrap() == PointClass::ZoomingLike;
        let settings = CaratheodorySettings { n_min: 2, span: 4, ..Default::default() };
        let rep = hyperbolicity_gap(&sys, &Potential::Null, &classifier, &settings, 1, 0).unwrap();
        assert_eq!(rep.gap, f64::INFINITY);
        assert!(rep.consistency < 1e-9);
    }

    #[test]
    fn trap_system_hyperbolicity_gap() {
        let sys = trap();
        let cfg = zcfg();
        let classifier = |x: f64, w: &[usize]| {
            let word: Vec<usize> = w.iter().copied().chain(std::iter::repeat(0)).take(20).collect();
            classify_point(&sys, x, &word, &cfg, 0.25).unwrap() == PointClass::ZoomingLike
        };
        let settings = CaratheodorySettings { n_min: 2, span: 6, ..Default::default() };
        let null = hyperbolicity_gap(&sys, &Potential::Null, &classifier, &settings, 1, 0).unwrap();
        assert!(null.gap.is_finite() && null.gap > 0.0, "{null:?}");
        let fp = construct_fixed_point_potential(&sys, 0.0, 0.1, LN2, &[]).unwrap();
        let bump = hyperbolicity_gap(&sys, &fp.potential, &classifier, &settings, 1, 0).unwrap();
        assert!(bump.gap > null.gap, "{} vs {}", bump.gap, null.gap);
    }
}
