//! Command-line driver: one subcommand per experiment, each writing
//! `results.json` plus CSV side outputs into the output directory.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, ValueEnum};
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{CandidateSpec, Config, Subset};
use crate::contraction::check_axioms_with;
use crate::equilibrium::{build_ulam, cocycle_pressure, equilibrium_candidate, leading_eigenvalue, UlamModel};
use crate::error::{Error, Result};
use crate::measures::{entropy_estimate, MeasureCandidate, ZoomingFlag};
use crate::potentials::{
    classify_candidate, construct_fixed_point_potential, hyperbolicity_gap, zooming_gap, Potential,
};
use crate::pressure::{caratheodory_pressure, pressure_estimate, variational_check, CaratheodorySettings};
use crate::seeds::{child_seed, task_rng, SEED_RULE};
use crate::system::{iterate, RandomSystem};
use crate::zooming::{classify_ensemble, classify_point, detect_times, expansivity_check, slow_approach_statistic, PointClass, ZoomingConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_WARNINGS: i32 = 3;
pub const EXIT_PRECONDITION: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Axioms,
    Simulate,
    Zooming,
    Pressure,
    Entropy,
    Equilibrium,
    PotentialGap,
    VerifyVp,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Axioms => "axioms",
            Command::Simulate => "simulate",
            Command::Zooming => "zooming",
            Command::Pressure => "pressure",
            Command::Entropy => "entropy",
            Command::Equilibrium => "equilibrium",
            Command::PotentialGap => "potential-gap",
            Command::VerifyVp => "verify-vp",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "zoomrds", about = "Zooming times, random pressure and equilibrium states of random skew products")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// TOML experiment file.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Exit with code 3 when any warning was emitted.
    #[arg(long)]
    pub strict: bool,
}

struct Outcome {
    results: Value,
    warnings: Vec<String>,
    /// A check failed; the results are still written.
    failed: bool,
}

impl Outcome {
    fn ok(results: Value, warnings: Vec<String>) -> Self {
        Self { results, warnings, failed: false }
    }
}

struct Ctx<'a> {
    cfg: &'a Config,
    sys: RandomSystem,
    seed: u64,
    out: &'a Path,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Precondition(_) => EXIT_PRECONDITION,
        _ => EXIT_INPUT,
    }
}

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::Config(format!("i/o failure: {e}"))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("results serialize")
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(out.join(name)).map_err(io_err)?))
}

/// Runs one subcommand and returns the process exit code.
pub fn run(config_path: &Path, command: Command, out: &Path, seed_override: Option<u64>, strict: bool) -> i32 {
    let bytes = match fs::read(config_path) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", config_path.display());
            return EXIT_INPUT;
        }
    };
    let digest = hex::encode(Sha256::digest(&bytes));
    let prepared = String::from_utf8(bytes)
        .map_err(|e| Error::Config(e.to_string()))
        .and_then(|text| Config::parse(&text))
        .and_then(|cfg| {
            let sys = cfg.system.build()?;
            fs::create_dir_all(out).map_err(io_err)?;
            Ok((cfg, sys))
        });
    let (cfg, sys) = match prepared {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
    };
    let seed = seed_override.unwrap_or(cfg.seed);
    let ctx = Ctx { cfg: &cfg, sys, seed, out };
    let outcome = match command {
        Command::Axioms => axioms(&ctx),
        Command::Simulate => simulate(&ctx),
        Command::Zooming => zooming(&ctx),
        Command::Pressure => pressure(&ctx),
        Command::Entropy => entropy(&ctx),
        Command::Equilibrium => equilibrium(&ctx),
        Command::PotentialGap => potential_gap(&ctx),
        Command::VerifyVp => verify_vp(&ctx),
    };
    let (outcome, code) = match outcome {
        Ok(o) => {
            let code = if o.failed {
                EXIT_PRECONDITION
            } else if strict && !o.warnings.is_empty() {
                EXIT_WARNINGS
            } else {
                EXIT_OK
            };
            (o, code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = exit_code(&e);
            if code != EXIT_PRECONDITION {
                return code;
            }
            (Outcome { results: json!({ "error": e.to_string() }), warnings: vec![], failed: true }, code)
        }
    };
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let doc = json!({
        "command": command.name(),
        "config_sha256": digest,
        "seed": seed,
        "seed_rule": SEED_RULE,
        "timestamp": timestamp,
        "results": outcome.results,
        "warnings": outcome.warnings,
    });
    let written = create(out, "results.json")
        .and_then(|f| serde_json::to_writer_pretty(f, &doc).map_err(io_err));
    if let Err(e) = written {
        eprintln!("error: {e}");
        return EXIT_INPUT;
    }
    code
}

fn axioms(ctx: &Ctx) -> Result<Outcome> {
    let c = ctx.cfg.contraction()?;
    let a = &ctx.cfg.axioms;
    let report = check_axioms_with(&c, a.samples, ctx.seed, &a.settings())?;
    let failed = !report.all_passed();
    Ok(Outcome { results: json!({ "contraction": c, "report": report, "all_passed": !failed }), warnings: vec![], failed })
}

fn start_point(fixed: Option<f64>, seed: u64, index: u64) -> f64 {
    fixed.unwrap_or_else(|| task_rng(child_seed(seed, 0x5eed_0003), index).gen())
}

fn simulate(ctx: &Ctx) -> Result<Outcome> {
    let s = &ctx.cfg.simulate;
    if s.length == 0 || s.orbits == 0 {
        return Err(Error::Config("simulate length and orbits must be positive".into()));
    }
    let mut rows = Vec::new();
    for i in 0..s.orbits as u64 {
        let x0 = start_point(s.x0, ctx.seed, i);
        let word = ctx.sys.base.word(s.length, ctx.seed, i);
        let orbit = iterate(&ctx.sys, x0, &word, Some(&ctx.cfg.potential))?;
        orbit.write_csv(create(ctx.out, &format!("orbit_{i}.csv"))?)?;
        let finite: Vec<f64> = orbit.log_derivs.iter().flatten().copied().collect();
        let lyapunov = if finite.len() == orbit.len() { Some(finite.iter().sum::<f64>() / orbit.len() as f64) } else { None };
        rows.push(json!({
            "index": i,
            "x0": orbit.x0,
            "final": orbit.points.last(),
            "birkhoff_sum": orbit.birkhoff.as_ref().and_then(|b| b.last()),
            "lyapunov": lyapunov,
            "critical_hits": orbit.len() - finite.len(),
        }));
    }
    Ok(Outcome::ok(json!({ "orbits": rows }), vec![]))
}

fn zooming_config(ctx: &Ctx) -> Result<ZoomingConfig> {
    ctx.cfg.zooming.build(ctx.cfg.contraction()?, ctx.sys.phase)
}

fn critical_union(sys: &RandomSystem) -> Vec<f64> {
    let mut c: Vec<f64> = sys.fibers.iter().flat_map(|f| f.critical_set().iter().copied()).collect();
    c.sort_by(f64::total_cmp);
    c.dedup();
    c
}

fn zooming(ctx: &Ctx) -> Result<Outcome> {
    let z = &ctx.cfg.zooming;
    let cfg = zooming_config(ctx)?;
    let sys = &ctx.sys;
    let mut warnings = Vec::new();

    let x0 = start_point(z.x0, ctx.seed, 0);
    let orbit = iterate(sys, x0, &sys.base.word(z.orbit_length, ctx.seed, 0), None)?;
    let report = detect_times(sys, &orbit, &cfg)?;
    if !report.near_misses.is_empty() {
        warnings.push(format!("{} zooming times accepted only within the ratio slack", report.near_misses.len()));
    }

    let ensemble = classify_ensemble(sys, &cfg, z.points, z.orbit_length, z.threshold, ctx.seed)?;
    let mut w = csv::Writer::from_writer(create(ctx.out, "zooming_ensemble.csv")?);
    w.write_record(["point", "frequency", "classification"]).map_err(io_err)?;
    for p in &ensemble {
        let class = match p.class {
            PointClass::ZoomingLike => "zooming_like",
            PointClass::NonZoomingLike => "non_zooming_like",
        };
        w.write_record([p.x0.to_string(), p.frequency.to_string(), class.to_string()]).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    let zooming_like = ensemble.iter().filter(|p| p.class == PointClass::ZoomingLike).count();
    let min_frequency = ensemble.iter().map(|p| p.frequency).fold(f64::INFINITY, f64::min);

    let expansivity = if z.pairs > 0 {
        let e = expansivity_check(sys, z.pairs, z.epsilon, z.initial_distance, z.expansivity_horizon, ctx.seed)?;
        if e.fraction < 1.0 {
            warnings.push(format!("only {:.4} of the sampled pairs separated within the horizon", e.fraction));
        }
        json!({ "pairs": e.pairs, "degenerate": e.degenerate, "separated": e.separated, "fraction": e.fraction })
    } else {
        Value::Null
    };

    let critical = critical_union(sys);
    let slow = if critical.is_empty() || z.slow_orbits == 0 {
        Value::Null
    } else {
        let stats: Vec<f64> = (0..z.slow_orbits as u64)
            .map(|i| {
                let x = start_point(None, child_seed(ctx.seed, 0x510), i);
                let o = iterate(sys, x, &sys.base.word(z.slow_length, child_seed(ctx.seed, 0x510), i), None)?;
                slow_approach_statistic(&o, &critical, z.slow_delta, sys.phase)
            })
            .collect::<Result<_>>()?;
        json!({ "delta": z.slow_delta, "length": z.slow_length, "per_orbit": stats, "max": stats.iter().copied().fold(0.0, f64::max) })
    };

    Ok(Outcome::ok(
        json!({
            "orbit": { "x0": orbit.x0, "report": report },
            "ensemble": {
                "points": ensemble.len(),
                "zooming_like": zooming_like,
                "fraction": zooming_like as f64 / ensemble.len().max(1) as f64,
                "min_frequency": if ensemble.is_empty() { Value::Null } else { json!(min_frequency) },
                "threshold": z.threshold,
            },
            "expansivity": expansivity,
            "slow_approach": slow,
        }),
        warnings,
    ))
}

/// Zooming classifier over cover words; the word is continued by a fixed
/// independent tail up to the classification horizon.
fn subset_classifier<'a>(ctx: &'a Ctx, cfg: ZoomingConfig, subset: Subset) -> impl Fn(f64, &[usize]) -> bool + Sync + 'a {
    let horizon = ctx.cfg.pressure.caratheodory.classify_horizon;
    let tail = ctx.sys.base.word(horizon, child_seed(ctx.seed, 0x7a11), 0);
    let threshold = ctx.cfg.zooming.threshold;
    move |x: f64, w: &[usize]| {
        if subset == Subset::Full {
            return true;
        }
        let word: Vec<usize> = w.iter().chain(tail.iter()).copied().take(horizon.max(w.len())).collect();
        let zooming = classify_point(&ctx.sys, x, &word, &cfg, threshold).map(|c| c == PointClass::ZoomingLike).unwrap_or(false);
        zooming == (subset == Subset::Zooming)
    }
}

fn caratheodory_settings(ctx: &Ctx) -> CaratheodorySettings {
    ctx.cfg.pressure.caratheodory.settings(ctx.cfg.pressure.grid())
}

fn pressure(ctx: &Ctx) -> Result<Outcome> {
    let p = &ctx.cfg.pressure;
    let est = pressure_estimate(&ctx.sys, &ctx.cfg.potential, &p.eps, &p.n, p.samples, ctx.seed, &p.grid())?;
    est.write_csv(create(ctx.out, "pressure_table.csv")?)?;
    let mut warnings = est.warnings.clone();
    let cara = if p.caratheodory.enabled {
        let subset = p.caratheodory.subset;
        let zcfg = match subset {
            Subset::Full => ZoomingConfig::new(crate::contraction::ZoomingContraction::exponential(1.0, 1), 0.1, 2),
            _ => zooming_config(ctx)?,
        };
        let classifier = subset_classifier(ctx, zcfg, subset);
        let c = caratheodory_pressure(&ctx.sys, &ctx.cfg.potential, &classifier, &caratheodory_settings(ctx), p.caratheodory.words, ctx.seed)?;
        warnings.extend(c.warnings.iter().cloned());
        if subset == Subset::Full && c.value.is_finite() && (c.value - est.value).abs() > 0.1 {
            warnings.push(format!("separated-set value {} and Carathéodory value {} differ by more than 0.1", est.value, c.value));
        }
        json!({ "subset": subset, "estimate": c })
    } else {
        Value::Null
    };
    Ok(Outcome::ok(json!({ "separated": est, "caratheodory": cara }), warnings))
}

/// Builds the candidate measures of a family. Ulam candidates are the Ulam
/// equilibrium of `phi`; flags come from the config entry or from classification.
fn build_candidates(
    ctx: &Ctx,
    specs: &[CandidateSpec],
    phi: &Potential,
    classify: Option<&ZoomingConfig>,
    ulam: &mut Option<(UlamModel, MeasureCandidate)>,
    warnings: &mut Vec<String>,
) -> Result<Vec<MeasureCandidate>> {
    let cells = ctx.cfg.entropy.cells;
    let z = &ctx.cfg.zooming;
    let mut out = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let (m, flag) = match spec {
            CandidateSpec::Dirac { symbol, point, flag } => (MeasureCandidate::dirac(&ctx.sys, *symbol, *point, cells)?, *flag),
            CandidateSpec::Periodic { word, branches, flag } => {
                (MeasureCandidate::periodic_orbit(&ctx.sys, word, branches, cells)?, *flag)
            }
            CandidateSpec::Empirical { x0, length, burn_in, flag } => {
                let seed = child_seed(ctx.seed, 0xe4 + i as u64);
                let orbit = iterate(&ctx.sys, *x0, &ctx.sys.base.word(*length, seed, 0), None)?;
                (MeasureCandidate::empirical(&ctx.sys, orbit, *burn_in, cells)?, *flag)
            }
            CandidateSpec::Ulam { flag } => {
                if ulam.is_none() {
                    let (model, result, w) = ulam_equilibrium(ctx, phi, ctx.cfg.equilibrium.cells)?;
                    warnings.extend(w);
                    *ulam = Some((model, result));
                }
                let m = ulam.as_ref().unwrap().1.clone();
                (m, Some(flag.unwrap_or(ZoomingFlag::Unknown)))
            }
        };
        let flag = match (flag, classify) {
            (Some(f), _) => f,
            (None, Some(cfg)) => classify_candidate(&ctx.sys, &m, cfg, z.threshold, z.orbit_length)?,
            (None, None) => ZoomingFlag::Unknown,
        };
        out.push(m.with_flag(flag));
    }
    Ok(out)
}

fn ulam_equilibrium(ctx: &Ctx, phi: &Potential, cells: usize) -> Result<(UlamModel, MeasureCandidate, Vec<String>)> {
    let e = &ctx.cfg.equilibrium;
    let model = build_ulam(&ctx.sys, cells)?;
    let eq = equilibrium_candidate(&model, phi, e.words, e.length, ctx.seed)?;
    Ok((model, eq.candidate, eq.warnings))
}

fn entropy(ctx: &Ctx) -> Result<Outcome> {
    let e = &ctx.cfg.entropy;
    let mut warnings = Vec::new();
    let m = build_candidates(ctx, std::slice::from_ref(&e.measure), &ctx.cfg.potential, None, &mut None, &mut warnings)?
        .remove(0);
    let est = entropy_estimate(&m, &ctx.sys, e.cells, e.depth, e.samples, ctx.seed)?;
    est.write_csv(create(ctx.out, "entropy_table.csv")?)?;
    Ok(Outcome::ok(json!({ "measure": m.label, "estimate": est }), warnings))
}

fn equilibrium(ctx: &Ctx) -> Result<Outcome> {
    let e = &ctx.cfg.equilibrium;
    let phi = &ctx.cfg.potential;
    let mut warnings = Vec::new();
    let run = |cells: usize| -> Result<_> {
        let model = build_ulam(&ctx.sys, cells)?;
        let cocycle = cocycle_pressure(&model, phi, e.words, e.length, ctx.seed, e.burn_in)?;
        Ok((model, cocycle))
    };
    let (model, cocycle) = run(e.cells)?;
    let (_, coarse) = run((e.cells / 2).max(2))?;
    let drift = (cocycle.value - coarse.value).abs();
    if !(drift <= (3.0 * cocycle.standard_error).max(0.01)) {
        warnings.push(format!("cocycle pressure moved by {drift:.4} between {} and {} cells", e.cells / 2, e.cells));
    }
    let eq = equilibrium_candidate(&model, phi, e.words, e.length, ctx.seed)?;
    warnings.extend(eq.warnings.iter().cloned());
    model.write_weights_csv(&eq.weights, create(ctx.out, "equilibrium_weights.csv")?)?;
    let triplets = |rows: &[crate::equilibrium::SparseRows]| -> Vec<Vec<(usize, usize, f64)>> { rows.iter().map(|r| r.triplets()).collect() };
    let dump = json!({
        "cells": model.cells,
        "phase": model.phase,
        "probabilities": model.base.probabilities(),
        "transition": triplets(&model.transition),
        "coverage": triplets(&model.coverage),
        "degenerate": model.degenerate,
    });
    serde_json::to_writer(create(ctx.out, "ulam_model.json")?, &dump).map_err(io_err)?;
    let eigen = (ctx.sys.fibers.len() == 1).then(|| leading_eigenvalue(&model, phi, 2000).ln());
    Ok(Outcome::ok(
        json!({
            "cells": e.cells,
            "pressure": cocycle,
            "pressure_half_cells": coarse.value,
            "resolution_drift": drift,
            "log_leading_eigenvalue": eigen,
            "stationarity_tv": eq.stationarity_tv,
            "degenerate_rows": model.degenerate.iter().map(Vec::len).sum::<usize>(),
        }),
        warnings,
    ))
}

fn potential_gap(ctx: &Ctx) -> Result<Outcome> {
    let pg = ctx
        .cfg
        .potential_gap
        .as_ref()
        .ok_or_else(|| Error::Config("missing [potential_gap] section".into()))?;
    let zcfg = zooming_config(ctx)?;
    let mut warnings = Vec::new();
    let is_ulam = |s: &CandidateSpec| matches!(s, CandidateSpec::Ulam { .. });
    let plain = |specs: &[CandidateSpec]| -> Vec<CandidateSpec> { specs.iter().filter(|s| !is_ulam(s)).cloned().collect() };

    let mut construction = Value::Null;
    let phi = match pg.construct {
        Some(c) => {
            let h_top = match c.h_top {
                Some(h) => h,
                None => {
                    let p = &ctx.cfg.pressure;
                    let est = pressure_estimate(&ctx.sys, &Potential::Null, &p.eps, &p.n, p.samples, ctx.seed, &p.grid())?;
                    warnings.extend(est.warnings);
                    est.value
                }
            };
            let family = build_candidates(ctx, &plain(&pg.non_zooming), &Potential::Null, Some(&zcfg), &mut None, &mut warnings)?;
            let fp = construct_fixed_point_potential(&ctx.sys, c.x0, c.rho, h_top, &family)?;
            construction = to_value(&fp);
            fp.potential
        }
        None => ctx.cfg.potential.clone(),
    };

    let mut ulam = None;
    let zooming = build_candidates(ctx, &pg.zooming, &phi, Some(&zcfg), &mut ulam, &mut warnings)?;
    let non_zooming = build_candidates(ctx, &pg.non_zooming, &phi, Some(&zcfg), &mut ulam, &mut warnings)?;
    let es = ctx.cfg.entropy.settings(ctx.seed);
    let entropy = |m: &MeasureCandidate| Ok(entropy_estimate(m, &ctx.sys, es.cells, es.depth, es.samples, es.seed)?.value);
    let report = zooming_gap(&ctx.sys, &phi, &zooming, &non_zooming, entropy)?;
    warnings.extend(report.warnings.iter().cloned());
    let h_top = pg.construct.and_then(|_| construction.get("h_top").and_then(Value::as_f64));
    let zooming_potential = h_top.map(|h| report.gap >= h);

    let hyper = if pg.hyperbolicity {
        let classifier = subset_classifier(ctx, zcfg, Subset::Zooming);
        let r = hyperbolicity_gap(&ctx.sys, &phi, &classifier, &caratheodory_settings(ctx), ctx.cfg.pressure.caratheodory.words, ctx.seed)?;
        warnings.extend(r.notes.iter().cloned());
        to_value(&r)
    } else {
        Value::Null
    };

    Ok(Outcome::ok(
        json!({
            "potential": phi,
            "construction": construction,
            "gap": report,
            "gap_exceeds_h_top": zooming_potential,
            "hyperbolicity": hyper,
        }),
        warnings,
    ))
}

fn verify_vp(ctx: &Ctx) -> Result<Outcome> {
    let v = &ctx.cfg.verify_vp;
    let p = &ctx.cfg.pressure;
    let phi = &ctx.cfg.potential;
    let mut warnings = Vec::new();
    let est = pressure_estimate(&ctx.sys, phi, &p.eps, &p.n, p.samples, ctx.seed, &p.grid())?;
    warnings.extend(est.warnings.iter().cloned());
    let candidates = build_candidates(ctx, &v.candidates, phi, None, &mut None, &mut warnings)?;
    let report = variational_check(&ctx.sys, phi, &candidates, &est, v.tolerance, &ctx.cfg.entropy.settings(ctx.seed))?;
    if !report.pass {
        warnings.push(format!("a candidate exceeds the pressure {} by more than {}", report.pressure, report.tolerance));
    }
    Ok(Outcome::ok(json!({ "pressure_standard_error": est.standard_error, "report": report }), warnings))
}
