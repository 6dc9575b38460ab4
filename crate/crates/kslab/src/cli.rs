//! Command drivers behind the `kslab` binary. Each returns an exit code:
//! 0 success, 2 a check or run failed; errors map to 1 in `main`.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::closed;
use crate::config::{self, SimConfig};
use crate::diagnostics::{self, HardyReport, LawWindows, RateFit};
use crate::dynamics::{self, Frame, RunResult, StopReason};
use crate::error::CliError;
use crate::grid::{GridSpec, Parity, RadialField, RadialGrid};
use crate::operators;
use crate::profiles::{self, ProfileFamily, B_STAR};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CHECK: i32 = 2;

/// Output root: `KSLAB_OUT` if set, else `./kslab_out`.
pub fn output_root() -> PathBuf {
    std::env::var_os("KSLAB_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("kslab_out"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io_err(path))
}

/// Default outer radius for a profile at b: ten localization radii, at least 10^4.
pub fn profile_r_max(b: f64) -> f64 {
    let (_, b1) = profiles::scales(b);
    (10.0 * b1).max(1e4)
}

#[derive(Serialize)]
struct ProfileSummary {
    b: f64,
    #[serde(rename = "B0")]
    b0: f64,
    #[serde(rename = "B1")]
    b1: f64,
    r_max: f64,
    nodes: usize,
    c_b: f64,
    radiation: profiles::RadiationConstants,
    c_b_log_ratio: f64,
    regions: profiles::RegionCheck,
    norms: profiles::NormReport,
    bounds_ok: bool,
}

/// `profile build`: profile.json and profile.csv under `out`.
pub fn cmd_profile_build(b: f64, r_max: Option<f64>, out: &Path) -> Result<i32, CliError> {
    if !(b > 0.0) {
        return Err(CliError::Usage(format!("b = {b} must be positive")));
    }
    if b > B_STAR {
        return Err(CliError::Usage(format!("b too large: b = {b} exceeds b* = {B_STAR}")));
    }
    let r_max = r_max.unwrap_or_else(|| profile_r_max(b));
    let grid = RadialGrid::new(GridSpec::default().with_r_max(r_max))?;
    let fam = ProfileFamily::build(&grid, b)?;
    let regions = profiles::radiation_regions(&grid, b, &fam.lvl1, &fam.rad);
    let norms = fam.norm_report();
    let ratio = fam.rad.consts.c_b * b.ln().abs() / 2.0;
    let finite = [norms.psi1_l2, norms.grad_psi2_l2, norms.degenerate_flux, regions.inner_mass, regions.outer_mass]
        .iter()
        .all(|v| v.is_finite());
    let bounds_ok = finite && (0.5..=2.0).contains(&ratio);
    create_dir(out)?;
    let summary = ProfileSummary {
        b,
        b0: fam.b0,
        b1: fam.b1,
        r_max,
        nodes: grid.len(),
        c_b: fam.rad.consts.c_b,
        radiation: fam.rad.consts.clone(),
        c_b_log_ratio: ratio,
        regions,
        norms,
        bounds_ok,
    };
    write_json(&out.join("profile.json"), &summary)?;
    let mut wr = csv::Writer::from_path(out.join("profile.csv"))?;
    wr.write_record(["r", "Q_b", "grad_P_b", "m_b", "n_b", "T1", "Psi1", "grad_Psi2"])?;
    for (i, r) in grid.nodes().iter().enumerate() {
        let row = [*r, fam.qb[i], fam.pb_grad[i], fam.mb[i], fam.nb[i], fam.lvl1.t1[i], fam.psi1[i], fam.psi2_grad[i]];
        wr.write_record(row.iter().map(|v| format!("{v:.17e}")))?;
    }
    wr.flush().map_err(io_err(out))?;
    Ok(if bounds_ok { EXIT_OK } else { EXIT_CHECK })
}

/// Grids for `spectral check`: a fine one for pairings, a coarse one for eigensolves.
pub fn spectral_grids(m: f64) -> Result<(std::sync::Arc<RadialGrid>, std::sync::Arc<RadialGrid>), CliError> {
    let fine = RadialGrid::new(GridSpec::default().with_r_max((20.0 * m).max(2e4)))?;
    let coarse = RadialGrid::new(GridSpec::coarse((10.0 * m).max(4e3)))?;
    Ok((fine, coarse))
}

/// `spectral check`: spectral.json under `out`.
pub fn cmd_spectral(m: f64, out: &Path) -> Result<i32, CliError> {
    if !(m >= operators::M_MIN) {
        return Err(CliError::Usage(format!("M = {m} too small: need M >= {}", operators::M_MIN)));
    }
    let (fine, coarse) = spectral_grids(m)?;
    let report = operators::spectral_check(fine, coarse, m)?;
    create_dir(out)?;
    write_json(&out.join("spectral.json"), &report)?;
    let ok = report.delta0_m_hat.value > 0.0 && report.delta0_l_hat.value > 0.0;
    Ok(if ok { EXIT_OK } else { EXIT_CHECK })
}

#[derive(Clone, Debug, Serialize)]
pub struct FinalValues {
    pub t: f64,
    pub s: f64,
    pub lambda: f64,
    pub b: f64,
    pub b_hat: f64,
}

/// Contents of summary.json.
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub stop: StopReason,
    pub steps: usize,
    pub rejected: usize,
    pub records: usize,
    pub mass_drift: f64,
    pub max_energy_increase: f64,
    pub min_density_ratio: f64,
    pub last: Option<FinalValues>,
    pub law_transient: f64,
    pub laws: Option<LawWindows>,
    pub laws_note: Option<String>,
    pub rate_fit: Option<RateFit>,
    pub rate_fit_note: Option<String>,
}

/// Smoothing half-window, in records, for derivatives of recorded series.
pub const LAW_WINDOW: usize = 10;

/// Transient skipped before law windows: one parabolic time 1/b0 at the scale 1/sqrt(b0).
pub fn law_transient(b0: f64) -> f64 {
    1.0 / b0
}

pub fn summarize(cfg: &dynamics::RunConfig, run: &RunResult) -> RunSummary {
    let recs = &run.series.records;
    let m0 = recs.first().map_or(f64::NAN, |r| r.mass);
    let mass_drift = recs.iter().map(|r| ((r.mass - m0) / m0).abs()).fold(0.0, f64::max);
    let max_energy_increase = recs
        .windows(2)
        .map(|w| (w[1].free_energy - w[0].free_energy) / w[0].free_energy.abs())
        .fold(f64::NEG_INFINITY, f64::max);
    let last = recs.last().map(|r| FinalValues { t: r.t, s: r.s, lambda: r.lambda, b: r.b, b_hat: r.b_hat });
    let transient = law_transient(cfg.b0);
    let (laws, laws_note) = if cfg.frame == Frame::Rescaled {
        match diagnostics::modulation_laws(&run.series, transient, LAW_WINDOW) {
            Ok(l) => (Some(l), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, Some("laws need the rescaled frame".into()))
    };
    let (rate_fit, rate_fit_note) = if cfg.frame == Frame::Rescaled {
        match diagnostics::fit_rate_law(&run.series, LAW_WINDOW) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, Some("rate fit needs the rescaled frame".into()))
    };
    RunSummary {
        seed: run.seed,
        stop: run.stop.clone(),
        steps: run.steps,
        rejected: run.rejected,
        records: recs.len(),
        mass_drift,
        max_energy_increase,
        min_density_ratio: run.min_density_ratio,
        last,
        law_transient: transient,
        laws,
        laws_note,
        rate_fit,
        rate_fit_note,
    }
}

fn run_failed(stop: &StopReason) -> bool {
    matches!(stop, StopReason::Failed(_))
}

/// Runs one configuration into `dir`; returns the summary.
pub fn simulate_into(cfg: &SimConfig, dir: &Path) -> Result<RunSummary, CliError> {
    create_dir(dir)?;
    write_text(&dir.join("config.txt"), &config::to_text(cfg))?;
    let run = dynamics::evolve(&cfg.run)?;
    let file = fs::File::create(dir.join("timeseries.csv")).map_err(io_err(dir))?;
    run.series.write_csv(file)?;
    let summary = summarize(&cfg.run, &run);
    write_json(&dir.join("summary.json"), &json!({ "config": cfg, "run": summary }))?;
    if cfg.count > 0 {
        let (report, results) = dynamics::stability_probe(&cfg.run, cfg.count, cfg.run.delta.max(1e-4));
        let runs: Vec<_> = results
            .iter()
            .zip(&report.seeds)
            .map(|(r, seed)| match r {
                Ok(x) => json!({ "seed": seed, "summary": summarize(&cfg.run, x) }),
                Err(e) => json!({ "seed": seed, "error": e.to_string() }),
            })
            .collect();
        write_json(&dir.join("stability.json"), &json!({ "report": report, "runs": runs }))?;
    }
    Ok(summary)
}

/// `simulate`: timeseries.csv and summary.json under `out`.
pub fn cmd_simulate(cfg: &SimConfig, out: &Path) -> Result<i32, CliError> {
    let summary = simulate_into(cfg, out)?;
    Ok(if run_failed(&summary.stop) { EXIT_CHECK } else { EXIT_OK })
}

/// Directory name of sweep job `i`.
pub fn sweep_dir(i: usize, b0: f64) -> String {
    format!("run{i:02}_b0_{b0:e}")
}

/// `sweep`: one run directory per b0 plus merged_summary.json.
pub fn cmd_sweep(cfg: &SimConfig, out: &Path) -> Result<i32, CliError> {
    if cfg.sweep_b0.is_empty() {
        return Err(CliError::Usage("sweep needs sweep.b0 = <list>".into()));
    }
    create_dir(out)?;
    let jobs: Vec<(String, f64, Result<RunSummary, String>)> = cfg
        .sweep_b0
        .par_iter()
        .enumerate()
        .map(|(i, &b0)| {
            let mut c = cfg.clone();
            c.run.b0 = b0;
            c.sweep_b0.clear();
            let name = sweep_dir(i, b0);
            let res = simulate_into(&c, &out.join(&name)).map_err(|e| e.to_string());
            (name, b0, res)
        })
        .collect();
    let mut any_failed = false;
    let merged: Vec<_> = jobs
        .iter()
        .map(|(name, b0, res)| match res {
            Ok(s) => {
                any_failed |= run_failed(&s.stop);
                json!({ "dir": name, "b0": b0, "summary": s })
            }
            Err(e) => {
                any_failed = true;
                json!({ "dir": name, "b0": b0, "error": e })
            }
        })
        .collect();
    write_json(&out.join("merged_summary.json"), &json!({ "jobs": merged }))?;
    Ok(if any_failed { EXIT_CHECK } else { EXIT_OK })
}

/// Suites of `verify-bounds`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Hardy,
    Loghls,
    Profiles,
    Spectral,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Hardy => "hardy",
            Suite::Loghls => "loghls",
            Suite::Profiles => "profiles",
            Suite::Spectral => "spectral",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub suite: String,
    pub pass: bool,
    pub checks: Vec<Check>,
}

fn check(name: impl Into<String>, value: f64, pass: bool) -> Check {
    Check { name: name.into(), value, pass }
}

/// Test functions of the Hardy suite and the inequalities each is used for.
pub fn hardy_battery() -> Vec<(&'static str, fn(f64) -> f64, &'static [&'static str])> {
    vec![
        ("gauss", |r| (-r * r).exp(), &["power", "log", "log_exterior"]),
        ("r_exp", |r| r * (-r).exp(), &["power", "log", "log_exterior"]),
        ("plateau", |r| closed::chi(r, 2.0), &["power"]),
        ("r4_gauss", |r| r.powi(4) * (-r * r).exp(), &["power", "log", "level1", "level2", "level3"]),
    ]
}

/// Hardy reports of `v` on a base grid and one refinement.
pub fn hardy_pair(v: fn(f64) -> f64, alpha: f64, gamma: f64, r_cut: f64) -> Result<(HardyReport, HardyReport), CliError> {
    let base = GridSpec { h0: 0.02, r_uniform: 10.0, nodes_per_decade: 64.0, r_max: 200.0, order: 6, growth: 1.05 };
    let fine = GridSpec { h0: 0.01, nodes_per_decade: 128.0, ..base.clone() };
    let mut out = Vec::new();
    for spec in [base, fine] {
        let g = RadialGrid::new(spec)?;
        let f = RadialField::from_fn(&g, Parity::Even, v);
        out.push(diagnostics::check_hardy_suite(&f, alpha, gamma, r_cut)?);
    }
    let fine = out.pop().unwrap();
    Ok((out.pop().unwrap(), fine))
}

/// Nonnegative densities for the log-HLS battery; the first three are
/// rescaled ground states, where the bound is attained.
pub fn hls_battery() -> Vec<(&'static str, Box<dyn Fn(f64) -> f64 + Sync>)> {
    let bump = |r: f64| (-(r - 1.5) * (r - 1.5) * 4.0).exp();
    vec![
        ("Q", Box::new(closed::q)),
        ("Q_half", Box::new(|r: f64| 4.0 * closed::q(2.0 * r))),
        ("Q_two", Box::new(|r: f64| 0.25 * closed::q(0.5 * r))),
        ("Q_bump", Box::new(move |r: f64| closed::q(r) * (1.0 + 0.3 * bump(r)))),
        ("gauss", Box::new(|r: f64| (-r * r).exp())),
        ("exp", Box::new(|r: f64| (-r).exp())),
        ("ring", Box::new(|r: f64| r * r * (-r * r).exp())),
        ("cauchy3", Box::new(|r: f64| (1.0 + r * r).powi(-3))),
        ("two_scale", Box::new(|r: f64| (-r * r).exp() + 0.1 * (-0.01 * r * r).exp())),
        ("cauchy5_2", Box::new(|r: f64| (1.0 + r * r).powf(-2.5))),
    ]
}

/// Grid used by the log-HLS battery.
pub fn hls_grid() -> Result<std::sync::Arc<RadialGrid>, CliError> {
    Ok(RadialGrid::new(GridSpec::default().with_r_max(1e6))?)
}

pub fn verify(suite: Suite) -> Result<Verdict, CliError> {
    let mut checks = Vec::new();
    match suite {
        Suite::Hardy => {
            for (name, v, uses) in hardy_battery() {
                let (a, b) = hardy_pair(v, 0.0, 1.0, 50.0)?;
                for key in uses.iter() {
                    let (ea, eb) = (a.get(key).unwrap(), b.get(key).unwrap());
                    let stable = ((eb.constant - ea.constant) / ea.constant).abs();
                    if *key == "power" {
                        checks.push(check(format!("{name}.{key}.ratio"), eb.constant, eb.constant >= 1.0 - 1e-6));
                    } else {
                        let ok = eb.constant.is_finite() && eb.constant > 0.0 && eb.rhs > 0.0;
                        checks.push(check(format!("{name}.{key}.constant"), eb.constant, ok));
                    }
                    checks.push(check(format!("{name}.{key}.refinement_change"), stable, stable <= 0.2));
                }
            }
            let g = RadialGrid::new(GridSpec::default().with_r_max(200.0))?;
            let v = RadialField::from_fn(&g, Parity::Even, |r| (-r * r).exp());
            let rt = diagnostics::poisson_round_trip(&v)?;
            checks.push(check("poisson_round_trip", rt, rt < 1e-4));
        }
        Suite::Loghls => {
            let g = hls_grid()?;
            for (k, (name, f)) in hls_battery().into_iter().enumerate() {
                let u = RadialField::from_fn(&g, Parity::Even, f);
                let rep = diagnostics::check_log_hls(&u)?;
                let tol = 1e-6 * rep.mass;
                checks.push(check(format!("{name}.margin"), rep.margin, rep.margin >= -tol));
                if k < 3 {
                    checks.push(check(format!("{name}.attained"), rep.margin, rep.margin.abs() <= 1e-5 * rep.mass));
                }
            }
        }
        Suite::Profiles => {
            for b in [1e-4, 1e-6, 1e-8] {
                let grid = RadialGrid::new(GridSpec::default().with_r_max(profile_r_max(b)))?;
                let lvl1 = profiles::build_t1s1(&grid)?;
                let rad = profiles::build_radiation(&grid, b, &lvl1)?;
                let ratio = rad.consts.c_b * b.ln().abs() / 2.0;
                checks.push(check(format!("c_b_log_ratio.b={b:e}"), ratio, (0.8..=1.2).contains(&ratio)));
            }
            let grid = RadialGrid::new(GridSpec::default().with_r_max(1e4))?;
            let lvl1 = profiles::build_t1s1(&grid)?;
            let t1 = grid.interpolate(&lvl1.t1, Parity::Even, 100.0) * 1e4;
            checks.push(check("r2_T1_at_100", t1, (t1 / 4.0 - 1.0).abs() <= 0.02));
            let d1_err = grid
                .nodes()
                .iter()
                .zip(&lvl1.d1.d)
                .filter(|(r, _)| **r <= 1e3)
                .map(|(r, d)| (d + 2.0 * (1.0 + r * r).ln()).abs() / (1.0 + 2.0 * (1.0 + r * r).ln()))
                .fold(0.0, f64::max);
            checks.push(check("d1_closed_form", d1_err, d1_err < 1e-6));
        }
        Suite::Spectral => {
            for m in [50.0, 100.0] {
                let (fine, coarse) = spectral_grids(m)?;
                let rep = operators::spectral_check(fine, coarse, m)?;
                let rel = (rep.pairing.phim_t1 / rep.pairing.phi0_t1).abs();
                checks.push(check(format!("M={m}.PhiM_T1_relative"), rel, rel < 1e-6));
                checks.push(check(format!("M={m}.delta0_M"), rep.delta0_m_hat.value, rep.delta0_m_hat.value > 0.0));
                checks.push(check(format!("M={m}.delta0_L"), rep.delta0_l_hat.value, rep.delta0_l_hat.value > 0.0));
                let ratio = rep.pairing.phim_lambdaq / (-32.0 * PI * m.ln());
                checks.push(check(format!("M={m}.PhiM_LambdaQ_over_log"), ratio, ratio.is_finite() && ratio > 0.0));
            }
        }
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(Verdict { suite: suite.name().into(), pass, checks })
}

/// `verify-bounds`: prints the verdict and writes verdict_<suite>.json under `out`.
pub fn cmd_verify(suite: Suite, out: &Path) -> Result<i32, CliError> {
    let verdict = verify(suite)?;
    create_dir(out)?;
    write_json(&out.join(format!("verdict_{}.json", suite.name())), &verdict)?;
    println!("{}", serde_json::to_string_pretty(&verdict)?);
    Ok(if verdict.pass { EXIT_OK } else { EXIT_CHECK })
}
