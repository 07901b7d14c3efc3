use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{Context, Result};
use kw_lattice::absorption_solver::{
    find_m0_with_band, layer_structure_check, limit_consistency_check,
    scan_barrier_band, solve_absorption, solve_extremal,
};
use kw_lattice::analysis::{admissible_region_scan, measure_constants, sigma_log_grid};
use kw_lattice::convolution::{
    convolve, mean_zero_decay_check, nonzero_mean_decay_check, profile_slope, shell_ratio_profile,
};
use kw_lattice::greens::{asymptotic_fit, classical_constant, estimate_c1, load_or_build};
use kw_lattice::linear_dirichlet::{maximum_principle_check, solve_dirichlet, DirichletProblem};
use kw_lattice::source_solver::solve_source;
use kw_lattice::{
    AbsorptionProblem, GreensTable, GridFunction, IterationOptions, NormKind, SolveReport,
    SourceProblem, TruncatedDomain, UniversalConstants,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{Equation, RunConfig};
use crate::report::Sink;
use crate::{CheckFailed, Command, GreensCmd, ScanCmd, SolveCmd, SweepCmd, UsageError, VerifyCmd};

const DEFAULT_TABLE_RADIUS: usize = 256;
const DEFAULT_SOLVE_RADIUS: u32 = 128;

pub fn run(cmd: Command, cfg: &RunConfig) -> Result<()> {
    match cmd {
        Command::Greens(GreensCmd::Build) => greens_build(cfg),
        Command::Greens(GreensCmd::Check) => greens_check(cfg),
        Command::Solve(SolveCmd::Source) => solve_one_command(cfg, Equation::Source),
        Command::Solve(SolveCmd::Absorption) => solve_one_command(cfg, Equation::Absorption),
        Command::Solve(SolveCmd::Extremal) => extremal(cfg),
        Command::Sweep(which) => sweep(cfg, which),
        Command::Verify(VerifyCmd::Decay) => verify_decay(cfg),
        Command::Verify(VerifyCmd::Maxprinciple) => verify_maxprinciple(cfg),
        Command::Verify(VerifyCmd::Layers) => verify_layers(cfg),
        Command::Verify(VerifyCmd::Barrier) => verify_barrier(cfg),
        Command::Scan(ScanCmd::Thresholds) => scan_thresholds(cfg),
    }
}

fn file_name(path: &std::path::Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn load_table(cfg: &RunConfig, radius: usize) -> Result<GreensTable> {
    let start = Instant::now();
    let dir = cfg.cache_dir();
    let t = load_or_build(&dir, radius, cfg.quadrature())
        .with_context(|| format!("Green's table (radius {radius}) in {}", dir.display()))?;
    eprintln!(
        "Green's table radius {radius}, {} quadrature points, fingerprint {} ({:.1} s)",
        cfg.quadrature(),
        t.fingerprint(),
        start.elapsed().as_secs_f64()
    );
    Ok(t)
}

fn solver_table(cfg: &RunConfig) -> Result<GreensTable> {
    load_table(cfg, cfg.table_radius.unwrap_or(DEFAULT_TABLE_RADIUS))
}

fn greens_radius(cfg: &RunConfig) -> usize {
    cfg.radius
        .map(|r| r as usize)
        .or(cfg.table_radius)
        .unwrap_or(DEFAULT_TABLE_RADIUS)
}

fn greens_build(cfg: &RunConfig) -> Result<()> {
    let r = greens_radius(cfg);
    let t = load_table(cfg, r)?;
    let sink = Sink::new("greens build", cfg)?.with_table(&t);
    let csv = sink.path("table.csv");
    t.write_csv(&csv)?;
    let fit = if r >= 64 { Some(asymptotic_fit(&t)?) } else { None };
    sink.report(
        "ok",
        &json!({
            "diagnostics": t.diagnostics(),
            "gamma0": t.gamma0(),
            "asymptotic_fit": fit,
            "classical_constant": classical_constant(),
            "c1_estimate": estimate_c1(&t),
            "table_csv": file_name(&csv),
        }),
    )?;
    Ok(())
}

/// Closed-form values of the Green's function near the origin.
pub const CLOSED_FORMS: [(i64, i64, f64); 6] = [
    (1, 0, -0.25),
    (1, 1, -1.0 / PI),
    (2, 0, -1.0 + 2.0 / PI),
    (2, 1, 0.25 - 2.0 / PI),
    (2, 2, -4.0 / (3.0 * PI)),
    (3, 0, -4.25 + 12.0 / PI),
];

const CHECK_TOL: f64 = 1e-6;

fn greens_check(cfg: &RunConfig) -> Result<()> {
    let t = load_table(cfg, greens_radius(cfg))?;
    let sink = Sink::new("greens check", cfg)?.with_table(&t);
    let mut worst: f64 = 0.0;
    let values: Vec<_> = CLOSED_FORMS
        .iter()
        .map(|&(x1, x2, exact)| {
            let got = t.eval(x1, x2);
            worst = worst.max((got - exact).abs());
            json!({"x": [x1, x2], "table": got, "closed_form": exact, "error": (got - exact).abs()})
        })
        .collect();
    let d = t.diagnostics();
    let laplacian_ok = d.laplacian_residual <= CHECK_TOL;
    let recurrence_ok = d.recurrence_discrepancy <= CHECK_TOL;
    let pass = worst <= CHECK_TOL && laplacian_ok && recurrence_ok;
    sink.report(
        if pass { "pass" } else { "fail" },
        &json!({
            "tolerance": CHECK_TOL,
            "values": values,
            "max_value_error": worst,
            "laplacian_residual": d.laplacian_residual,
            "recurrence_discrepancy": d.recurrence_discrepancy,
            "fitted_constant": t.fitted_constant(),
            "classical_constant": classical_constant(),
        }),
    )?;
    eprintln!(
        "Phi0(1,1) = {:.15}, -1/pi = {:.15}; largest closed-form error {worst:.2e}",
        t.eval(1, 1),
        -1.0 / PI
    );
    if !pass {
        return Err(CheckFailed(format!(
            "closed-form error {worst:.2e}, Laplacian residual {:.2e}, recurrence gap {:.2e} (tolerance {CHECK_TOL:e})",
            d.laplacian_residual, d.recurrence_discrepancy
        ))
        .into());
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Serialize)]
struct RunParams {
    kappa: f64,
    alpha: f64,
    beta: f64,
    radius: u32,
}

fn solve_params(eq: Equation, s: RunParams, t: &GreensTable, o: &IterationOptions) -> kw_lattice::Result<SolveReport> {
    match eq {
        Equation::Source => {
            let p = SourceProblem { kappa: s.kappa, alpha: s.alpha, beta: s.beta, domain_radius: s.radius };
            solve_source(&p, t, o)
        }
        Equation::Absorption => {
            let p = AbsorptionProblem { kappa: s.kappa, alpha: s.alpha, beta: s.beta, domain_radius: s.radius };
            solve_absorption(&p, t, o)
        }
    }
}

fn solve_one_command(cfg: &RunConfig, eq: Equation) -> Result<()> {
    let kappa = cfg.kappa()?;
    let params = RunParams {
        kappa,
        alpha: cfg.alpha(kappa)?,
        beta: match eq {
            Equation::Source => cfg.beta_or(0.0),
            Equation::Absorption => cfg.beta()?,
        },
        radius: cfg.radius_or(DEFAULT_SOLVE_RADIUS),
    };
    let opts = cfg.iteration()?;
    let t = solver_table(cfg)?;
    let name = match eq {
        Equation::Source => "solve source",
        Equation::Absorption => "solve absorption",
    };
    let sink = Sink::new(name, cfg)?.with_table(&t);
    let start = Instant::now();
    let rep = solve_params(eq, params, &t, &opts)?;
    eprintln!(
        "{} iterations, relative energy identity residual {:.2e}, fitted slope {:.5} (expected {:.5}) ({:.1} s)",
        rep.iterations,
        rep.relative_identity_residual,
        rep.fitted_slope,
        rep.expected_slope,
        start.elapsed().as_secs_f64()
    );
    for w in &rep.warnings {
        eprintln!("warning: {w}");
    }
    let csv = sink.path("solution.csv");
    rep.solution.write_csv(&csv)?;
    sink.report("ok", &json!({"problem": params, "solve": rep, "solution_csv": file_name(&csv)}))?;
    Ok(())
}

fn extremal(cfg: &RunConfig) -> Result<()> {
    let kappa = cfg.kappa()?;
    let beta = cfg.beta()?;
    let opts = cfg.iteration()?;
    let ext = cfg.extremal();
    let t = load_table(cfg, cfg.table_radius.unwrap_or(ext.radius as usize + 4))?;
    let sink = Sink::new("solve extremal", cfg)?.with_table(&t);
    let start = Instant::now();
    let rep = solve_extremal(kappa, beta, &t, &opts, &ext)?;
    eprintln!(
        "alpha0 = {:.6}, {} outer steps, relative energy error {:.2e}, double-log oscillation {:.3} ({:.1} s)",
        rep.alpha0,
        rep.iterations,
        rep.relative_energy_error,
        rep.double_log_oscillation,
        start.elapsed().as_secs_f64()
    );
    for w in &rep.warnings {
        eprintln!("warning: {w}");
    }
    let gaps = sink.path("gaps.csv");
    rep.write_gap_csv(&gaps)?;
    let sol = sink.path("solution.csv");
    rep.solution.write_csv(&sol)?;

    let mut status = "ok";
    let mut limit = None;
    if let Some(alphas) = cfg.limit_alphas(kappa) {
        let inner = cfg.inner_radius.unwrap_or(ext.mid_radius / 4);
        let l = limit_consistency_check(&alphas, &rep, &t, &opts, ext.mid_radius, inner)?;
        if !(l.monotone_increase && l.below_extremal && l.gaps_decreasing) {
            status = "fail";
        }
        limit = Some(l);
    }
    sink.report(
        status,
        &json!({
            "extremal": rep,
            "limit_check": limit,
            "gaps_csv": file_name(&gaps),
            "solution_csv": file_name(&sol),
        }),
    )?;
    if status == "fail" {
        return Err(CheckFailed("limit consistency check failed".into()).into());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepRow {
    index: usize,
    equation: Equation,
    kappa: f64,
    alpha: f64,
    beta: f64,
    sigma: f64,
    radius: u32,
    status: &'static str,
    iterations: Option<usize>,
    total_energy: Option<f64>,
    target_energy: Option<f64>,
    relative_identity_residual: Option<f64>,
    equation_residual: Option<f64>,
    fitted_slope: Option<f64>,
    expected_slope: Option<f64>,
    fitted_constant_d: Option<f64>,
    normalization_constant: Option<f64>,
    error: Option<String>,
}

fn status_of(e: &kw_lattice::KwError) -> &'static str {
    use kw_lattice::KwError::*;
    match e {
        Argument(_) | Domain(_) | Precondition(_) => "argument_error",
        NonConvergence { .. } | LinearSolver { .. } => "nonconvergence",
        Consistency(_) | Construction(_) => "consistency_failure",
        Io(_) | Csv(_) | Json(_) => "io_error",
    }
}

fn pool(cfg: &RunConfig) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.unwrap_or(0))
        .build()?)
}

fn sweep_runs(cfg: &RunConfig, which: SweepCmd) -> Result<Vec<RunParams>, UsageError> {
    let radius = cfg.radius_or(DEFAULT_SOLVE_RADIUS);
    let beta = match cfg.equation() {
        Equation::Source => cfg.beta_or(0.0),
        Equation::Absorption => cfg.beta()?,
    };
    Ok(match which {
        SweepCmd::Alpha => {
            let kappa = cfg.kappa()?;
            cfg.alphas(kappa)?
                .into_iter()
                .map(|alpha| RunParams { kappa, alpha, beta, radius })
                .collect()
        }
        SweepCmd::Beta => {
            let kappa = cfg.kappa()?;
            let alpha = cfg.alpha(kappa)?;
            cfg.list("betas", &cfg.betas)?
                .into_iter()
                .map(|beta| RunParams { kappa, alpha, beta, radius })
                .collect()
        }
        SweepCmd::Kappa => {
            let kappas = cfg.list("kappas", &cfg.kappas)?;
            if kappas.iter().any(|k| !(*k > 0.0)) {
                return Err(UsageError("--kappas must be positive".into()));
            }
            kappas
                .into_iter()
                .map(|kappa| Ok(RunParams { kappa, alpha: cfg.alpha(kappa)?, beta, radius }))
                .collect::<Result<_, UsageError>>()?
        }
    })
}

fn sweep(cfg: &RunConfig, which: SweepCmd) -> Result<()> {
    let runs = sweep_runs(cfg, which)?;
    let eq = cfg.equation();
    let opts = cfg.iteration()?;
    let t = solver_table(cfg)?;
    let name = match which {
        SweepCmd::Alpha => "sweep alpha",
        SweepCmd::Beta => "sweep beta",
        SweepCmd::Kappa => "sweep kappa",
    };
    let sink = Sink::new(name, cfg)?.with_table(&t);
    let start = Instant::now();
    let results: Vec<kw_lattice::Result<SolveReport>> =
        pool(cfg)?.install(|| runs.par_iter().map(|s| solve_params(eq, *s, &t, &opts)).collect());
    eprintln!("{} runs ({:.1} s)", runs.len(), start.elapsed().as_secs_f64());

    let rows: Vec<SweepRow> = runs
        .iter()
        .zip(&results)
        .enumerate()
        .map(|(index, (s, r))| {
            let ok = r.as_ref().ok();
            SweepRow {
                index,
                equation: eq,
                kappa: s.kappa,
                alpha: s.alpha,
                beta: s.beta,
                sigma: s.alpha * s.kappa / (2.0 * PI),
                radius: s.radius,
                status: match r {
                    Ok(_) => "ok",
                    Err(e) => status_of(e),
                },
                iterations: ok.map(|r| r.iterations),
                total_energy: ok.map(|r| r.total_energy),
                target_energy: ok.map(|r| r.target_energy),
                relative_identity_residual: ok.map(|r| r.relative_identity_residual),
                equation_residual: ok.map(|r| r.equation_residual),
                fitted_slope: ok.map(|r| r.fitted_slope),
                expected_slope: ok.map(|r| r.expected_slope),
                fitted_constant_d: ok.map(|r| r.fitted_constant_d),
                normalization_constant: ok.map(|r| r.normalization_constant),
                error: r.as_ref().err().map(|e| e.to_string()),
            }
        })
        .collect();
    let csv = sink.path("runs.csv");
    let mut w = csv::Writer::from_path(&csv)?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    sink.report(
        if failed == 0 { "ok" } else { "partial" },
        &json!({"runs": rows, "failed": failed, "runs_csv": file_name(&csv)}),
    )?;
    if let Some((i, e)) = results.into_iter().enumerate().find_map(|(i, r)| r.err().map(|e| (i, e))) {
        return Err(anyhow::Error::from(e).context(format!("{failed} of {} runs failed; first is run {i}", rows.len())));
    }
    Ok(())
}

fn verify_decay(cfg: &RunConfig) -> Result<()> {
    let radius = cfg.radius_or(200);
    if radius < 24 {
        return Err(UsageError("verify decay needs --radius >= 24".into()).into());
    }
    let ms = cfg.decay_exponents();
    if ms.iter().any(|m| !(*m > 2.0)) {
        return Err(UsageError("decay exponents must exceed 2".into()).into());
    }
    let trials = cfg.trials.unwrap_or(5);
    let t = solver_table(cfg)?;
    let sink = Sink::new("verify decay", cfg)?.with_table(&t);
    let support = TruncatedDomain::euclidean(6)?;
    let out = TruncatedDomain::euclidean(radius)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.unwrap_or(20));
    let shells = radius / 4..=radius - 1;
    let mut cases = Vec::new();
    let mut failures = 0;
    for trial in 0..trials {
        let raw: Vec<f64> = (0..support.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        let zero_mean = GridFunction::from_fn(out.clone(), |p| support.slot(p).map(|s| raw[s] - mean).unwrap_or(0.0));
        let positive = GridFunction::from_fn(out.clone(), |p| support.slot(p).map(|s| raw[s].abs()).unwrap_or(0.0));
        let g = convolve(&t, &zero_mean);
        for &m in &ms {
            let mz = mean_zero_decay_check(&t, &zero_mean, m)?;
            let slope = profile_slope(&shell_ratio_profile(out.points(), g.values(), m, shells.clone()));
            let nz = nonzero_mean_decay_check(&t, &positive, m)?;
            let ok = mz.observed_ratio_sup.is_finite()
                && mz.bound_constant.is_finite()
                && slope <= 0.0
                && nz.observed_ratio_sup.is_finite();
            if !ok {
                failures += 1;
            }
            cases.push(json!({
                "trial": trial,
                "m": m,
                "mean_zero": mz,
                "shell_ratio_slope": slope,
                "nonzero_mean": nz,
                "pass": ok,
            }));
        }
    }
    sink.report(
        if failures == 0 { "pass" } else { "fail" },
        &json!({"cases": cases, "failures": failures, "shells": [shells.start(), shells.end()]}),
    )?;
    if failures > 0 {
        return Err(CheckFailed(format!("{failures} decay cases failed")).into());
    }
    Ok(())
}

fn verify_maxprinciple(cfg: &RunConfig) -> Result<()> {
    let max_radius = cfg.radius_or(10).max(1);
    let trials = cfg.trials.unwrap_or(200);
    let sink = Sink::new("verify maxprinciple", cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.unwrap_or(1));
    let mut failures = Vec::new();
    let mut min_value = f64::INFINITY;
    for trial in 0..trials {
        let radius = rng.random_range(1..=max_radius);
        let kind = if rng.random_bool(0.5) { NormKind::EuclideanBall } else { NormKind::TaxicabBall };
        let domain = Arc::new(TruncatedDomain::new(radius, kind)?);
        let n = domain.n_interior();
        let scale = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..5.0) };
        let potential: Vec<f64> = (0..n).map(|_| scale * rng.random::<f64>()).collect();
        let p = DirichletProblem {
            rhs: (0..n).map(|_| rng.random_range(0.0..1.0)).collect(),
            boundary_data: (0..domain.len() - n).map(|_| rng.random_range(0.0..1.0)).collect(),
            potential: Some(potential.clone()),
            domain,
        };
        let u = solve_dirichlet(&p, 1e-12)?;
        let lowest = u.values().iter().copied().fold(f64::INFINITY, f64::min);
        min_value = min_value.min(lowest);
        if !maximum_principle_check(&u, &potential, 1e-10) || lowest < -1e-10 {
            failures.push(json!({"trial": trial, "radius": radius, "norm": kind, "min_value": lowest}));
        }
    }
    let pass = failures.is_empty();
    sink.report(
        if pass { "pass" } else { "fail" },
        &json!({"trials": trials, "max_radius": max_radius, "min_value": min_value, "failures": failures}),
    )?;
    if !pass {
        return Err(CheckFailed(format!("{} maximum-principle violations", failures.len())).into());
    }
    Ok(())
}

fn verify_layers(cfg: &RunConfig) -> Result<()> {
    let kappa = cfg.kappa()?;
    let beta = cfg.beta()?;
    let radius = cfg.radius_or(64);
    let mut alphas = cfg.alphas(kappa)?;
    alphas.sort_by(f64::total_cmp);
    let opts = cfg.iteration()?;
    let t = solver_table(cfg)?;
    let sink = Sink::new("verify layers", cfg)?.with_table(&t);
    let reports: Vec<SolveReport> = pool(cfg)?
        .install(|| {
            alphas
                .par_iter()
                .map(|&alpha| solve_params(Equation::Absorption, RunParams { kappa, alpha, beta, radius }, &t, &opts))
                .collect::<kw_lattice::Result<Vec<_>>>()
        })
        .context("absorption family")?;
    let layers = layer_structure_check(&reports, opts.tol)?;
    let runs: Vec<_> = reports
        .iter()
        .map(|r| {
            json!({
                "alpha": r.alpha,
                "total_energy": r.total_energy,
                "target_energy": r.target_energy,
                "relative_identity_residual": r.relative_identity_residual,
                "value_at_origin": r.eval(kw_lattice::LatticePoint::ORIGIN),
            })
        })
        .collect();
    sink.report(
        if layers.holds { "pass" } else { "fail" },
        &json!({"alphas": alphas, "layers": layers, "runs": runs}),
    )?;
    if !layers.holds {
        return Err(CheckFailed(format!(
            "layer structure: ordered {}, energies decreasing {}, energies match {}",
            layers.pointwise_ordered, layers.energies_decreasing, layers.energies_match
        ))
        .into());
    }
    Ok(())
}

fn verify_barrier(cfg: &RunConfig) -> Result<()> {
    let band = cfg.band.unwrap_or(crate::config::Band::Widened);
    let sink = Sink::new("verify barrier", cfg)?;
    let far = scan_barrier_band(band.band(), 1000.0, 4000.0);
    match find_m0_with_band(band.band(), 10_000) {
        Ok(b) => {
            eprintln!("m0 = {}, d0 = {:.6}", b.m0, b.d0);
            let pass = b.spot_checks_hold && far.violations == 0;
            sink.report(if pass { "pass" } else { "fail" }, &json!({"band": band, "barrier": b, "far_scan": far}))?;
            if !pass {
                return Err(CheckFailed("barrier band violated beyond m0".into()).into());
            }
            Ok(())
        }
        Err(e) => {
            sink.report("fail", &json!({"band": band, "error": e.to_string(), "far_scan": far}))?;
            Err(e.into())
        }
    }
}

fn scan_thresholds(cfg: &RunConfig) -> Result<()> {
    let (constants, table) = match (cfg.c0, cfg.c1, cfg.c2) {
        (Some(c0), Some(c1), Some(c2)) => (UniversalConstants { c0, c1, c2 }, None),
        _ => {
            let t = solver_table(cfg)?;
            let m = measure_constants(&t)?;
            let k = UniversalConstants {
                c0: cfg.c0.unwrap_or(m.c0),
                c1: cfg.c1.unwrap_or(m.c1),
                c2: cfg.c2.unwrap_or(m.c2),
            };
            (k, Some(t))
        }
    };
    let lo = cfg.sigma_min_offset.unwrap_or(0.05);
    let hi = cfg.sigma_max.unwrap_or(20.0);
    let n = cfg.points.unwrap_or(400);
    if !(lo > 0.0) || !(hi > 2.0 + lo) || n < 3 {
        return Err(UsageError("scan grid needs 0 < sigma-min-offset, sigma-max > 2 + offset, points >= 3".into()).into());
    }
    let grid = sigma_log_grid(lo, hi, n);
    let scan = admissible_region_scan(&constants, &grid, cfg.kappa)?;
    let mut sink = Sink::new("scan thresholds", cfg)?;
    if let Some(t) = &table {
        sink = sink.with_table(t);
    }
    let csv = sink.path("h0.csv");
    scan.write_csv(&csv)?;
    eprintln!(
        "a0 = {:.6}, ln kappa* = {:.4} (c0 {:.4}, c1 {:.4}, c2 {:.4})",
        scan.a0, scan.ln_kappa_star, constants.c0, constants.c1, constants.c2
    );
    sink.report(
        "ok",
        &json!({"scan": scan, "h0_csv": file_name(&csv)}),
    )?;
    Ok(())
}
