//! The subcommands. Each returns a [`Verdict`] and, when the context has an
//! output directory, writes its CSV data files there.

use cfpeaks::fundsol::{check_n0, dbeta_psi, psi, psi_inf, psi_integral_check, simplified_ode_solve, FundSolSpec};
use cfpeaks::io::Cell;
use cfpeaks::kernels::{Kernel, KernelModel};
use cfpeaks::linear::{d_beta_inf, evolve, extrapolate_s_inf, norm_theta, LatticeSeq, LinearModel};
use cfpeaks::measures::{
    moment, moment_bound_report, mild_picard_step, test_bank, weak_residual, Boundary, GridMeasure, MildOptions,
};
use cfpeaks::numerics::fit_line;
use cfpeaks::peaks::{evolve_b, picard_fixed_point, verify_main_theorem, Decomposer, FixedPointOptions, PeakState};
use cfpeaks::stationary::{
    a_inf, a_minus_inf, fit_tail_constants, mass_of, profile_auto, profile_from_a, solve_a_for_mass, PeakProfile,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{MeasureMode, RunConfig};
use crate::verdict::{Check, Verdict};
use crate::{CliError, RunContext};

/// Window length used for the right-edge limits in `fundsol-check`.
const LIMIT_SPAN: i64 = 18;
/// Relative accuracy requested from the mass inversion.
const MASS_SOLVE_TOL: f64 = 1e-13;

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

/// Mass-neutral perturbation pattern `(sin n − c)/(1 + |c|)`, where `c` is the
/// `2^n a_n`-weighted mean of `sin n` over the profile window, so that
/// `b_n = a_n(1 + s·pattern(n))` has exactly the mass of the profile.
fn neutral_pattern(profile: &PeakProfile) -> impl Fn(i64) -> f64 {
    let weights: Vec<f64> = profile.indices().zip(&profile.a).map(|(n, a)| (n as f64 + profile.rho).exp2() * a).collect();
    let total: f64 = weights.iter().sum();
    let c = profile.indices().zip(&weights).map(|(n, w)| w * (n as f64).sin()).sum::<f64>() / total;
    move |n: i64| ((n as f64).sin() - c) / (1.0 + c.abs())
}

fn a_for_mass(kernel: &dyn Kernel, mass: f64, rho: f64) -> Result<f64, CliError> {
    Ok(solve_a_for_mass(kernel, mass, rho, MASS_SOLVE_TOL)?)
}

fn tag(x: f64) -> String {
    format!("{x}")
}

#[derive(Debug, Serialize)]
struct StationaryCase {
    mass: Option<f64>,
    rho: f64,
    a_param: f64,
    window: (i64, i64),
    profile_mass: f64,
    mass_relative_error: Option<f64>,
    recurrence_residual: f64,
    a_minus_inf: f64,
    a_minus_inf_fit: f64,
    a_inf: f64,
    a_inf_fit: f64,
    weak_residuals: Vec<(String, f64)>,
    #[serde(skip)]
    profile: PeakProfile,
}

fn stationary_case(base: &KernelModel, mass: Option<f64>, a_param: Option<f64>, rho: f64) -> Result<StationaryCase, CliError> {
    let kernel = base.with_rho(rho);
    let a = match (a_param, mass) {
        (Some(a), _) => a,
        (None, Some(m)) => a_for_mass(&kernel, m, rho)?,
        (None, None) => return Err(CliError::Validation("either a mass or a_param is required".into())),
    };
    let profile = profile_auto(&kernel, a, rho)?;
    let mass_relative_error = match mass {
        Some(m) if a_param.is_none() => Some(rel(mass_of(&kernel, a, rho)?, m)),
        _ => None,
    };
    let fit = fit_tail_constants(&kernel, &profile)?;
    let g = GridMeasure::from_profile(&profile);
    let weak_residuals = test_bank()
        .iter()
        .map(|phi| Ok((phi.name.clone(), weak_residual(&kernel, &g, phi, Boundary::Closed)?.relative())))
        .collect::<Result<Vec<_>, cfpeaks::Error>>()?;
    Ok(StationaryCase {
        mass,
        rho,
        a_param: a,
        window: profile.window,
        profile_mass: profile.mass,
        mass_relative_error,
        recurrence_residual: profile.recurrence_residual(),
        a_minus_inf: a_minus_inf(&kernel, rho),
        a_minus_inf_fit: fit.a_minus_inf_hat,
        a_inf: a_inf(&kernel, rho),
        a_inf_fit: fit.a_inf_hat,
        weak_residuals,
        profile,
    })
}

/// Stationary profiles over the configured masses and shifts: recurrence,
/// mass inversion, both tail asymptotics and weak-form stationarity.
pub fn stationary(cfg: &RunConfig, ctx: &RunContext) -> Result<Verdict, CliError> {
    let base = cfg.kernel()?;
    let masses: Vec<Option<f64>> = if cfg.a_param.is_some() { vec![None] } else { cfg.mass_list().into_iter().map(Some).collect() };
    let cases: Vec<(Option<f64>, f64)> =
        masses.iter().flat_map(|m| cfg.rho_list().into_iter().map(move |r| (*m, r))).collect();
    let results = ctx.pool()?.install(|| {
        cases.par_iter().map(|(m, r)| stationary_case(&base, *m, cfg.a_param, *r)).collect::<Result<Vec<_>, _>>()
    })?;
    let mut checks = Vec::new();
    for c in &results {
        let label = match c.mass {
            Some(m) => format!("M={m},rho={}", c.rho),
            None => format!("A={},rho={}", c.a_param, c.rho),
        };
        checks.push(Check::below(format!("recurrence_residual[{label}]"), c.recurrence_residual, 1e-12));
        if let Some(e) = c.mass_relative_error {
            checks.push(Check::below(format!("mass_relative_error[{label}]"), e, 1e-8));
        }
        checks.push(Check::below(format!("a_minus_inf_relative_error[{label}]"), rel(c.a_minus_inf_fit, c.a_minus_inf), 1e-3));
        checks.push(Check::below(format!("a_inf_relative_error[{label}]"), rel(c.a_inf_fit, c.a_inf), 1e-2));
        let worst = c.weak_residuals.iter().map(|(_, v)| *v).fold(0.0, f64::max);
        checks.push(Check::below(format!("weak_residual_max[{label}]"), worst, 1e-8));
        let p = &c.profile;
        let rows: Vec<Vec<Cell>> = p
            .indices()
            .enumerate()
            .map(|(i, n)| vec![n.into(), (n as f64 + p.rho).into(), p.a[i].into(), p.ln_a[i].into(), p.alpha[i].into()])
            .collect();
        let name = match c.mass {
            Some(m) => format!("profile_M{}_rho{}.csv", tag(m), tag(c.rho)),
            None => format!("profile_A{}_rho{}.csv", tag(c.a_param), tag(c.rho)),
        };
        ctx.csv("stationary", &name, &["n", "x", "a_n", "ln_a_n", "alpha_n"], &rows)?;
    }
    ctx.json("stationary_report.json", &results)?;
    Ok(Verdict::new("stationary", ctx.seed, checks))
}

/// Random data `u_n 2^{−n}` (n ≤ 0) and `u_n` (n > 0) with `u_n ∈ (−1, 1)`
/// on `support`, zero elsewhere in `window`.
fn random_data(values: &[f64], support: (i64, i64), window: (i64, i64)) -> LatticeSeq {
    LatticeSeq::from_fn(window, |n| {
        if n < support.0 || n > support.1 {
            return 0.0;
        }
        let u = values[(n - support.0) as usize];
        if n <= 0 {
            u * (-(n as f64)).exp2()
        } else {
            u
        }
    })
}

#[derive(Debug, Clone, Copy)]
struct DecayRun {
    mean_drift: f64,
    lyapunov_increase: f64,
    nu: f64,
    nu_doubled: f64,
}

/// Linearized evolution of random data: conservation of the weighted mean,
/// monotonicity of the Lyapunov sum, the fitted decay rate and its stability
/// under window doubling, and the short-time smoothing exponent.
pub fn linear_decay(cfg: &RunConfig, ctx: &RunContext) -> Result<Verdict, CliError> {
    let kernel = cfg.kernel()?;
    let a_m = a_for_mass(&kernel, cfg.mass, cfg.rho)?;
    let window = cfg.window_or((-20, 10));
    let doubled = (2 * window.0, 2 * window.1);
    let t_end = cfg.t_end.unwrap_or(10.0);
    let grid = cfg.time_grid(10.0, 0.25);
    let tol = cfg.tol.unwrap_or(1e-10);
    let model = LinearModel::with_rho(&kernel, a_m, window, cfg.rho)?;
    let model2 = LinearModel::with_rho(&kernel, a_m, doubled, cfg.rho)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let len = (window.1 - window.0 + 1) as usize;
    let data: Vec<Vec<f64>> = (0..cfg.trajectories).map(|_| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let fit_lo = 1.0f64.min(0.1 * t_end);
    let runs = ctx.pool()?.install(|| {
        data.par_iter()
            .map(|u| -> Result<DecayRun, CliError> {
                let tr = evolve(&model, &random_data(u, window, window), &grid, tol)?;
                let tr2 = evolve(&model2, &random_data(u, window, doubled), &grid, tol)?;
                let m0 = tr.diagnostics[0].weighted_mean.unwrap_or(0.0);
                let l0 = tr.diagnostics[0].lyapunov.unwrap_or(0.0);
                let mean_drift = tr
                    .diagnostics
                    .iter()
                    .map(|d| (d.weighted_mean.unwrap_or(f64::NAN) - m0).abs() / m0.abs().max(f64::MIN_POSITIVE))
                    .fold(0.0, f64::max);
                let lyapunov_increase = tr
                    .diagnostics
                    .windows(2)
                    .map(|p| (p[1].lyapunov.unwrap_or(f64::NAN) - p[0].lyapunov.unwrap_or(f64::NAN)) / l0)
                    .fold(0.0, f64::max);
                let nu = tr.fitted_decay_rate(fit_lo, t_end).unwrap_or(f64::NAN);
                let nu_doubled = tr2.fitted_decay_rate(fit_lo, t_end).unwrap_or(f64::NAN);
                Ok(DecayRun { mean_drift, lyapunov_increase, nu, nu_doubled })
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let rows: Vec<Vec<Cell>> = runs
        .iter()
        .enumerate()
        .map(|(j, r)| vec![j.into(), r.mean_drift.into(), r.lyapunov_increase.into(), r.nu.into(), r.nu_doubled.into()])
        .collect();
    ctx.csv("linear-decay", "decay.csv", &["trajectory", "mean_drift", "lyapunov_max_increase", "nu", "nu_doubled_window"], &rows)?;

    // short-time smoothing of alternating θ = 0 data
    let sw = (window.0, window.1.max(24));
    let smodel = LinearModel::with_rho(&kernel, a_m, sw, cfg.rho)?;
    let y0 = LatticeSeq::from_fn(sw, |n| if n <= 0 { 0.0 } else if n % 2 == 0 { 1.0 } else { -1.0 });
    let ts: Vec<f64> = (0..=20).map(|i| 1e-4 * 100f64.powf(i as f64 / 20.0)).collect();
    let mut sgrid = vec![0.0];
    sgrid.extend(&ts);
    let str_ = evolve(&smodel, &y0, &sgrid, tol)?;
    let norms: Vec<f64> = str_.states[1..].iter().map(|s| norm_theta(&s.d_plus(), 1.0)).collect();
    let lx: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = norms.iter().map(|v| v.ln()).collect();
    let slope = fit_line(&lx, &ly).map_or(f64::NAN, |f| f.slope);
    let srows: Vec<Vec<Cell>> = ts.iter().zip(&norms).map(|(t, v)| vec![(*t).into(), (*v).into()]).collect();
    ctx.csv("linear-decay", "smoothing.csv", &["t", "norm_d_plus"], &srows)?;

    let expected = -1.0 / kernel.beta;
    let max = |f: fn(&DecayRun) -> f64| runs.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let min_nu = runs.iter().map(|r| r.nu.min(r.nu_doubled)).fold(f64::INFINITY, f64::min);
    let checks = vec![
        Check::below("weighted_mean_drift_max", max(|r| r.mean_drift), 1e-8),
        Check::below("lyapunov_max_relative_increase", max(|r| r.lyapunov_increase), 10.0 * tol),
        Check::above("decay_rate_min", min_nu, 0.0),
        Check::below("decay_rate_window_doubling_change", max(|r| rel(r.nu, r.nu_doubled)), 0.10),
        Check::below("smoothing_slope_relative_error", rel(slope, expected), 0.15),
    ];
    Ok(Verdict::new("linear-decay", ctx.seed, checks))
}

/// Closed-form fundamental solutions against direct integration of the
/// σ-free chain, the normalization identity and the right-edge limits.
pub fn fundsol_check(cfg: &RunConfig, ctx: &RunContext) -> Result<Verdict, CliError> {
    let kernel = cfg.kernel()?;
    let n0 = check_n0(&kernel)?;
    let mut grid = vec![0.0];
    grid.extend(cfg.fundsol_times.iter().copied());
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut rows = Vec::new();
    let (mut worst, mut worst_norm, mut worst_inf, mut worst_dbeta) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let ells = cfg.ell_values.clone().unwrap_or_else(|| vec![n0 + 1, n0 + 3]);
    let mut envelope_rows = Vec::new();
    let mut c1: f64 = 0.0;
    for &ell in &ells {
        let spec = FundSolSpec::new(ell, n0, (ell, ell + cfg.fundsol_span))?;
        let y0 = LatticeSeq::delta(spec.window, ell);
        let ode = simplified_ode_solve(&kernel, &y0, None, None, &grid, 1e-13)?;
        for (i, t) in grid.iter().enumerate().skip(1) {
            for n in spec.window.0..=spec.window.1 {
                let closed = psi(&kernel, n, ell, *t)?;
                let direct = ode.states[i].at(n);
                let err = if closed.abs() >= f64::MIN_POSITIVE { rel(direct, closed) } else { (direct - closed).abs() };
                worst = worst.max(err);
                rows.push(vec![ell.into(), n.into(), (*t).into(), closed.into(), direct.into(), err.into()]);
            }
        }
        for n in ell..=ell + cfg.fundsol_span.min(10) {
            worst_norm = worst_norm.max((psi_integral_check(&kernel, n, ell)? - 1.0).abs());
        }
        // Right-edge limit and rate at t = 1. The last-pair estimate of D^β
        // carries a 2^{−β·span} truncation error and amplifies integrator
        // roundoff by 2^{β·span}; span 18 balances the two.
        let long = (ell, ell + LIMIT_SPAN);
        let tr = simplified_ode_solve(&kernel, &LatticeSeq::delta(long, ell), None, None, &[0.0, 1.0], 1e-13)?;
        let beta = kernel.beta;
        worst_inf = worst_inf.max(rel(extrapolate_s_inf(&tr.states[1], beta)?.value, psi_inf(&kernel, ell, 1.0)?));
        worst_dbeta = worst_dbeta.max(rel(d_beta_inf(&tr.states[1], beta)?.value, dbeta_psi(&kernel, ell, 1.0)?));
        // |D^β Ψ| against the envelope 2^{βℓ} e^{−γ(2^ℓ)t/4}; the constant is
        // fitted, only its finiteness is asserted
        let g = kernel.gamma((ell as f64).exp2());
        for i in 1..=100 {
            let t = 0.1 * i as f64;
            let d = dbeta_psi(&kernel, ell, t)?;
            let ratio = d.abs() / ((beta * ell as f64).exp2() * (-0.25 * g * t).exp());
            c1 = c1.max(ratio);
            envelope_rows.push(vec![ell.into(), t.into(), d.into(), ratio.into()]);
        }
    }
    ctx.csv("fundsol-check", "envelope.csv", &["ell", "t", "dbeta_psi", "envelope_ratio"], &envelope_rows)?;
    ctx.csv("fundsol-check", "psi_table.csv", &["ell", "n", "t", "psi_closed", "psi_ode", "error"], &rows)?;
    let checks = vec![
        Check::below("psi_vs_ode_max_relative_error", worst, 1e-6),
        Check::below("normalization_max_error", worst_norm, 1e-8),
        Check::below("psi_inf_vs_extrapolated_relative_error", worst_inf, 1e-5),
        Check::below("dbeta_psi_vs_extrapolated_relative_error", worst_dbeta, 1e-4),
        Check::holds("dbeta_envelope_constant_finite", c1.is_finite() && c1 > 0.0),
    ];
    Ok(Verdict::new("fundsol-check", ctx.seed, checks))
}

/// Nonlinear peak dynamics near a stationary profile: mass conservation,
/// decay of the perturbation, convergence of `A(t)` and first-order
/// consistency with the linearization.
pub fn evolve_peaks(cfg: &RunConfig, ctx: &RunContext) -> Result<Verdict, CliError> {
    let kernel = cfg.kernel()?;
    let a_m = a_for_mass(&kernel, cfg.mass, cfg.rho)?;
    let window = cfg.window_or((-30, 6));
    let profile = profile_from_a(&kernel, a_m, cfg.rho, window)?;
    let pattern = neutral_pattern(&profile);
    let amp = cfg.amplitude.unwrap_or(1e-2);
    let tol = cfg.tol.unwrap_or(1e-10);
    let grid = cfg.time_grid(20.0, 0.25);
    let b0 = PeakState::perturbed(&profile, |n| amp * pattern(n))?;
    let rep = verify_main_theorem(&kernel, &b0, &grid, tol, Some(a_m))?;
    let rows: Vec<Vec<Cell>> = rep
        .times
        .iter()
        .zip(rep.a_path.iter().zip(&rep.envelope).zip(&rep.da_dt))
        .map(|(t, ((a, e), d))| vec![(*t).into(), (*a).into(), (*e).into(), (*d).into()])
        .collect();
    ctx.csv("evolve-peaks", "a_path.csv", &["t", "A", "envelope", "dA_dt"], &rows)?;

    // linearization: ε(t)/s against the linear solution, s = 1e-2, 1e-3, 1e-4
    let model = LinearModel::with_rho(&kernel, a_m, window, cfg.rho)?;
    let y0 = LatticeSeq::from_fn(window, |n| (-(n as f64)).exp2() * pattern(n));
    let z = evolve(&model, &y0, &[0.0, 1.0], 1e-12)?;
    let z1 = &z.states[1];
    let z_inf = extrapolate_s_inf(z1, kernel.beta)?.value;
    let eps_lin = z1.map(|n, v| (n as f64).exp2() * (v - z_inf));
    let dec = Decomposer::new(&kernel, cfg.rho, window)?;
    let scales = [1e-2, 1e-3, 1e-4];
    let mut errors = Vec::new();
    for s in scales {
        let b = PeakState::perturbed(&profile, |n| s * pattern(n))?;
        let tr = evolve_b(&kernel, &b, &[0.0, 1.0], 1e-12, None)?;
        let d = dec.decompose(&tr.states[1])?;
        errors.push(d.eps.values.iter().zip(&eps_lin.values).map(|(e, l)| (e / s - l).abs()).fold(0.0, f64::max));
    }
    let lrows: Vec<Vec<Cell>> = scales.iter().zip(&errors).map(|(s, e)| vec![(*s).into(), (*e).into()]).collect();
    ctx.csv("evolve-peaks", "linearization.csv", &["s", "max_error"], &lrows)?;

    let checks = vec![
        Check::below("mass_drift", rep.mass_drift, 1e-8),
        Check::above("envelope_decay_rate", rep.nu_fit.unwrap_or(f64::NAN), 0.0),
        Check::below("terminal_a_gap", (rep.a_path[rep.a_path.len() - 1] - a_m).abs(), 1e-4),
        Check::within("linearization_error_ratio", errors[0] / errors[1], 8.0, 12.0),
    ];
    Ok(Verdict::new("evolve-peaks", ctx.seed, checks))
}

/// Fixed-point construction of `(y, Λ)`: contraction of the sweeps and
/// agreement of the reconstructed peak weights with direct integration.
pub fn fixed_point(cfg: &RunConfig, ctx: &RunContext) -> Result<Verdict, CliError> {
    let kernel = cfg.kernel()?;
    let a_m = a_for_mass(&kernel, cfg.mass, cfg.rho)?;
    let y_window = cfg.window_or((-30, 12));
    let b_window = (y_window.0, y_window.1.min(6));
    let profile = profile_from_a(&kernel, a_m, cfg.rho, b_window)?;
    let pattern = neutral_pattern(&profile);
    let amp = cfg.amplitude.unwrap_or(4e-3);
    let y0 = LatticeSeq::from_fn(y_window, |n| if n <= b_window.1 { (-(n as f64)).exp2() * amp * pattern(n) } else { 0.0 });
    let nu = match cfg.nu {
        Some(nu) => nu,
        None => {
            let model = LinearModel::with_rho(&kernel, a_m, y_window, cfg.rho)?;
            let grid: Vec<f64> = (0..=40).map(|i| i as f64 * 0.25).collect();
            evolve(&model, &y0, &grid, 1e-10)?
                .fitted_decay_rate(1.0, 10.0)
                .ok_or_else(|| CliError::Internal("could not fit the linear decay rate".into()))?
        }
    };
    let mut opts = FixedPointOptions::new(cfg.t_end.unwrap_or(5.0), nu);
    opts.delta0 = cfg.delta0;
    if let Some(tol) = cfg.tol {
        opts.tol = tol;
    }
    let fp = picard_fixed_point(&kernel, &y0, a_m, profile.mass, &opts)?;
    let b0 = PeakState::perturbed(&profile, |n| amp * pattern(n))?;
    let direct = evolve_b(&kernel, &b0, &fp.t_grid, 1e-12, None)?;
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for i in 0..fp.t_grid.len() {
        let rb = fp.reconstruct(&kernel, i, b_window)?;
        let e = rb.iter().zip(&direct.states[i].b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(e);
        rows.push(vec![fp.t_grid[i].into(), fp.a_path[i].into(), fp.lambda_path[i].into(), e.into()]);
    }
    ctx.csv("fixed-point", "fixed_point.csv", &["t", "A", "Lambda", "reconstruction_error"], &rows)?;
    let srows: Vec<Vec<Cell>> = fp
        .distances
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let factor = if i == 0 { f64::NAN } else { fp.iteration_log.get(i - 1).copied().unwrap_or(f64::NAN) };
            vec![(i + 1).into(), (*d).into(), factor.into()]
        })
        .collect();
    ctx.csv("fixed-point", "sweeps.csv", &["sweep", "distance", "factor"], &srows)?;
    let max_factor = fp.iteration_log.iter().copied().fold(0.0, f64::max);
    let checks = vec![
        Check::below("max_contraction_factor", max_factor, 1.0),
        Check::below("reconstruction_sup_error", worst, 1e-4),
    ];
    Ok(Verdict::new("fixed-point", ctx.seed, checks))
}

fn write_measure_trajectory(ctx: &RunContext, traj: &cfpeaks::measures::MeasureTrajectory, theta: f64) -> Result<(), CliError> {
    for (i, g) in traj.states.iter().enumerate() {
        let rows: Vec<Vec<Cell>> = g.rows().map(|(x, w, kind)| vec![x.into(), w.into(), kind.into()]).collect();
        ctx.csv("measure-evolve", &format!("trajectory/t{i:04}.csv"), &["x", "weight", "kind"], &rows)?;
    }
    let report = moment_bound_report(traj, theta);
    let rows: Vec<Vec<Cell>> = (0..report.times.len())
        .map(|i| {
            vec![
                report.times[i].into(),
                report.norms[i].into(),
                moment(&traj.states[i], 1.0).into(),
                report.moments[i].into(),
                report.running_sup_norm[i].into(),
                report.running_sup_moment[i].into(),
            ]
        })
        .collect();
    ctx.csv("measure-evolve", "bounds.csv", &["t", "norm", "mass", "moment_theta", "sup_norm", "sup_moment_theta"], &rows)?;
    ctx.json("trajectory/diagnostics.json", &report)
}

/// Mild solutions of the truncated equation: mass conservation, positivity,
/// finite a-priori bounds and (for lattice data) agreement with the peak system.
pub fn measure_evolve(cfg: &RunConfig, ctx: &RunContext) -> Result<Verdict, CliError> {
    let kernel = cfg.kernel()?;
    let tol = cfg.tol.unwrap_or(1e-10);
    let opts = MildOptions { tol, theta: cfg.theta, ..Default::default() };
    let r = cfg.radius;
    let grid = cfg.time_grid(1.0, 0.1);
    let mut checks = Vec::new();
    match cfg.measure_mode {
        MeasureMode::Lattice => {
            let a_m = a_for_mass(&kernel, cfg.mass, cfg.rho)?;
            let profile = match (cfg.window_min, cfg.window_max) {
                (None, None) => profile_auto(&kernel, a_m, cfg.rho)?,
                _ => profile_from_a(&kernel, a_m, cfg.rho, cfg.window_or(cfpeaks::stationary::DEFAULT_WINDOW))?,
            };
            let pattern = neutral_pattern(&profile);
            let amp = cfg.amplitude.unwrap_or(1e-2);
            let b0 = PeakState::perturbed(&profile, |n| amp * pattern(n))?;
            let g0 = GridMeasure::from_peaks(&b0);
            let traj = mild_picard_step(&kernel, &g0, r, &grid, &opts)?;
            let direct = evolve_b(&kernel, &b0, &grid, 1e-12, Some(r))?;
            let mut worst: f64 = 0.0;
            for (g, d) in traj.states.iter().zip(&direct.states) {
                for (w, b) in g.weights.iter().zip(&d.b) {
                    if *b >= f64::MIN_POSITIVE {
                        worst = worst.max(rel(*w, *b));
                    }
                }
            }
            write_measure_trajectory(ctx, &traj, cfg.theta)?;
            let report = moment_bound_report(&traj, cfg.theta);
            // the stationary profile itself: all moments constant
            let eq = mild_picard_step(&kernel, &GridMeasure::from_profile(&profile), r, &grid, &opts)?;
            let eq_moments: Vec<f64> = eq.states.iter().map(|g| moment(g, cfg.theta)).collect();
            let eq_drift = eq_moments.iter().map(|m| rel(*m, eq_moments[0])).fold(0.0, f64::max);
            checks.push(Check::below("mass_drift", traj.mass_drift(), 10.0 * tol));
            checks.push(Check::below("lattice_consistency_max_relative_error", worst, 1e-6));
            checks.push(Check::holds("weights_nonnegative", traj.min_weight >= -tol * cfpeaks::measures::norm_g(&g0)));
            checks.push(Check::holds("bounds_finite", report.finite));
            checks.push(Check::below("equilibrium_moment_drift", eq_drift, 1e-8));
        }
        MeasureMode::Cells => {
            let g0 = GridMeasure::cells(-4.0, 4.0, cfg.kappa, |x: f64| cfg.mass * (-(x * x)).exp())?;
            let traj = mild_picard_step(&kernel, &g0, r, &grid, &opts)?;
            write_measure_trajectory(ctx, &traj, cfg.theta)?;
            let report = moment_bound_report(&traj, cfg.theta);
            checks.push(Check::below("mass_drift", traj.mass_drift(), 10.0 * tol));
            checks.push(Check::holds("weights_nonnegative", traj.min_weight >= -tol * cfpeaks::measures::norm_g(&g0)));
            checks.push(Check::holds("bounds_finite", report.finite));
        }
    }
    Ok(Verdict::new("measure-evolve", ctx.seed, checks))
}
