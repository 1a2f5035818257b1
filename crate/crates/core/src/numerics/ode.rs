//! Adaptive L-stable SDIRK integrator for systems with tridiagonal Jacobians.
//!
//! The method is the five-stage, order-4 singly diagonally implicit
//! Runge–Kutta scheme with diagonal 1/4 (stiffly accurate, hence L-stable),
//! with an embedded order-3 solution for error control. Every stage is solved
//! by Newton's method, and each Newton step costs one Thomas solve, so a step
//! is O(dimension).

use super::tridiag::Tridiag;
use crate::error::{Error, Result};

/// A first-order system `y' = f(t, y)` whose Jacobian is tridiagonal.
pub trait TridiagOde {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
    fn jacobian(&self, t: f64, y: &[f64], jac: &mut Tridiag);
}

/// Step-size control parameters.
#[derive(Debug, Clone)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Optional per-component multipliers of `atol`.
    pub atol_weights: Option<Vec<f64>>,
    /// Initial step; chosen automatically when `None`.
    pub h0: Option<f64>,
    /// Smallest step accepted before reporting a stiffness failure.
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
    /// The right-hand side is affine in `y`: one Newton step solves each stage.
    pub linear: bool,
    /// Reject steps that produce negative components; abort if that persists.
    pub nonnegative: bool,
    /// Lattice index of component 0, used only in error reports.
    pub index_offset: i64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-12,
            atol_weights: None,
            h0: None,
            h_min: 1e-14,
            h_max: f64::INFINITY,
            max_steps: 2_000_000,
            linear: false,
            nonnegative: false,
            index_offset: 0,
        }
    }
}

/// Counters from one integration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub newton_failures: usize,
}

const GAMMA: f64 = 0.25;
const C: [f64; 5] = [0.25, 0.75, 11.0 / 20.0, 0.5, 1.0];
const A: [[f64; 5]; 5] = [
    [0.25, 0.0, 0.0, 0.0, 0.0],
    [0.5, 0.25, 0.0, 0.0, 0.0],
    [17.0 / 50.0, -1.0 / 25.0, 0.25, 0.0, 0.0],
    [371.0 / 1360.0, -137.0 / 2720.0, 15.0 / 544.0, 0.25, 0.0],
    [25.0 / 24.0, -49.0 / 48.0, 125.0 / 16.0, -85.0 / 12.0, 0.25],
];
const B_HAT: [f64; 5] = [59.0 / 48.0, -17.0 / 96.0, 225.0 / 32.0, -85.0 / 12.0, 0.0];

enum StepOutcome {
    Done { err: f64, worst: usize },
    NewtonFailed,
}

struct Workspace {
    jac: Tridiag,
    k: [Vec<f64>; 5],
    base: Vec<f64>,
    stage: Vec<f64>,
    f: Vec<f64>,
    delta: Vec<f64>,
    err: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            jac: Tridiag::zeros(n),
            k: std::array::from_fn(|_| vec![0.0; n]),
            base: vec![0.0; n],
            stage: vec![0.0; n],
            f: vec![0.0; n],
            delta: vec![0.0; n],
            err: vec![0.0; n],
        }
    }
}

fn scale(opts: &OdeOptions, m: usize, a: f64, b: f64) -> f64 {
    let atol = opts.atol_weights.as_ref().map_or(opts.atol, |w| opts.atol * w[m]);
    atol + opts.rtol * a.abs().max(b.abs())
}

/// One SDIRK step from (t, y) with step h; writes the new state to `y_new`.
fn sdirk_step<S: TridiagOde>(
    sys: &S,
    t: f64,
    y: &[f64],
    h: f64,
    opts: &OdeOptions,
    ws: &mut Workspace,
    y_new: &mut [f64],
) -> StepOutcome {
    let n = y.len();
    let hg = h * GAMMA;
    for i in 0..5 {
        ws.base.copy_from_slice(y);
        for j in 0..i {
            let aij = A[i][j] * h;
            if aij != 0.0 {
                for (b, kj) in ws.base.iter_mut().zip(&ws.k[j]) {
                    *b += aij * kj;
                }
            }
        }
        // predictor
        if i == 0 {
            sys.rhs(t, y, &mut ws.f);
            for m in 0..n {
                ws.stage[m] = ws.base[m] + hg * ws.f[m];
            }
        } else {
            for m in 0..n {
                ws.stage[m] = ws.base[m] + hg * ws.k[i - 1][m];
            }
        }
        let ti = t + C[i] * h;
        let max_iter = if opts.linear { 1 } else { 10 };
        let mut converged = opts.linear;
        for it in 0..max_iter {
            sys.rhs(ti, &ws.stage, &mut ws.f);
            sys.jacobian(ti, &ws.stage, &mut ws.jac);
            for m in 0..n {
                ws.delta[m] = -(ws.stage[m] - ws.base[m] - hg * ws.f[m]);
            }
            if !ws.jac.solve_shifted(hg, &mut ws.delta) {
                return StepOutcome::NewtonFailed;
            }
            let mut dn: f64 = 0.0;
            for m in 0..n {
                ws.stage[m] += ws.delta[m];
                dn = dn.max(ws.delta[m].abs() / scale(opts, m, ws.stage[m], ws.base[m]));
            }
            if !dn.is_finite() {
                return StepOutcome::NewtonFailed;
            }
            if it > 0 && dn < 1e-3 || dn < 1e-6 {
                converged = true;
                break;
            }
        }
        if !converged {
            return StepOutcome::NewtonFailed;
        }
        for m in 0..n {
            ws.k[i][m] = (ws.stage[m] - ws.base[m]) / hg;
        }
    }
    y_new.copy_from_slice(&ws.stage);
    for m in 0..n {
        let mut e = 0.0;
        for i in 0..5 {
            e += (A[4][i] - B_HAT[i]) * ws.k[i][m];
        }
        ws.err[m] = h * e;
    }
    // Filter the estimate through (I - hγJ)^{-1} so stiff components do not
    // trigger spurious rejections.
    sys.jacobian(t + h, y_new, &mut ws.jac);
    if !ws.jac.solve_shifted(hg, &mut ws.err) {
        return StepOutcome::NewtonFailed;
    }
    let mut err: f64 = 0.0;
    let mut worst = 0;
    for m in 0..n {
        let e = ws.err[m].abs() / scale(opts, m, y[m], y_new[m]);
        if !(e <= err) {
            err = e;
            worst = m;
        }
    }
    StepOutcome::Done { err, worst }
}

/// Integrates from `t0` and returns the states at each time of `t_out`
/// (non-decreasing, all `>= t0`). `on_step` is called after every accepted step.
pub fn integrate_with<S, F>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    t_out: &[f64],
    opts: &OdeOptions,
    mut on_step: F,
) -> Result<(Vec<Vec<f64>>, OdeStats)>
where
    S: TridiagOde,
    F: FnMut(f64, &[f64]),
{
    let n = sys.dim();
    assert_eq!(y0.len(), n, "initial state has wrong dimension");
    let mut ws = Workspace::new(n);
    let mut stats = OdeStats::default();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut y_new = vec![0.0; n];
    let mut out = Vec::with_capacity(t_out.len());
    let t_end = t_out.last().copied().unwrap_or(t0);

    let mut h = match opts.h0 {
        Some(h0) => h0,
        None => {
            let mut f = vec![0.0; n];
            sys.rhs(t, &y, &mut f);
            let mut d0: f64 = 0.0;
            let mut d1: f64 = 0.0;
            for m in 0..n {
                let s = scale(opts, m, y[m], y[m]);
                d0 = d0.max(y[m].abs() / s);
                d1 = d1.max(f[m].abs() / s);
            }
            if d1 > 0.0 {
                (0.01 * d0.max(1e-5) / d1).max(1e-10)
            } else {
                1e-3
            }
        }
    }
    .min(opts.h_max);

    for &target in t_out {
        if target < t {
            return Err(Error::InvalidParameter(format!(
                "output times must be non-decreasing and >= t0 (got {target} after {t})"
            )));
        }
        while t < target {
            if stats.accepted + stats.rejected >= opts.max_steps {
                return Err(Error::Stiffness {
                    t,
                    msg: format!("step budget of {} exhausted", opts.max_steps),
                    indices: (opts.index_offset, opts.index_offset + n as i64 - 1),
                });
            }
            let remaining = target - t;
            let last = h >= remaining * (1.0 - 1e-12);
            let h_try = if last { remaining } else { h.min(remaining) };
            match sdirk_step(sys, t, &y, h_try, opts, &mut ws, &mut y_new) {
                StepOutcome::NewtonFailed => {
                    stats.newton_failures += 1;
                    stats.rejected += 1;
                    h = h_try * 0.25;
                }
                StepOutcome::Done { err, worst } => {
                    let negative = if opts.nonnegative {
                        y_new.iter().position(|&v| v < 0.0)
                    } else {
                        None
                    };
                    if err <= 1.0 && negative.is_none() {
                        t = if last { target } else { t + h_try };
                        std::mem::swap(&mut y, &mut y_new);
                        stats.accepted += 1;
                        on_step(t, &y);
                        let fac = if err > 0.0 { 0.9 * err.powf(-0.25) } else { 5.0 };
                        if !last || fac < 1.0 {
                            h = (h_try * fac.clamp(0.2, 5.0)).min(opts.h_max);
                        }
                    } else {
                        stats.rejected += 1;
                        if let Some(idx) = negative.filter(|_| err <= 1.0) {
                            if h_try <= opts.h_min {
                                return Err(Error::Negativity {
                                    t,
                                    index: opts.index_offset + idx as i64,
                                    value: y_new[idx],
                                });
                            }
                            h = h_try * 0.5;
                        } else {
                            let fac = if err.is_finite() { 0.9 * err.powf(-0.25) } else { 0.1 };
                            h = h_try * fac.clamp(0.1, 0.9);
                        }
                    }
                    if h < opts.h_min && t < target {
                        let i = opts.index_offset + worst as i64;
                        return Err(Error::Stiffness {
                            t,
                            msg: format!("step size {h:e} below minimum {:e}", opts.h_min),
                            indices: (i, i),
                        });
                    }
                }
            }
        }
        out.push(y.clone());
    }
    let _ = t_end;
    Ok((out, stats))
}

/// [`integrate_with`] without a step callback.
pub fn integrate<S: TridiagOde>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    t_out: &[f64],
    opts: &OdeOptions,
) -> Result<(Vec<Vec<f64>>, OdeStats)> {
    integrate_with(sys, t0, y0, t_out, opts, |_, _| {})
}
