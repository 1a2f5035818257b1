//! Measures in logarithmic variables and the truncated mild-solution solver.
//!
//! A [`GridMeasure`] is either a finite sum of Dirac atoms or a piecewise
//! constant density on cells of equal width. Weights are the masses the
//! measure gives to each atom or cell, in the normalization of the
//! log-variable equation: a lattice measure `Σ b_n δ(x − n − ρ)` has the same
//! weights as the peak state `b`, and `moment(g, 1)` is its total mass
//! `Σ 2^{n+ρ} b_n`.
//!
//! Dynamics and weak-form sums act on the *nodes* of a measure: the atoms
//! themselves, or the cell midpoints of a cell measure (midpoint rule). The
//! coagulation of nodes `y, z` (`|y − z| < 1`) produces mass at
//! `log₂(2^y + 2^z)`; fragmentation of a node at `x` produces two halves at
//! `x − 1`. Products that fall between nodes are split between the two
//! neighbouring nodes so that both number and mass are preserved.

use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::numerics::{gauss_legendre, CompensatedSum};
use crate::peaks::PeakState;
use crate::stationary::PeakProfile;

/// Default cells per unit of `x` for cell measures.
pub const DEFAULT_KAPPA: usize = 8;
/// Default moment exponent for the a-priori bounds (must exceed `β + 1`).
pub const DEFAULT_THETA: f64 = 3.0;
/// Products closer than this to a node are assigned to it.
const SNAP: f64 = 1e-9;
/// Pairs at distance `≥ 1 − SUPPORT_EPS` do not interact.
const SUPPORT_EPS: f64 = 1e-12;

/// Cut-off `ψ_R(ξ)`: 1 on `[0, R−1]`, cubic smoothstep down to 0 at `R`.
pub fn psi_r(xi: f64, r: f64) -> f64 {
    let s = xi - (r - 1.0);
    if s <= 0.0 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        1.0 - s * s * (3.0 - 2.0 * s)
    }
}

/// How the weights of a measure are distributed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    /// Dirac atoms at the grid points.
    Atomic,
    /// Constant density on `[x_i, x_i + width)` (in `ξ`: `[ξ_i, 2^{width} ξ_i)`).
    Cells { width: f64 },
}

impl MeasureKind {
    fn label(&self) -> &'static str {
        match self {
            MeasureKind::Atomic => "atomic",
            MeasureKind::Cells { .. } => "cell",
        }
    }
}

/// A nonnegative measure on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeasure {
    pub grid: Vec<f64>,
    pub weights: Vec<f64>,
    pub kind: MeasureKind,
}

impl GridMeasure {
    /// Checked constructor.
    pub fn new(grid: Vec<f64>, weights: Vec<f64>, kind: MeasureKind) -> Result<Self> {
        if grid.len() != weights.len() {
            return Err(Error::InvalidParameter("grid and weights differ in length".into()));
        }
        if grid.iter().any(|x| !x.is_finite()) || grid.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::InvalidParameter("grid must be finite and strictly increasing".into()));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParameter(format!("weight {} at x = {} is not a finite nonnegative number", weights[i], grid[i])));
        }
        if let MeasureKind::Cells { width } = kind {
            if !(width > 0.0 && width.is_finite()) {
                return Err(Error::InvalidParameter(format!("cell width must be positive, got {width}")));
            }
            if grid.windows(2).any(|p| p[1] - p[0] < width * (1.0 - 1e-12)) {
                return Err(Error::InvalidParameter("cells overlap".into()));
            }
        }
        Ok(Self { grid, weights, kind })
    }

    /// Atomic measure.
    pub fn atomic(grid: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        Self::new(grid, weights, MeasureKind::Atomic)
    }

    /// Lattice measure `Σ b_n δ(x − n − ρ)` of a peak state.
    pub fn from_peaks(state: &PeakState) -> Self {
        let grid = state.indices().map(|n| n as f64 + state.rho).collect();
        Self { grid, weights: state.b.clone(), kind: MeasureKind::Atomic }
    }

    /// Lattice measure of a stationary profile.
    pub fn from_profile(profile: &PeakProfile) -> Self {
        let grid = profile.indices().map(|n| n as f64 + profile.rho).collect();
        Self { grid, weights: profile.a.clone(), kind: MeasureKind::Atomic }
    }

    /// Cell measure on `[x_lo, x_hi)` with `kappa` cells per unit, each cell
    /// receiving `density(midpoint) · width`.
    pub fn cells(x_lo: f64, x_hi: f64, kappa: usize, density: impl Fn(f64) -> f64) -> Result<Self> {
        if kappa == 0 || !(x_hi > x_lo) {
            return Err(Error::InvalidParameter(format!("bad cell range [{x_lo}, {x_hi}) with kappa {kappa}")));
        }
        let width = 1.0 / kappa as f64;
        let count = ((x_hi - x_lo) * kappa as f64).round() as usize;
        let grid: Vec<f64> = (0..count).map(|i| x_lo + i as f64 * width).collect();
        let weights = grid.iter().map(|x| density(x + 0.5 * width) * width).collect();
        Self::new(grid, weights, MeasureKind::Cells { width })
    }

    /// The same support with other weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Self {
        Self { grid: self.grid.clone(), weights, kind: self.kind }
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Atom positions, or cell midpoints.
    pub fn nodes(&self) -> Vec<f64> {
        match self.kind {
            MeasureKind::Atomic => self.grid.clone(),
            MeasureKind::Cells { width } => self.grid.iter().map(|x| x + 0.5 * width).collect(),
        }
    }

    /// Mass given to `[a, b)`.
    pub fn mass_in(&self, a: f64, b: f64) -> f64 {
        let mut acc = CompensatedSum::new();
        for (x, w) in self.grid.iter().zip(&self.weights) {
            match self.kind {
                MeasureKind::Atomic => {
                    if *x >= a && *x < b {
                        acc.add(*w);
                    }
                }
                MeasureKind::Cells { width } => {
                    let overlap = (x + width).min(b) - x.max(a);
                    if overlap > 0.0 {
                        acc.add(w * overlap / width);
                    }
                }
            }
        }
        acc.value()
    }

    /// Total mass `∫ g`.
    pub fn total(&self) -> f64 {
        self.weights.iter().copied().collect::<CompensatedSum>().value()
    }

    /// Rows `(x, weight, kind)` for CSV output.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, &'static str)> + '_ {
        let label = self.kind.label();
        self.grid.iter().zip(&self.weights).map(move |(x, w)| (*x, *w, label))
    }
}

/// Change to logarithmic variables `x = log₂ ξ` of a measure on `ξ > 0`.
/// Atoms and cells keep their weights (the lattice coefficients of a peak
/// solution are the same in both descriptions), so `∫ ξ f = ∫ 2^x g`.
pub fn to_log(f: &GridMeasure) -> Result<GridMeasure> {
    if let Some(xi) = f.grid.iter().find(|xi| !(**xi > 0.0)) {
        return Err(Error::Domain(format!("measure support must be positive, found ξ = {xi}")));
    }
    let grid = f.grid.iter().map(|xi| xi.log2()).collect();
    Ok(GridMeasure { grid, weights: f.weights.clone(), kind: f.kind })
}

/// Inverse of [`to_log`].
pub fn from_log(g: &GridMeasure) -> GridMeasure {
    let grid = g.grid.iter().map(|x| x.exp2()).collect();
    GridMeasure { grid, weights: g.weights.clone(), kind: g.kind }
}

/// Moment `∫ 2^{r x} g(dx)` (the `ξ^r` moment of the mass-variable measure).
pub fn moment(g: &GridMeasure, r: f64) -> f64 {
    let factor = match g.kind {
        MeasureKind::Atomic => 1.0,
        // exact cell average of 2^{r x} relative to its midpoint value
        MeasureKind::Cells { width } => {
            let u = 0.5 * r * width * LN_2;
            if u == 0.0 {
                1.0
            } else {
                u.sinh() / u
            }
        }
    };
    let mut acc = CompensatedSum::new();
    for (x, w) in g.nodes().iter().zip(&g.weights) {
        acc.add((r * x).exp2() * w);
    }
    factor * acc.value()
}

/// `‖g‖ = sup_{n<0} 2^{−n} g([n, n+1)) + g([0, ∞))`, over the grid extent.
pub fn norm_g(g: &GridMeasure) -> f64 {
    norm_of(&g.grid, &g.weights, g.kind)
}

fn norm_of(grid: &[f64], weights: &[f64], kind: MeasureKind) -> f64 {
    if grid.is_empty() {
        return 0.0;
    }
    let m = GridMeasure { grid: grid.to_vec(), weights: weights.iter().map(|w| w.abs()).collect(), kind };
    let right = m.mass_in(0.0, f64::INFINITY);
    let mut sup: f64 = 0.0;
    let n_lo = grid[0].floor() as i64;
    for n in n_lo..0 {
        sup = sup.max((-(n as f64)).exp2() * m.mass_in(n as f64, n as f64 + 1.0));
    }
    sup + right
}

/// A test function for the weak formulation with its declared growth bound
/// `|φ(x)| ≤ growth · (1 + 2^x)`.
#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    pub growth: f64,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, fmt: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fmt.debug_struct("TestFunction").field("name", &self.name).field("growth", &self.growth).finish()
    }
}

impl TestFunction {
    pub fn new(name: impl Into<String>, growth: f64, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), growth, f: Arc::new(f) }
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    fn check(&self, x: f64) -> Result<f64> {
        let v = self.eval(x);
        if !v.is_finite() || v.abs() > self.growth * (1.0 + x.exp2()) {
            return Err(Error::Hypothesis(format!(
                "test function '{}' violates |φ(x)| ≤ {}·(1 + 2^x) at x = {x} (φ = {v})",
                self.name, self.growth
            )));
        }
        Ok(v)
    }
}

/// The standard bank: `2^x`, `1`, five C¹ bumps and two saturating ramps.
pub fn test_bank() -> Vec<TestFunction> {
    let mut bank = vec![TestFunction::new("mass", 1.0, f64::exp2), TestFunction::new("one", 1.0, |_| 1.0)];
    for c in [-6.0, -3.0, 0.0, 2.0, 4.0] {
        bank.push(TestFunction::new(format!("bump({c})"), 1.0, move |x: f64| {
            let u = (x - c) / 2.0;
            if u.abs() < 1.0 {
                (0.5 * PI * u).cos().powi(2)
            } else {
                0.0
            }
        }));
    }
    for s in [0.0, 4.0] {
        bank.push(TestFunction::new(format!("ramp({s})"), 1.0, move |x: f64| x.exp2() / (1.0 + (x - s).exp2())));
    }
    bank
}

/// Treatment of reaction products that leave the extent of the measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Every event counts (the plain integrals).
    Open,
    /// Events whose product lies outside the node range are switched off,
    /// as in a lattice system with zero flux through both edges.
    Closed,
}

/// The two parts of the weak form and their difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakResidual {
    /// `B_c[g, g; φ]`.
    pub coag: f64,
    /// `B_f[g; φ]`.
    pub frag: f64,
    /// `B_c − B_f`.
    pub value: f64,
    /// Largest magnitude of a single gain or loss term of any event.
    pub scale: f64,
}

impl WeakResidual {
    /// `|B_c − B_f|` relative to the largest summand.
    pub fn relative(&self) -> f64 {
        if self.scale > 0.0 {
            self.value.abs() / self.scale
        } else {
            self.value.abs()
        }
    }
}

fn inside(nodes: &[f64], s: f64) -> bool {
    !nodes.is_empty() && s >= nodes[0] - SNAP && s <= nodes[nodes.len() - 1] + SNAP
}

/// `B_c[g, g; φ] − B_f[g; φ]` by summation over interacting node pairs and
/// fragmenting nodes.
pub fn weak_residual(kernel: &dyn Kernel, g: &GridMeasure, phi: &TestFunction, boundary: Boundary) -> Result<WeakResidual> {
    let nodes = g.nodes();
    let w = &g.weights;
    let phis = nodes.iter().map(|x| phi.check(*x)).collect::<Result<Vec<_>>>()?;
    let mut coag = CompensatedSum::new();
    let mut frag = CompensatedSum::new();
    let mut scale: f64 = 0.0;
    for i in 0..nodes.len() {
        for j in i..nodes.len() {
            if nodes[j] - nodes[i] >= 1.0 - SUPPORT_EPS {
                break;
            }
            let s = (nodes[i].exp2() + nodes[j].exp2()).log2();
            if boundary == Boundary::Closed && !inside(&nodes, s) {
                continue;
            }
            let k = kernel.k_coag(nodes[i].exp2(), nodes[j].exp2());
            // ordered pairs (i, j) and (j, i) coincide off the diagonal
            let mult = if i == j { 0.5 } else { 1.0 };
            let rate = LN_2 * mult * k * w[i] * w[j];
            let phi_s = phi.check(s)?;
            let term = rate * (phi_s - phis[i] - phis[j]);
            scale = scale.max(rate * phi_s.abs().max(phis[i].abs() + phis[j].abs()));
            coag.add(term);
        }
    }
    for (i, x) in nodes.iter().enumerate() {
        let y = x - 1.0;
        if boundary == Boundary::Closed && !inside(&nodes, y) {
            continue;
        }
        let rate = 0.25 * kernel.gamma(x.exp2()) * w[i];
        let phi_y = phi.check(y)?;
        let term = rate * (phis[i] - 2.0 * phi_y);
        scale = scale.max(rate * phis[i].abs().max(2.0 * phi_y.abs()));
        frag.add(term);
    }
    let (coag, frag) = (coag.value(), frag.value());
    Ok(WeakResidual { coag, frag, value: coag - frag, scale })
}

/// `A_R[g]` on the nodes and the gain measure `B_R[g]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedOperators {
    /// Loss rate per unit weight at each node.
    pub a_field: Vec<f64>,
    /// Gain measure, atomic at the product locations.
    pub b_measure: GridMeasure,
}

/// Symmetric truncation weight of a coagulating pair.
fn pair_cutoff(xi: f64, eta: f64, r: f64) -> f64 {
    0.5 * (psi_r(xi, r) + psi_r(eta, r))
}

fn check_radius(r: f64) -> Result<()> {
    if r > 1.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("truncation radius must exceed 1, got {r}")))
    }
}

/// The truncated loss field and gain measure (all events counted). The
/// coagulation cut-off of a pair is the mean of `ψ_R` over its two members,
/// which is the symmetric form of the truncated weak equation and keeps the
/// mass balance exact.
pub fn truncated_operators(kernel: &dyn Kernel, g: &GridMeasure, r: f64) -> Result<TruncatedOperators> {
    check_radius(r)?;
    let nodes = g.nodes();
    let w = &g.weights;
    let mut a_field: Vec<f64> = nodes.iter().map(|x| 0.25 * kernel.gamma(x.exp2()) * psi_r(x.exp2(), r)).collect();
    let mut gains: Vec<(f64, f64)> = Vec::new();
    for i in 0..nodes.len() {
        for j in i..nodes.len() {
            if nodes[j] - nodes[i] >= 1.0 - SUPPORT_EPS {
                break;
            }
            let (xi, eta) = (nodes[i].exp2(), nodes[j].exp2());
            let c = LN_2 * kernel.k_coag(xi, eta) * pair_cutoff(xi, eta, r);
            a_field[i] += c * w[j];
            if i != j {
                a_field[j] += c * w[i];
            }
            let rate = if i == j { 0.5 * c * w[i] * w[i] } else { c * w[i] * w[j] };
            if rate > 0.0 {
                gains.push(((xi + eta).log2(), rate));
            }
        }
        let f = 0.25 * kernel.gamma(nodes[i].exp2()) * psi_r(nodes[i].exp2(), r) * w[i];
        if f > 0.0 {
            gains.push((nodes[i] - 1.0, 2.0 * f));
        }
    }
    gains.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut grid: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for (x, v) in gains {
        match grid.last() {
            Some(last) if (x - last).abs() <= SNAP => *weights.last_mut().unwrap() += v,
            _ => {
                grid.push(x);
                weights.push(v);
            }
        }
    }
    Ok(TruncatedOperators { a_field, b_measure: GridMeasure::atomic(grid, weights)? })
}

/// Where a product at `s` lands: one node, or two neighbours sharing it so
/// that number and mass are both preserved. `None` if `s` leaves the range.
fn split(nodes: &[f64], s: f64) -> Option<[(usize, f64); 2]> {
    if !inside(nodes, s) {
        return None;
    }
    let k = nodes.partition_point(|x| *x <= s);
    if k > 0 && (s - nodes[k - 1]).abs() <= SNAP {
        return Some([(k - 1, 1.0), (k - 1, 0.0)]);
    }
    if k < nodes.len() && (nodes[k] - s).abs() <= SNAP {
        return Some([(k, 1.0), (k, 0.0)]);
    }
    let (lo, hi) = (nodes[k - 1], nodes[k]);
    let upper = (s.exp2() - lo.exp2()) / (hi.exp2() - lo.exp2());
    Some([(k - 1, 1.0 - upper), (k, upper)])
}

#[derive(Debug, Clone)]
struct Pair {
    i: usize,
    j: usize,
    /// Event rate per `w_i w_j`.
    c: f64,
    to: [(usize, f64); 2],
}

#[derive(Debug, Clone)]
struct Fragmentation {
    i: usize,
    /// Event rate per `w_i`.
    f: f64,
    to: [(usize, f64); 2],
}

/// The truncated system on the nodes of a measure, with closed boundaries.
#[derive(Debug, Clone)]
struct NodeSystem {
    pairs: Vec<Pair>,
    frags: Vec<Fragmentation>,
    len: usize,
}

impl NodeSystem {
    fn new(kernel: &dyn Kernel, nodes: &[f64], r: f64) -> Self {
        let mut pairs = Vec::new();
        let mut frags = Vec::new();
        for i in 0..nodes.len() {
            for j in i..nodes.len() {
                if nodes[j] - nodes[i] >= 1.0 - SUPPORT_EPS {
                    break;
                }
                let (xi, eta) = (nodes[i].exp2(), nodes[j].exp2());
                let mut c = LN_2 * kernel.k_coag(xi, eta) * pair_cutoff(xi, eta, r);
                if i == j {
                    c *= 0.5;
                }
                if c > 0.0 {
                    if let Some(to) = split(nodes, (xi + eta).log2()) {
                        pairs.push(Pair { i, j, c, to });
                    }
                }
            }
            let f = 0.25 * kernel.gamma(nodes[i].exp2()) * psi_r(nodes[i].exp2(), r);
            if f > 0.0 {
                if let Some(to) = split(nodes, nodes[i] - 1.0) {
                    frags.push(Fragmentation { i, f, to });
                }
            }
        }
        Self { pairs, frags, len: nodes.len() }
    }

    /// Loss rates per unit weight and gain rates at state `w`.
    fn rates(&self, w: &[f64], a: &mut [f64], b: &mut [f64]) {
        a.iter_mut().for_each(|v| *v = 0.0);
        b.iter_mut().for_each(|v| *v = 0.0);
        for p in &self.pairs {
            if p.i == p.j {
                a[p.i] += 2.0 * p.c * w[p.i];
            } else {
                a[p.i] += p.c * w[p.j];
                a[p.j] += p.c * w[p.i];
            }
            let rate = p.c * w[p.i] * w[p.j];
            for (k, share) in p.to {
                b[k] += share * rate;
            }
        }
        for f in &self.frags {
            a[f.i] += f.f;
            for (k, share) in f.to {
                b[k] += 2.0 * share * f.f * w[f.i];
            }
        }
    }

    /// Largest loss rate at state `w` (sets the interval length).
    fn max_rate(&self, w: &[f64]) -> f64 {
        let mut a = vec![0.0; self.len];
        let mut b = vec![0.0; self.len];
        self.rates(w, &mut a, &mut b);
        a.iter().copied().fold(0.0, f64::max)
    }
}

/// Options of the mild fixed-point solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MildOptions {
    /// Successive iterates must differ by less than `tol · ‖g₀‖`.
    pub tol: f64,
    /// Longest sub-interval.
    pub h_max: f64,
    /// Shortest sub-interval before giving up.
    pub h_min: f64,
    /// Sub-interval length times the largest loss rate.
    pub rate_fraction: f64,
    pub max_iter: usize,
    /// Polynomial degree of the in-interval representation.
    pub degree: usize,
    /// Moment exponent θ that must be finite initially.
    pub theta: f64,
}

impl Default for MildOptions {
    fn default() -> Self {
        Self { tol: 1e-10, h_max: 0.05, h_min: 1e-9, rate_fraction: 0.25, max_iter: 40, degree: 6, theta: DEFAULT_THETA }
    }
}

/// Interpolation and integration tables of the in-interval scheme on `[0, 1]`.
#[derive(Debug, Clone)]
struct Collocation {
    nodes: Vec<f64>,
    /// For each node `m ≥ 1`: quadrature weights on `[0, c_m]`,
    /// `ℓ_k` at the quadrature points, `∫_0^{s} ℓ_k` at the quadrature points
    /// and `∫_0^{c_m} ℓ_k`.
    quad_w: Vec<Vec<f64>>,
    basis: Vec<Vec<Vec<f64>>>,
    basis_int: Vec<Vec<Vec<f64>>>,
    node_int: Vec<Vec<f64>>,
}

impl Collocation {
    fn new(degree: usize, quad_points: usize) -> Self {
        let p = degree;
        let nodes: Vec<f64> = (0..=p).map(|k| 0.5 * (1.0 - (PI * k as f64 / p as f64).cos())).collect();
        let bary: Vec<f64> = (0..=p)
            .map(|k| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                if k == 0 || k == p {
                    0.5 * sign
                } else {
                    sign
                }
            })
            .collect();
        let lagrange = |x: f64| -> Vec<f64> {
            if let Some(k) = nodes.iter().position(|c| *c == x) {
                let mut v = vec![0.0; p + 1];
                v[k] = 1.0;
                return v;
            }
            let terms: Vec<f64> = (0..=p).map(|k| bary[k] / (x - nodes[k])).collect();
            let total: f64 = terms.iter().sum();
            terms.iter().map(|t| t / total).collect()
        };
        let exact = gauss_legendre(p / 2 + 2);
        let integral = |s: f64| -> Vec<f64> {
            let mut acc = vec![0.0; p + 1];
            for (x, w) in exact.0.iter().zip(&exact.1) {
                let l = lagrange(0.5 * s * (x + 1.0));
                for k in 0..=p {
                    acc[k] += 0.5 * s * w * l[k];
                }
            }
            acc
        };
        let rule = gauss_legendre(quad_points);
        let (mut quad_w, mut basis, mut basis_int, mut node_int) = (vec![], vec![], vec![], vec![]);
        for &c in &nodes {
            let pts: Vec<f64> = rule.0.iter().map(|x| 0.5 * c * (x + 1.0)).collect();
            quad_w.push(rule.1.iter().map(|w| 0.5 * c * w).collect());
            basis.push(pts.iter().map(|s| lagrange(*s)).collect());
            basis_int.push(pts.iter().map(|s| integral(*s)).collect());
            node_int.push(integral(c));
        }
        Self { nodes, quad_w, basis, basis_int, node_int }
    }
}

fn dot(a: &[f64], b: impl Iterator<Item = f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mild-solution trajectory at the requested times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<GridMeasure>,
    /// Sub-intervals used.
    pub intervals: usize,
    /// Sub-interval halvings after failed contraction.
    pub halvings: usize,
    /// Largest number of fixed-point sweeps on one sub-interval.
    pub max_sweeps: usize,
    /// Smallest weight encountered (negative values are rounding artifacts).
    pub min_weight: f64,
}

impl MeasureTrajectory {
    /// Largest relative deviation of the total mass `moment(·, 1)`.
    pub fn mass_drift(&self) -> f64 {
        let m0 = moment(&self.states[0], 1.0);
        if m0 == 0.0 {
            return self.states.iter().map(|s| moment(s, 1.0).abs()).fold(0.0, f64::max);
        }
        self.states.iter().map(|s| ((moment(s, 1.0) - m0) / m0).abs()).fold(0.0, f64::max)
    }
}

/// Outcome of the fixed-point iteration on one sub-interval.
enum Sweep {
    Converged { end: Vec<f64>, sweeps: usize, min: f64 },
    Failed,
}

fn sweep_interval(
    system: &NodeSystem,
    table: &Collocation,
    w0: &[f64],
    h: f64,
    tol_abs: f64,
    measure: &GridMeasure,
    opts: &MildOptions,
) -> Sweep {
    let p = table.nodes.len() - 1;
    let len = w0.len();
    let mut states = vec![w0.to_vec(); p + 1];
    let mut a = vec![vec![0.0; len]; p + 1];
    let mut b = vec![vec![0.0; len]; p + 1];
    let mut last_diff = f64::INFINITY;
    let mut growth = 0;
    for sweep in 1..=opts.max_iter {
        for k in 0..=p {
            system.rates(&states[k], &mut a[k], &mut b[k]);
        }
        let mut next = vec![w0.to_vec(); p + 1];
        for m in 1..=p {
            for i in 0..len {
                let cum_end = h * dot(&table.node_int[m], (0..=p).map(|k| a[k][i]));
                let mut acc = w0[i] * (-cum_end).exp();
                for q in 0..table.quad_w[m].len() {
                    let cum_s = h * dot(&table.basis_int[m][q], (0..=p).map(|k| a[k][i]));
                    let gain = dot(&table.basis[m][q], (0..=p).map(|k| b[k][i]));
                    acc += h * table.quad_w[m][q] * (cum_s - cum_end).exp() * gain;
                }
                next[m][i] = acc;
            }
        }
        let diff = (1..=p)
            .map(|m| {
                let d: Vec<f64> = next[m].iter().zip(&states[m]).map(|(x, y)| x - y).collect();
                norm_of(&measure.grid, &d, measure.kind)
            })
            .fold(0.0, f64::max);
        states = next;
        if !diff.is_finite() {
            return Sweep::Failed;
        }
        if diff < tol_abs {
            let min = states.iter().flatten().copied().fold(f64::INFINITY, f64::min);
            return Sweep::Converged { end: states[p].clone(), sweeps: sweep, min };
        }
        if diff >= last_diff {
            growth += 1;
            if growth >= 2 {
                return Sweep::Failed;
            }
        } else {
            growth = 0;
        }
        last_diff = diff;
    }
    Sweep::Failed
}

/// Solves the truncated equation in mild form on `[0, t_grid.last()]`.
///
/// The horizon is covered by short sub-intervals; on each one the mild map
/// (exponential weight `exp(−∫A_R)` applied to the data plus the Duhamel
/// integral of `B_R`) is iterated to a fixed point, with the trajectory
/// represented by its values at Chebyshev–Lobatto times. A sub-interval on
/// which the iteration stops contracting is halved and retried; below
/// `h_min` the solver gives up. Products leaving the node range are switched
/// off (closed boundaries), so mass is conserved exactly by the equation.
pub fn mild_picard_step(
    kernel: &dyn Kernel,
    g0: &GridMeasure,
    r: f64,
    t_grid: &[f64],
    opts: &MildOptions,
) -> Result<MeasureTrajectory> {
    check_radius(r)?;
    crate::linear::check_grid(t_grid)?;
    let norm0 = norm_g(g0);
    let moment0 = moment(g0, opts.theta);
    if !norm0.is_finite() || !moment0.is_finite() {
        return Err(Error::Admissibility(format!("initial data need finite norm and θ-moment (norm {norm0}, moment {moment0})")));
    }
    let nodes = g0.nodes();
    let system = NodeSystem::new(kernel, &nodes, r);
    let table = Collocation::new(opts.degree.max(2), opts.degree.max(2) + 6);
    let tol_abs = opts.tol * if norm0 > 0.0 { norm0 } else { 1.0 };
    let mut w = g0.weights.clone();
    let mut states = vec![g0.clone()];
    let (mut t, mut h) = (0.0, opts.h_max);
    let (mut intervals, mut halvings, mut max_sweeps) = (0, 0, 0);
    let mut min_weight = w.iter().copied().fold(f64::INFINITY, f64::min);
    for &t_out in &t_grid[1..] {
        while t < t_out {
            let rate = system.max_rate(&w);
            let h_rate = if rate > 0.0 { opts.rate_fraction / rate } else { opts.h_max };
            h = h.min(h_rate).min(opts.h_max);
            let step = if t + h >= t_out * (1.0 - 1e-14) { t_out - t } else { h };
            match sweep_interval(&system, &table, &w, step, tol_abs, g0, opts) {
                Sweep::Converged { end, sweeps, min } => {
                    w = end;
                    t = if step == t_out - t { t_out } else { t + step };
                    intervals += 1;
                    max_sweeps = max_sweeps.max(sweeps);
                    min_weight = min_weight.min(min);
                    h = (1.5 * h).min(opts.h_max);
                }
                Sweep::Failed => {
                    h = 0.5 * step;
                    halvings += 1;
                    if h < opts.h_min {
                        return Err(Error::NoContraction(format!(
                            "mild map does not contract on intervals down to {:.3e} at t = {t}",
                            opts.h_min
                        )));
                    }
                }
            }
        }
        if let Some((i, v)) = w.iter().enumerate().find(|(_, v)| **v < -tol_abs) {
            return Err(Error::Negativity { t, index: i as i64, value: *v });
        }
        states.push(g0.with_weights(w.iter().map(|v| v.max(0.0)).collect()));
    }
    Ok(MeasureTrajectory { times: t_grid.to_vec(), states, intervals, halvings, max_sweeps, min_weight })
}

/// Running bounds of the norm and the θ-moment along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentBoundReport {
    pub theta: f64,
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
    pub moments: Vec<f64>,
    /// `sup_{s ≤ t} ‖g(s)‖`, nondecreasing in `t`.
    pub running_sup_norm: Vec<f64>,
    /// `sup_{s ≤ t} M_θ(g(s))`.
    pub running_sup_moment: Vec<f64>,
    pub sup_norm: f64,
    pub sup_moment: f64,
    pub finite: bool,
    /// Smallest `C` with `‖g(t)‖ ≤ e^{Ct}(‖g₀‖ + M₁)` on the trajectory.
    pub gronwall_rate: f64,
}

/// Summarizes the a-priori bounds of a trajectory.
pub fn moment_bound_report(traj: &MeasureTrajectory, theta: f64) -> MomentBoundReport {
    let norms: Vec<f64> = traj.states.iter().map(norm_g).collect();
    let moments: Vec<f64> = traj.states.iter().map(|g| moment(g, theta)).collect();
    let running = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .scan(f64::NEG_INFINITY, |s, x| {
                *s = s.max(*x);
                Some(*s)
            })
            .collect()
    };
    let running_sup_norm = running(&norms);
    let running_sup_moment = running(&moments);
    let base = norms[0] + moment(&traj.states[0], 1.0);
    let gronwall_rate = traj
        .times
        .iter()
        .zip(&norms)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, n)| if base > 0.0 && *n > 0.0 { (n / base).ln() / t } else { 0.0 })
        .fold(0.0, f64::max);
    let sup_norm = *running_sup_norm.last().unwrap_or(&0.0);
    let sup_moment = *running_sup_moment.last().unwrap_or(&0.0);
    MomentBoundReport {
        theta,
        times: traj.times.clone(),
        finite: sup_norm.is_finite() && sup_moment.is_finite(),
        norms,
        moments,
        running_sup_norm,
        running_sup_moment,
        sup_norm,
        sup_moment,
        gronwall_rate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelModel;

    #[test]
    fn cutoff_shape() {
        assert_eq!(psi_r(3.0, 5.0), 1.0);
        assert_eq!(psi_r(4.0, 5.0), 1.0);
        assert!((psi_r(4.5, 5.0) - 0.5).abs() < 1e-15);
        assert_eq!(psi_r(5.0, 5.0), 0.0);
    }

    #[test]
    fn single_atom_norm_and_moments() {
        let g = GridMeasure::atomic(vec![-3.0], vec![0.7]).unwrap();
        assert!((norm_g(&g) - 8.0 * 0.7).abs() < 1e-15);
        assert!((moment(&g, 1.0) - 0.7 / 8.0).abs() < 1e-16);
        let c = GridMeasure::cells(0.0, 1.0, 4, |_| 1.0).unwrap();
        // ∫_0^1 2^x dx = 1/ln 2
        assert!((moment(&c, 1.0) - 1.0 / LN_2).abs() < 1e-14);
        assert!((norm_g(&c) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mass_test_function_gives_zero_residual() {
        let k = KernelModel::default();
        let g = GridMeasure::atomic(vec![-1.0, -0.6, 0.0, 0.3, 0.9, 2.0], vec![0.5, 1.0, 2.0, 0.1, 0.7, 0.3]).unwrap();
        let mass = &test_bank()[0];
        for b in [Boundary::Open, Boundary::Closed] {
            let r = weak_residual(&k, &g, mass, b).unwrap();
            assert!(r.relative() < 1e-12, "{r:?}");
        }
    }

    #[test]
    fn single_atom_gains() {
        let k = KernelModel::default();
        let g = GridMeasure::atomic(vec![1.0], vec![2.0]).unwrap();
        let ops = truncated_operators(&k, &g, 100.0).unwrap();
        assert_eq!(ops.b_measure.grid, vec![0.0, 2.0]);
        let zero = GridMeasure::atomic(vec![1.0], vec![0.0]).unwrap();
        let ops0 = truncated_operators(&k, &zero, 2.5).unwrap();
        assert!(ops0.b_measure.is_empty());
        assert!((ops0.a_field[0] - psi_r(2.0, 2.5) * k.gamma(2.0) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn splitting_preserves_number_and_mass() {
        let nodes = [0.0, 0.25, 0.5];
        let [(i, a), (j, b)] = split(&nodes, 0.4).unwrap();
        assert!((a + b - 1.0).abs() < 1e-15);
        assert!((a * nodes[i].exp2() + b * nodes[j].exp2() - 0.4f64.exp2()).abs() < 1e-15);
        assert!(split(&nodes, 0.6).is_none());
    }
}
