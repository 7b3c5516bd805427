//! Stage-cost families, comparison functions `sigma`, and terminal-cost
//! synthesis.
//!
//! Three families are supported: time-varying quadratics
//! `x'Q_t x + u'R_t u`, the power costs `||x||^a + ||u||^a`, and tracking
//! costs `||x - b||^a`. Each family declares the constant `alpha` and the
//! function `sigma` for which `c_t(x, u) >= alpha * sigma(x)` holds.

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linsys::Theta;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("time index {t} outside the per-step schedule (len {len})")]
    ScheduleOutOfRange { t: usize, len: usize },
    #[error("invalid cost parameters: {0}")]
    InvalidParams(String),
    #[error("no terminal matrix found: {0}; fall back to d = 0 with a horizon M > alpha_bar^2/alpha^2 + 1")]
    TerminalSynthesis(String),
}

/// Time-indexed parameter schedule. Time is 1-based to match the episode
/// clock; `Constant` and `Periodic` extend to every `t >= 1`, `PerStep`
/// is finite and errors beyond its length.
#[derive(Debug, Clone)]
pub enum Schedule<T> {
    Constant(T),
    Periodic(Vec<T>),
    PerStep(Vec<T>),
}

impl<T> Schedule<T> {
    pub fn at(&self, t: usize) -> Result<&T, CostError> {
        debug_assert!(t >= 1, "schedules are 1-based");
        match self {
            Schedule::Constant(v) => Ok(v),
            Schedule::Periodic(vs) => Ok(&vs[(t - 1) % vs.len()]),
            Schedule::PerStep(vs) => vs.get(t - 1).ok_or(CostError::ScheduleOutOfRange {
                t,
                len: vs.len(),
            }),
        }
    }

    /// Largest `t` the schedule covers, if finite.
    pub fn finite_len(&self) -> Option<usize> {
        match self {
            Schedule::PerStep(vs) => Some(vs.len()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum CostFamily {
    Quadratic {
        q: Schedule<DMatrix<f64>>,
        r: Schedule<DMatrix<f64>>,
    },
    Power {
        a: f64,
    },
    Tracking {
        b: DVector<f64>,
        a: f64,
        /// Contraction factor of the associated scalar reference system
        /// `x_{t+1} = beta x + u`; fixes the input `u = b (1 - beta)` that
        /// certifies the terminal decrease.
        beta_ref: f64,
    },
}

/// The comparison function `sigma` a cost family is measured against.
#[derive(Debug, Clone)]
pub enum SigmaKind {
    /// `||x||_2^2`
    NormSq,
    /// `||x||^a`
    PowerNorm { a: f64 },
    /// `||x - b||^a`
    TrackingNorm { b: DVector<f64>, a: f64 },
}

#[derive(Debug, Clone)]
pub struct StageCostSpec {
    family: CostFamily,
    /// Declared constant with `c_t(x,u) >= alpha * sigma(x)`.
    alpha: f64,
}

impl StageCostSpec {
    pub fn new(family: CostFamily) -> Result<Self, CostError> {
        let alpha = match &family {
            CostFamily::Quadratic { q, r } => {
                let mut alpha = f64::INFINITY;
                let probe = |m: &DMatrix<f64>, psd_ok: bool, name: &str| -> Result<f64, CostError> {
                    if m.nrows() != m.ncols() {
                        return Err(CostError::InvalidParams(format!("{name} not square")));
                    }
                    if (m - m.transpose()).norm() > 1e-12 * (1.0 + m.norm()) {
                        return Err(CostError::InvalidParams(format!("{name} not symmetric")));
                    }
                    let lmin = m
                        .symmetric_eigenvalues()
                        .iter()
                        .cloned()
                        .fold(f64::INFINITY, f64::min);
                    if psd_ok && lmin < -1e-12 {
                        return Err(CostError::InvalidParams(format!("{name} not PSD")));
                    }
                    if !psd_ok && lmin <= 0.0 {
                        return Err(CostError::InvalidParams(format!("{name} not PD")));
                    }
                    Ok(lmin)
                };
                let qs: &[DMatrix<f64>] = match q {
                    Schedule::Constant(v) => std::slice::from_ref(v),
                    Schedule::Periodic(v) | Schedule::PerStep(v) => v,
                };
                for qt in qs {
                    alpha = alpha.min(probe(qt, true, "Q_t")?);
                }
                let rs: &[DMatrix<f64>] = match r {
                    Schedule::Constant(v) => std::slice::from_ref(v),
                    Schedule::Periodic(v) | Schedule::PerStep(v) => v,
                };
                for rt in rs {
                    probe(rt, false, "R_t")?;
                }
                alpha.max(0.0)
            }
            CostFamily::Power { a } => {
                if *a <= 0.0 {
                    return Err(CostError::InvalidParams("power exponent a must be > 0".into()));
                }
                1.0
            }
            CostFamily::Tracking { a, beta_ref, .. } => {
                if *a <= 0.0 {
                    return Err(CostError::InvalidParams("tracking exponent a must be > 0".into()));
                }
                if !(0.0..1.0).contains(beta_ref) {
                    return Err(CostError::InvalidParams(
                        "tracking beta_ref must lie in (0,1)".into(),
                    ));
                }
                1.0
            }
        };
        Ok(Self { family, alpha })
    }

    pub fn quadratic_constant(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self, CostError> {
        Self::new(CostFamily::Quadratic {
            q: Schedule::Constant(q),
            r: Schedule::Constant(r),
        })
    }

    pub fn family(&self) -> &CostFamily {
        &self.family
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sigma_kind(&self) -> SigmaKind {
        match &self.family {
            CostFamily::Quadratic { .. } => SigmaKind::NormSq,
            CostFamily::Power { a } => SigmaKind::PowerNorm { a: *a },
            CostFamily::Tracking { b, a, .. } => SigmaKind::TrackingNorm {
                b: b.clone(),
                a: *a,
            },
        }
    }

    /// Exact family formula; nonnegative by construction.
    pub fn eval_stage(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64, CostError> {
        self.eval_stage_slices(t, x.as_slice(), u.as_slice())
    }

    /// Allocation-free stage cost on raw slices.
    pub fn eval_stage_slices(&self, t: usize, x: &[f64], u: &[f64]) -> Result<f64, CostError> {
        match &self.family {
            CostFamily::Quadratic { q, r } => {
                Ok(quad_form(q.at(t)?, x) + quad_form(r.at(t)?, u))
            }
            CostFamily::Power { a } => Ok(norm_slice(x).powf(*a) + norm_slice(u).powf(*a)),
            CostFamily::Tracking { b, a, .. } => {
                let d2: f64 = x
                    .iter()
                    .zip(b.as_slice())
                    .map(|(xi, bi)| (xi - bi) * (xi - bi))
                    .sum();
                Ok(d2.sqrt().powf(*a))
            }
        }
    }

    pub fn eval_sigma(&self, x: &DVector<f64>) -> f64 {
        eval_sigma(&self.sigma_kind(), x)
    }

    /// Stage gradients `(dc/dx, dc/du)` where the family provides them in
    /// closed form. Norm powers use `a ||v||^{a-2} v`, extended by zero at
    /// the nonsmooth point.
    pub fn stage_grad(
        &self,
        t: usize,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>), CostError> {
        let mut gx = DVector::zeros(x.len());
        let mut gu = DVector::zeros(u.len());
        self.stage_grad_slices(t, x.as_slice(), u.as_slice(), gx.as_mut_slice(), gu.as_mut_slice())?;
        Ok((gx, gu))
    }

    /// Allocation-free stage gradient on raw slices.
    pub fn stage_grad_slices(
        &self,
        t: usize,
        x: &[f64],
        u: &[f64],
        gx: &mut [f64],
        gu: &mut [f64],
    ) -> Result<(), CostError> {
        match &self.family {
            CostFamily::Quadratic { q, r } => {
                quad_grad(q.at(t)?, x, gx);
                quad_grad(r.at(t)?, u, gu);
            }
            CostFamily::Power { a } => {
                norm_pow_grad_slice(x, *a, gx);
                norm_pow_grad_slice(u, *a, gu);
            }
            CostFamily::Tracking { b, a, .. } => {
                let bs = b.as_slice();
                for (g, (xi, bi)) in gx.iter_mut().zip(x.iter().zip(bs)) {
                    *g = xi - bi;
                }
                let norm = norm_slice(gx);
                let scale = if norm == 0.0 { 0.0 } else { a * norm.powf(a - 2.0) };
                for g in gx.iter_mut() {
                    *g *= scale;
                }
                gu.fill(0.0);
            }
        }
        Ok(())
    }

    /// The input certifying the decrease of the appendix examples:
    /// zero, except `b (1 - beta)` for the tracking family.
    pub fn u_tilde(&self, m: usize) -> DVector<f64> {
        match &self.family {
            CostFamily::Tracking { b, beta_ref, .. } if b.len() == m => b * (1.0 - *beta_ref),
            _ => DVector::zeros(m),
        }
    }
}

fn norm_slice(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `x' M x` on slices; M stored column-major.
fn quad_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = m.nrows();
    debug_assert_eq!(x.len(), n);
    let data = m.as_slice();
    let mut acc = 0.0;
    for (j, &xj) in x.iter().enumerate() {
        let col = &data[j * n..(j + 1) * n];
        let mut dot = 0.0;
        for (c, xi) in col.iter().zip(x) {
            dot += c * xi;
        }
        acc += dot * xj;
    }
    acc
}

/// Gradient of `x' M x` for symmetric M: `2 M x`.
fn quad_grad(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let n = m.nrows();
    out.fill(0.0);
    let data = m.as_slice();
    for (j, &xj) in x.iter().enumerate() {
        let col = &data[j * n..(j + 1) * n];
        for i in 0..n {
            out[i] += 2.0 * col[i] * xj;
        }
    }
}

fn norm_pow_grad_slice(v: &[f64], a: f64, out: &mut [f64]) {
    let norm = norm_slice(v);
    if norm == 0.0 {
        out.fill(0.0);
        return;
    }
    let scale = a * norm.powf(a - 2.0);
    for (o, vi) in out.iter_mut().zip(v) {
        *o = scale * vi;
    }
}

pub fn eval_sigma(kind: &SigmaKind, x: &DVector<f64>) -> f64 {
    match kind {
        SigmaKind::NormSq => x.norm_squared(),
        SigmaKind::PowerNorm { a } => x.norm().powf(*a),
        SigmaKind::TrackingNorm { b, a } => (x - b).norm().powf(*a),
    }
}

/// Target point of `sigma` (where it vanishes).
pub fn sigma_center(kind: &SigmaKind, n: usize) -> DVector<f64> {
    match kind {
        SigmaKind::TrackingNorm { b, .. } => b.clone(),
        _ => DVector::zeros(n),
    }
}

/// Terminal cost `d(x) = (x - c)' P (x - c)` with weight `Gamma >= 1`.
/// The center `c` is zero except for tracking instances.
#[derive(Debug, Clone)]
pub struct TerminalCostSpec {
    p: DMatrix<f64>,
    gamma: f64,
    center: DVector<f64>,
    sigma: SigmaKind,
    /// Input certifying `d(x_{t+1}) <= d(x_t)`.
    u_tilde: DVector<f64>,
}

impl TerminalCostSpec {
    pub fn new(
        p: DMatrix<f64>,
        gamma: f64,
        sigma: SigmaKind,
        u_tilde: DVector<f64>,
    ) -> Result<Self, CostError> {
        if gamma < 1.0 {
            return Err(CostError::InvalidParams("Gamma must be >= 1".into()));
        }
        if (&p - p.transpose()).norm() > 1e-10 * (1.0 + p.norm()) {
            return Err(CostError::InvalidParams("P must be symmetric".into()));
        }
        let lmin = p
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if lmin <= 0.0 {
            return Err(CostError::InvalidParams("P must be positive definite".into()));
        }
        let center = sigma_center(&sigma, p.nrows());
        Ok(Self {
            p,
            gamma,
            center,
            sigma,
            u_tilde,
        })
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn u_tilde(&self) -> &DVector<f64> {
        &self.u_tilde
    }

    /// `lambda_min(P)`, the constant with `d(x) >= alpha_d * ||x - c||^2`.
    pub fn alpha_d_lower(&self) -> f64 {
        self.p
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        let dx = x - &self.center;
        (dx.transpose() * &self.p * &dx)[(0, 0)]
    }

    /// Weighted terminal value `Gamma * d(x)`.
    pub fn eval_weighted(&self, x: &DVector<f64>) -> f64 {
        self.gamma * self.eval(x)
    }

    pub fn eval_weighted_slices(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        for (s, (xi, ci)) in scratch.iter_mut().zip(x.iter().zip(self.center.as_slice())) {
            *s = xi - ci;
        }
        self.gamma * quad_form(&self.p, scratch)
    }

    pub fn grad_weighted(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        let mut scratch = DVector::zeros(x.len());
        self.grad_weighted_into(x.as_slice(), scratch.as_mut_slice(), out.as_mut_slice());
        out
    }

    /// `Gamma * 2 P (x - c)` into `out`, allocation-free.
    pub fn grad_weighted_into(&self, x: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        for (s, (xi, ci)) in scratch.iter_mut().zip(x.iter().zip(self.center.as_slice())) {
            *s = xi - ci;
        }
        quad_grad(&self.p, scratch, out);
        for o in out.iter_mut() {
            *o *= self.gamma;
        }
    }

    pub fn sigma(&self) -> &SigmaKind {
        &self.sigma
    }

    /// Lower bound `max{1, alpha_bar * alpha_c_bar / (alpha * alpha_d)}`
    /// that the weight must dominate.
    pub fn gamma_floor(&self, alpha: f64, alpha_bar: f64, alpha_c_bar: f64) -> f64 {
        1.0f64.max(alpha_bar * alpha_c_bar / (alpha * self.alpha_d_lower()))
    }

    /// Checks `d(A x + B u_tilde) <= d(x)` on the given sample states.
    pub fn check_decrease(&self, theta: &Theta, states: &[DVector<f64>]) -> bool {
        states.iter().all(|x| {
            let next = theta.apply(x, &self.u_tilde);
            self.eval(&next) <= self.eval(x) + 1e-10
        })
    }
}

/// Solves `P - A' P A = 2 I` by the doubling iteration; quadratic
/// convergence for `rho(A) < 1`.
fn discrete_lyapunov_2i(a: &DMatrix<f64>) -> Result<DMatrix<f64>, CostError> {
    let n = a.nrows();
    let mut p = DMatrix::identity(n, n) * 2.0;
    let mut ak = a.clone();
    for _ in 0..200 {
        let update = ak.transpose() * &p * &ak;
        p += &update;
        ak = &ak * &ak;
        if ak.norm() < 1e-300 || update.norm() < 1e-14 * p.norm() {
            // Symmetrize away accumulated rounding.
            let pt = p.transpose();
            return Ok((p + pt) * 0.5);
        }
    }
    Err(CostError::TerminalSynthesis(
        "Lyapunov doubling iteration did not converge within budget".into(),
    ))
}

fn corner_margin(p: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    // lambda_min of -(A'PA - P); the contract requires >= 1 - 1e-8.
    let s = p - a.transpose() * p * a;
    s.symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Synthesizes `P > 0` with `A' P A - P <= -I` at every corner of the
/// parameter polytope: solve `A' P A - P = -2 I` at the dominant corner
/// (largest spectral radius) and verify the margin at all of them. If the
/// dominant corner's solution fails elsewhere, every corner is tried as
/// the base before giving up.
pub fn synth_terminal(
    corners: &[DMatrix<f64>],
    gamma: f64,
    sigma: SigmaKind,
    u_tilde: DVector<f64>,
) -> Result<TerminalCostSpec, CostError> {
    if corners.is_empty() {
        return Err(CostError::InvalidParams("no corners supplied".into()));
    }
    for a in corners {
        let rho = crate::linsys::spectral_radius(a);
        if rho >= 1.0 {
            return Err(CostError::TerminalSynthesis(format!(
                "corner with spectral radius {rho} >= 1"
            )));
        }
    }
    let mut order: Vec<usize> = (0..corners.len()).collect();
    order.sort_by(|&i, &j| {
        let ri = crate::linsys::spectral_radius(&corners[i]);
        let rj = crate::linsys::spectral_radius(&corners[j]);
        rj.partial_cmp(&ri).unwrap()
    });
    for idx in order {
        let p = discrete_lyapunov_2i(&corners[idx])?;
        if corners.iter().all(|a| corner_margin(&p, a) >= 1.0 - 1e-8) {
            return TerminalCostSpec::new(p, gamma, sigma, u_tilde);
        }
    }
    Err(CostError::TerminalSynthesis(
        "no corner's Lyapunov solution satisfies the margin at all corners".into(),
    ))
}

/// Empirical check of `c_t(x,u) >= alpha * sigma(x)` on sampled points.
#[derive(Debug, Clone)]
pub struct Assumption3Report {
    pub alpha_hat: f64,
    pub worst_ratio: f64,
    pub declared_alpha: f64,
    pub samples: usize,
    pub pass: bool,
}

/// Samples `(t, x, u)` over the declared compact domain and reports the
/// minimum of `c_t(x,u) / sigma(x)`; points with `sigma(x)` at zero are
/// excluded.
pub fn verify_assumption3(
    spec: &StageCostSpec,
    t_range: std::ops::RangeInclusive<usize>,
    x_radius: f64,
    u_samples: &[DVector<f64>],
    n: usize,
    budget: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Assumption3Report, CostError> {
    let mut worst = f64::INFINITY;
    let mut used = 0;
    let (t_lo, t_hi) = (*t_range.start(), *t_range.end());
    for _ in 0..budget {
        let t = rng.random_range(t_lo..=t_hi);
        let x = DVector::from_fn(n, |_, _| rng.random_range(-x_radius..x_radius));
        let u = &u_samples[rng.random_range(0..u_samples.len())];
        let sigma = spec.eval_sigma(&x);
        if sigma <= 1e-12 {
            continue;
        }
        let c = spec.eval_stage(t, &x, u)?;
        worst = worst.min(c / sigma);
        used += 1;
    }
    Ok(Assumption3Report {
        alpha_hat: worst,
        worst_ratio: worst,
        declared_alpha: spec.alpha(),
        samples: used,
        pass: worst >= spec.alpha() - 1e-9,
    })
}

/// Empirical uniform Lipschitz estimate of the stage cost over the compact
/// domain `||x|| <= x_radius`, `u` from the provided feasible samples.
pub fn estimate_lipschitz(
    spec: &StageCostSpec,
    t_range: std::ops::RangeInclusive<usize>,
    x_radius: f64,
    u_samples: &[DVector<f64>],
    n: usize,
    pairs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64, CostError> {
    let mut l = 0.0f64;
    let (t_lo, t_hi) = (*t_range.start(), *t_range.end());
    for _ in 0..pairs {
        let t = rng.random_range(t_lo..=t_hi);
        let x1 = DVector::from_fn(n, |_, _| rng.random_range(-x_radius..x_radius));
        // Pair a far point with a nearby one so local slopes are probed too.
        let x2 = if rng.random_range(0.0..1.0f64) < 0.5 {
            DVector::from_fn(n, |_, _| rng.random_range(-x_radius..x_radius))
        } else {
            &x1 + DVector::from_fn(n, |_, _| rng.random_range(-1e-3..1e-3f64))
        };
        let u1 = u_samples[rng.random_range(0..u_samples.len())].clone();
        let u2 = u_samples[rng.random_range(0..u_samples.len())].clone();
        let denom = (&x1 - &x2).norm() + (&u1 - &u2).norm();
        if denom < 1e-12 {
            continue;
        }
        let diff = (spec.eval_stage(t, &x1, &u1)? - spec.eval_stage(t, &x2, &u2)?).abs();
        l = l.max(diff / denom);
    }
    Ok(l)
}
