//! Ground-truth linear system simulation and admissibility checks.
//!
//! The plant is `x_{t+1} = A x_t + B u_t` with observations `y_t = x_t + eps_t`
//! where the noise is bounded, zero-mean and i.i.d. The parameter pair
//! `theta = [A, B]` lives in the admissible set
//! `Theta = { ||theta||_F <= S, rho(A) < 1, (A,B) controllable }`.

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinSysError {
    #[error("dimension mismatch: expected {expected}, got {got} for {what}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("system parameters are not admissible: {0}")]
    NotAdmissible(String),
    #[error("spectral radius {rho} >= 1; no exponential envelope exists")]
    Unstable { rho: f64 },
}

/// A parameter pair `[A, B]`. Used both for the ground truth and for
/// estimates, which need not be admissible.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl Theta {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, LinSysError> {
        if !a.is_square() {
            return Err(LinSysError::DimensionMismatch {
                what: "A (must be square)",
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        if b.nrows() != a.nrows() {
            return Err(LinSysError::DimensionMismatch {
                what: "B rows",
                expected: a.nrows(),
                got: b.nrows(),
            });
        }
        Ok(Self { a, b })
    }

    /// Splits a stacked `n x (n+m)` matrix `[A B]` back into the pair.
    pub fn from_stacked(stacked: &DMatrix<f64>, n: usize, m: usize) -> Result<Self, LinSysError> {
        if stacked.nrows() != n || stacked.ncols() != n + m {
            return Err(LinSysError::DimensionMismatch {
                what: "stacked [A B]",
                expected: n * (n + m),
                got: stacked.nrows() * stacked.ncols(),
            });
        }
        let a = stacked.columns(0, n).into_owned();
        let b = stacked.columns(n, m).into_owned();
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Stacks the pair as the `n x (n+m)` matrix `[A B]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let n = self.state_dim();
        let m = self.input_dim();
        let mut out = DMatrix::zeros(n, n + m);
        out.columns_mut(0, n).copy_from(&self.a);
        out.columns_mut(n, m).copy_from(&self.b);
        out
    }

    pub fn fro_norm(&self) -> f64 {
        (self.a.norm_squared() + self.b.norm_squared()).sqrt()
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a)
    }

    /// One exact step of the dynamics; no dimension checks (callers in hot
    /// loops have validated shapes up front).
    pub fn apply(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.state_dim());
        debug_assert_eq!(u.len(), self.input_dim());
        &self.a * x + &self.b * u
    }

    /// `apply` into a preallocated output buffer.
    pub fn apply_to(&self, x: &DVector<f64>, u: &DVector<f64>, out: &mut DVector<f64>) {
        out.gemv(1.0, &self.a, x, 0.0);
        out.gemv(1.0, &self.b, u, 1.0);
    }

    /// Allocation-free step on raw slices (column-major storage walk);
    /// the solver's rollout lives on this.
    pub fn apply_slices(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let n = self.state_dim();
        let m = self.input_dim();
        debug_assert!(x.len() == n && u.len() == m && out.len() == n);
        out.fill(0.0);
        let a = self.a.as_slice();
        for (j, &xj) in x.iter().enumerate() {
            let col = &a[j * n..(j + 1) * n];
            for i in 0..n {
                out[i] += col[i] * xj;
            }
        }
        let b = self.b.as_slice();
        for (j, &uj) in u.iter().enumerate() {
            let col = &b[j * n..(j + 1) * n];
            for i in 0..n {
                out[i] += col[i] * uj;
            }
        }
    }

    /// `out = A^T v`, allocation-free.
    pub fn at_mul(&self, v: &[f64], out: &mut [f64]) {
        let n = self.state_dim();
        debug_assert!(v.len() == n && out.len() == n);
        let a = self.a.as_slice();
        for (j, o) in out.iter_mut().enumerate() {
            let col = &a[j * n..(j + 1) * n];
            *o = col.iter().zip(v).map(|(c, vi)| c * vi).sum();
        }
    }

    /// `out = B^T v`, allocation-free.
    pub fn bt_mul(&self, v: &[f64], out: &mut [f64]) {
        let n = self.state_dim();
        let m = self.input_dim();
        debug_assert!(v.len() == n && out.len() == m);
        let b = self.b.as_slice();
        for (j, o) in out.iter_mut().enumerate().take(m) {
            let col = &b[j * n..(j + 1) * n];
            *o = col.iter().zip(v).map(|(c, vi)| c * vi).sum();
        }
    }

    pub fn fro_distance(&self, other: &Theta) -> f64 {
        ((&self.a - &other.a).norm_squared() + (&self.b - &other.b).norm_squared()).sqrt()
    }
}

/// The unknown truth: an admissible `[A, B]` together with the Frobenius
/// bound `S` that defines the ambient set `Theta`.
#[derive(Debug, Clone)]
pub struct SystemParams {
    theta: Theta,
    s_bound: f64,
}

impl SystemParams {
    /// Validates the admissibility invariants at construction.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, s_bound: f64) -> Result<Self, LinSysError> {
        let theta = Theta::new(a, b)?;
        let report = check_admissible(&theta, s_bound);
        if !report.admissible() {
            return Err(LinSysError::NotAdmissible(report.describe()));
        }
        Ok(Self { theta, s_bound })
    }

    pub fn theta(&self) -> &Theta {
        &self.theta
    }

    pub fn s_bound(&self) -> f64 {
        self.s_bound
    }

    pub fn n(&self) -> usize {
        self.theta.state_dim()
    }

    pub fn m(&self) -> usize {
        self.theta.input_dim()
    }
}

/// Exact dynamics step `A x + B u`. Noise never enters here; it only
/// perturbs observations.
pub fn step(
    theta: &SystemParams,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>, LinSysError> {
    if x.len() != theta.n() {
        return Err(LinSysError::DimensionMismatch {
            what: "state",
            expected: theta.n(),
            got: x.len(),
        });
    }
    if u.len() != theta.m() {
        return Err(LinSysError::DimensionMismatch {
            what: "input",
            expected: theta.m(),
            got: u.len(),
        });
    }
    Ok(theta.theta.apply(x, u))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// i.i.d. uniform on the closed ball of radius `eps_c`.
    UniformBall,
    /// Exactly zero noise; consumes no randomness.
    Zero,
}

/// Bounded zero-mean observation noise. `R` is the per-component
/// sub-Gaussian constant; for the uniform ball it is taken equal to the
/// bound itself.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    eps_c: f64,
    kind: NoiseKind,
}

impl NoiseModel {
    pub fn uniform_ball(eps_c: f64) -> Self {
        Self {
            eps_c,
            kind: NoiseKind::UniformBall,
        }
    }

    pub fn zero() -> Self {
        Self {
            eps_c: 0.0,
            kind: NoiseKind::Zero,
        }
    }

    pub fn eps_c(&self) -> f64 {
        self.eps_c
    }

    /// Sub-Gaussian constant; `R = eps_c` for bounded noise.
    pub fn r_subgauss(&self) -> f64 {
        self.eps_c
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    /// Draws one noise vector of dimension `n`. Uniform-ball sampling:
    /// Gaussian direction scaled by `eps_c * U^{1/n}`.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        match self.kind {
            NoiseKind::Zero => DVector::zeros(n),
            NoiseKind::UniformBall => {
                let mut v = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
                let norm = v.norm();
                let radius: f64 = rng.random_range(0.0..1.0f64).powf(1.0 / n as f64);
                if norm > 0.0 {
                    v *= self.eps_c * radius / norm;
                } else {
                    v.fill(0.0);
                }
                v
            }
        }
    }
}

/// Observation `y = x + eps` with `||eps||_2 <= eps_c`; deterministic
/// given the generator state.
pub fn observe(x: &DVector<f64>, noise: &NoiseModel, rng: &mut ChaCha8Rng) -> DVector<f64> {
    x + noise.sample(x.len(), rng)
}

/// Report-only admissibility diagnostics for a parameter pair.
#[derive(Debug, Clone)]
pub struct AdmissibilityReport {
    pub rho: f64,
    pub ctrb_rank: usize,
    pub fro_norm: f64,
    pub s_bound: f64,
    pub stable: bool,
    pub controllable: bool,
    pub within_bound: bool,
}

impl AdmissibilityReport {
    pub fn admissible(&self) -> bool {
        self.stable && self.controllable && self.within_bound
    }

    pub fn describe(&self) -> String {
        format!(
            "rho={:.6} (stable={}), ctrb_rank={} (controllable={}), ||theta||_F={:.6} vs S={} (within={})",
            self.rho, self.stable, self.ctrb_rank, self.controllable, self.fro_norm, self.s_bound,
            self.within_bound
        )
    }
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// Rank of `[B, AB, ..., A^{n-1}B]` with a relative singular-value cutoff.
pub fn controllability_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let m = b.ncols();
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        ctrb.columns_mut(k * m, m).copy_from(&block);
        block = a * &block;
    }
    let sv = ctrb.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > 1e-10 * smax).count()
}

/// Evaluates rho(A), controllability rank and the Frobenius norm; flags
/// violations but never fails.
pub fn check_admissible(theta: &Theta, s_bound: f64) -> AdmissibilityReport {
    let rho = theta.spectral_radius();
    let ctrb_rank = controllability_rank(theta.a(), theta.b());
    let fro_norm = theta.fro_norm();
    AdmissibilityReport {
        rho,
        ctrb_rank,
        fro_norm,
        s_bound,
        stable: rho < 1.0,
        controllable: ctrb_rank == theta.state_dim(),
        within_bound: fro_norm <= s_bound + 1e-12,
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Constants `(c_rho, gamma)` with `||A^k||_2 <= c_rho * gamma^k`,
/// verified numerically for `k <= 200`.
///
/// Construction: find the first `p` with `||A^p||_2 < 1`, set
/// `gamma = ||A^p||^(1/p)` and `c_rho = max_{r<p} ||A^r|| / gamma^r`.
/// Submultiplicativity then gives the bound for every `k`.
pub fn power_norm_decay(a: &DMatrix<f64>) -> Result<(f64, f64), LinSysError> {
    let rho = spectral_radius(a);
    if rho >= 1.0 {
        return Err(LinSysError::Unstable { rho });
    }
    let n = a.nrows();
    let mut powers = vec![DMatrix::identity(n, n)];
    let mut norms = vec![1.0f64];
    let mut p = None;
    for k in 1..=400usize {
        let next = powers.last().unwrap() * a;
        let nk = spectral_norm(&next);
        powers.push(next);
        norms.push(nk);
        if nk < 1.0 {
            p = Some(k);
            break;
        }
    }
    let p = p.ok_or(LinSysError::Unstable { rho })?;
    let gamma = if norms[p] == 0.0 {
        0.5
    } else {
        norms[p].powf(1.0 / p as f64)
    };
    let c_rho = (0..p)
        .map(|r| norms[r] / gamma.powi(r as i32))
        .fold(1.0, f64::max);

    // Direct numerical verification over the contract range.
    let mut pk = DMatrix::identity(n, n);
    for k in 0..=200usize {
        let bound = c_rho * gamma.powi(k as i32);
        let nk = spectral_norm(&pk);
        if nk > bound * (1.0 + 1e-9) + 1e-300 {
            return Err(LinSysError::NotAdmissible(format!(
                "power norm envelope violated at k={k}: {nk} > {bound}"
            )));
        }
        pk = &pk * a;
    }
    Ok((c_rho, gamma))
}
