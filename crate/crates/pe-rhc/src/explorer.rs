//! Directional perturbation generation and persistence-of-excitation
//! certificates.
//!
//! The controller keeps a ring of the last `(n+1)m + n` applied inputs.
//! Stacking `n+1` consecutive inputs gives window vectors
//! `W_k = [u_k; ...; u_{k+n}]`; the matrix of `q = (n+1)m` consecutive
//! windows must stay nonsingular for the closed loop to remain exciting.
//! Each step perturbs the nominal input just enough that the newest window
//! column keeps a nonzero component along the one direction the remaining
//! columns cannot span.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExplorerError {
    #[error("window not warmed up: {have} of {need} inputs")]
    NotWarm { have: usize, need: usize },
    #[error("window matrix is rank deficient (residual {residual:.3e}); invariant breach")]
    RankDeficient { residual: f64 },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// Ring of the most recent `(n+1)m + n` inputs plus the window assembly
/// helpers on top of it.
#[derive(Debug, Clone)]
pub struct InputWindow {
    n: usize,
    m: usize,
    ring: Vec<DVector<f64>>,
}

impl InputWindow {
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            ring: Vec::new(),
        }
    }

    /// `q = (n+1) m`, the number of window columns.
    pub fn q(&self) -> usize {
        (self.n + 1) * self.m
    }

    /// Ring capacity `q + n`.
    pub fn capacity(&self) -> usize {
        self.q() + self.n
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn is_warm(&self) -> bool {
        self.ring.len() >= self.capacity()
    }

    pub fn push(&mut self, u: DVector<f64>) {
        debug_assert_eq!(u.len(), self.m);
        if self.ring.len() == self.capacity() {
            self.ring.remove(0);
        }
        self.ring.push(u);
    }

    fn window_vec(&self, start: usize) -> DVector<f64> {
        let q = self.q();
        let mut w = DVector::zeros(q);
        for blk in 0..=self.n {
            w.rows_mut(blk * self.m, self.m)
                .copy_from(&self.ring[start + blk]);
        }
        w
    }

    /// Current window matrix `M = [W_1, ..., W_q]` over the ring.
    pub fn window_matrix(&self) -> Result<DMatrix<f64>, ExplorerError> {
        if !self.is_warm() {
            return Err(ExplorerError::NotWarm {
                have: self.ring.len(),
                need: self.capacity(),
            });
        }
        let q = self.q();
        let mut mat = DMatrix::zeros(q, q);
        for j in 0..q {
            mat.set_column(j, &self.window_vec(j));
        }
        Ok(mat)
    }

    /// Smallest singular value of the current window matrix.
    pub fn min_singular_value(&self) -> Result<f64, ExplorerError> {
        let mat = self.window_matrix()?;
        Ok(mat
            .singular_values()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min))
    }

    /// The `n` most recent inputs (the already-applied part of the window
    /// under construction).
    fn partial_window_inputs(&self) -> &[DVector<f64>] {
        &self.ring[self.q()..]
    }
}

/// Unit null direction of the dropped-column window matrix.
#[derive(Debug, Clone)]
pub struct NullDirection {
    /// Unit vector orthogonal to `W_2, ..., W_q`.
    pub w_p: DVector<f64>,
    /// Final `m`-block of `w_p` (the component that pairs with the input
    /// being chosen now).
    pub u_p: DVector<f64>,
    /// Set when `u_p` is numerically zero, in which case any perturbation
    /// direction preserves full rank.
    pub zero_tail: bool,
}

/// Drops the oldest column of the window matrix and returns the unit null
/// vector of the transpose of the remaining `q x (q-1)` matrix, via
/// Gram-Schmidt orthogonalization.
pub fn null_direction(window: &InputWindow) -> Result<NullDirection, ExplorerError> {
    if !window.is_warm() {
        return Err(ExplorerError::NotWarm {
            have: window.ring.len(),
            need: window.capacity(),
        });
    }
    let q = window.q();
    let m = window.m;
    // columns W_2..W_q (ring offsets 1..q-1)
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(q - 1);
    let mut scale = 0.0f64;
    for j in 1..q {
        let mut v = window.window_vec(j);
        scale = scale.max(v.norm());
        for b in &basis {
            let proj = b.dot(&v);
            v -= b * proj;
        }
        let norm = v.norm();
        if norm <= 1e-10 * scale.max(1.0) {
            return Err(ExplorerError::RankDeficient { residual: norm });
        }
        basis.push(v / norm);
    }
    // the residual of the best canonical direction spans the null space
    let mut best: Option<DVector<f64>> = None;
    let mut best_norm = 0.0;
    for i in 0..q {
        let mut e = DVector::zeros(q);
        e[i] = 1.0;
        for b in &basis {
            let proj = b.dot(&e);
            e -= b * proj;
        }
        let norm = e.norm();
        if norm > best_norm {
            best_norm = norm;
            best = Some(e);
        }
    }
    let w_p = best.ok_or(ExplorerError::RankDeficient { residual: 0.0 })? / best_norm;
    // Full rank of the whole window matrix is the standing invariant:
    // given the kept columns are independent, it is equivalent to the
    // dropped column having a component along the null direction.
    let dropped = window.window_vec(0);
    let along = w_p.dot(&dropped).abs();
    if along <= 1e-10 * dropped.norm().max(scale).max(1.0) {
        return Err(ExplorerError::RankDeficient { residual: along });
    }
    let u_p = w_p.rows(q - m, m).into_owned();
    let zero_tail = u_p.norm() < 1e-10;
    Ok(NullDirection { w_p, u_p, zero_tail })
}

/// Perturbation decision for the current step, per the full-rank
/// preservation case analysis:
///
/// * `g` accumulates the alignment of the already-applied part of the
///   window with the null direction, `g_perp` the alignment of the nominal
///   input.
/// * `g_perp = 0`: push straight along the null direction, signed by `g`.
/// * misaligned cases (`g_s < 0`): push along the nominal direction with
///   magnitude 1 or 2 times `sqrt(c_p)` depending on how close the nominal
///   norm sits to `sqrt(c_p)`.
/// * otherwise a plain `sqrt(c_p)` push along the nominal direction.
///
/// The returned perturbation always has magnitude `sqrt(c_p)` or
/// `2 sqrt(c_p)` and keeps `g + (u_p)'(u_hat + du)` away from zero.
pub fn perturb(
    u_hat: &DVector<f64>,
    window: &InputWindow,
    c_p: f64,
) -> Result<DVector<f64>, ExplorerError> {
    if c_p <= 0.0 {
        return Err(ExplorerError::Invalid(format!("c_p must be > 0, got {c_p}")));
    }
    let nd = null_direction(window)?;
    let m = window.m;
    debug_assert_eq!(u_hat.len(), m);
    let sqrt_cp = c_p.sqrt();

    if nd.zero_tail {
        // any direction is valid; use the nominal direction, canonical
        // fallback when the nominal input vanishes
        let e = direction_or(u_hat, None, m);
        return Ok(e * sqrt_cp);
    }

    let partial = window.partial_window_inputs();
    let mut g = 0.0;
    for (blk, u_applied) in partial.iter().enumerate() {
        let block = nd.w_p.rows(blk * m, m);
        g += block.dot(u_applied);
    }
    let g_perp = nd.u_p.dot(u_hat);
    let gp_scale = 1e-12 * (1.0 + u_hat.norm());

    if g_perp.abs() <= gp_scale {
        // sign(g) with the positive convention at g = 0
        let sign = if g >= 0.0 { 1.0 } else { -1.0 };
        let e_p = &nd.u_p / nd.u_p.norm();
        return Ok(e_p * (sign * sqrt_cp));
    }

    let e = u_hat / u_hat.norm();
    let total = g + g_perp;
    let g_s = total.signum() * g_perp.signum();
    if g_s < 0.0 {
        let gap = (u_hat.norm() - sqrt_cp).abs();
        let kappa = if gap >= sqrt_cp { 1.0 } else { 2.0 };
        return Ok(e * (g_s * kappa * sqrt_cp));
    }
    Ok(e * sqrt_cp)
}

fn direction_or(u_hat: &DVector<f64>, e_p: Option<&DVector<f64>>, m: usize) -> DVector<f64> {
    let norm = u_hat.norm();
    if norm > 0.0 {
        return u_hat / norm;
    }
    if let Some(ep) = e_p {
        let n = ep.norm();
        if n > 0.0 {
            return ep / n;
        }
    }
    let mut e1 = DVector::zeros(m);
    e1[0] = 1.0;
    e1
}

/// Per-interval excitation certificate: smallest eigenvalue of the running
/// Gram `sum z_k z_k'` against the bound `gamma c_{p,i} t_i`.
#[derive(Debug, Clone)]
pub struct ExcitationReport {
    pub interval: usize,
    pub lambda_min: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Evaluates the excitation certificate over the first `t_i` entries of
/// the `z` history.
pub fn check_poe(
    zs: &[DVector<f64>],
    interval: usize,
    gamma: f64,
    c_p_i: f64,
    t_i: usize,
) -> Result<ExcitationReport, ExplorerError> {
    if zs.len() < t_i {
        return Err(ExplorerError::Invalid(format!(
            "history has {} entries, interval end is {t_i}",
            zs.len()
        )));
    }
    if t_i == 0 {
        return Err(ExplorerError::Invalid("t_i must be >= 1".into()));
    }
    let d = zs[0].len();
    let mut gram = DMatrix::zeros(d, d);
    for z in &zs[..t_i] {
        gram.ger(1.0, z, z, 1.0);
    }
    let lambda_min = gram
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let bound = gamma * c_p_i * t_i as f64;
    Ok(ExcitationReport {
        interval,
        lambda_min,
        bound,
        pass: lambda_min >= bound,
    })
}

/// Periodic excitation input: `scale * e_j` with
/// `j = max { j~ <= m : (t-1) mod (n+1) j~ = 0 }`, zero when no such `j~`
/// exists. Over one period the assembled windows form a permutation of the
/// canonical basis.
pub fn periodic_excitation_input(t: usize, n: usize, m: usize, scale: f64) -> DVector<f64> {
    debug_assert!(t >= 1);
    let mut j_sel = None;
    for j in (1..=m).rev() {
        if (t - 1).is_multiple_of((n + 1) * j) {
            j_sel = Some(j);
            break;
        }
    }
    let mut u = DVector::zeros(m);
    if let Some(j) = j_sel {
        u[j - 1] = scale;
    }
    u
}
