//! Finite-horizon constrained optimal control: the input polytope, one
//! horizon problem instance, and the projected-gradient solver behind it.

mod lp;
pub mod riccati;
mod solver;

pub use solver::{HorizonSolver, SolverOptions};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::costs::{StageCostSpec, TerminalCostSpec};
use crate::linsys::Theta;

#[derive(Debug, Error)]
pub enum RhcError {
    #[error("input polytope is unbounded (coordinate {coord} has no finite support bound)")]
    UnboundedPolytope { coord: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("projection iteration budget exceeded (residual {residual})")]
    ProjectionBudget { residual: f64 },
    #[error("solver did not converge: status {status:?}")]
    NotConverged { status: SolverStatus },
    #[error("horizon problem is infeasible (empty input polytope)")]
    Infeasible,
    #[error(transparent)]
    Cost(#[from] crate::costs::CostError),
}

/// Bounded polytope `{ u : F u <= b }` with an exact-clipping shortcut for
/// boxes. Boundedness is certified at construction: per-coordinate support
/// bounds by LP, plus vertex enumeration for `m <= 3`.
#[derive(Debug, Clone)]
pub struct PolytopeU {
    f: DMatrix<f64>,
    b: DVector<f64>,
    box_bounds: Option<(DVector<f64>, DVector<f64>)>,
    coord_lo: DVector<f64>,
    coord_hi: DVector<f64>,
    max_norm: f64,
    empty: bool,
}

impl PolytopeU {
    /// Axis-aligned box `[lo, hi]`; `F = [I; -I]`, `b = [hi; -lo]`.
    pub fn bounded_box(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self, RhcError> {
        let m = lo.len();
        if hi.len() != m {
            return Err(RhcError::Dimension("box lo/hi lengths differ".into()));
        }
        let empty = lo.iter().zip(hi.iter()).any(|(l, h)| l > h);
        let mut f = DMatrix::zeros(2 * m, m);
        let mut b = DVector::zeros(2 * m);
        for i in 0..m {
            f[(i, i)] = 1.0;
            b[i] = hi[i];
            f[(m + i, i)] = -1.0;
            b[m + i] = -lo[i];
        }
        let max_norm = lo
            .iter()
            .zip(hi.iter())
            .map(|(l, h)| l.abs().max(h.abs()).powi(2))
            .sum::<f64>()
            .sqrt();
        Ok(Self {
            f,
            b,
            box_bounds: Some((lo.clone(), hi.clone())),
            coord_lo: lo,
            coord_hi: hi,
            max_norm,
            empty,
        })
    }

    pub fn symmetric_box(m: usize, radius: f64) -> Result<Self, RhcError> {
        Self::bounded_box(
            DVector::from_element(m, -radius),
            DVector::from_element(m, radius),
        )
    }

    /// General half-space description. Errors if any coordinate is
    /// unbounded over the set; an empty set is allowed and recorded.
    pub fn from_halfspaces(f: DMatrix<f64>, b: DVector<f64>) -> Result<Self, RhcError> {
        let m = f.ncols();
        if b.len() != f.nrows() {
            return Err(RhcError::Dimension("F rows vs b length".into()));
        }
        let rows: Vec<Vec<f64>> = (0..f.nrows())
            .map(|i| (0..m).map(|j| f[(i, j)]).collect())
            .collect();
        let bs: Vec<f64> = b.iter().cloned().collect();
        let mut lo = DVector::zeros(m);
        let mut hi = DVector::zeros(m);
        let mut empty = false;
        'coords: for j in 0..m {
            let mut c = vec![0.0; m];
            c[j] = 1.0;
            match lp::maximize(&c, &rows, &bs) {
                lp::LpOutcome::Optimal { value, .. } => hi[j] = value,
                lp::LpOutcome::Unbounded => return Err(RhcError::UnboundedPolytope { coord: j }),
                lp::LpOutcome::Infeasible => {
                    empty = true;
                    break 'coords;
                }
            }
            c[j] = -1.0;
            match lp::maximize(&c, &rows, &bs) {
                lp::LpOutcome::Optimal { value, .. } => lo[j] = -value,
                lp::LpOutcome::Unbounded => return Err(RhcError::UnboundedPolytope { coord: j }),
                lp::LpOutcome::Infeasible => {
                    empty = true;
                    break 'coords;
                }
            }
        }
        let max_norm = if empty {
            0.0
        } else if m <= 3 {
            vertex_max_norm(&f, &b).unwrap_or_else(|| {
                lo.iter()
                    .zip(hi.iter())
                    .map(|(l, h)| l.abs().max(h.abs()).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
        } else {
            lo.iter()
                .zip(hi.iter())
                .map(|(l, h)| l.abs().max(h.abs()).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        Ok(Self {
            f,
            b,
            box_bounds: None,
            coord_lo: lo,
            coord_hi: hi,
            max_norm,
            empty,
        })
    }

    pub fn dim(&self) -> usize {
        self.f.ncols()
    }

    pub fn f_matrix(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn b_vector(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn is_empty_set(&self) -> bool {
        self.empty
    }

    pub fn is_box(&self) -> bool {
        self.box_bounds.is_some()
    }

    /// Largest `||u||_2` over the set (exact over vertices for `m <= 3`).
    pub fn max_norm(&self) -> f64 {
        self.max_norm
    }

    pub fn coord_bounds(&self) -> (&DVector<f64>, &DVector<f64>) {
        (&self.coord_lo, &self.coord_hi)
    }

    pub fn contains_slice(&self, u: &[f64], tol: f64) -> bool {
        self.max_violation_slice(u) <= tol
    }

    /// Largest single-row violation `max_k (F u - b)_k` (negative inside).
    pub fn max_violation_slice(&self, u: &[f64]) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for k in 0..self.f.nrows() {
            let mut dot = 0.0;
            for (j, uj) in u.iter().enumerate() {
                dot += self.f[(k, j)] * uj;
            }
            worst = worst.max(dot - self.b[k]);
        }
        worst
    }

    /// Sum of positive parts over rows (one step's contribution to
    /// cumulative violation).
    pub fn violation_slice(&self, u: &[f64]) -> f64 {
        let mut total = 0.0;
        for k in 0..self.f.nrows() {
            let mut dot = 0.0;
            for (j, uj) in u.iter().enumerate() {
                dot += self.f[(k, j)] * uj;
            }
            total += (dot - self.b[k]).max(0.0);
        }
        total
    }

    pub fn violation(&self, u: &DVector<f64>) -> f64 {
        self.violation_slice(u.as_slice())
    }

    /// Euclidean projection: exact clipping for boxes, Dykstra alternating
    /// projections onto the half-spaces otherwise (residual 1e-10).
    pub fn project_into(&self, u: &mut [f64]) -> Result<(), RhcError> {
        if self.empty {
            return Err(RhcError::Infeasible);
        }
        if let Some((lo, hi)) = &self.box_bounds {
            for (ui, (l, h)) in u.iter_mut().zip(lo.iter().zip(hi.iter())) {
                *ui = ui.clamp(*l, *h);
            }
            return Ok(());
        }
        self.dykstra(u, 20_000, 1e-10)
    }

    pub fn project(&self, u: &DVector<f64>) -> Result<DVector<f64>, RhcError> {
        let mut out = u.clone();
        self.project_into(out.as_mut_slice())?;
        Ok(out)
    }

    fn dykstra(&self, u: &mut [f64], max_sweeps: usize, tol: f64) -> Result<(), RhcError> {
        let p = self.f.nrows();
        let m = self.dim();
        let mut increments = vec![0.0f64; p * m];
        let row_norm_sq: Vec<f64> = (0..p)
            .map(|k| (0..m).map(|j| self.f[(k, j)].powi(2)).sum())
            .collect();
        for _ in 0..max_sweeps {
            let mut moved = 0.0f64;
            for k in 0..p {
                if row_norm_sq[k] == 0.0 {
                    continue;
                }
                let inc = &mut increments[k * m..(k + 1) * m];
                // y = u + increment, then project onto half-space k.
                let mut dot = 0.0;
                for j in 0..m {
                    u[j] += inc[j];
                    dot += self.f[(k, j)] * u[j];
                }
                let excess = ((dot - self.b[k]) / row_norm_sq[k]).max(0.0);
                for j in 0..m {
                    let yj = u[j];
                    u[j] -= excess * self.f[(k, j)];
                    let new_inc = yj - u[j];
                    moved += (new_inc - inc[j]).abs();
                    inc[j] = new_inc;
                }
            }
            if moved < tol && self.max_violation_slice(u) <= tol {
                return Ok(());
            }
        }
        let residual = self.max_violation_slice(u).max(0.0);
        if residual <= tol {
            return Ok(());
        }
        Err(RhcError::ProjectionBudget { residual })
    }
}

/// Max vertex norm via enumeration of row subsets; `None` when no vertex
/// system is well-conditioned (degenerate descriptions).
fn vertex_max_norm(f: &DMatrix<f64>, b: &DVector<f64>) -> Option<f64> {
    let m = f.ncols();
    let p = f.nrows();
    if m == 0 || p < m {
        return None;
    }
    let mut best: Option<f64> = None;
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        let sub = DMatrix::from_fn(m, m, |r, c| f[(idx[r], c)]);
        let rhs = DVector::from_fn(m, |r, _| b[idx[r]]);
        if let Some(v) = sub.lu().solve(&rhs) {
            let feasible = (0..p).all(|k| {
                let dot: f64 = (0..m).map(|j| f[(k, j)] * v[j]).sum();
                dot <= b[k] + 1e-8
            });
            if feasible && v.iter().all(|x| x.is_finite()) {
                best = Some(best.map_or(v.norm(), |cur: f64| cur.max(v.norm())));
            }
        }
        // next combination
        let mut i = m;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] + (m - i) < p {
                idx[i] += 1;
                for j in i + 1..m {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Euclidean projection onto the polytope (spec-level operation).
pub fn project_polytope(u: &DVector<f64>, set: &PolytopeU) -> Result<DVector<f64>, RhcError> {
    set.project(u)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    Converged,
    MaxIter,
    Infeasible,
}

/// One finite-horizon constrained optimization instance: minimize
/// `sum_{k=0}^{M-1} c_{t0+k}(x_k, w_k) + Gamma d(x_M)` over the input
/// sequence, states propagated through the supplied model.
pub struct HorizonProblem<'a> {
    pub theta: &'a Theta,
    pub x0: &'a DVector<f64>,
    pub t0: usize,
    pub horizon: usize,
    pub costs: &'a StageCostSpec,
    pub terminal: Option<&'a TerminalCostSpec>,
    pub constraint: &'a PolytopeU,
}

impl<'a> HorizonProblem<'a> {
    pub fn validate(&self) -> Result<(), RhcError> {
        if self.horizon == 0 {
            return Err(RhcError::Dimension("horizon must be >= 1".into()));
        }
        if self.x0.len() != self.theta.state_dim() {
            return Err(RhcError::Dimension("x0 vs model state dim".into()));
        }
        if self.constraint.dim() != self.theta.input_dim() {
            return Err(RhcError::Dimension("polytope vs model input dim".into()));
        }
        Ok(())
    }
}

/// Solution of a horizon problem.
#[derive(Debug, Clone)]
pub struct ControlSequence {
    pub inputs: Vec<DVector<f64>>,
    pub objective: f64,
    pub status: SolverStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
}

impl ControlSequence {
    pub fn infeasible() -> Self {
        Self {
            inputs: Vec::new(),
            objective: f64::INFINITY,
            status: SolverStatus::Infeasible,
            iterations: 0,
            kkt_residual: f64::INFINITY,
        }
    }
}

/// First element of a converged sequence; any other status propagates as
/// an error.
pub fn first_input(seq: &ControlSequence) -> Result<&DVector<f64>, RhcError> {
    if seq.status != SolverStatus::Converged {
        return Err(RhcError::NotConverged { status: seq.status });
    }
    Ok(&seq.inputs[0])
}

/// Solves one horizon problem with a fresh solver (spec-level operation;
/// sequential receding-horizon use should hold a `HorizonSolver` and warm
/// start instead).
pub fn solve_horizon(problem: &HorizonProblem<'_>) -> Result<ControlSequence, RhcError> {
    let mut solver = HorizonSolver::default();
    solver.solve(problem, None)
}
