//! Finite-horizon dynamic-programming reference for unconstrained
//! time-varying LQR. Independent of the projected-gradient path; the check
//! suite compares the two.

use nalgebra::{DMatrix, DVector};

use super::RhcError;
use crate::costs::{CostFamily, StageCostSpec, TerminalCostSpec};
use crate::linsys::Theta;

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub gains: Vec<DMatrix<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub states: Vec<DVector<f64>>,
    pub objective: f64,
}

/// Backward Riccati recursion for
/// `min sum_{k=0}^{M-1} x'Q_{t0+k} x + u'R_{t0+k} u  (+ Gamma x_M' P x_M)`,
/// followed by a forward rollout from `x0`. Only the quadratic family is
/// meaningful here.
pub fn finite_horizon_lqr(
    theta: &Theta,
    costs: &StageCostSpec,
    terminal: Option<&TerminalCostSpec>,
    x0: &DVector<f64>,
    t0: usize,
    horizon: usize,
) -> Result<RiccatiSolution, RhcError> {
    let CostFamily::Quadratic { q, r } = costs.family() else {
        return Err(RhcError::Dimension(
            "Riccati reference needs a quadratic cost".into(),
        ));
    };
    let n = theta.state_dim();
    let a = theta.a();
    let b = theta.b();

    let mut s_next: DMatrix<f64> = match terminal {
        Some(t) => t.p() * t.gamma(),
        None => DMatrix::zeros(n, n),
    };
    let mut gains_rev: Vec<DMatrix<f64>> = Vec::with_capacity(horizon);
    for k in (0..horizon).rev() {
        let qk = q.at(t0 + k)?;
        let rk = r.at(t0 + k)?;
        let btsb = rk + b.transpose() * &s_next * b;
        let btsa = b.transpose() * &s_next * a;
        let gain = btsb
            .clone()
            .cholesky()
            .map(|c| c.solve(&btsa))
            .or_else(|| btsb.clone().lu().solve(&btsa))
            .ok_or_else(|| RhcError::Dimension("singular R + B'SB in recursion".into()))?;
        let s = qk + a.transpose() * &s_next * a - btsa.transpose() * &gain;
        // symmetrize against rounding drift
        s_next = (&s + s.transpose()) * 0.5;
        gains_rev.push(gain);
    }
    gains_rev.reverse();
    let gains = gains_rev;

    let mut states = Vec::with_capacity(horizon + 1);
    let mut inputs = Vec::with_capacity(horizon);
    let mut x = x0.clone();
    let mut objective = 0.0;
    for (k, gain) in gains.iter().enumerate() {
        let u = -(gain * &x);
        objective += costs.eval_stage(t0 + k, &x, &u).map_err(RhcError::Cost)?;
        let next = theta.apply(&x, &u);
        states.push(x);
        inputs.push(u);
        x = next;
    }
    if let Some(t) = terminal {
        objective += t.eval_weighted(&x);
    }
    states.push(x);
    Ok(RiccatiSolution {
        gains,
        inputs,
        states,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::StageCostSpec;
    use approx::assert_relative_eq;

    #[test]
    fn frozen_scalar_m3_values() {
        let theta = Theta::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let costs = StageCostSpec::quadratic_constant(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let x0 = DVector::from_element(1, 1.0);
        let sol = finite_horizon_lqr(&theta, &costs, None, &x0, 1, 3).unwrap();
        assert_relative_eq!(sol.inputs[0][0], -0.2647058823529412, epsilon = 1e-12);
        assert_relative_eq!(sol.inputs[1][0], -0.058823529411764705, epsilon = 1e-12);
        assert_relative_eq!(sol.inputs[2][0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(sol.objective, 1.1323529411764706, epsilon = 1e-12);
    }

    #[test]
    fn rejects_non_quadratic() {
        let theta = Theta::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let costs = StageCostSpec::new(crate::costs::CostFamily::Power { a: 1.0 }).unwrap();
        let x0 = DVector::from_element(1, 1.0);
        assert!(finite_horizon_lqr(&theta, &costs, None, &x0, 1, 2).is_err());
    }
}
