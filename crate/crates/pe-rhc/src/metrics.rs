//! Regret, cumulative constraint violation, estimation-error series, and
//! log-log slope fitting for the empirical scaling checks.

use thiserror::Error;

use crate::controller::TrajectoryLog;
use crate::rhc::PolytopeU;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("horizon mismatch: trajectory has {traj} steps, reference covers {reference}")]
    LengthMismatch { traj: usize, reference: usize },
    #[error("slope fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("slope fit needs positive values, got {value} at T = {t}")]
    NonpositiveValue { t: f64, value: f64 },
}

/// A reference total cost pinned to the horizon it was computed over.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceCost {
    pub total: f64,
    pub horizon: usize,
}

impl ReferenceCost {
    pub fn from_log(log: &TrajectoryLog) -> Self {
        Self {
            total: log.total_cost,
            horizon: log.len(),
        }
    }
}

/// Cumulative-cost gap to a reference computed over the same horizon and
/// cost schedule.
pub fn regret(traj: &TrajectoryLog, reference: &ReferenceCost) -> Result<f64, MetricsError> {
    if traj.len() != reference.horizon {
        return Err(MetricsError::LengthMismatch {
            traj: traj.len(),
            reference: reference.horizon,
        });
    }
    Ok(traj.total_cost - reference.total)
}

/// Exact double sum of positive parts `sum_t sum_k (F u_t - b)_k^+`,
/// recomputed from the applied inputs (independent of the per-step column
/// the run logged).
pub fn violation(traj: &TrajectoryLog, u_set: &PolytopeU) -> f64 {
    traj.steps.iter().map(|s| u_set.violation(&s.u)).sum()
}

/// Full regret/violation report for one policy run.
#[derive(Debug, Clone)]
pub struct RegretReport {
    pub policy_cost: f64,
    pub hindsight_cost: f64,
    pub oracle_cost: f64,
    /// `R_T` against the optimal sequence in hindsight (the primary one).
    pub regret_hindsight: f64,
    /// `R_T` against the full-knowledge receding-horizon baseline.
    pub regret_oracle: f64,
    pub total_violation: f64,
    /// Running totals at interval ends (diagnostics for per-interval sums).
    pub interval_cost_prefix: Vec<f64>,
}

impl RegretReport {
    pub fn build(
        traj: &TrajectoryLog,
        hindsight: &ReferenceCost,
        oracle: &ReferenceCost,
        u_set: &PolytopeU,
    ) -> Result<Self, MetricsError> {
        let regret_hindsight = regret(traj, hindsight)?;
        let regret_oracle = regret(traj, oracle)?;
        let mut prefix = Vec::new();
        let mut running = 0.0;
        let mut next_boundary: Option<usize> = traj.intervals.first().map(|r| r.t_i);
        let mut idx = 0usize;
        for s in &traj.steps {
            running += s.cost;
            if Some(s.t) == next_boundary {
                prefix.push(running);
                idx += 1;
                next_boundary = traj.intervals.get(idx).map(|r| r.t_i);
            }
        }
        Ok(Self {
            policy_cost: traj.total_cost,
            hindsight_cost: hindsight.total,
            oracle_cost: oracle.total,
            regret_hindsight,
            regret_oracle,
            total_violation: violation(traj, u_set),
            interval_cost_prefix: prefix,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points_used: usize,
    pub dropped_smallest: bool,
}

/// Ordinary least squares of `ln value` on `ln T`.
pub fn slope_fit(points: &[(f64, f64)]) -> Result<SlopeFit, MetricsError> {
    if points.len() < 3 {
        return Err(MetricsError::TooFewPoints(points.len()));
    }
    for &(t, v) in points {
        if v <= 0.0 || t <= 0.0 {
            return Err(MetricsError::NonpositiveValue { t, value: v });
        }
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(t, v)| (t.ln(), v.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
        points_used: points.len(),
        dropped_smallest: false,
    })
}

/// Slope fit that retries without the smallest-`T` point when the full fit
/// explains the data poorly (transient-dominated leading point). Both fits
/// are returned; `primary` is the one downstream checks read.
#[derive(Debug, Clone, Copy)]
pub struct RobustSlopeFit {
    pub full: SlopeFit,
    pub trimmed: Option<SlopeFit>,
}

impl RobustSlopeFit {
    pub fn primary(&self) -> SlopeFit {
        self.trimmed.unwrap_or(self.full)
    }
}

pub fn slope_fit_robust(points: &[(f64, f64)]) -> Result<RobustSlopeFit, MetricsError> {
    let full = slope_fit(points)?;
    if full.r_squared >= 0.9 || points.len() < 4 {
        return Ok(RobustSlopeFit {
            full,
            trimmed: None,
        });
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut trimmed_fit = slope_fit(&sorted[1..])?;
    trimmed_fit.dropped_smallest = true;
    Ok(RobustSlopeFit {
        full,
        trimmed: Some(trimmed_fit),
    })
}

/// Batch summary emitted as JSON next to the per-run CSVs.
#[derive(Debug, Clone, Default)]
pub struct BatchSummary {
    pub slope_regret: Option<f64>,
    pub slope_violation: Option<f64>,
    pub coverage_rate: Option<f64>,
    pub poe_pass_rate: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{StepRecord, TrajectoryLog};
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn synthetic_log(costs: &[f64], us: &[f64]) -> TrajectoryLog {
        let mut log = TrajectoryLog::default();
        for (k, (&c, &u)) in costs.iter().zip(us).enumerate() {
            let v = DVector::from_element(1, u);
            log.total_cost += c;
            log.steps.push(StepRecord {
                t: k + 1,
                interval: 1,
                x: DVector::zeros(1),
                y: DVector::zeros(1),
                xbar: DVector::zeros(1),
                uhat: v.clone(),
                du: DVector::zeros(1),
                u: v,
                cost: c,
                violation: 0.0,
            });
        }
        log
    }

    #[test]
    fn regret_against_itself_is_zero() {
        let log = synthetic_log(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]);
        let reference = ReferenceCost::from_log(&log);
        assert_relative_eq!(regret(&log, &reference).unwrap(), 0.0);
    }

    #[test]
    fn regret_direct_arithmetic() {
        let log = synthetic_log(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]);
        let reference = ReferenceCost {
            total: 4.0,
            horizon: 3,
        };
        assert_relative_eq!(regret(&log, &reference).unwrap(), 2.0);
    }

    #[test]
    fn regret_length_mismatch_rejected() {
        let log = synthetic_log(&[1.0, 2.0], &[0.0, 0.0]);
        let reference = ReferenceCost {
            total: 4.0,
            horizon: 3,
        };
        assert!(matches!(
            regret(&log, &reference),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn reference_ordering_consistency() {
        // when hindsight <= baseline, R_T >= R_T^base
        let log = synthetic_log(&[2.0, 2.0, 2.0], &[0.0; 3]);
        let hind = ReferenceCost {
            total: 3.0,
            horizon: 3,
        };
        let base = ReferenceCost {
            total: 4.0,
            horizon: 3,
        };
        let r_h = regret(&log, &hind).unwrap();
        let r_b = regret(&log, &base).unwrap();
        assert!(r_h >= r_b - 1e-8);
    }

    #[test]
    fn violation_all_feasible_is_zero() {
        let set = PolytopeU::symmetric_box(1, 1.0).unwrap();
        let log = synthetic_log(&[0.0; 4], &[0.5, -0.5, 1.0, -1.0]);
        assert_relative_eq!(violation(&log, &set), 0.0);
    }

    #[test]
    fn violation_single_excursion() {
        let set = PolytopeU::symmetric_box(1, 1.0).unwrap();
        let log = synthetic_log(&[0.0; 2], &[1.5, 0.0]);
        assert_relative_eq!(violation(&log, &set), 0.5);
    }

    #[test]
    fn violation_two_dim_hand_count() {
        // u = (2,2) against the unit box: rows give 1 + 1 + 0 + 0 = 2
        let set = PolytopeU::symmetric_box(2, 1.0).unwrap();
        let mut log = TrajectoryLog::default();
        let v = DVector::from_row_slice(&[2.0, 2.0]);
        log.steps.push(StepRecord {
            t: 1,
            interval: 1,
            x: DVector::zeros(2),
            y: DVector::zeros(2),
            xbar: DVector::zeros(2),
            uhat: DVector::zeros(2),
            du: v.clone(),
            u: v,
            cost: 0.0,
            violation: 2.0,
        });
        assert_relative_eq!(violation(&log, &set), 2.0);
    }

    #[test]
    fn slope_linear_data() {
        let points: Vec<(f64, f64)> = (1..=6).map(|k| {
            let t = (1 << (k + 5)) as f64;
            (t, t)
        }).collect();
        let fit = slope_fit(&points).unwrap();
        assert_relative_eq!(fit.slope, 1.0, epsilon = 1e-9);
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn slope_sqrt_data() {
        let points: Vec<(f64, f64)> = (1..=6).map(|k| {
            let t = (1 << (k + 5)) as f64;
            (t, t.sqrt())
        }).collect();
        let fit = slope_fit(&points).unwrap();
        assert_relative_eq!(fit.slope, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn slope_power_law_exact() {
        // value = 7 T^{0.75}: slope 0.75, intercept ln 7
        let points: Vec<(f64, f64)> = (1..=6).map(|k| {
            let t = (1 << (k + 5)) as f64;
            (t, 7.0 * t.powf(0.75))
        }).collect();
        let fit = slope_fit(&points).unwrap();
        assert_relative_eq!(fit.slope, 0.75, epsilon = 1e-9);
        assert_relative_eq!(fit.intercept, 7.0f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn slope_rejects_nonpositive() {
        let points = vec![(256.0, 1.0), (512.0, 0.0), (1024.0, 2.0)];
        assert!(matches!(
            slope_fit(&points),
            Err(MetricsError::NonpositiveValue { .. })
        ));
        assert!(matches!(
            slope_fit(&points[..2]),
            Err(MetricsError::TooFewPoints(2))
        ));
    }

    #[test]
    fn robust_fit_drops_transient_point() {
        // clean power law except a wildly off smallest-T point
        let mut points: Vec<(f64, f64)> = (1..=6).map(|k| {
            let t = (1 << (k + 5)) as f64;
            (t, 3.0 * t.powf(0.6))
        }).collect();
        points[0].1 *= 50.0;
        let fit = slope_fit_robust(&points).unwrap();
        assert!(fit.full.r_squared < 0.9);
        let primary = fit.primary();
        assert!(primary.dropped_smallest);
        assert_relative_eq!(primary.slope, 0.6, epsilon = 1e-9);
    }
}
