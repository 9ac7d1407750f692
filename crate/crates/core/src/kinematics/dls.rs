//! Damped-least-squares iteration shared by serial chains and the mannequin tree.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::geometry::{Pose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DlsParams {
    pub damping: f64,
    pub max_iterations: usize,
    pub tol_mm: f64,
    pub tol_rad: f64,
    /// Per-iteration cap on the translational error fed to the update, mm.
    pub max_step_mm: f64,
    pub max_step_rad: f64,
}

impl Default for DlsParams {
    fn default() -> Self {
        DlsParams {
            damping: 0.01,
            max_iterations: 200,
            tol_mm: 1.0,
            tol_rad: 0.01,
            max_step_mm: 50.0,
            max_step_rad: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DlsOutcome {
    pub q: Vec<f64>,
    pub residual_mm: f64,
    pub residual_rad: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Pose error `(translation, rotation vector)` taking `current` to `target`, world axes.
pub fn pose_error(current: &Pose, target: &Pose) -> (Vec3, Vec3) {
    let dp = target.position - current.position;
    let dr = (target.orientation * current.orientation.inverse()).scaled_axis();
    (dp, dr)
}

fn cap(v: Vec3, max: f64) -> Vec3 {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

/// Drive `q` so that every end frame reaches its target.
///
/// `eval` returns the current end-frame poses and the stacked 6k×n Jacobian.
/// Joints with `active[i] == false` are never touched. Joint values are
/// clamped to `limits` after each update.
pub fn solve<F>(q0: &[f64], limits: &[[f64; 2]], active: &[bool], targets: &[Pose], params: &DlsParams, mut eval: F) -> DlsOutcome
where
    F: FnMut(&[f64]) -> (Vec<Pose>, DMatrix<f64>),
{
    let n = q0.len();
    let rows = 6 * targets.len();
    let mut q = q0.to_vec();
    let lambda2 = params.damping * params.damping;
    let mut iterations = 0;
    loop {
        let (frames, mut jac) = eval(&q);
        let mut err = DVector::zeros(rows);
        let mut res_mm: f64 = 0.0;
        let mut res_rad: f64 = 0.0;
        for (k, (f, t)) in frames.iter().zip(targets).enumerate() {
            let (dp, dr) = pose_error(f, t);
            res_mm = res_mm.max(dp.norm());
            res_rad = res_rad.max(dr.norm());
            let dp = cap(dp, params.max_step_mm);
            let dr = cap(dr, params.max_step_rad);
            for i in 0..3 {
                err[6 * k + i] = dp[i];
                err[6 * k + 3 + i] = dr[i];
            }
        }
        let converged = res_mm < params.tol_mm && res_rad < params.tol_rad;
        if converged || iterations >= params.max_iterations {
            return DlsOutcome {
                q,
                residual_mm: res_mm,
                residual_rad: res_rad,
                iterations,
                converged,
            };
        }
        for (c, &on) in active.iter().enumerate() {
            if !on {
                jac.column_mut(c).fill(0.0);
            }
        }
        let jjt = &jac * jac.transpose() + DMatrix::identity(rows, rows) * lambda2;
        let dq = match jjt.cholesky() {
            Some(ch) => jac.transpose() * ch.solve(&err),
            None => DVector::zeros(n),
        };
        for i in 0..n {
            if active[i] {
                q[i] = (q[i] + dq[i]).clamp(limits[i][0], limits[i][1]);
            }
        }
        iterations += 1;
    }
}
