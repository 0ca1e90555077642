//! Direct-transcription reference solver.
//!
//! The horizon is split into `N` steps of length `h` with a constant input on
//! each step. Under the exact double-integrator update, end positions and
//! velocities are linear in the inputs:
//!
//! * `v_n = v_0 + h Σ_{k<n} u_k`
//! * `s_n = s_0 + n h v_0 + h² Σ_{k<n} (n - k - 1/2) u_k`
//!
//! so each axis is the equality-constrained QP `min (h/2)|u|²` s.t. `A u = b`
//! with two endpoint rows and an optional interior position row. Its KKT
//! matrix `[h I, Aᵀ; A, 0]` is factorized by block elimination of the
//! diagonal Hessian block, leaving the small Schur complement `A Aᵀ / h`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{integrate_dynamics, ControlInput, EgoState};
use crate::planner::PlanningProblem;

/// Smallest admissible eigenvalue ratio of the Schur complement.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscretePlan {
    pub n_steps: usize,
    pub dt: f64,
    pub t_0: f64,
    pub inputs: Vec<ControlInput>,
    pub states: Vec<EgoState>,
    pub cost: f64,
    /// Node index and time at which the interior constraint was imposed.
    pub constraint_node: Option<usize>,
    pub t_i: Option<f64>,
}

impl DiscretePlan {
    pub fn time_of(&self, node: usize) -> f64 {
        self.t_0 + node as f64 * self.dt
    }

    /// Largest per-step deviation of the stored states from the exact
    /// discrete dynamics under the stored inputs.
    pub fn dynamics_residual(&self) -> f64 {
        self.inputs
            .iter()
            .enumerate()
            .map(|(k, u)| {
                let next =
                    integrate_dynamics(self.states[k], *u, self.dt).expect("finite oracle state");
                let s = self.states[k + 1];
                [
                    next.s_x - s.s_x,
                    next.v_x - s.v_x,
                    next.s_y - s.s_y,
                    next.v_y - s.v_y,
                ]
                .iter()
                .fold(0.0f64, |m, d| m.max(d.abs()))
            })
            .fold(0.0, f64::max)
    }
}

fn constraint_rows(n: usize, h: f64, node: Option<usize>) -> DMatrix<f64> {
    let rows = 2 + usize::from(node.is_some());
    DMatrix::from_fn(rows, n, |r, k| match r {
        0 => h,
        1 => h * h * ((n - k) as f64 - 0.5),
        _ => {
            let m = node.expect("interior row");
            if k < m {
                h * h * ((m - k) as f64 - 0.5)
            } else {
                0.0
            }
        }
    })
}

fn axis_rhs(
    n: usize,
    h: f64,
    s_0: f64,
    v_0: f64,
    s_f: f64,
    v_f: f64,
    interior: Option<(usize, f64)>,
) -> DVector<f64> {
    let mut b = vec![v_f - v_0, s_f - s_0 - n as f64 * h * v_0];
    if let Some((m, target)) = interior {
        b.push(target - s_0 - m as f64 * h * v_0);
    }
    DVector::from_vec(b)
}

/// Minimum-effort piecewise-constant input sequence on `n_steps` uniform
/// steps, optionally forcing the constraint target at the node nearest `t_i`.
pub fn solve_collocation(
    problem: &PlanningProblem,
    n_steps: usize,
    t_i: Option<f64>,
) -> Result<DiscretePlan> {
    problem.validate()?;
    if n_steps < 50 {
        return Err(Error::domain(format!(
            "need at least 50 steps, got {n_steps}"
        )));
    }
    let boundary = &problem.boundary;
    let (t_0, h) = (boundary.t_0, boundary.duration() / n_steps as f64);

    let interior = match t_i {
        Some(t) => {
            if !t.is_finite() {
                return Err(Error::domain("constraint time must be finite"));
            }
            let node = ((t - t_0) / h).round().clamp(0.0, n_steps as f64) as usize;
            let t_node = t_0 + node as f64 * h;
            let (x_c, y_c) = problem.target(t_node)?;
            Some((node, t_node, x_c, y_c))
        }
        None => None,
    };

    let a = constraint_rows(n_steps, h, interior.map(|(m, ..)| m));
    let schur = &a * a.transpose();
    let eigen = schur.clone().symmetric_eigen();
    let (lo, hi) = eigen
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| {
            (lo.min(e), hi.max(e.abs()))
        });
    if lo.is_nan() || lo <= RANK_TOL * hi {
        return Err(Error::Infeasible {
            reason: format!(
                "constraint rows are rank deficient (eigenvalue ratio {:e})",
                lo / hi
            ),
            sweep: Vec::new(),
        });
    }
    let factor = schur
        .cholesky()
        .ok_or_else(|| Error::Singular("Schur complement of the collocation KKT system".into()))?;

    let (x0, xf) = (boundary.x_0, boundary.x_f);
    let bx = axis_rhs(
        n_steps,
        h,
        x0.s_x,
        x0.v_x,
        xf.s_x,
        xf.v_x,
        interior.map(|(m, _, x, _)| (m, x)),
    );
    let by = axis_rhs(
        n_steps,
        h,
        x0.s_y,
        x0.v_y,
        xf.s_y,
        xf.v_y,
        interior.map(|(m, _, _, y)| (m, y)),
    );
    // u = Aᵀ (A Aᵀ)⁻¹ b solves h u + Aᵀ μ = 0, A u = b
    let ux = a.tr_mul(&factor.solve(&bx));
    let uy = a.tr_mul(&factor.solve(&by));

    let inputs: Vec<ControlInput> = ux
        .iter()
        .zip(uy.iter())
        .map(|(&x, &y)| ControlInput::new(x, y))
        .collect();
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(x0);
    for u in &inputs {
        let next = integrate_dynamics(*states.last().expect("initial state"), *u, h)?;
        states.push(next);
    }
    let cost = inputs
        .iter()
        .map(|u| (u.u_x * u.u_x + u.u_y * u.u_y) * h / 2.0)
        .sum();
    Ok(DiscretePlan {
        n_steps,
        dt: h,
        t_0,
        inputs,
        states,
        cost,
        constraint_node: interior.map(|(m, ..)| m),
        t_i: interior.map(|(_, t, ..)| t),
    })
}

/// Solves the collocation problem with the interior constraint at each of
/// `t_grid` uniformly spaced interior times and keeps the cheapest; ties go
/// to the earliest time. Returns the snapped constraint time and its plan.
pub fn grid_search_time(
    problem: &PlanningProblem,
    n_steps: usize,
    t_grid: usize,
) -> Result<(f64, DiscretePlan)> {
    if t_grid < 50 {
        return Err(Error::domain(format!(
            "need at least 50 grid times, got {t_grid}"
        )));
    }
    let (t_0, span) = (problem.boundary.t_0, problem.boundary.duration());
    let mut best: Option<DiscretePlan> = None;
    for j in 1..=t_grid {
        let t = t_0 + j as f64 * span / (t_grid + 1) as f64;
        match solve_collocation(problem, n_steps, Some(t)) {
            Ok(candidate) => {
                if best.as_ref().is_none_or(|b| candidate.cost < b.cost) {
                    best = Some(candidate);
                }
            }
            Err(e) if e.is_infeasible() => continue,
            Err(e) => return Err(e),
        }
    }
    let best = best.ok_or_else(|| Error::Infeasible {
        reason: "every grid time is infeasible".into(),
        sweep: Vec::new(),
    })?;
    Ok((best.t_i.expect("constrained oracle plan"), best))
}
