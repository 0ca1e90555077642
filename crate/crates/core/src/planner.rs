//! Minimum-effort lane-change planning with an interior point constraint.
//!
//! The cost is `∫ (u_x² + u_y²)/2 dt` subject to double-integrator dynamics
//! on each axis. The Hamiltonian is
//! `H = (u_x² + u_y²)/2 + p_1 v_x + p_2 u_x + p_3 v_y + p_4 u_y`, with
//! co-states obeying `p' = -∂H/∂x`. Minimizing `H` gives `u_x = -p_2` and
//! `u_y = -p_4`, so on every arc `p_1` and `p_3` are constant (they equal the
//! jerk on each axis) and positions are cubics.
//!
//! Forcing the ego through the corner of a surrounding vehicle's safety
//! rectangle at time `t_i` splits each axis into two cubics. Position,
//! velocity and acceleration stay continuous (`p_2` and `p_4` do not jump);
//! `p_1` and `p_3` jump as `p⁻ = p⁺ + Φ`, so the jerk drops by `Φ` across
//! `t_i`. For a fixed `t_i` the conditions are linear in the coefficients.
//! The free time `t_i*` is a root of
//! `R(t_i) = H⁻ - H⁺ - ẋ_s(t_i) Φ_1`, which equals `dJ/dt_i`.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SweepPoint};
use crate::model::{
    sample_cubic_pair, sample_times, segment_at, AxisCubic, BoundaryConditions, CostateVector,
    EgoState, Trajectory,
};
use crate::predictor::ObstaclePolynomial;

/// Minimum distance of `t_i` from either horizon end.
const CONDITIONING_MARGIN: f64 = 1e-6;
/// Endpoint exclusion of the residual scan.
pub const SCAN_MARGIN: f64 = 0.05;
pub const SCAN_POINTS: usize = 200;
/// Sampling step of the constraint-inactivity clearance test.
pub const CLEARANCE_DT: f64 = 0.01;
/// Tolerance separating boundary contact from penetration of the rectangle.
pub const CONTACT_TOL: f64 = 1e-9;
const BISECTION_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyEnvelope {
    /// Vehicle length `L` [m].
    pub length: f64,
    /// Vehicle width `W` [m].
    pub width: f64,
    /// Longitudinal margin `S_x` [m].
    pub margin_x: f64,
    /// Lateral margin `S_y` [m].
    pub margin_y: f64,
}

impl Default for SafetyEnvelope {
    fn default() -> Self {
        Self {
            length: 4.5,
            width: 1.8,
            margin_x: 10.0,
            margin_y: 0.5,
        }
    }
}

impl SafetyEnvelope {
    pub fn new(length: f64, width: f64, margin_x: f64, margin_y: f64) -> Result<Self> {
        let envelope = Self {
            length,
            width,
            margin_x,
            margin_y,
        };
        envelope.validate()?;
        Ok(envelope)
    }

    pub fn validate(&self) -> Result<()> {
        let values = [self.length, self.width, self.margin_x, self.margin_y];
        if values.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "safety envelope entries must be positive, got {values:?}"
            )))
        }
    }

    /// Half-extent of the inflated rectangle along x: `L/2 + S_x`.
    pub fn half_length(&self) -> f64 {
        self.length / 2.0 + self.margin_x
    }

    /// Half-extent of the inflated rectangle along y: `W/2 + S_y`.
    pub fn half_width(&self) -> f64 {
        self.width / 2.0 + self.margin_y
    }

    /// True when the offset `(dx, dy)` from the vehicle center lies strictly
    /// inside the inflated rectangle; contact with the boundary is allowed.
    pub fn penetrated_by(&self, dx: f64, dy: f64) -> bool {
        dx.abs() < self.half_length() - CONTACT_TOL && dy.abs() < self.half_width() - CONTACT_TOL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintSide {
    /// Pass ahead of the vehicle: target its front corner on the ego side.
    RearCross,
    /// Pass behind the vehicle: target its rear corner on the far side.
    FrontCross,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanningProblem {
    pub boundary: BoundaryConditions,
    pub obstacle: ObstaclePolynomial,
    pub envelope: SafetyEnvelope,
    pub side: ConstraintSide,
}

impl PlanningProblem {
    pub fn new(
        boundary: BoundaryConditions,
        obstacle: ObstaclePolynomial,
        envelope: SafetyEnvelope,
        side: ConstraintSide,
    ) -> Result<Self> {
        let problem = Self {
            boundary,
            obstacle,
            envelope,
            side,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<()> {
        self.boundary.validate()?;
        self.envelope.validate()?;
        if self.obstacle.valid_until < self.boundary.t_f {
            return Err(Error::domain(format!(
                "obstacle prediction ends at {} before the horizon end {}",
                self.obstacle.valid_until, self.boundary.t_f
            )));
        }
        Ok(())
    }

    pub fn target(&self, t: f64) -> Result<(f64, f64)> {
        constraint_target(&self.obstacle, &self.envelope, self.side, t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseCubicPlan {
    pub x_segments: Vec<AxisCubic>,
    pub y_segments: Vec<AxisCubic>,
    /// Interior constraint time; `None` for an unconstrained plan.
    pub t_i: Option<f64>,
    pub phi_1: f64,
    pub phi_3: f64,
    pub cost: f64,
    pub constrained: bool,
}

impl PiecewiseCubicPlan {
    fn from_segments(
        x_segments: Vec<AxisCubic>,
        y_segments: Vec<AxisCubic>,
        t_i: Option<f64>,
    ) -> Self {
        let (phi_1, phi_3) = if x_segments.len() == 2 {
            (
                x_segments[0].jerk() - x_segments[1].jerk(),
                y_segments[0].jerk() - y_segments[1].jerk(),
            )
        } else {
            (0.0, 0.0)
        };
        let cost = x_segments
            .iter()
            .chain(&y_segments)
            .map(AxisCubic::effort)
            .sum();
        Self {
            constrained: t_i.is_some(),
            x_segments,
            y_segments,
            t_i,
            phi_1,
            phi_3,
            cost,
        }
    }

    pub fn t_0(&self) -> f64 {
        self.x_segments[0].t_start
    }

    pub fn t_f(&self) -> f64 {
        self.x_segments[self.x_segments.len() - 1].t_end
    }

    pub fn position(&self, t: f64) -> (f64, f64) {
        (
            segment_at(&self.x_segments, t).position(t),
            segment_at(&self.y_segments, t).position(t),
        )
    }

    pub fn state_at(&self, t: f64) -> EgoState {
        let (x, y) = (
            segment_at(&self.x_segments, t),
            segment_at(&self.y_segments, t),
        );
        EgoState::new(x.position(t), x.velocity(t), y.position(t), y.velocity(t))
    }

    /// Co-states on the segment containing `t` (left segment at `t_i`).
    pub fn costate_at(&self, t: f64) -> CostateVector {
        costate_of(
            segment_at(&self.x_segments, t),
            segment_at(&self.y_segments, t),
            t,
        )
    }

    /// Co-states just before and just after `t_i`.
    pub fn costates_at_interior(&self) -> Option<(CostateVector, CostateVector)> {
        let t_i = self.t_i?;
        Some((
            costate_of(&self.x_segments[0], &self.y_segments[0], t_i),
            costate_of(&self.x_segments[1], &self.y_segments[1], t_i),
        ))
    }

    /// Hamiltonian values just before and just after `t_i`.
    pub fn hamiltonian_at_interior(&self) -> Option<(f64, f64)> {
        let t_i = self.t_i?;
        let (minus, plus) = self.costates_at_interior()?;
        let state = self.state_at(t_i);
        Some((hamiltonian(&state, &minus), hamiltonian(&state, &plus)))
    }

    pub fn sample(&self, dt: f64) -> Result<Trajectory> {
        sample_cubic_pair(&self.x_segments, &self.y_segments, dt)
    }
}

fn costate_of(x: &AxisCubic, y: &AxisCubic, t: f64) -> CostateVector {
    CostateVector {
        p_1: x.jerk(),
        p_2: -x.acceleration(t),
        p_3: y.jerk(),
        p_4: -y.acceleration(t),
    }
}

/// `H` with the minimizing inputs `u_x = -p_2`, `u_y = -p_4` substituted.
pub fn hamiltonian(state: &EgoState, costate: &CostateVector) -> f64 {
    -(costate.p_2 * costate.p_2 + costate.p_4 * costate.p_4) / 2.0
        + costate.p_1 * state.v_x
        + costate.p_3 * state.v_y
}

/// Cubic matching position and velocity at both ends of `[t_0, t_f]`.
fn hermite_axis(t_0: f64, t_f: f64, s_0: f64, v_0: f64, s_f: f64, v_f: f64) -> Result<AxisCubic> {
    let rows = [
        [1.0, t_0, t_0 * t_0, t_0 * t_0 * t_0],
        [0.0, 1.0, 2.0 * t_0, 3.0 * t_0 * t_0],
        [1.0, t_f, t_f * t_f, t_f * t_f * t_f],
        [0.0, 1.0, 2.0 * t_f, 3.0 * t_f * t_f],
    ];
    let a = SMatrix::<f64, 4, 4>::from_fn(|r, c| rows[r][c]);
    let coeffs = a
        .lu()
        .solve(&SVector::<f64, 4>::new(s_0, v_0, s_f, v_f))
        .ok_or_else(|| Error::Singular("endpoint interpolation matrix".into()))?;
    AxisCubic::new([coeffs[0], coeffs[1], coeffs[2], coeffs[3]], t_0, t_f)
}

/// Single cubic per axis through the boundary conditions.
pub fn unconstrained_plan(boundary: &BoundaryConditions) -> Result<PiecewiseCubicPlan> {
    boundary.validate()?;
    let (t_0, t_f, a, b) = (boundary.t_0, boundary.t_f, boundary.x_0, boundary.x_f);
    let x = hermite_axis(t_0, t_f, a.s_x, a.v_x, b.s_x, b.v_x)?;
    let y = hermite_axis(t_0, t_f, a.s_y, a.v_y, b.s_y, b.v_y)?;
    Ok(PiecewiseCubicPlan::from_segments(vec![x], vec![y], None))
}

/// Corner of the inflated rectangle the ego must pass through at `t`.
pub fn constraint_target(
    obstacle: &ObstaclePolynomial,
    envelope: &SafetyEnvelope,
    side: ConstraintSide,
    t: f64,
) -> Result<(f64, f64)> {
    if !t.is_finite() || t > obstacle.valid_until {
        return Err(Error::domain(format!(
            "time {t} outside obstacle validity (until {})",
            obstacle.valid_until
        )));
    }
    let x_s = obstacle.position(t);
    Ok(match side {
        ConstraintSide::RearCross => (
            x_s + envelope.half_length(),
            obstacle.y_s - envelope.half_width(),
        ),
        ConstraintSide::FrontCross => (
            x_s - envelope.half_length(),
            obstacle.y_s + envelope.half_width(),
        ),
    })
}

fn monomials(t: f64) -> [[f64; 4]; 3] {
    [
        [1.0, t, t * t, t * t * t],
        [0.0, 1.0, 2.0 * t, 3.0 * t * t],
        [0.0, 0.0, 2.0, 6.0 * t],
    ]
}

/// Two cubics per axis meeting at `t_i` with continuous position, velocity
/// and acceleration, and passing through the constraint target at `t_i`.
pub fn solve_fixed_time(problem: &PlanningProblem, t_i: f64) -> Result<PiecewiseCubicPlan> {
    let boundary = &problem.boundary;
    let (t_0, t_f) = (boundary.t_0, boundary.t_f);
    if !(t_i > t_0 && t_i < t_f) {
        return Err(Error::domain(format!(
            "constraint time {t_i} outside ({t_0}, {t_f})"
        )));
    }
    let margin = (t_i - t_0).min(t_f - t_i);
    if margin < CONDITIONING_MARGIN {
        return Err(Error::Conditioning { t_i, margin });
    }
    let (x_c, y_c) = problem.target(t_i)?;

    // unknowns: left cubic c0..c3, right cubic c4..c7
    let (m0, mi, mf) = (monomials(t_0), monomials(t_i), monomials(t_f));
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    for c in 0..4 {
        a[(0, c)] = m0[0][c];
        a[(1, c)] = m0[1][c];
        a[(2, c + 4)] = mf[0][c];
        a[(3, c + 4)] = mf[1][c];
        for d in 0..3 {
            a[(4 + d, c)] = mi[d][c];
            a[(4 + d, c + 4)] = -mi[d][c];
        }
        a[(7, c)] = mi[0][c];
    }
    let (x0, xf) = (boundary.x_0, boundary.x_f);
    let rhs = SMatrix::<f64, 8, 2>::from_columns(&[
        SVector::<f64, 8>::from([x0.s_x, x0.v_x, xf.s_x, xf.v_x, 0.0, 0.0, 0.0, x_c]),
        SVector::<f64, 8>::from([x0.s_y, x0.v_y, xf.s_y, xf.v_y, 0.0, 0.0, 0.0, y_c]),
    ]);
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular(format!("interior-constraint system at t_i = {t_i}")))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(format!(
            "interior-constraint system at t_i = {t_i}"
        )));
    }
    let axis = |col: usize| -> Result<Vec<AxisCubic>> {
        let c = sol.column(col);
        Ok(vec![
            AxisCubic::new([c[0], c[1], c[2], c[3]], t_0, t_i)?,
            AxisCubic::new([c[4], c[5], c[6], c[7]], t_i, t_f)?,
        ])
    };
    Ok(PiecewiseCubicPlan::from_segments(
        axis(0)?,
        axis(1)?,
        Some(t_i),
    ))
}

/// `R(t_i) = H⁻ - H⁺ - ẋ_s(t_i) Φ_1` for a constrained plan.
pub fn hamiltonian_jump_residual(
    plan: &PiecewiseCubicPlan,
    obstacle: &ObstaclePolynomial,
) -> Result<f64> {
    let t_i = plan
        .t_i
        .ok_or_else(|| Error::domain("jump residual needs a constrained plan"))?;
    let (h_minus, h_plus) = plan
        .hamiltonian_at_interior()
        .expect("constrained plan has an interior time");
    Ok(h_minus - h_plus - obstacle.velocity(t_i) * plan.phi_1)
}

pub fn plan_cost(plan: &PiecewiseCubicPlan) -> f64 {
    plan.x_segments
        .iter()
        .chain(&plan.y_segments)
        .map(AxisCubic::effort)
        .sum()
}

/// True when the plan never enters the obstacle's inflated rectangle,
/// checked every `dt` seconds.
pub fn clears_obstacle(
    plan: &PiecewiseCubicPlan,
    obstacle: &ObstaclePolynomial,
    envelope: &SafetyEnvelope,
    dt: f64,
) -> bool {
    sample_times(plan.t_0(), plan.t_f(), dt)
        .into_iter()
        .all(|t| {
            let (x, y) = plan.position(t);
            !envelope.penetrated_by(x - obstacle.position(t), y - obstacle.y_s)
        })
}

fn sweep_point(problem: &PlanningProblem, t_i: f64) -> SweepPoint {
    match solve_fixed_time(problem, t_i) {
        Ok(plan) => SweepPoint {
            t_i,
            residual: hamiltonian_jump_residual(&plan, &problem.obstacle).unwrap_or(f64::NAN),
            cost: plan.cost,
        },
        Err(_) => SweepPoint {
            t_i,
            residual: f64::NAN,
            cost: f64::NAN,
        },
    }
}

/// Residual and cost of the fixed-time solution at `points` uniformly spaced
/// constraint times in `[t_0 + margin, t_f - margin]`.
pub fn residual_sweep(
    problem: &PlanningProblem,
    points: usize,
    margin: f64,
) -> Result<Vec<SweepPoint>> {
    let (t_0, t_f) = (problem.boundary.t_0, problem.boundary.t_f);
    let (lo, hi) = (t_0 + margin, t_f - margin);
    if points < 2 || hi.is_nan() || lo.is_nan() || hi <= lo {
        return Err(Error::domain(format!(
            "empty sweep: {points} points on [{lo}, {hi}]"
        )));
    }
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points)
        .map(|k| {
            let t = if k == points - 1 {
                hi
            } else {
                lo + k as f64 * step
            };
            sweep_point(problem, t)
        })
        .collect())
}

/// Bisects a sign change of the residual down to adjacent floating-point
/// numbers and returns the endpoint with the smaller residual magnitude.
fn refine_root(problem: &PlanningProblem, mut lo: SweepPoint, mut hi: SweepPoint) -> SweepPoint {
    for _ in 0..BISECTION_MAX_ITER {
        if lo.residual == 0.0 {
            return lo;
        }
        if hi.residual == 0.0 {
            return hi;
        }
        let mid_t = lo.t_i + (hi.t_i - lo.t_i) / 2.0;
        if mid_t <= lo.t_i || mid_t >= hi.t_i {
            break;
        }
        let mid = sweep_point(problem, mid_t);
        if !mid.residual.is_finite() {
            break;
        }
        if (mid.residual < 0.0) == (lo.residual < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo.residual.abs() <= hi.residual.abs() {
        lo
    } else {
        hi
    }
}

/// Optimal plan: the unconstrained cubic if it clears the obstacle, else the
/// minimum-cost root of the jump residual.
pub fn plan(problem: &PlanningProblem) -> Result<PiecewiseCubicPlan> {
    problem.validate()?;
    let free = unconstrained_plan(&problem.boundary)?;
    if clears_obstacle(&free, &problem.obstacle, &problem.envelope, CLEARANCE_DT) {
        return Ok(free);
    }
    constrained_plan(problem)
}

/// Minimum-cost root of the jump residual, located by a sign-change scan
/// and bisection.
pub fn constrained_plan(problem: &PlanningProblem) -> Result<PiecewiseCubicPlan> {
    problem.validate()?;
    let sweep = residual_sweep(problem, SCAN_POINTS, SCAN_MARGIN)?;
    let mut best: Option<PiecewiseCubicPlan> = None;
    for pair in sweep.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if !(a.residual.is_finite() && b.residual.is_finite()) {
            continue;
        }
        let brackets = a.residual == 0.0 || (a.residual < 0.0) != (b.residual < 0.0);
        if !brackets {
            continue;
        }
        let root = refine_root(problem, a, b);
        if let Ok(candidate) = solve_fixed_time(problem, root.t_i) {
            if best.as_ref().is_none_or(|p| candidate.cost < p.cost) {
                best = Some(candidate);
            }
        }
    }
    if let Some(last) = sweep.last().filter(|p| p.residual == 0.0) {
        if let Ok(candidate) = solve_fixed_time(problem, last.t_i) {
            if best.as_ref().is_none_or(|p| candidate.cost < p.cost) {
                best = Some(candidate);
            }
        }
    }
    best.ok_or_else(|| Error::Infeasible {
        reason: "the jump residual has no sign change over the admissible constraint times".into(),
        sweep,
    })
}
