#![allow(dead_code)]

use lanechange::model::{BoundaryConditions, EgoState};
use lanechange::planner::{
    plan, ConstraintSide, PiecewiseCubicPlan, PlanningProblem, SafetyEnvelope,
};
use lanechange::predictor::ObstaclePolynomial;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const HORIZON: f64 = 5.0;

/// Lane changes from y = -2 to y = 1.75 over five seconds that the planner
/// resolves with an active interior constraint.
///
/// `RearCross` draws a vehicle in the target lane that the ego merges ahead
/// of, the geometry of the three presets. `FrontCross` draws a slower vehicle
/// ahead in the starting lane that the ego leaves before reaching.
pub fn random_constrained_problems(
    count: usize,
    seed: u64,
    side: ConstraintSide,
) -> Vec<(PlanningProblem, PiecewiseCubicPlan)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..10_000 {
        if out.len() == count {
            break;
        }
        let v_e = rng.gen_range(15.0..25.0);
        let s_xf = HORIZON * v_e + rng.gen_range(-12.0..12.0);
        let boundary = BoundaryConditions::new(
            0.0,
            HORIZON,
            EgoState::new(0.0, v_e, -2.0, 0.0),
            EgoState::new(s_xf, v_e, 1.75, 0.0),
        )
        .unwrap();
        let obstacle = match side {
            ConstraintSide::RearCross => {
                let x_s0 = rng.gen_range(-30.0..5.0);
                let v_s = rng.gen_range(10.0..24.0);
                ObstaclePolynomial::constant_velocity(x_s0, 0.0, v_s, 1.75, HORIZON).unwrap()
            }
            ConstraintSide::FrontCross => {
                let x_s0 = rng.gen_range(20.0..50.0);
                let v_s = rng.gen_range(5.0..18.0);
                ObstaclePolynomial::constant_velocity(x_s0, 0.0, v_s, -2.0, HORIZON).unwrap()
            }
        };
        let problem =
            PlanningProblem::new(boundary, obstacle, SafetyEnvelope::default(), side).unwrap();
        if let Ok(p) = plan(&problem) {
            if p.constrained {
                out.push((problem, p));
            }
        }
    }
    assert_eq!(out.len(), count, "not enough constrained problems");
    out
}

pub fn static_obstacle_problem() -> PlanningProblem {
    PlanningProblem::new(
        BoundaryConditions::new(
            0.0,
            HORIZON,
            EgoState::new(0.0, 20.0, -2.0, 0.0),
            EgoState::new(100.0, 20.0, 1.75, 0.0),
        )
        .unwrap(),
        ObstaclePolynomial::constant_velocity(60.0, 0.0, 0.0, 1.75, HORIZON).unwrap(),
        SafetyEnvelope::default(),
        ConstraintSide::RearCross,
    )
    .unwrap()
}

/// Largest jump of position, velocity and acceleration across `t_i`, and the
/// largest miss of the constraint target, over both axes.
pub fn interior_errors(problem: &PlanningProblem, plan: &PiecewiseCubicPlan) -> (f64, f64) {
    let t_i = plan.t_i.expect("constrained plan");
    let (x_c, y_c) = problem.target(t_i).unwrap();
    let mut continuity = 0.0f64;
    let mut target = 0.0f64;
    for (segments, goal) in [(&plan.x_segments, x_c), (&plan.y_segments, y_c)] {
        let (l, r) = (segments[0], segments[1]);
        continuity = continuity
            .max((l.position(t_i) - r.position(t_i)).abs())
            .max((l.velocity(t_i) - r.velocity(t_i)).abs())
            .max((l.acceleration(t_i) - r.acceleration(t_i)).abs());
        target = target.max((l.position(t_i) - goal).abs());
    }
    (continuity, target)
}
