//! Ego-vehicle state, the planar double-integrator dynamics and polynomial
//! trajectory sampling.
//!
//! The ego vehicle is a point mass with two decoupled axes. Each axis obeys
//! `s' = v, v' = u`, so every trajectory produced by the planner is a chain of
//! cubic polynomials in absolute time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default sampling step for trajectories [s].
pub const DEFAULT_SAMPLE_DT: f64 = 0.05;

/// Relative tolerance used when checking that segment intervals tile a horizon.
const TILE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EgoState {
    /// Longitudinal position [m].
    pub s_x: f64,
    /// Longitudinal velocity [m/s].
    pub v_x: f64,
    /// Lateral position [m].
    pub s_y: f64,
    /// Lateral velocity [m/s].
    pub v_y: f64,
}

impl EgoState {
    pub fn new(s_x: f64, v_x: f64, s_y: f64, v_y: f64) -> Self {
        Self { s_x, v_x, s_y, v_y }
    }

    pub fn is_finite(&self) -> bool {
        self.s_x.is_finite() && self.v_x.is_finite() && self.s_y.is_finite() && self.v_y.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Longitudinal acceleration [m/s^2].
    pub u_x: f64,
    /// Lateral acceleration [m/s^2].
    pub u_y: f64,
}

impl ControlInput {
    pub fn new(u_x: f64, u_y: f64) -> Self {
        Self { u_x, u_y }
    }

    pub fn is_finite(&self) -> bool {
        self.u_x.is_finite() && self.u_y.is_finite()
    }
}

/// Endpoint conditions of a lane change. Both endpoints have zero lateral
/// velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditions {
    pub t_0: f64,
    pub t_f: f64,
    pub x_0: EgoState,
    pub x_f: EgoState,
}

impl BoundaryConditions {
    pub fn new(t_0: f64, t_f: f64, x_0: EgoState, x_f: EgoState) -> Result<Self> {
        let bc = Self { t_0, t_f, x_0, x_f };
        bc.validate()?;
        Ok(bc)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_0.is_finite() && self.t_f.is_finite()) {
            return Err(Error::domain("boundary times must be finite"));
        }
        if self.t_f <= self.t_0 {
            return Err(Error::domain(format!(
                "final time {} must exceed initial time {}",
                self.t_f, self.t_0
            )));
        }
        if !(self.x_0.is_finite() && self.x_f.is_finite()) {
            return Err(Error::domain("boundary states must be finite"));
        }
        if self.x_0.v_y != 0.0 || self.x_f.v_y != 0.0 {
            return Err(Error::domain(
                "lateral velocity must be zero at both ends of a lane change",
            ));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.t_f - self.t_0
    }
}

/// Adjoint values paired with `(s_x, v_x, s_y, v_y)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostateVector {
    pub p_1: f64,
    pub p_2: f64,
    pub p_3: f64,
    pub p_4: f64,
}

/// Cubic `c0 + c1 t + c2 t^2 + c3 t^3` in absolute time, valid on `[t_start, t_end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisCubic {
    pub coeffs: [f64; 4],
    pub t_start: f64,
    pub t_end: f64,
}

impl AxisCubic {
    pub fn new(coeffs: [f64; 4], t_start: f64, t_end: f64) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite()) || t_end <= t_start {
            return Err(Error::Structure(format!(
                "invalid segment interval [{t_start}, {t_end}]"
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Structure("non-finite cubic coefficient".into()));
        }
        Ok(Self {
            coeffs,
            t_start,
            t_end,
        })
    }

    pub fn position(&self, t: f64) -> f64 {
        let [c0, c1, c2, c3] = self.coeffs;
        c0 + t * (c1 + t * (c2 + t * c3))
    }

    pub fn velocity(&self, t: f64) -> f64 {
        let [_, c1, c2, c3] = self.coeffs;
        c1 + t * (2.0 * c2 + t * 3.0 * c3)
    }

    pub fn acceleration(&self, t: f64) -> f64 {
        2.0 * self.coeffs[2] + 6.0 * self.coeffs[3] * t
    }

    pub fn jerk(&self) -> f64 {
        6.0 * self.coeffs[3]
    }

    /// `∫ acceleration^2 / 2 dt` over the segment interval.
    pub fn effort(&self) -> f64 {
        let (c2, c3) = (self.coeffs[2], self.coeffs[3]);
        // antiderivative of (2 c2 + 6 c3 t)^2 / 2
        let f = |t: f64| t * (2.0 * c2 * c2 + t * (6.0 * c2 * c3 + t * 6.0 * c3 * c3));
        f(self.t_end) - f(self.t_start)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_start && t <= self.t_end
    }
}

/// Evaluates a tiled list of segments at `t`. At a shared boundary the left
/// segment wins.
pub(crate) fn segment_at(segments: &[AxisCubic], t: f64) -> &AxisCubic {
    segments
        .iter()
        .find(|s| t <= s.t_end)
        .unwrap_or_else(|| segments.last().expect("non-empty segment list"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub state: EgoState,
    pub input: ControlInput,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.t)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Keeps every `stride`-th sample plus the final one.
    pub fn decimate(&self, stride: usize) -> Trajectory {
        let stride = stride.max(1);
        let last = self.samples.len().saturating_sub(1);
        let samples = self
            .samples
            .iter()
            .enumerate()
            .filter(|(i, _)| i % stride == 0 || *i == last)
            .map(|(_, s)| *s)
            .collect();
        Trajectory { samples }
    }
}

/// Exact zero-order-hold update of the double integrator over `dt`.
pub fn integrate_dynamics(state: EgoState, input: ControlInput, dt: f64) -> Result<EgoState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::domain(format!(
            "time step must be positive, got {dt}"
        )));
    }
    if !state.is_finite() || !input.is_finite() {
        return Err(Error::domain("state and input must be finite"));
    }
    let half_dt2 = 0.5 * dt * dt;
    Ok(EgoState {
        s_x: state.s_x + state.v_x * dt + input.u_x * half_dt2,
        v_x: state.v_x + input.u_x * dt,
        s_y: state.s_y + state.v_y * dt + input.u_y * half_dt2,
        v_y: state.v_y + input.u_y * dt,
    })
}

fn check_tiling(segments: &[AxisCubic], axis: &str) -> Result<(f64, f64)> {
    let first = segments
        .first()
        .ok_or_else(|| Error::Structure(format!("{axis} axis has no segments")))?;
    for pair in segments.windows(2) {
        let (a, b) = (pair[0].t_end, pair[1].t_start);
        let tol = TILE_TOL * a.abs().max(b.abs()).max(1.0);
        if (a - b).abs() > tol {
            let kind = if b > a { "gap" } else { "overlap" };
            return Err(Error::Structure(format!(
                "{kind} between {axis} segments at [{a}, {b}]"
            )));
        }
    }
    Ok((first.t_start, segments[segments.len() - 1].t_end))
}

/// Sample times from `t_0` to `t_f` with step `dt`; the last sample is exactly `t_f`.
pub fn sample_times(t_0: f64, t_f: f64, dt: f64) -> Vec<f64> {
    let span = (t_f - t_0) / dt;
    let rounded = span.round();
    let steps = if (span - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        span.ceil() as usize
    };
    (0..=steps)
        .map(|k| if k == steps { t_f } else { t_0 + k as f64 * dt })
        .collect()
}

/// Samples state and input from per-axis cubic segments.
pub fn sample_cubic_pair(
    x_axis: &[AxisCubic],
    y_axis: &[AxisCubic],
    dt: f64,
) -> Result<Trajectory> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::domain(format!(
            "sample step must be positive, got {dt}"
        )));
    }
    let (x0, xf) = check_tiling(x_axis, "x")?;
    let (y0, yf) = check_tiling(y_axis, "y")?;
    let tol = TILE_TOL * xf.abs().max(1.0);
    if (x0 - y0).abs() > tol || (xf - yf).abs() > tol {
        return Err(Error::Structure(format!(
            "axes span different horizons: x [{x0}, {xf}], y [{y0}, {yf}]"
        )));
    }
    let samples = sample_times(x0, xf, dt)
        .into_iter()
        .map(|t| {
            let sx = segment_at(x_axis, t);
            let sy = segment_at(y_axis, t);
            TrajectorySample {
                t,
                state: EgoState::new(
                    sx.position(t),
                    sx.velocity(t),
                    sy.position(t),
                    sy.velocity(t),
                ),
                input: ControlInput::new(sx.acceleration(t), sy.acceleration(t)),
            }
        })
        .collect();
    Ok(Trajectory { samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_input_drift() {
        let next = integrate_dynamics(
            EgoState::new(0.0, 20.0, 0.0, 0.0),
            ControlInput::default(),
            1.0,
        )
        .unwrap();
        assert_eq!(next, EgoState::new(20.0, 20.0, 0.0, 0.0));
    }

    #[test]
    fn constant_acceleration_from_rest() {
        let next =
            integrate_dynamics(EgoState::default(), ControlInput::new(2.0, 0.0), 1.0).unwrap();
        assert_eq!(next, EgoState::new(1.0, 2.0, 0.0, 0.0));
    }

    #[test]
    fn axes_superpose() {
        let next = integrate_dynamics(
            EgoState::new(0.0, 20.0, -2.0, 0.0),
            ControlInput::new(0.0, 1.5),
            2.0,
        )
        .unwrap();
        assert_eq!(next, EgoState::new(40.0, 20.0, 1.0, 3.0));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(integrate_dynamics(
            EgoState::new(f64::NAN, 0.0, 0.0, 0.0),
            ControlInput::default(),
            1.0
        )
        .is_err());
        assert!(integrate_dynamics(
            EgoState::default(),
            ControlInput::new(f64::INFINITY, 0.0),
            1.0
        )
        .is_err());
        assert!(integrate_dynamics(EgoState::default(), ControlInput::default(), 0.0).is_err());
    }

    #[test]
    fn samples_single_cubic() {
        let seg = AxisCubic::new([0.0, 0.0, 0.0, 1.0], 0.0, 1.0).unwrap();
        let flat = AxisCubic::new([0.0; 4], 0.0, 1.0).unwrap();
        let traj = sample_cubic_pair(&[seg], &[flat], 0.5).unwrap();
        let pos: Vec<f64> = traj.samples.iter().map(|s| s.state.s_x).collect();
        let acc: Vec<f64> = traj.samples.iter().map(|s| s.input.u_x).collect();
        assert_eq!(pos, vec![0.0, 0.125, 1.0]);
        assert_eq!(acc, vec![0.0, 3.0, 6.0]);
    }

    #[test]
    fn shared_boundary_sampled_once_from_left() {
        let left = AxisCubic::new([0.0, 1.0, 0.0, 0.0], 0.0, 1.0).unwrap();
        // continuous position at t = 1 but a different slope
        let right = AxisCubic::new([-1.0, 2.0, 0.0, 0.0], 1.0, 2.0).unwrap();
        let flat = AxisCubic::new([0.0; 4], 0.0, 2.0).unwrap();
        let traj = sample_cubic_pair(&[left, right], &[flat], 0.5).unwrap();
        let times: Vec<f64> = traj.times().collect();
        assert_eq!(times, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(traj.samples[2].state.v_x, 1.0);
        assert_eq!(traj.samples[3].state.v_x, 2.0);
    }

    #[test]
    fn detects_gap() {
        let a = AxisCubic::new([0.0; 4], 0.0, 1.0).unwrap();
        let b = AxisCubic::new([0.0; 4], 1.5, 2.0).unwrap();
        let flat = AxisCubic::new([0.0; 4], 0.0, 2.0).unwrap();
        assert!(matches!(
            sample_cubic_pair(&[a, b], &[flat], 0.1),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn final_sample_lands_on_horizon_end() {
        let times = sample_times(0.0, 1.0, 0.3);
        assert_eq!(*times.last().unwrap(), 1.0);
        assert_eq!(times.len(), 5);
        let times = sample_times(0.0, 5.0, 0.05);
        assert_eq!(times.len(), 101);
        assert_eq!(times[100], 5.0);
    }

    #[test]
    fn effort_matches_hermite_value() {
        let seg = AxisCubic::new([0.0, 0.0, 3.0, -2.0], 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(seg.effort(), 6.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn derivatives_are_consistent(
            c in proptest::array::uniform4(-10.0f64..10.0),
            t in -5.0f64..5.0,
        ) {
            let seg = AxisCubic::new(c, -5.0, 5.0).unwrap();
            let p = seg.position(t);
            let expected = c[0] + c[1] * t + c[2] * t * t + c[3] * t * t * t;
            prop_assert!((p - expected).abs() <= 1e-11 * (1.0 + expected.abs()));
            let v = c[1] + 2.0 * c[2] * t + 3.0 * c[3] * t * t;
            prop_assert!((seg.velocity(t) - v).abs() <= 1e-11 * (1.0 + v.abs()));
            let a = 2.0 * c[2] + 6.0 * c[3] * t;
            prop_assert!((seg.acceleration(t) - a).abs() <= 1e-12 * (1.0 + a.abs()));
            prop_assert_eq!(seg.jerk(), 6.0 * c[3]);
        }

        #[test]
        fn exact_discretization_composes(
            s in -100.0f64..100.0, v in -30.0f64..30.0,
            ux in -5.0f64..5.0, uy in -5.0f64..5.0,
            dt in 0.01f64..0.5, n in 1usize..40,
        ) {
            let x0 = EgoState::new(s, v, -s / 10.0, v / 10.0);
            let u = ControlInput::new(ux, uy);
            let mut stepped = x0;
            for _ in 0..n {
                stepped = integrate_dynamics(stepped, u, dt).unwrap();
            }
            let once = integrate_dynamics(x0, u, n as f64 * dt).unwrap();
            let scale = 1.0 + once.s_x.abs() + once.s_y.abs();
            prop_assert!((stepped.s_x - once.s_x).abs() <= 1e-10 * scale);
            prop_assert!((stepped.v_x - once.v_x).abs() <= 1e-10 * scale);
            prop_assert!((stepped.s_y - once.s_y).abs() <= 1e-10 * scale);
            prop_assert!((stepped.v_y - once.v_y).abs() <= 1e-10 * scale);
        }
    }
}
