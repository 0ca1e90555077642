//! Scenario harness: configuration files and presets, synthetic observation
//! histories, end-to-end runs, clearance checks and CSV/JSON export.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoundaryConditions, EgoState, Trajectory, DEFAULT_SAMPLE_DT};
use crate::oracle::{grid_search_time, solve_collocation};
use crate::planner::{
    hamiltonian_jump_residual, plan, unconstrained_plan, ConstraintSide, PiecewiseCubicPlan,
    PlanningProblem, SafetyEnvelope,
};
use crate::predictor::{
    predict_trajectory, ObservationHistory, ObstaclePolynomial, PredictorConfig,
};

pub const PRESETS: [&str; 3] = ["scenario1", "scenario2", "scenario3"];
pub const DEFAULT_LANE_WIDTH: f64 = 3.75;
pub const ORACLE_STEPS: usize = 500;
pub const ORACLE_GRID: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub t_0: f64,
    pub t_f: f64,
    pub ego: EgoConfig,
    #[serde(default)]
    pub predictor: PredictorSettings,
    pub vehicles: Vec<VehicleConfig>,
    #[serde(default)]
    pub verify: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoConfig {
    /// Cruise speed at both ends of the horizon [m/s].
    pub v_e: f64,
    #[serde(default)]
    pub s_x0: f64,
    pub s_y0: f64,
    pub s_xf: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lane_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_yf: Option<f64>,
}

impl EgoConfig {
    pub fn final_lateral(&self) -> f64 {
        self.s_yf
            .unwrap_or(self.s_y0 + self.lane_width.unwrap_or(DEFAULT_LANE_WIDTH))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSettings {
    pub dt_obs: f64,
    pub order: usize,
    pub history_duration: f64,
    pub smoothing: f64,
    pub accel_resolution: f64,
    /// Standard deviation of Gaussian noise added to observations [m].
    pub noise_std: f64,
}

impl Default for PredictorSettings {
    fn default() -> Self {
        let base = PredictorConfig::default();
        Self {
            dt_obs: 0.1,
            order: base.order,
            history_duration: 3.0,
            smoothing: base.smoothing,
            accel_resolution: base.accel_resolution,
            noise_std: 0.0,
        }
    }
}

impl PredictorSettings {
    pub fn predictor_config(&self) -> PredictorConfig {
        PredictorConfig {
            order: self.order,
            smoothing: self.smoothing,
            accel_resolution: self.accel_resolution,
            grid: None,
        }
    }
}

/// Speed profile of a surrounding vehicle before `t_0`. Rates are magnitudes
/// [m/s²] applied over the final `duration` seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BehaviorProfile {
    #[default]
    ConstantVelocity,
    Decelerating {
        #[serde(default = "default_rate")]
        rate: f64,
        #[serde(default = "default_ramp")]
        duration: f64,
    },
    Accelerating {
        #[serde(default = "default_rate")]
        rate: f64,
        #[serde(default = "default_ramp")]
        duration: f64,
    },
}

fn default_rate() -> f64 {
    2.0
}

fn default_ramp() -> f64 {
    2.0
}

impl BehaviorProfile {
    /// Signed acceleration and its duration before `t_0`.
    pub fn ramp(&self) -> (f64, f64) {
        match *self {
            BehaviorProfile::ConstantVelocity => (0.0, 0.0),
            BehaviorProfile::Decelerating { rate, duration } => (-rate, duration),
            BehaviorProfile::Accelerating { rate, duration } => (rate, duration),
        }
    }
}

fn default_side() -> ConstraintSide {
    ConstraintSide::RearCross
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleConfig {
    /// Position at `t_0` [m].
    pub x_s0: f64,
    /// Speed at `t_0` [m/s].
    pub v_s0: f64,
    /// Lateral lane position [m].
    pub y_s: f64,
    #[serde(default)]
    pub profile: BehaviorProfile,
    #[serde(default)]
    pub envelope: SafetyEnvelope,
    #[serde(default = "default_side")]
    pub side: ConstraintSide,
}

impl VehicleConfig {
    /// Motion after `t_0`: the speed reached at `t_0` is held.
    pub fn ground_truth(&self, t_0: f64, valid_until: f64) -> Result<ObstaclePolynomial> {
        ObstaclePolynomial::constant_velocity(self.x_s0, t_0, self.v_s0, self.y_s, valid_until)
    }
}

fn preset_config(name: &str, s_xf: f64, v_s0: f64, profile: BehaviorProfile) -> ScenarioConfig {
    ScenarioConfig {
        name: name.to_string(),
        t_0: 0.0,
        t_f: 5.0,
        ego: EgoConfig {
            v_e: 20.0,
            s_x0: 0.0,
            s_y0: -2.0,
            s_xf,
            lane_width: Some(DEFAULT_LANE_WIDTH),
            s_yf: None,
        },
        predictor: PredictorSettings::default(),
        vehicles: vec![VehicleConfig {
            x_s0: -15.0,
            v_s0,
            y_s: 1.75,
            profile,
            envelope: SafetyEnvelope::default(),
            side: ConstraintSide::RearCross,
        }],
        verify: false,
    }
}

pub fn preset(name: &str) -> Option<ScenarioConfig> {
    let ramp = |decel: bool| {
        if decel {
            BehaviorProfile::Decelerating {
                rate: default_rate(),
                duration: default_ramp(),
            }
        } else {
            BehaviorProfile::Accelerating {
                rate: default_rate(),
                duration: default_ramp(),
            }
        }
    };
    match name {
        "scenario1" => Some(preset_config(
            name,
            85.0,
            18.0,
            BehaviorProfile::ConstantVelocity,
        )),
        "scenario2" => Some(preset_config(name, 73.0, 20.0, ramp(true))),
        "scenario3" => Some(preset_config(name, 90.0, 13.0, ramp(false))),
        _ => None,
    }
}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

fn line_of_key(source: &str, key: &str) -> Option<usize> {
    source
        .lines()
        .position(|line| {
            line.trim_start()
                .strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map(|i| i + 1)
}

fn backticked(message: &str) -> Option<&str> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(&message[start..start + len])
}

fn schema_error(source: &str, err: toml::de::Error) -> Error {
    let line = err.span().map(|span| line_of_offset(source, span.start));
    let field = backticked(err.message())
        .map(str::to_string)
        .or_else(|| {
            line.and_then(|l| source.lines().nth(l - 1))
                .and_then(|text| text.split_once('='))
                .map(|(key, _)| key.trim().to_string())
        })
        .unwrap_or_else(|| "<document>".to_string());
    Error::Config {
        field,
        line,
        message: err.message().trim().to_string(),
    }
}

impl ScenarioConfig {
    pub fn from_toml(source: &str) -> Result<Self> {
        let config: ScenarioConfig = toml::from_str(source).map_err(|e| schema_error(source, e))?;
        config.validate().map_err(|e| match e {
            Error::Config {
                field,
                line: None,
                message,
            } => {
                let key = field.rsplit('.').next().unwrap_or(&field).to_string();
                Error::Config {
                    line: line_of_key(source, &key),
                    field,
                    message,
                }
            }
            other => other,
        })?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let finite_positive = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be positive, got {v}")))
            }
        };
        let finite = |field: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, "must be finite"))
            }
        };
        finite("t_0", self.t_0)?;
        finite("t_f", self.t_f)?;
        if self.t_f <= self.t_0 {
            return Err(Error::config(
                "t_f",
                format!("must exceed t_0 = {}", self.t_0),
            ));
        }
        let ego = &self.ego;
        finite("ego.v_e", ego.v_e)?;
        finite("ego.s_x0", ego.s_x0)?;
        finite("ego.s_y0", ego.s_y0)?;
        finite("ego.s_xf", ego.s_xf)?;
        match (ego.lane_width, ego.s_yf) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "ego.s_yf",
                    "lane_width and s_yf are mutually exclusive",
                ));
            }
            (Some(w), None) => finite_positive("ego.lane_width", w)?,
            (None, Some(s)) => finite("ego.s_yf", s)?,
            (None, None) => {}
        }
        let p = &self.predictor;
        finite_positive("predictor.dt_obs", p.dt_obs)?;
        finite_positive("predictor.history_duration", p.history_duration)?;
        finite_positive("predictor.accel_resolution", p.accel_resolution)?;
        if p.order == 0 {
            return Err(Error::config("predictor.order", "must be at least 1"));
        }
        if !(p.smoothing.is_finite() && p.smoothing >= 0.0) {
            return Err(Error::config("predictor.smoothing", "must be non-negative"));
        }
        if !(p.noise_std.is_finite() && p.noise_std >= 0.0) {
            return Err(Error::config("predictor.noise_std", "must be non-negative"));
        }
        let samples = (p.history_duration / p.dt_obs).round() as usize + 1;
        if samples < p.order + 2 {
            return Err(Error::config(
                "predictor.history_duration",
                format!("{samples} samples cannot support order {}", p.order),
            ));
        }
        if self.vehicles.is_empty() {
            return Err(Error::config(
                "vehicles",
                "at least one surrounding vehicle is required",
            ));
        }
        for vehicle in &self.vehicles {
            finite("vehicles.x_s0", vehicle.x_s0)?;
            finite("vehicles.v_s0", vehicle.v_s0)?;
            finite("vehicles.y_s", vehicle.y_s)?;
            vehicle
                .envelope
                .validate()
                .map_err(|e| Error::config("vehicles.envelope", e.to_string()))?;
            let (accel, duration) = vehicle.profile.ramp();
            if vehicle.profile != BehaviorProfile::ConstantVelocity {
                finite_positive("vehicles.profile.rate", accel.abs())?;
                finite_positive("vehicles.profile.duration", duration)?;
                if duration > p.history_duration + 1e-12 {
                    return Err(Error::config(
                        "vehicles.profile.duration",
                        "ramp is longer than the observation history",
                    ));
                }
                if vehicle.v_s0 - accel * duration < 0.0 {
                    return Err(Error::config(
                        "vehicles.profile.rate",
                        "profile would require a negative speed before t_0",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn boundary(&self) -> Result<BoundaryConditions> {
        let ego = &self.ego;
        BoundaryConditions::new(
            self.t_0,
            self.t_f,
            EgoState::new(ego.s_x0, ego.v_e, ego.s_y0, 0.0),
            EgoState::new(ego.s_xf, ego.v_e, ego.final_lateral(), 0.0),
        )
    }

    pub fn lateral_midpoint(&self) -> f64 {
        (self.ego.s_y0 + self.ego.final_lateral()) / 2.0
    }
}

/// A preset name or a path to a scenario file.
pub fn load_scenario(name: &str) -> Result<ScenarioConfig> {
    if let Some(config) = preset(name) {
        return Ok(config);
    }
    let path = Path::new(name);
    let source = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ScenarioConfig::from_toml(&source)
}

/// Observations at `dt_obs` over the history window ending at `t_0`,
/// generated from the vehicle's behavior profile.
pub fn synthesize_history(
    config: &ScenarioConfig,
    vehicle: &VehicleConfig,
    seed: u64,
) -> Result<ObservationHistory> {
    let p = &config.predictor;
    let steps = (p.history_duration / p.dt_obs).round() as usize;
    let (accel, ramp) = vehicle.profile.ramp();
    let v_before = vehicle.v_s0 - accel * ramp;
    if v_before < 0.0 {
        return Err(Error::config(
            "vehicles.profile.rate",
            "profile would require a negative speed before t_0",
        ));
    }
    let position = |sigma: f64| {
        if sigma >= -ramp {
            vehicle.x_s0 + vehicle.v_s0 * sigma + 0.5 * accel * sigma * sigma
        } else {
            let x_ramp = vehicle.x_s0 - vehicle.v_s0 * ramp + 0.5 * accel * ramp * ramp;
            x_ramp + v_before * (sigma + ramp)
        }
    };
    let mut positions: Vec<f64> = (0..=steps)
        .map(|k| position(-((steps - k) as f64) * p.dt_obs))
        .collect();
    if p.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, p.noise_std)
            .map_err(|e| Error::config("predictor.noise_std", e.to_string()))?;
        positions
            .iter_mut()
            .for_each(|x| *x += noise.sample(&mut rng));
    }
    ObservationHistory::new(p.dt_obs, positions, vehicle.y_s, config.t_0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ViolationInterval {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClearanceReport {
    pub samples: usize,
    pub violations: usize,
    /// Smallest `|dx| - (L/2 + S_x)` over all samples [m].
    pub min_gap_x: f64,
    /// Smallest `|dy| - (W/2 + S_y)` over all samples [m].
    pub min_gap_y: f64,
    pub intervals: Vec<ViolationInterval>,
}

impl ClearanceReport {
    pub fn is_clear(&self) -> bool {
        self.violations == 0
    }
}

/// Flags samples whose ego position lies strictly inside the inflated
/// rectangle around `obstacle`; boundary contact is not a violation.
pub fn check_clearance(
    trajectory: &Trajectory,
    obstacle: &ObstaclePolynomial,
    envelope: &SafetyEnvelope,
) -> ClearanceReport {
    let mut report = ClearanceReport {
        samples: trajectory.len(),
        violations: 0,
        min_gap_x: f64::INFINITY,
        min_gap_y: f64::INFINITY,
        intervals: Vec::new(),
    };
    let mut open: Option<ViolationInterval> = None;
    for sample in &trajectory.samples {
        let dx = sample.state.s_x - obstacle.position(sample.t);
        let dy = sample.state.s_y - obstacle.y_s;
        report.min_gap_x = report.min_gap_x.min(dx.abs() - envelope.half_length());
        report.min_gap_y = report.min_gap_y.min(dy.abs() - envelope.half_width());
        if envelope.penetrated_by(dx, dy) {
            report.violations += 1;
            open = Some(match open {
                Some(interval) => ViolationInterval {
                    end: sample.t,
                    ..interval
                },
                None => ViolationInterval {
                    start: sample.t,
                    end: sample.t,
                },
            });
        } else if let Some(interval) = open.take() {
            report.intervals.push(interval);
        }
    }
    report.intervals.extend(open);
    report
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleComparison {
    pub n_steps: usize,
    pub t_grid: usize,
    /// Cheapest interior time found by the grid search (constrained plans).
    pub grid_t_i: Option<f64>,
    pub grid_cost: Option<f64>,
    /// Collocation cost with the constraint pinned at the planner's time,
    /// or unconstrained for an unconstrained plan.
    pub pinned_cost: f64,
    pub planner_cost: f64,
    /// `|J_planner - J_oracle| / J_oracle`, against the grid search when constrained.
    pub cost_rel_delta: f64,
    pub t_i_delta: Option<f64>,
}

pub fn compare_with_oracle(
    problem: &PlanningProblem,
    plan: &PiecewiseCubicPlan,
) -> Result<OracleComparison> {
    let pinned = solve_collocation(problem, ORACLE_STEPS, plan.t_i)?;
    let (grid_t_i, grid_cost) = match plan.t_i {
        Some(_) => {
            let (t, best) = grid_search_time(problem, ORACLE_STEPS, ORACLE_GRID)?;
            (Some(t), Some(best.cost))
        }
        None => (None, None),
    };
    let reference = grid_cost.unwrap_or(pinned.cost);
    let delta = (plan.cost - reference).abs();
    Ok(OracleComparison {
        n_steps: ORACLE_STEPS,
        t_grid: ORACLE_GRID,
        grid_t_i,
        grid_cost,
        pinned_cost: pinned.cost,
        planner_cost: plan.cost,
        cost_rel_delta: if reference > 0.0 {
            delta / reference
        } else {
            delta
        },
        t_i_delta: plan.t_i.zip(grid_t_i).map(|(a, b)| (a - b).abs()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub sample_dt: f64,
    pub seed: u64,
    /// Forces oracle verification regardless of the config flag.
    pub verify: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            sample_dt: DEFAULT_SAMPLE_DT,
            seed: 0,
            verify: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleOutcome {
    pub history: ObservationHistory,
    pub prediction: ObstaclePolynomial,
    pub fallback: bool,
    pub ground_truth: ObstaclePolynomial,
    pub clearance: ClearanceReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub config: ScenarioConfig,
    pub problem: PlanningProblem,
    pub plan: PiecewiseCubicPlan,
    pub trajectory: Trajectory,
    pub vehicles: Vec<VehicleOutcome>,
    /// Index of the vehicle whose constraint the plan honours.
    pub binding: usize,
    pub residual: Option<f64>,
    pub t_mid: Option<f64>,
    pub oracle: Option<OracleComparison>,
}

impl SimulationResult {
    pub fn total_violations(&self) -> usize {
        self.vehicles.iter().map(|v| v.clearance.violations).sum()
    }
}

/// First time the planned lateral position reaches `level`.
pub fn crossing_time(plan: &PiecewiseCubicPlan, level: f64) -> Option<f64> {
    let (t_0, t_f) = (plan.t_0(), plan.t_f());
    let above = |t: f64| plan.position(t).1 >= level;
    let start = above(t_0);
    let steps = 5000;
    let mut prev = t_0;
    for k in 1..=steps {
        let t = if k == steps {
            t_f
        } else {
            t_0 + (t_f - t_0) * k as f64 / steps as f64
        };
        if above(t) != start {
            let (mut lo, mut hi) = (prev, t);
            for _ in 0..100 {
                let mid = lo + (hi - lo) / 2.0;
                if mid <= lo || mid >= hi {
                    break;
                }
                if above(mid) == start {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(hi);
        }
        prev = t;
    }
    None
}

/// Vehicle whose predicted rectangle the unconstrained plan enters first.
fn binding_vehicle(
    boundary: &BoundaryConditions,
    problems: &[PlanningProblem],
    dt: f64,
) -> Result<usize> {
    let free = unconstrained_plan(boundary)?;
    let times = crate::model::sample_times(boundary.t_0, boundary.t_f, dt);
    let first_hit = |p: &PlanningProblem| {
        times.iter().copied().find(|&t| {
            let (x, y) = free.position(t);
            p.envelope
                .penetrated_by(x - p.obstacle.position(t), y - p.obstacle.y_s)
        })
    };
    Ok(problems
        .iter()
        .enumerate()
        .filter_map(|(i, p)| first_hit(p).map(|t| (i, t)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map_or(0, |(i, _)| i))
}

/// Predict, plan, sample, check clearance against ground truth and
/// optionally verify against the collocation oracle.
pub fn run_scenario(config: &ScenarioConfig, options: &RunOptions) -> Result<SimulationResult> {
    config.validate()?;
    if !(options.sample_dt.is_finite() && options.sample_dt > 0.0) {
        return Err(Error::config(
            "dt",
            format!("sample step must be positive, got {}", options.sample_dt),
        ));
    }
    let boundary = config.boundary()?;
    let horizon = config.t_f - config.t_0;
    let predictor = config.predictor.predictor_config();

    let mut histories = Vec::with_capacity(config.vehicles.len());
    let mut problems = Vec::with_capacity(config.vehicles.len());
    let mut fallbacks = Vec::with_capacity(config.vehicles.len());
    for (i, vehicle) in config.vehicles.iter().enumerate() {
        let history = synthesize_history(config, vehicle, options.seed.wrapping_add(i as u64))?;
        let prediction = predict_trajectory(&history, &predictor, horizon)?;
        problems.push(PlanningProblem::new(
            boundary,
            prediction.polynomial,
            vehicle.envelope,
            vehicle.side,
        )?);
        fallbacks.push(prediction.fallback);
        histories.push(history);
    }
    let binding = binding_vehicle(&boundary, &problems, crate::planner::CLEARANCE_DT)?;
    let problem = problems[binding];
    let plan = plan(&problem)?;
    let trajectory = plan.sample(options.sample_dt)?;

    let vehicles = config
        .vehicles
        .iter()
        .zip(histories)
        .zip(problems.iter().zip(fallbacks))
        .map(|((vehicle, history), (p, fallback))| {
            let ground_truth = vehicle.ground_truth(config.t_0, config.t_f)?;
            Ok(VehicleOutcome {
                clearance: check_clearance(&trajectory, &ground_truth, &vehicle.envelope),
                history,
                prediction: p.obstacle,
                fallback,
                ground_truth,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let residual = match plan.t_i {
        Some(_) => Some(hamiltonian_jump_residual(&plan, &problem.obstacle)?),
        None => None,
    };
    let oracle = if options.verify || config.verify {
        Some(compare_with_oracle(&problem, &plan)?)
    } else {
        None
    };
    Ok(SimulationResult {
        t_mid: crossing_time(&plan, config.lateral_midpoint()),
        config: config.clone(),
        problem,
        plan,
        trajectory,
        vehicles,
        binding,
        residual,
        oracle,
    })
}

#[derive(Debug, Serialize)]
struct PredictionMeta {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    y_s: f64,
    fallback: bool,
}

#[derive(Debug, Serialize)]
struct ClearanceMeta<'a> {
    vehicle: usize,
    violations: usize,
    min_gap_x: f64,
    min_gap_y: f64,
    intervals: &'a [ViolationInterval],
}

#[derive(Debug, Serialize)]
struct Meta<'a> {
    scenario: &'a str,
    t_i: Option<f64>,
    phi_1: f64,
    phi_3: f64,
    cost: f64,
    constrained: bool,
    residual: Option<f64>,
    t_mid: Option<f64>,
    constraint_target: Option<(f64, f64)>,
    binding_vehicle: usize,
    side: ConstraintSide,
    envelope: SafetyEnvelope,
    prediction: PredictionMeta,
    clearance: Vec<ClearanceMeta<'a>>,
    oracle: Option<&'a OracleComparison>,
    sample_dt: f64,
    assumptions: [&'static str; 3],
}

const ASSUMPTIONS: [&str; 3] = [
    "surrounding vehicles hold their t_0 speed for the whole horizon",
    "final lateral position is s_y0 plus one lane width",
    "speed ramps before t_0 last the configured duration at the configured rate",
];

fn write_file(path: PathBuf, contents: &str) -> Result<PathBuf> {
    fs::write(&path, contents).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `ego.csv`, `obstacle.csv` and `meta.json` into `out_dir`.
pub fn export(result: &SimulationResult, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let mut ego = String::from("t,s_x,v_x,u_x,s_y,v_y,u_y\n");
    for s in &result.trajectory.samples {
        let row = [
            s.t,
            s.state.s_x,
            s.state.v_x,
            s.input.u_x,
            s.state.s_y,
            s.state.v_y,
            s.input.u_y,
        ];
        ego.push_str(&row.map(fmt).join(","));
        ego.push('\n');
    }

    let binding = &result.vehicles[result.binding];
    let mut obstacle = String::from("t,x_s_true,x_s_pred,y_s\n");
    for s in &result.trajectory.samples {
        let row = [
            s.t,
            binding.ground_truth.position(s.t),
            binding.prediction.position(s.t),
            binding.ground_truth.y_s,
        ];
        obstacle.push_str(&row.map(fmt).join(","));
        obstacle.push('\n');
    }

    let plan = &result.plan;
    let prediction = &binding.prediction;
    let meta = Meta {
        scenario: &result.config.name,
        t_i: plan.t_i,
        phi_1: plan.phi_1,
        phi_3: plan.phi_3,
        cost: plan.cost,
        constrained: plan.constrained,
        residual: result.residual,
        t_mid: result.t_mid,
        constraint_target: plan.t_i.map(|t| result.problem.target(t)).transpose()?,
        binding_vehicle: result.binding,
        side: result.problem.side,
        envelope: result.problem.envelope,
        prediction: PredictionMeta {
            a: prediction.a,
            b: prediction.b,
            c: prediction.c,
            d: prediction.d,
            y_s: prediction.y_s,
            fallback: binding.fallback,
        },
        clearance: result
            .vehicles
            .iter()
            .enumerate()
            .map(|(i, v)| ClearanceMeta {
                vehicle: i,
                violations: v.clearance.violations,
                min_gap_x: v.clearance.min_gap_x,
                min_gap_y: v.clearance.min_gap_y,
                intervals: &v.clearance.intervals,
            })
            .collect(),
        oracle: result.oracle.as_ref(),
        sample_dt: result
            .trajectory
            .samples
            .get(1)
            .map_or(0.0, |s| s.t - result.trajectory.samples[0].t),
        assumptions: ASSUMPTIONS,
    };
    let mut json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    json.push('\n');

    Ok(vec![
        write_file(out_dir.join("ego.csv"), &ego)?,
        write_file(out_dir.join("obstacle.csv"), &obstacle)?,
        write_file(out_dir.join("meta.json"), &json)?,
    ])
}
