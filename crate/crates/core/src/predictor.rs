//! Longitudinal trajectory prediction for a surrounding vehicle.
//!
//! Observed positions are differenced into per-step displacements, and the
//! per-step change of displacement is discretized onto a [`StateGrid`]. A
//! mixture-transition-distribution (MTD) Markov chain of order `n` is fitted
//! to that index sequence: one row-stochastic transition matrix per lag plus
//! simplex lag weights. Rolling the chain forward yields expected changes of
//! displacement, which integrate into a predicted position track; a cubic in
//! absolute time is then least-squares fitted through the observed and
//! predicted points.
//!
//! Working on changes of displacement keeps the chain stationary for both
//! constant-velocity and constant-acceleration motion, so a braking or
//! accelerating vehicle is extrapolated instead of frozen at its last speed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the unit sum of a probability vector supplied by a caller.
const DISTRIBUTION_TOL: f64 = 1e-9;
const LAG_FIT_GRADIENT_TOL: f64 = 1e-8;
const LAG_FIT_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationHistory {
    /// Sampling period [s].
    pub dt_obs: f64,
    /// Longitudinal positions [m], oldest first.
    pub positions: Vec<f64>,
    /// Lateral position [m], assumed constant.
    pub y_lat: f64,
    /// Time stamp of the last sample [s].
    pub t_last: f64,
}

impl ObservationHistory {
    pub fn new(dt_obs: f64, positions: Vec<f64>, y_lat: f64, t_last: f64) -> Result<Self> {
        if !(dt_obs.is_finite() && dt_obs > 0.0) {
            return Err(Error::domain(format!(
                "observation period must be positive, got {dt_obs}"
            )));
        }
        if positions.is_empty() {
            return Err(Error::domain("observation history is empty"));
        }
        if let Some(k) = positions.iter().position(|p| !p.is_finite()) {
            return Err(Error::domain(format!("observation {k} is not finite")));
        }
        if !(y_lat.is_finite() && t_last.is_finite()) {
            return Err(Error::domain(
                "lateral position and time stamp must be finite",
            ));
        }
        Ok(Self {
            dt_obs,
            positions,
            y_lat,
            t_last,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn time_of(&self, k: usize) -> f64 {
        self.t_last - (self.positions.len() - 1 - k) as f64 * self.dt_obs
    }

    /// Per-step displacements `x[k+1] - x[k]`.
    pub fn increments(&self) -> Vec<f64> {
        self.positions.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// The displacement series viewed as a history of its own, so that its
    /// increments are the per-step changes of displacement.
    fn displacement_history(&self) -> ObservationHistory {
        ObservationHistory {
            dt_obs: self.dt_obs,
            positions: self.increments(),
            y_lat: self.y_lat,
            t_last: self.t_last,
        }
    }
}

/// Uniform bins `[origin + i w, origin + (i + 1) w)` for `i < m_states`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateGrid {
    pub bin_width: f64,
    pub origin: f64,
    pub m_states: usize,
}

impl StateGrid {
    pub fn new(bin_width: f64, origin: f64, m_states: usize) -> Result<Self> {
        if !(bin_width.is_finite() && bin_width > 0.0) {
            return Err(Error::domain(format!(
                "bin width must be positive, got {bin_width}"
            )));
        }
        if !origin.is_finite() {
            return Err(Error::domain("grid origin must be finite"));
        }
        if m_states < 2 {
            return Err(Error::domain(format!(
                "need at least 2 states, got {m_states}"
            )));
        }
        Ok(Self {
            bin_width,
            origin,
            m_states,
        })
    }

    /// Odd-sized grid whose middle bin is centered on the mean of `values`,
    /// extended to cover the observed spread plus 50% on each side (at least
    /// two bins per side).
    pub fn centered(values: &[f64], bin_width: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("cannot size a grid from no values"));
        }
        let center = values.iter().sum::<f64>() / values.len() as f64;
        let spread = values
            .iter()
            .map(|v| (v - center).abs())
            .fold(0.0, f64::max);
        let half = ((1.5 * spread / bin_width + 0.5).ceil() as usize).max(2);
        let m_states = 2 * half + 1;
        StateGrid::new(
            bin_width,
            center - (half as f64 + 0.5) * bin_width,
            m_states,
        )
    }

    pub fn upper(&self) -> f64 {
        self.origin + self.m_states as f64 * self.bin_width
    }

    pub fn index_of(&self, value: f64) -> Option<usize> {
        let pos = ((value - self.origin) / self.bin_width).floor();
        (pos >= 0.0 && pos < self.m_states as f64).then_some(pos as usize)
    }

    pub fn center(&self, index: usize) -> f64 {
        self.origin + (index as f64 + 0.5) * self.bin_width
    }

    /// Probability-weighted bin center. Mirror-image bins are paired so a
    /// symmetric distribution yields the grid midpoint exactly.
    pub fn expected_value(&self, dist: &DVector<f64>) -> f64 {
        let m = self.m_states;
        let half = m as f64 / 2.0;
        let offset: f64 = (0..m / 2)
            .map(|j| (half - (j as f64 + 0.5)) * (dist[m - 1 - j] - dist[j]))
            .sum();
        self.origin + half * self.bin_width + self.bin_width * offset
    }
}

/// Maps each per-step increment of `history.positions` to its bin index.
pub fn discretize(history: &ObservationHistory, grid: &StateGrid) -> Result<Vec<usize>> {
    history
        .increments()
        .into_iter()
        .enumerate()
        .map(|(k, value)| {
            grid.index_of(value)
                .ok_or(Error::OutOfRange { index: k, value })
        })
        .collect()
}

/// Estimates one transition matrix per lag. Entry `[from][to]` of the lag-`i`
/// matrix counts pairs `(seq[t - i], seq[t])`, Laplace-smoothed by `alpha`.
/// Rows never visited are uniform.
pub fn estimate_transition_matrices(
    seq: &[usize],
    m_states: usize,
    order: usize,
    alpha: f64,
) -> Result<Vec<DMatrix<f64>>> {
    if order == 0 {
        return Err(Error::domain("Markov order must be at least 1"));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::domain(format!(
            "smoothing must be non-negative, got {alpha}"
        )));
    }
    if seq.len() <= order {
        return Err(Error::Estimation(format!(
            "sequence of length {} has no transitions at lag {order}",
            seq.len()
        )));
    }
    if let Some(&bad) = seq.iter().find(|&&s| s >= m_states) {
        return Err(Error::domain(format!("state {bad} outside 0..{m_states}")));
    }
    let matrices = (1..=order)
        .map(|lag| {
            let mut counts = DMatrix::<f64>::zeros(m_states, m_states);
            for t in lag..seq.len() {
                counts[(seq[t - lag], seq[t])] += 1.0;
            }
            for mut row in counts.row_iter_mut() {
                let total = row.sum() + alpha * m_states as f64;
                if total > 0.0 {
                    row.iter_mut().for_each(|q| *q = (*q + alpha) / total);
                } else {
                    row.fill(1.0 / m_states as f64);
                }
            }
            counts
        })
        .collect();
    Ok(matrices)
}

/// Euclidean projection onto the probability simplex.
fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (k + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Per-transition lag likelihoods `Q_i[seq[t - i]][seq[t]]` for `t >= order`.
fn lag_likelihoods(seq: &[usize], q: &[DMatrix<f64>]) -> Vec<Vec<f64>> {
    let order = q.len();
    (order..seq.len())
        .map(|t| (0..order).map(|i| q[i][(seq[t - i - 1], seq[t])]).collect())
        .collect()
}

fn mean_nll(lambda: &[f64], terms: &[Vec<f64>]) -> f64 {
    let total: f64 = terms
        .iter()
        .map(|g| {
            let p: f64 = g.iter().zip(lambda).map(|(a, b)| a * b).sum();
            if p > 0.0 {
                -p.ln()
            } else {
                f64::INFINITY
            }
        })
        .sum();
    total / terms.len() as f64
}

fn mean_nll_gradient(lambda: &[f64], terms: &[Vec<f64>]) -> Vec<f64> {
    let mut grad = vec![0.0; lambda.len()];
    for g in terms {
        let p: f64 = g.iter().zip(lambda).map(|(a, b)| a * b).sum();
        for (gi, &qi) in grad.iter_mut().zip(g) {
            *gi -= qi / p;
        }
    }
    let n = terms.len() as f64;
    grad.iter_mut().for_each(|gi| *gi /= n);
    grad
}

/// Fits MTD lag weights by projected gradient descent on the mean one-step
/// negative log-likelihood, starting from uniform weights.
pub fn fit_lag_weights(seq: &[usize], q: &[DMatrix<f64>], order: usize) -> Result<Vec<f64>> {
    if order == 0 {
        return Err(Error::domain("Markov order must be at least 1"));
    }
    if q.len() != order {
        return Err(Error::domain(format!(
            "expected {order} transition matrices, got {}",
            q.len()
        )));
    }
    if order == 1 {
        return Ok(vec![1.0]);
    }
    if seq.len() <= order {
        return Err(Error::Estimation(
            "too few transitions to fit lag weights".into(),
        ));
    }
    let terms = lag_likelihoods(seq, q);
    let mut lambda = vec![1.0 / order as f64; order];
    let mut value = mean_nll(&lambda, &terms);
    if !value.is_finite() {
        return Err(Error::Estimation(
            "an observed transition has zero probability under every lag".into(),
        ));
    }
    let mut step = 1.0;
    for _ in 0..LAG_FIT_MAX_ITER {
        let grad = mean_nll_gradient(&lambda, &terms);
        let shifted: Vec<f64> = lambda.iter().zip(&grad).map(|(l, g)| l - g).collect();
        let stationarity: f64 = project_to_simplex(&shifted)
            .iter()
            .zip(&lambda)
            .map(|(p, l)| (p - l).powi(2))
            .sum::<f64>()
            .sqrt();
        if stationarity <= LAG_FIT_GRADIENT_TOL {
            break;
        }
        // Armijo backtracking along the projection arc
        let mut accepted = false;
        while step > 1e-20 {
            let trial: Vec<f64> = project_to_simplex(
                &lambda
                    .iter()
                    .zip(&grad)
                    .map(|(l, g)| l - step * g)
                    .collect::<Vec<_>>(),
            );
            let diff: Vec<f64> = trial.iter().zip(&lambda).map(|(t, l)| t - l).collect();
            let decrease: f64 = grad.iter().zip(&diff).map(|(g, d)| g * d).sum();
            let trial_value = mean_nll(&trial, &terms);
            if trial_value <= value + 1e-4 * decrease {
                lambda = trial;
                value = trial_value;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        step = (step * 2.0).min(1e6);
    }
    Ok(lambda)
}

/// An order-`n` mixture-transition-distribution chain over a [`StateGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovModel {
    pub grid: StateGrid,
    /// One row-stochastic matrix per lag, indexed `[from][to]`.
    pub q: Vec<DMatrix<f64>>,
    /// Lag weights on the probability simplex.
    pub lambda: Vec<f64>,
}

impl MarkovModel {
    pub fn fit(seq: &[usize], grid: StateGrid, order: usize, alpha: f64) -> Result<Self> {
        let q = estimate_transition_matrices(seq, grid.m_states, order, alpha)?;
        let lambda = fit_lag_weights(seq, &q, order)?;
        Ok(Self { grid, q, lambda })
    }

    pub fn order(&self) -> usize {
        self.q.len()
    }

    pub fn one_hot(&self, state: usize) -> DVector<f64> {
        let mut v = DVector::zeros(self.grid.m_states);
        v[state] = 1.0;
        v
    }
}

/// Rolls the chain forward `steps` times. `window` holds the last `n`
/// distributions in chronological order (most recent last); predictions are
/// fed back as history.
pub fn predict_distribution(
    model: &MarkovModel,
    window: &[DVector<f64>],
    steps: usize,
) -> Result<Vec<DVector<f64>>> {
    let order = model.order();
    if window.len() != order {
        return Err(Error::domain(format!(
            "window length {} does not match chain order {order}",
            window.len()
        )));
    }
    let m = model.grid.m_states;
    for dist in window {
        if dist.len() != m {
            return Err(Error::domain(format!(
                "distribution has {} entries, expected {m}",
                dist.len()
            )));
        }
        if dist.iter().any(|p| !(0.0..=1.0).contains(p))
            || (dist.sum() - 1.0).abs() > DISTRIBUTION_TOL
        {
            return Err(Error::domain(
                "window entries must be probability distributions",
            ));
        }
    }
    let mut history: Vec<DVector<f64>> = window.to_vec();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let len = history.len();
        let mut next = DVector::zeros(m);
        for (lag, (q, weight)) in model.q.iter().zip(&model.lambda).enumerate() {
            next += *weight * q.tr_mul(&history[len - 1 - lag]);
        }
        history.push(next.clone());
        out.push(next);
    }
    Ok(out)
}

/// Cubic longitudinal track `a t^3 + b t^2 + c t + d` (absolute time) at a
/// fixed lateral position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstaclePolynomial {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub y_s: f64,
    pub valid_until: f64,
}

impl ObstaclePolynomial {
    pub fn new(a: f64, b: f64, c: f64, d: f64, y_s: f64, valid_until: f64) -> Result<Self> {
        if [a, b, c, d, y_s].iter().any(|v| !v.is_finite()) || valid_until.is_nan() {
            return Err(Error::domain("obstacle polynomial must be finite"));
        }
        Ok(Self {
            a,
            b,
            c,
            d,
            y_s,
            valid_until,
        })
    }

    /// Constant-velocity track through `x_ref` at `t_ref`.
    pub fn constant_velocity(
        x_ref: f64,
        t_ref: f64,
        velocity: f64,
        y_s: f64,
        valid_until: f64,
    ) -> Result<Self> {
        Self::new(
            0.0,
            0.0,
            velocity,
            x_ref - velocity * t_ref,
            y_s,
            valid_until,
        )
    }

    pub fn position(&self, t: f64) -> f64 {
        self.d + t * (self.c + t * (self.b + t * self.a))
    }

    pub fn velocity(&self, t: f64) -> f64 {
        self.c + t * (2.0 * self.b + t * 3.0 * self.a)
    }

    pub fn acceleration(&self, t: f64) -> f64 {
        2.0 * self.b + 6.0 * self.a * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    /// Markov order `n` (lags mixed by the MTD model).
    pub order: usize,
    /// Laplace smoothing added to every transition count.
    pub smoothing: f64,
    /// Bin width of the change-of-displacement grid, expressed as an
    /// acceleration [m/s^2]; the grid width in metres is this times `dt_obs^2`.
    pub accel_resolution: f64,
    /// Overrides the automatically sized grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<StateGrid>,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            order: 2,
            smoothing: 1.0,
            accel_resolution: 0.5,
            grid: None,
        }
    }
}

impl PredictorConfig {
    /// Shortest history the Markov pipeline accepts; shorter ones fall back to
    /// constant velocity.
    pub fn min_history(&self) -> usize {
        self.order + 3
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub polynomial: ObstaclePolynomial,
    /// Set when the history was too short and a constant-velocity track was used.
    pub fallback: bool,
    pub model: Option<MarkovModel>,
    /// Predicted `(t, x)` points beyond the last observation.
    pub predicted: Vec<(f64, f64)>,
}

/// Least-squares cubic through `(t, x)` points, returned as absolute-time
/// coefficients `[a, b, c, d]`.
pub fn fit_cubic(points: &[(f64, f64)], t_ref: f64) -> Result<[f64; 4]> {
    if points.len() < 4 {
        return Err(Error::Estimation(format!(
            "cubic fit needs at least 4 points, got {}",
            points.len()
        )));
    }
    let scale = points
        .iter()
        .map(|(t, _)| (t - t_ref).abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let n = points.len();
    let x_ref = points[n - 1].1;
    let design = DMatrix::from_fn(n, 4, |r, c| ((points[r].0 - t_ref) / scale).powi(c as i32));
    let rhs = DVector::from_iterator(n, points.iter().map(|p| p.1 - x_ref));
    let beta = design
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Estimation(format!("cubic fit failed: {e}")))?;
    // coefficients of the polynomial in u = t - t_ref
    let al: Vec<f64> = (0..4).map(|k| beta[k] / scale.powi(k as i32)).collect();
    let r = t_ref;
    Ok([
        al[3],
        al[2] - 3.0 * al[3] * r,
        al[1] - 2.0 * al[2] * r + 3.0 * al[3] * r * r,
        x_ref + (al[0] - al[1] * r + al[2] * r * r - al[3] * r * r * r),
    ])
}

fn constant_velocity_fallback(history: &ObservationHistory, horizon: f64) -> Result<Prediction> {
    let n = history.len();
    let last = history.positions[n - 1];
    let velocity = if n >= 2 {
        (last - history.positions[0]) / ((n - 1) as f64 * history.dt_obs)
    } else {
        0.0
    };
    let polynomial = ObstaclePolynomial::constant_velocity(
        last,
        history.t_last,
        velocity,
        history.y_lat,
        history.t_last + horizon,
    )?;
    Ok(Prediction {
        polynomial,
        fallback: true,
        model: None,
        predicted: Vec::new(),
    })
}

/// Full prediction pipeline: discretize, fit the chain, roll it forward for
/// `horizon` seconds and fit the cubic track.
pub fn predict_trajectory(
    history: &ObservationHistory,
    config: &PredictorConfig,
    horizon: f64,
) -> Result<Prediction> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::domain(format!(
            "prediction horizon must be positive, got {horizon}"
        )));
    }
    if config.order == 0 {
        return Err(Error::domain("Markov order must be at least 1"));
    }
    if history.len() < config.min_history() {
        return constant_velocity_fallback(history, horizon);
    }
    let displacements = history.displacement_history();
    let changes = displacements.increments();
    let grid = match config.grid {
        Some(grid) => grid,
        None => StateGrid::centered(
            &changes,
            config.accel_resolution * history.dt_obs * history.dt_obs,
        )?,
    };
    let seq = discretize(&displacements, &grid)?;
    let model = MarkovModel::fit(&seq, grid, config.order, config.smoothing)?;

    let window: Vec<DVector<f64>> = seq[seq.len() - config.order..]
        .iter()
        .map(|&s| model.one_hot(s))
        .collect();
    let steps = (horizon / history.dt_obs - 1e-9).ceil() as usize;
    let distributions = predict_distribution(&model, &window, steps)?;

    let mut displacement = *displacements
        .positions
        .last()
        .expect("non-empty displacements");
    let mut position = *history.positions.last().expect("non-empty history");
    let predicted: Vec<(f64, f64)> = distributions
        .iter()
        .enumerate()
        .map(|(k, dist)| {
            displacement += grid.expected_value(dist);
            position += displacement;
            (history.t_last + (k + 1) as f64 * history.dt_obs, position)
        })
        .collect();

    let mut points: Vec<(f64, f64)> = (0..history.len())
        .map(|k| (history.time_of(k), history.positions[k]))
        .collect();
    points.extend_from_slice(&predicted);
    let [a, b, c, d] = fit_cubic(&points, history.t_last)?;
    let polynomial = ObstaclePolynomial::new(a, b, c, d, history.y_lat, history.t_last + horizon)?;
    Ok(Prediction {
        polynomial,
        fallback: false,
        model: Some(model),
        predicted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn history_from_increments(increments: &[f64]) -> ObservationHistory {
        let mut positions = vec![0.0];
        for inc in increments {
            positions.push(positions.last().unwrap() + inc);
        }
        ObservationHistory::new(0.1, positions, 0.0, 0.0).unwrap()
    }

    #[test]
    fn single_bin_occupancy() {
        let history = history_from_increments(&[0.9; 6]);
        let grid = StateGrid::new(1.0, 0.0, 3).unwrap();
        assert_eq!(discretize(&history, &grid).unwrap(), vec![0; 6]);
    }

    #[test]
    fn floor_mapping() {
        let history = history_from_increments(&[0.2, 1.3, 2.6]);
        let grid = StateGrid::new(1.0, 0.0, 3).unwrap();
        assert_eq!(discretize(&history, &grid).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn span_violation_names_sample() {
        let history = history_from_increments(&[0.5, -0.1]);
        let grid = StateGrid::new(1.0, 0.0, 3).unwrap();
        match discretize(&history, &grid) {
            Err(Error::OutOfRange { index, value }) => {
                assert_eq!(index, 1);
                assert_abs_diff_eq!(value, -0.1, epsilon = 1e-12);
            }
            other => panic!("expected range error, got {other:?}"),
        }
    }

    #[test]
    fn centered_grid_puts_mean_in_middle_bin() {
        let grid = StateGrid::centered(&[-0.02; 5], 0.005).unwrap();
        assert_eq!(grid.m_states % 2, 1);
        let mid = grid.m_states / 2;
        assert_eq!(grid.index_of(-0.02), Some(mid));
        assert_abs_diff_eq!(grid.center(mid), -0.02, epsilon = 1e-15);
        let spread = StateGrid::centered(&[0.0, 1.0], 0.1).unwrap();
        assert!(spread.index_of(-0.24).is_some() && spread.index_of(1.24).is_some());
    }

    #[test]
    fn deterministic_alternation() {
        let q = estimate_transition_matrices(&[0, 1, 0, 1, 0], 2, 1, 0.0).unwrap();
        assert_eq!(q[0], DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn laplace_smoothing_on_unseen_row() {
        let q = estimate_transition_matrices(&[0; 6], 2, 1, 1.0).unwrap();
        assert_abs_diff_eq!(q[0][(0, 0)], 6.0 / 7.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q[0][(0, 1)], 1.0 / 7.0, epsilon = 1e-15);
        assert_eq!(q[0][(1, 0)], 0.5);
        assert_eq!(q[0][(1, 1)], 0.5);
    }

    #[test]
    fn estimation_needs_transitions() {
        assert!(matches!(
            estimate_transition_matrices(&[0, 1], 2, 2, 1.0),
            Err(Error::Estimation(_))
        ));
        assert!(matches!(
            estimate_transition_matrices(&[0, 1, 0], 2, 0, 1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn single_lag_weight() {
        let q = estimate_transition_matrices(&[0, 1, 1, 0], 2, 1, 1.0).unwrap();
        assert_eq!(fit_lag_weights(&[0, 1, 1, 0], &q, 1).unwrap(), vec![1.0]);
        assert!(matches!(
            fit_lag_weights(&[0, 1], &[], 0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn identical_lags_keep_initialization() {
        let q = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.7, 0.3]);
        let seq = [0, 0, 1, 1, 0, 1, 0, 0, 1];
        let lambda = fit_lag_weights(&seq, &[q.clone(), q.clone(), q], 3).unwrap();
        for l in lambda {
            assert_eq!(l, 1.0 / 3.0);
        }
    }

    #[test]
    fn simplex_projection() {
        let p = project_to_simplex(&[0.5, 0.5]);
        assert_eq!(p, vec![0.5, 0.5]);
        let p = project_to_simplex(&[2.0, 0.0, -1.0]);
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        let p = project_to_simplex(&[0.4, 0.3, 0.1]);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert!(p.iter().all(|&x| x >= 0.0));
    }

    fn two_state_model(q: Vec<DMatrix<f64>>, lambda: Vec<f64>) -> MarkovModel {
        MarkovModel {
            grid: StateGrid::new(1.0, 0.0, 2).unwrap(),
            q,
            lambda,
        }
    }

    #[test]
    fn identity_chain_is_absorbing() {
        let single = two_state_model(vec![DMatrix::identity(2, 2)], vec![1.0]);
        for start in 0..2 {
            let out = predict_distribution(&single, &[single.one_hot(start)], 5).unwrap();
            for dist in out {
                assert_eq!(dist, single.one_hot(start));
            }
        }
        let lagged = two_state_model(vec![DMatrix::identity(2, 2); 2], vec![1.0, 0.0]);
        let out =
            predict_distribution(&lagged, &[lagged.one_hot(0), lagged.one_hot(1)], 4).unwrap();
        for dist in out {
            assert_eq!(dist, lagged.one_hot(1));
        }
    }

    #[test]
    fn hand_rolled_mixture() {
        let q1 = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.3, 0.7]);
        let q2 = DMatrix::from_row_slice(2, 2, &[0.2, 0.8, 0.6, 0.4]);
        let model = two_state_model(vec![q1, q2], vec![0.5, 0.5]);
        let out = predict_distribution(&model, &[model.one_hot(1), model.one_hot(0)], 3).unwrap();
        // x_t[j] = 0.5 sum_k q1[k][j] x_{t-1}[k] + 0.5 sum_k q2[k][j] x_{t-2}[k]
        let step = |a: [f64; 2], b: [f64; 2]| {
            [
                0.5 * (0.9 * a[0] + 0.3 * a[1]) + 0.5 * (0.2 * b[0] + 0.6 * b[1]),
                0.5 * (0.1 * a[0] + 0.7 * a[1]) + 0.5 * (0.8 * b[0] + 0.4 * b[1]),
            ]
        };
        let x1 = step([1.0, 0.0], [0.0, 1.0]);
        let x2 = step(x1, [1.0, 0.0]);
        let x3 = step(x2, x1);
        assert_abs_diff_eq!(x1[0], 0.75, epsilon = 1e-15);
        for (got, want) in out.iter().zip([x1, x2, x3]) {
            assert_abs_diff_eq!(got[0], want[0], epsilon = 1e-15);
            assert_abs_diff_eq!(got[1], want[1], epsilon = 1e-15);
        }
    }

    #[test]
    fn period_two_alternation() {
        let model = two_state_model(
            vec![DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])],
            vec![1.0],
        );
        let out = predict_distribution(&model, &[model.one_hot(0)], 2).unwrap();
        assert_eq!(out[0].as_slice(), &[0.0, 1.0]);
        assert_eq!(out[1].as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn window_length_must_match_order() {
        let model = two_state_model(vec![DMatrix::identity(2, 2); 2], vec![0.5, 0.5]);
        assert!(matches!(
            predict_distribution(&model, &[model.one_hot(0)], 1),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn stationary_history_predicts_standstill() {
        let history = ObservationHistory::new(0.1, vec![42.0; 20], 1.75, 0.0).unwrap();
        let prediction = predict_trajectory(&history, &PredictorConfig::default(), 5.0).unwrap();
        let p = prediction.polynomial;
        assert!(!prediction.fallback);
        assert_eq!((p.a, p.b, p.c), (0.0, 0.0, 0.0));
        assert_eq!(p.d, 42.0);
    }

    #[test]
    fn short_history_falls_back_to_constant_velocity() {
        let history = ObservationHistory::new(0.1, vec![-15.3, -15.0], 1.75, 0.0).unwrap();
        let prediction = predict_trajectory(&history, &PredictorConfig::default(), 5.0).unwrap();
        assert!(prediction.fallback);
        let p = prediction.polynomial;
        assert_eq!((p.a, p.b), (0.0, 0.0));
        assert_abs_diff_eq!(p.c, 3.0, epsilon = 1e-12);
        assert_eq!(p.d, -15.0);
        assert_eq!(p.valid_until, 5.0);
    }

    #[test]
    fn rejects_non_positive_horizon() {
        let history = ObservationHistory::new(0.1, vec![0.0; 10], 0.0, 0.0).unwrap();
        assert!(predict_trajectory(&history, &PredictorConfig::default(), 0.0).is_err());
    }

    #[test]
    fn cubic_fit_recovers_exact_cubic_off_origin() {
        let truth = |t: f64| 0.1 * t * t * t - 0.5 * t * t + 3.0 * t - 7.0;
        let points: Vec<(f64, f64)> = (0..40)
            .map(|k| 10.0 + 0.1 * k as f64)
            .map(|t| (t, truth(t)))
            .collect();
        let [a, b, c, d] = fit_cubic(&points, 12.0).unwrap();
        assert_abs_diff_eq!(a, 0.1, epsilon = 1e-9);
        assert_abs_diff_eq!(b, -0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(c, 3.0, epsilon = 1e-7);
        assert_abs_diff_eq!(d, -7.0, epsilon = 1e-6);
    }

    fn simulate_chain(p: &DMatrix<f64>, len: usize, seed: u64) -> Vec<usize> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut seq = vec![0];
        for _ in 1..len {
            let from = *seq.last().unwrap();
            let draw: f64 = rng.gen();
            let mut acc = 0.0;
            let mut next = p.ncols() - 1;
            for j in 0..p.ncols() {
                acc += p[(from, j)];
                if draw < acc {
                    next = j;
                    break;
                }
            }
            seq.push(next);
        }
        seq
    }

    fn generator() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[0.8, 0.1, 0.1, 0.2, 0.7, 0.1, 0.1, 0.2, 0.7])
    }

    #[test]
    fn recovers_generator_matrix() {
        let p = generator();
        let seq = simulate_chain(&p, 10_000, 7);
        let q = estimate_transition_matrices(&seq, 3, 1, 1.0).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert!((q[0][(r, c)] - p[(r, c)]).abs() <= 0.05, "entry ({r},{c})");
            }
        }
    }

    #[test]
    fn first_order_chain_prefers_first_lag() {
        let seq = simulate_chain(&generator(), 10_000, 11);
        let q = estimate_transition_matrices(&seq, 3, 2, 1.0).unwrap();
        let lambda = fit_lag_weights(&seq, &q, 2).unwrap();
        assert!(lambda[0] >= 0.9, "lambda = {lambda:?}");
        assert!((lambda.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn expected_value_of_symmetric_distribution_is_midpoint() {
        let grid = StateGrid::new(0.25, -0.625, 5).unwrap();
        let dist = DVector::from_vec(vec![0.1, 0.2, 0.4, 0.2, 0.1]);
        assert_eq!(grid.expected_value(&dist), 0.0);
        let point = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_abs_diff_eq!(grid.expected_value(&point), grid.center(3), epsilon = 1e-15);
    }

    fn kinematic_history(x_end: f64, v_end: f64, accel: f64, duration: f64) -> ObservationHistory {
        let dt = 0.1;
        let n = (duration / dt).round() as usize;
        let positions = (0..=n)
            .map(|k| {
                let tau = (k as f64 - n as f64) * dt;
                x_end + v_end * tau + 0.5 * accel * tau * tau
            })
            .collect();
        ObservationHistory::new(dt, positions, 1.75, 0.0).unwrap()
    }

    #[test]
    fn constant_velocity_history() {
        let history = kinematic_history(-15.0, 18.0, 0.0, 3.0);
        let p = predict_trajectory(&history, &PredictorConfig::default(), 5.0)
            .unwrap()
            .polynomial;
        assert!(p.a.abs() <= 1e-6 && p.b.abs() <= 1e-6, "{p:?}");
        assert!((p.c - 18.0).abs() <= 0.2);
        assert!((p.d + 15.0).abs() <= 0.2);
        assert_eq!(p.y_s, 1.75);
    }

    #[test]
    fn constant_deceleration_history() {
        let history = kinematic_history(-15.0, 20.0, -2.0, 3.0);
        let p = predict_trajectory(&history, &PredictorConfig::default(), 5.0)
            .unwrap()
            .polynomial;
        let accel = p.acceleration(0.0);
        assert!((accel + 2.0).abs() <= 0.3, "acceleration {accel}");
    }

    #[test]
    fn pipeline_agrees_with_fallback_on_constant_velocity() {
        let history = kinematic_history(-15.0, 18.0, 0.0, 3.0);
        let full = predict_trajectory(&history, &PredictorConfig::default(), 5.0).unwrap();
        let fallback = constant_velocity_fallback(&history, 5.0).unwrap();
        assert!(!full.fallback && fallback.fallback);
        assert!((full.polynomial.c - fallback.polynomial.c).abs() <= 1e-3);
        assert!((full.polynomial.d - fallback.polynomial.d).abs() <= 0.1);
    }

    #[test]
    fn prediction_is_bit_deterministic() {
        let history = kinematic_history(-15.0, 13.0, 2.0, 3.0);
        let a = predict_trajectory(&history, &PredictorConfig::default(), 5.0).unwrap();
        let b = predict_trajectory(&history, &PredictorConfig::default(), 5.0).unwrap();
        assert_eq!(a.polynomial, b.polynomial);
    }

    proptest::proptest! {
        #[test]
        fn markov_invariants(seq in proptest::collection::vec(0usize..4, 6..80), order in 1usize..4) {
            let model = MarkovModel::fit(&seq, StateGrid::new(1.0, 0.0, 4).unwrap(), order, 1.0).unwrap();
            for q in &model.q {
                for row in q.row_iter() {
                    proptest::prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
                    proptest::prop_assert!(row.iter().all(|&x| x >= 0.0));
                }
            }
            proptest::prop_assert!((model.lambda.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
            proptest::prop_assert!(model.lambda.iter().all(|&l| l >= -1e-12));
            let window: Vec<_> = seq[seq.len() - order..].iter().map(|&s| model.one_hot(s)).collect();
            for dist in predict_distribution(&model, &window, 30).unwrap() {
                proptest::prop_assert!((dist.sum() - 1.0).abs() <= 1e-10);
            }
        }
    }
}
