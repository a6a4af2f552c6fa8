//! Memory-guided sequence modeling.
//!
//! An entity's feature stream `v^t` is smoothed by an exponential moving
//! average memory `M^{t+1} = (1 - λ) M^t + λ v^t`. The current feature is gated
//! by an MLP, concatenated with the previous feature, and attended against
//! the memory to produce the enhanced feature.
//!
//! The analytics half of this module covers the bias/variance behaviour of
//! that memory under the noise model `v^t = v + t δ + ε^t`, `ε^t ~ N(0, Σ)`:
//!
//! * stationary variance `λ Σ / (2 - λ)` (≈ `λ Σ / 2` for small λ),
//! * steady-state lag `-δ / λ` under constant drift,
//! * the admissible lower bound `λ ≥ ‖δ‖ / ε` for a bias tolerance `ε`,
//! * the total error `‖δ‖² / λ² + λ Σ̄ / 2` and its minimiser
//!   `λ* = (4 ‖δ‖² / Σ̄)^{1/3}`.
//!
//! [`simulate_memory`] is a Monte-Carlo oracle for all of the above. Σ is
//! diagonal throughout; where a scalar is needed, Σ̄ is the mean of the
//! diagonal.
//!
//! A cruder fixed-point argument gives a steady-state bias of `-δ` rather than
//! `-δ/λ`; it ignores how the memory keeps trailing a moving target and is not
//! used here.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{
    attention, ensure_finite, ensure_width, mlp_forward, norm, norm_sq, sigmoid, Matrix,
    MlpParams, RngStream,
};

/// Feature noise and drift model for a single entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub base_feature: Vec<f64>,
    /// Per-coordinate variance (diagonal of Σ).
    pub sigma_diag: Vec<f64>,
    /// Constant per-step feature change.
    pub drift: Vec<f64>,
}

impl NoiseModel {
    pub fn new(base_feature: Vec<f64>, sigma_diag: Vec<f64>, drift: Vec<f64>) -> Result<Self> {
        let model = NoiseModel {
            base_feature,
            sigma_diag,
            drift,
        };
        model.validate()?;
        Ok(model)
    }

    /// Zero base feature with isotropic variance and uniform drift.
    pub fn isotropic(width: usize, sigma: f64, drift: f64) -> Result<Self> {
        NoiseModel::new(vec![0.0; width], vec![sigma; width], vec![drift; width])
    }

    pub fn width(&self) -> usize {
        self.base_feature.len()
    }

    /// Σ̄, the mean of the variance diagonal.
    pub fn sigma_mean(&self) -> f64 {
        if self.sigma_diag.is_empty() {
            0.0
        } else {
            self.sigma_diag.iter().sum::<f64>() / self.sigma_diag.len() as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.base_feature.len();
        ensure_width("NoiseModel sigma_diag", &self.sigma_diag, d)?;
        ensure_width("NoiseModel drift", &self.drift, d)?;
        for part in [&self.base_feature, &self.sigma_diag, &self.drift] {
            ensure_finite("NoiseModel", part)?;
        }
        if self.sigma_diag.iter().any(|&s| s < 0.0) {
            return Err(Error::InvalidInput("NoiseModel: negative variance".into()));
        }
        Ok(())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::Domain(format!("lambda {lambda} outside [0, 1]")))
    }
}

fn check_positive_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("lambda must be positive, got {lambda}")))
    }
}

/// Per-entity EMA memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryState {
    pub memory: Vec<f64>,
    pub lambda: f64,
    pub step: u64,
    pub prev_feature: Option<Vec<f64>>,
}

impl MemoryState {
    /// Zero-initialised memory.
    pub fn new(width: usize, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(MemoryState {
            memory: vec![0.0; width],
            lambda,
            step: 0,
            prev_feature: None,
        })
    }

    pub fn width(&self) -> usize {
        self.memory.len()
    }

    /// `M ← (1 - λ) M + λ v`, advancing the step counter.
    pub fn update(&mut self, feature: &[f64]) -> Result<()> {
        check_lambda(self.lambda)?;
        ensure_width("memory_update", feature, self.memory.len())?;
        ensure_finite("memory_update", feature)?;
        let keep = 1.0 - self.lambda;
        for (m, v) in self.memory.iter_mut().zip(feature) {
            *m = keep * *m + self.lambda * v;
        }
        self.step += 1;
        self.prev_feature = Some(feature.to_vec());
        Ok(())
    }
}

/// Functional form of [`MemoryState::update`].
pub fn memory_update(state: &MemoryState, feature: &[f64]) -> Result<MemoryState> {
    let mut next = state.clone();
    next.update(feature)?;
    Ok(next)
}

/// Gate weights `sigmoid(MLP(v))`, each in (0, 1).
pub fn adaptive_weights(params: &MlpParams, feature: &[f64]) -> Result<Vec<f64>> {
    sigmoid(&mlp_forward(params, feature)?)
}

/// `(W ⊙ v_t) ∥ v_prev`.
pub fn gated_concat(current: &[f64], previous: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    let d = current.len();
    ensure_width("gated_concat previous", previous, d)?;
    ensure_width("gated_concat weights", weights, d)?;
    let mut out: Vec<f64> = current.iter().zip(weights).map(|(v, w)| v * w).collect();
    out.extend_from_slice(previous);
    Ok(out)
}

/// Attention of the projected gated feature over a memory bank.
///
/// `proj` maps the `2d`-wide gated feature to width `d`; `keys` holds one
/// memory row per bank slot and `values` the matching value rows.
pub fn enhance(gated: &[f64], keys: &Matrix, values: &Matrix, proj: &Matrix) -> Result<Vec<f64>> {
    if proj.rows() != keys.cols() {
        return Err(Error::shape("enhance projection rows", keys.cols(), proj.rows()));
    }
    let query = proj.matvec(gated)?;
    let q = Matrix::from_vec(1, query.len(), query)?;
    let out = attention(&q, keys, values)?;
    Ok(out.row(0).to_vec())
}

/// Full per-entity memory module: gate, concat, attention and memory update.
///
/// The bank holds the current memory followed by up to `bank_depth - 1`
/// earlier snapshots. The current memory row is paired with the current
/// feature as its value; older rows act as their own values.
#[derive(Debug, Clone)]
pub struct MgsmCell {
    gate: MlpParams,
    proj: Matrix,
    state: MemoryState,
    history: VecDeque<Vec<f64>>,
    bank_depth: usize,
}

impl MgsmCell {
    pub fn new(gate: MlpParams, proj: Matrix, lambda: f64, bank_depth: usize) -> Result<Self> {
        gate.validate()?;
        let d = gate.width();
        if proj.rows() != d || proj.cols() != 2 * d {
            return Err(Error::shape(
                "MgsmCell projection",
                format!("{d}x{}", 2 * d),
                format!("{}x{}", proj.rows(), proj.cols()),
            ));
        }
        if bank_depth == 0 {
            return Err(Error::InvalidInput("bank depth must be at least 1".into()));
        }
        Ok(MgsmCell {
            gate,
            proj,
            state: MemoryState::new(d, lambda)?,
            history: VecDeque::new(),
            bank_depth,
        })
    }

    /// Seeded gate and projection.
    pub fn seeded(width: usize, lambda: f64, bank_depth: usize, rng: &mut RngStream) -> Result<Self> {
        let gate = MlpParams::seeded(width, rng);
        let scale = 1.0 / ((2 * width).max(1) as f64).sqrt();
        let proj = Matrix::random(width, 2 * width, scale, rng);
        MgsmCell::new(gate, proj, lambda, bank_depth)
    }

    pub fn state(&self) -> &MemoryState {
        &self.state
    }

    /// Processes one frame's feature and returns the enhanced feature.
    pub fn step(&mut self, feature: &[f64]) -> Result<Vec<f64>> {
        ensure_width("MgsmCell::step", feature, self.state.width())?;
        // First frame: the current feature stands in for the missing previous one.
        let previous = self
            .state
            .prev_feature
            .clone()
            .unwrap_or_else(|| feature.to_vec());
        let weights = adaptive_weights(&self.gate, feature)?;
        let gated = gated_concat(feature, &previous, &weights)?;

        let mut key_rows = vec![self.state.memory.clone()];
        let mut value_rows = vec![feature.to_vec()];
        for snap in &self.history {
            key_rows.push(snap.clone());
            value_rows.push(snap.clone());
        }
        let enhanced = enhance(
            &gated,
            &Matrix::from_rows(&key_rows)?,
            &Matrix::from_rows(&value_rows)?,
            &self.proj,
        )?;

        if self.bank_depth > 1 {
            self.history.push_front(self.state.memory.clone());
            self.history.truncate(self.bank_depth - 1);
        }
        self.state.update(feature)?;
        Ok(enhanced)
    }
}

/// Exact stationary variance `λ Σ / (2 - λ)` per coordinate.
pub fn stationary_variance(lambda: f64, sigma_diag: &[f64]) -> Result<Vec<f64>> {
    check_positive_lambda(lambda)?;
    check_lambda(lambda)?;
    Ok(sigma_diag.iter().map(|s| lambda * s / (2.0 - lambda)).collect())
}

/// Small-λ approximation `λ Σ / 2`.
pub fn stationary_variance_approx(lambda: f64, sigma_diag: &[f64]) -> Result<Vec<f64>> {
    check_positive_lambda(lambda)?;
    check_lambda(lambda)?;
    Ok(sigma_diag.iter().map(|s| lambda * s / 2.0).collect())
}

/// Long-run `M^t - v^t` under constant drift: `-δ / λ`.
pub fn steady_state_bias(drift: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_positive_lambda(lambda)?;
    Ok(drift.iter().map(|d| -d / lambda).collect())
}

/// Smallest λ keeping the steady-state bias norm within `tolerance`: `‖δ‖ / ε`.
pub fn lambda_lower_bound(drift: &[f64], tolerance: f64) -> Result<f64> {
    if !(tolerance > 0.0 && tolerance.is_finite()) {
        return Err(Error::Domain(format!(
            "bias tolerance must be positive, got {tolerance}"
        )));
    }
    Ok(norm(drift) / tolerance)
}

/// Analytic (and optionally empirical) bias/variance decomposition at one λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSweepRow {
    pub lambda: f64,
    /// `‖δ‖² / λ²`
    pub bias_sq: f64,
    /// `λ Σ̄ / 2`
    pub variance: f64,
    pub total: f64,
    pub empirical: Option<EmpiricalError>,
}

/// Monte-Carlo counterpart of a [`LambdaSweepRow`], measured on the tail window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalError {
    pub bias_sq: f64,
    pub variance: f64,
    pub total: f64,
}

fn total_error_from_norm_sq(lambda: f64, drift_norm_sq: f64, sigma: f64) -> Result<LambdaSweepRow> {
    check_positive_lambda(lambda)?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("scalar variance must be positive, got {sigma}")));
    }
    let bias_sq = drift_norm_sq / (lambda * lambda);
    let variance = lambda * sigma / 2.0;
    Ok(LambdaSweepRow {
        lambda,
        bias_sq,
        variance,
        total: bias_sq + variance,
        empirical: None,
    })
}

/// `‖δ‖² / λ² + λ Σ̄ / 2`.
pub fn total_error(lambda: f64, drift: &[f64], sigma_mean: f64) -> Result<LambdaSweepRow> {
    total_error_from_norm_sq(lambda, norm_sq(drift), sigma_mean)
}

/// Minimiser of [`total_error`] over λ > 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalLambda {
    pub lambda: f64,
    /// False when the optimum lies above 1 and is not a usable update rate.
    pub admissible: bool,
}

/// `(4 ‖δ‖² / Σ̄)^{1/3}`. Zero drift is an error; see [`Error::DegenerateDrift`].
pub fn optimal_lambda(drift: &[f64], sigma_mean: f64) -> Result<OptimalLambda> {
    optimal_lambda_from_norm_sq(norm_sq(drift), sigma_mean)
}

pub fn optimal_lambda_from_norm_sq(drift_norm_sq: f64, sigma_mean: f64) -> Result<OptimalLambda> {
    if !(sigma_mean > 0.0 && sigma_mean.is_finite()) {
        return Err(Error::Domain(format!(
            "scalar variance must be positive, got {sigma_mean}"
        )));
    }
    if drift_norm_sq == 0.0 {
        return Err(Error::DegenerateDrift);
    }
    let lambda = (4.0 * drift_norm_sq / sigma_mean).cbrt();
    Ok(OptimalLambda {
        lambda,
        admissible: lambda <= 1.0,
    })
}

/// Per-step cross-trial statistics of a Monte-Carlo memory simulation.
///
/// Index `t - 1` of each series holds the statistics of `M^t`, `t = 1..=steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub lambda: f64,
    pub steps: usize,
    pub trials: usize,
    pub seed: u64,
    pub mean: Vec<Vec<f64>>,
    pub variance: Vec<Vec<f64>>,
    /// Cross-trial mean of `M^t - v^t` with `v^t = v + t δ`.
    pub bias: Vec<Vec<f64>>,
}

impl SimulationTrace {
    pub fn width(&self) -> usize {
        self.mean.first().map_or(0, Vec::len)
    }

    /// The final 20% of steps (at least one).
    pub fn tail_window(&self) -> std::ops::Range<usize> {
        let len = (self.steps / 5).max(1);
        self.steps - len..self.steps
    }

    fn window_mean(&self, series: &[Vec<f64>]) -> Vec<f64> {
        let window = self.tail_window();
        let n = window.len() as f64;
        let mut acc = vec![0.0; self.width()];
        for row in &series[window] {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        acc.into_iter().map(|a| a / n).collect()
    }

    /// Per-coordinate variance averaged over the tail window.
    pub fn tail_variance(&self) -> Vec<f64> {
        self.window_mean(&self.variance)
    }

    /// Per-coordinate mean bias averaged over the tail window.
    pub fn tail_bias(&self) -> Vec<f64> {
        self.window_mean(&self.bias)
    }

    pub fn final_bias(&self) -> &[f64] {
        self.bias.last().map_or(&[], Vec::as_slice)
    }

    /// `‖tail bias‖²` plus the coordinate-mean tail variance.
    pub fn empirical_error(&self) -> EmpiricalError {
        let bias_sq = norm_sq(&self.tail_bias());
        let var = self.tail_variance();
        let variance = if var.is_empty() {
            0.0
        } else {
            var.iter().sum::<f64>() / var.len() as f64
        };
        EmpiricalError {
            bias_sq,
            variance,
            total: bias_sq + variance,
        }
    }
}

const TRIAL_CHUNK: usize = 32;
const STEP_BLOCK: usize = 2048;

struct Chain {
    rng: RngStream,
    memory: Vec<f64>,
}

/// Runs `trials` independent EMA chains
/// `M^{t+1} = (1 - λ) M^t + λ (v + t δ + ε^t)` from `M^0 = v`.
///
/// Trial `i` draws from stream `i` of `seed`. Chunks of trials run in
/// parallel and are merged in trial order, so the trace does not depend on
/// the thread count.
pub fn simulate_memory(
    model: &NoiseModel,
    lambda: f64,
    steps: usize,
    trials: usize,
    seed: u64,
) -> Result<SimulationTrace> {
    model.validate()?;
    check_lambda(lambda)?;
    if steps == 0 || trials == 0 {
        return Err(Error::InvalidInput("steps and trials must be at least 1".into()));
    }
    let d = model.width();
    let sd: Vec<f64> = model.sigma_diag.iter().map(|s| s.sqrt()).collect();
    let keep = 1.0 - lambda;

    let mut chunks: Vec<Vec<Chain>> = (0..trials)
        .collect::<Vec<_>>()
        .chunks(TRIAL_CHUNK)
        .map(|ids| {
            ids.iter()
                .map(|&i| Chain {
                    rng: RngStream::derive(seed, i as u64),
                    memory: model.base_feature.clone(),
                })
                .collect()
        })
        .collect();

    let mut mean = Vec::with_capacity(steps);
    let mut variance = Vec::with_capacity(steps);
    let mut bias = Vec::with_capacity(steps);
    let n = trials as f64;

    let mut start = 0;
    while start < steps {
        let len = STEP_BLOCK.min(steps - start);
        // Drift-only path of the observation before and after each update.
        let mut observed = Vec::with_capacity(len * d);
        let mut target = Vec::with_capacity(len * d);
        for s in 0..len {
            let t = (start + s) as f64;
            for (&base, &drift) in model.base_feature.iter().zip(&model.drift) {
                observed.push(base + t * drift);
                target.push(base + (t + 1.0) * drift);
            }
        }
        let partials: Vec<Vec<f64>> = chunks
            .par_iter_mut()
            .map(|chunk| {
                // Layout: [step][coord][sum, sumsq]
                let mut acc = vec![0.0; len * d * 2];
                for chain in chunk.iter_mut() {
                    let steps = acc
                        .chunks_exact_mut(2 * d)
                        .zip(observed.chunks_exact(d).zip(target.chunks_exact(d)));
                    for (row, (obs, tgt)) in steps {
                        let coords = row
                            .chunks_exact_mut(2)
                            .zip(chain.memory.iter_mut())
                            .zip(sd.iter().zip(obs).zip(tgt));
                        for ((cell, m), ((&sd, &obs), &tgt)) in coords {
                            let noise = if sd > 0.0 { sd * chain.rng.standard_normal() } else { 0.0 };
                            *m = keep * *m + lambda * (obs + noise);
                            let dev = *m - tgt;
                            cell[0] += dev;
                            cell[1] += dev * dev;
                        }
                    }
                }
                acc
            })
            .collect();

        let mut total = vec![0.0; len * d * 2];
        for part in &partials {
            for (t, p) in total.iter_mut().zip(part) {
                *t += p;
            }
        }
        for s in 0..len {
            let t = (start + s + 1) as f64;
            let mut m_row = Vec::with_capacity(d);
            let mut v_row = Vec::with_capacity(d);
            let mut b_row = Vec::with_capacity(d);
            for k in 0..d {
                let sum = total[(s * d + k) * 2];
                let sumsq = total[(s * d + k) * 2 + 1];
                let dev_mean = sum / n;
                let var = if trials > 1 {
                    ((sumsq - sum * dev_mean) / (n - 1.0)).max(0.0)
                } else {
                    0.0
                };
                b_row.push(dev_mean);
                m_row.push(model.base_feature[k] + t * model.drift[k] + dev_mean);
                v_row.push(var);
            }
            mean.push(m_row);
            variance.push(v_row);
            bias.push(b_row);
        }
        start += len;
    }

    Ok(SimulationTrace {
        lambda,
        steps,
        trials,
        seed,
        mean,
        variance,
        bias,
    })
}

/// Result of [`sweep_lambda`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSweep {
    pub rows: Vec<LambdaSweepRow>,
    pub analytic_argmin: f64,
    pub empirical_argmin: Option<f64>,
}

/// Evaluates the analytic decomposition on every grid point and, when
/// `trials > 0`, the Monte-Carlo counterpart from [`simulate_memory`].
///
/// All grid points share `seed`, so empirical differences between rows come
/// from λ alone.
pub fn sweep_lambda(
    grid: &[f64],
    model: &NoiseModel,
    steps: usize,
    trials: usize,
    seed: u64,
) -> Result<LambdaSweep> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    model.validate()?;
    let drift_norm_sq = norm_sq(&model.drift);
    let sigma = model.sigma_mean();
    let mut rows = Vec::with_capacity(grid.len());
    for &lambda in grid {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::Domain(format!("grid value {lambda} outside (0, 1]")));
        }
        let mut row = total_error_from_norm_sq(lambda, drift_norm_sq, sigma)?;
        if trials > 0 {
            let trace = simulate_memory(model, lambda, steps, trials, seed)?;
            row.empirical = Some(trace.empirical_error());
        }
        rows.push(row);
    }
    let analytic_argmin = argmin_by(&rows, |r| Some(r.total)).expect("non-empty grid");
    let empirical_argmin = argmin_by(&rows, |r| r.empirical.as_ref().map(|e| e.total));
    Ok(LambdaSweep {
        rows,
        analytic_argmin,
        empirical_argmin,
    })
}

fn argmin_by(rows: &[LambdaSweepRow], key: impl Fn(&LambdaSweepRow) -> Option<f64>) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for row in rows {
        let value = key(row)?;
        match best {
            Some((_, b)) if value >= b => {}
            _ => best = Some((row.lambda, value)),
        }
    }
    best.map(|(lambda, _)| lambda)
}

/// The seven update rates used for the λ ablation.
pub const ABLATION_GRID: [f64; 7] = [0.005, 0.01, 0.02, 0.04, 0.06, 0.08, 0.1];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gated_concat_cases() {
        assert_eq!(
            gated_concat(&[2.0, 4.0], &[1.0, 1.0], &[0.5, 0.25]).unwrap(),
            vec![1.0, 1.0, 1.0, 1.0]
        );
        assert_eq!(
            gated_concat(&[2.0, 4.0], &[7.0, 8.0], &[1.0, 1.0]).unwrap(),
            vec![2.0, 4.0, 7.0, 8.0]
        );
        assert_eq!(
            gated_concat(&[2.0, 4.0], &[7.0, 8.0], &[0.0, 0.0]).unwrap(),
            vec![0.0, 0.0, 7.0, 8.0]
        );
        assert!(gated_concat(&[2.0], &[7.0, 8.0], &[0.0]).is_err());
    }

    #[test]
    fn adaptive_weights_zero_params_are_half() {
        let w = adaptive_weights(&MlpParams::zeros(4), &[1.0, -3.0, 2.0, 0.0]).unwrap();
        assert_eq!(w, vec![0.5; 4]);
    }

    #[test]
    fn adaptive_weights_in_unit_interval() {
        let mut rng = RngStream::new(3);
        let params = MlpParams::seeded(6, &mut rng);
        for _ in 0..100 {
            let v: Vec<f64> = (0..6).map(|_| 10.0 * rng.standard_normal()).collect();
            for w in adaptive_weights(&params, &v).unwrap() {
                assert!(w > 0.0 && w < 1.0);
            }
        }
    }

    #[test]
    fn adaptive_weights_seeded_fixture() {
        let mut rng = RngStream::new(11);
        let params = MlpParams::seeded(2, &mut rng);
        let v = [0.5, -1.5];
        let w1 = params.w1.to_rows();
        let w2 = params.w2.to_rows();
        let s = |x: f64| 1.0 / (1.0 + (-x).exp());
        let h: Vec<f64> = (0..2).map(|i| s(w1[i][0] * v[0] + w1[i][1] * v[1])).collect();
        let want: Vec<f64> = (0..2).map(|i| s(w2[i][0] * h[0] + w2[i][1] * h[1])).collect();
        let got = adaptive_weights(&params, &v).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn memory_update_cases() {
        let s = MemoryState::new(1, 0.04).unwrap();
        let next = memory_update(&s, &[1.0]).unwrap();
        assert!((next.memory[0] - 0.04).abs() < 1e-15);
        assert_eq!(next.step, 1);
        assert_eq!(next.prev_feature, Some(vec![1.0]));

        let mut frozen = MemoryState::new(2, 0.0).unwrap();
        frozen.memory = vec![3.0, -1.0];
        assert_eq!(memory_update(&frozen, &[9.0, 9.0]).unwrap().memory, vec![3.0, -1.0]);

        let mut memoryless = MemoryState::new(2, 1.0).unwrap();
        memoryless.memory = vec![3.0, -1.0];
        assert_eq!(memory_update(&memoryless, &[9.0, 8.0]).unwrap().memory, vec![9.0, 8.0]);

        assert!(MemoryState::new(1, 1.5).is_err());
        assert!(memory_update(&s, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn enhance_single_row_returns_value() {
        let proj = Matrix::from_rows(&[[1.0, 0.0, 0.5, 0.0], [0.0, 1.0, 0.0, 0.5]]).unwrap();
        let keys = Matrix::from_rows(&[[0.3, 0.9]]).unwrap();
        let values = Matrix::from_rows(&[[4.0, -2.0]]).unwrap();
        let out = enhance(&[1.0, 2.0, 3.0, 4.0], &keys, &values, &proj).unwrap();
        assert_eq!(out, vec![4.0, -2.0]);
    }

    #[test]
    fn enhance_identical_rows_average() {
        let proj = Matrix::from_rows(&[[1.0, 0.0, 0.5, 0.0], [0.0, 1.0, 0.0, 0.5]]).unwrap();
        let keys = Matrix::from_rows(&[[0.3, 0.9], [0.3, 0.9]]).unwrap();
        let values = Matrix::from_rows(&[[4.0, -2.0], [2.0, 0.0]]).unwrap();
        let out = enhance(&[1.0, 2.0, 3.0, 4.0], &keys, &values, &proj).unwrap();
        assert!((out[0] - 3.0).abs() < 1e-15 && (out[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn enhance_two_row_bank_closed_form() {
        // q = proj · v* = [1, 0]; scores = (k · q) / sqrt(2).
        let proj = Matrix::from_rows(&[[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]]).unwrap();
        let gated = [1.0, 5.0, 5.0, 5.0];
        let sqrt2 = 2f64.sqrt();
        let keys = Matrix::from_rows(&[[sqrt2 * 2f64.ln(), 7.0], [0.0, -3.0]]).unwrap();
        let values = Matrix::from_rows(&[[3.0, 0.0], [0.0, 3.0]]).unwrap();
        let out = enhance(&gated, &keys, &values, &proj).unwrap();
        assert!((out[0] - 2.0).abs() < 1e-14);
        assert!((out[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cell_first_frame_uses_current_as_previous() {
        let mut rng = RngStream::new(5);
        let mut cell = MgsmCell::seeded(3, 0.04, 1, &mut rng).unwrap();
        let v = [0.2, -0.4, 1.0];
        let out = cell.step(&v).unwrap();
        // Depth-one bank: single key, value = current feature.
        assert_eq!(out, v.to_vec());
        assert_eq!(cell.state().step, 1);
        assert_eq!(cell.state().prev_feature.as_deref(), Some(&v[..]));
        for (m, x) in cell.state().memory.iter().zip(v) {
            assert!((m - 0.04 * x).abs() < 1e-15);
        }
    }

    #[test]
    fn cell_bank_depth_mixes_history() {
        let mut rng = RngStream::new(5);
        let mut cell = MgsmCell::seeded(2, 0.5, 3, &mut rng).unwrap();
        let a = cell.step(&[1.0, 1.0]).unwrap();
        assert_eq!(a, vec![1.0, 1.0]);
        let b = cell.step(&[3.0, -1.0]).unwrap();
        // Second frame sees one historical row (the zero initial memory).
        assert_ne!(b, vec![3.0, -1.0]);
        assert!(cell.history.len() <= 2);
    }

    #[test]
    fn stationary_variance_cases() {
        assert_eq!(stationary_variance(1.0, &[2.5]).unwrap(), vec![2.5]);
        assert!(stationary_variance(1e-12, &[1.0]).unwrap()[0] < 1e-11);
        let v = stationary_variance(0.04, &[1.0]).unwrap()[0];
        assert!((v - 0.04 / 1.96).abs() < 1e-16);
        assert_eq!(stationary_variance_approx(0.04, &[1.0]).unwrap(), vec![0.02]);
        assert!(stationary_variance(0.0, &[1.0]).is_err());
    }

    #[test]
    fn steady_state_bias_cases() {
        assert_eq!(steady_state_bias(&[0.0, 0.0], 0.3).unwrap(), vec![0.0, 0.0]);
        assert_eq!(steady_state_bias(&[0.2], 1.0).unwrap(), vec![-0.2]);
        assert!((steady_state_bias(&[0.01], 0.04).unwrap()[0] + 0.25).abs() < 1e-15);
        assert!(steady_state_bias(&[0.01], 0.0).is_err());
    }

    #[test]
    fn lambda_lower_bound_cases() {
        assert!((lambda_lower_bound(&[0.01], 0.25).unwrap() - 0.04).abs() < 1e-15);
        assert_eq!(lambda_lower_bound(&[0.0, 0.0], 0.25).unwrap(), 0.0);
        let a = lambda_lower_bound(&[0.003, 0.004], 0.1).unwrap();
        let b = lambda_lower_bound(&[0.006, 0.008], 0.1).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-15);
        assert!(lambda_lower_bound(&[0.1], 0.0).is_err());
    }

    #[test]
    fn total_error_cases() {
        // ‖δ‖² = 1.6e-5 spread over 8 coordinates.
        let delta = vec![(2e-6f64).sqrt(); 8];
        let row = total_error(0.04, &delta, 1.0).unwrap();
        assert!((row.bias_sq - 0.01).abs() < 1e-12);
        assert!((row.variance - 0.02).abs() < 1e-15);
        assert!((row.total - 0.03).abs() < 1e-12);
        assert_eq!(row.total, row.bias_sq + row.variance);

        let pure = total_error(0.3, &[0.0], 2.0).unwrap();
        assert_eq!(pure.total, 0.3);
        assert_eq!(total_error(1.0, &[0.0], 0.8).unwrap().total, 0.4);
        assert!(total_error(0.0, &[0.0], 1.0).is_err());
    }

    #[test]
    fn optimal_lambda_cases() {
        let opt = optimal_lambda_from_norm_sq(1.6e-5, 1.0).unwrap();
        assert!((opt.lambda - 0.04).abs() < 1e-9);
        assert!(opt.admissible);
        let doubled = optimal_lambda_from_norm_sq(8.0 * 1.6e-5, 1.0).unwrap();
        assert!((doubled.lambda - 2.0 * opt.lambda).abs() < 1e-12);
        let big = optimal_lambda_from_norm_sq(2.0, 1.0).unwrap();
        assert!((big.lambda - 2.0).abs() < 1e-12);
        assert!(!big.admissible);
        assert!(matches!(optimal_lambda(&[0.0], 1.0), Err(Error::DegenerateDrift)));
    }

    #[test]
    fn optimal_lambda_beats_grid_search() {
        // Oracle: brute-force grid over (0, 1] with step 1e-4.
        let norm_sq = 1.6e-5;
        let mut best = (0.0, f64::INFINITY);
        for i in 1..=10_000 {
            let l = i as f64 * 1e-4;
            let total = norm_sq / (l * l) + l / 2.0;
            if total < best.1 {
                best = (l, total);
            }
        }
        assert!((best.0 - 0.04).abs() < 1e-4 + 1e-12);
        let opt = optimal_lambda_from_norm_sq(norm_sq, 1.0).unwrap();
        assert!((opt.lambda - best.0).abs() <= 1e-4);
    }

    #[test]
    fn simulate_deterministic_chain() {
        let model = NoiseModel::isotropic(3, 0.0, 0.0).unwrap();
        let trace = simulate_memory(&model, 0.1, 50, 4, 1).unwrap();
        assert!(trace.variance.iter().flatten().all(|&v| v == 0.0));
        assert!(trace.bias.iter().flatten().all(|&b| b == 0.0));
    }

    #[test]
    fn simulate_memoryless_variance_matches_sigma() {
        let model = NoiseModel::isotropic(2, 2.0, 0.0).unwrap();
        let trace = simulate_memory(&model, 1.0, 200, 2000, 9).unwrap();
        for v in trace.tail_variance() {
            assert!((v - 2.0).abs() / 2.0 < 0.05, "{v}");
        }
    }

    #[test]
    fn simulate_is_deterministic_and_seed_sensitive() {
        let model = NoiseModel::isotropic(2, 1.0, 0.01).unwrap();
        let a = simulate_memory(&model, 0.2, 100, 70, 4).unwrap();
        let b = simulate_memory(&model, 0.2, 100, 70, 4).unwrap();
        let c = simulate_memory(&model, 0.2, 100, 70, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn simulate_rejects_bad_input() {
        let model = NoiseModel::isotropic(2, 1.0, 0.0).unwrap();
        assert!(simulate_memory(&model, 0.2, 0, 1, 0).is_err());
        assert!(simulate_memory(&model, 0.2, 1, 0, 0).is_err());
        assert!(simulate_memory(&model, 1.2, 1, 1, 0).is_err());
    }

    #[test]
    fn sweep_singleton_and_errors() {
        let model = NoiseModel::isotropic(1, 1.0, 0.004).unwrap();
        let opt = optimal_lambda(&model.drift, 1.0).unwrap().lambda;
        let sweep = sweep_lambda(&[opt], &model, 10, 0, 0).unwrap();
        assert_eq!(sweep.analytic_argmin, opt);
        assert_eq!(sweep.empirical_argmin, None);
        assert!(matches!(sweep_lambda(&[], &model, 10, 0, 0), Err(Error::EmptyGrid)));
        assert!(sweep_lambda(&[0.0], &model, 10, 0, 0).is_err());
    }

    #[test]
    fn sweep_analytic_argmin_on_ablation_grid() {
        let delta = vec![(2e-6f64).sqrt(); 8];
        let model = NoiseModel::new(vec![0.0; 8], vec![1.0; 8], delta).unwrap();
        let sweep = sweep_lambda(&ABLATION_GRID, &model, 10, 0, 0).unwrap();
        // Oracle: evaluate ‖δ‖²/λ² + λ/2 directly on the grid.
        let mut best = (0.0, f64::INFINITY);
        for &l in &ABLATION_GRID {
            let t = 1.6e-5 / (l * l) + l / 2.0;
            if t < best.1 {
                best = (l, t);
            }
        }
        assert_eq!(best.0, 0.04);
        assert_eq!(sweep.analytic_argmin, 0.04);
    }
}
