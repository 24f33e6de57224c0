//! Feature-based schedulers: a small feedforward network over the one-hot
//! covariates with sigmoid activations throughout, trained by hand-written
//! backpropagation.
//!
//! The output unit lies in (0, 1) and is mapped to a duration through the
//! training data's min–max scaler, so every prediction falls strictly
//! inside `(lo, hi)`. Two training targets are provided:
//!
//! * SEO: regress durations under absolute error, then schedule each job
//!   with its predicted duration.
//! * IEO: minimise the scheduling surrogate directly. Here the predictions
//!   act as allowances inside the waiting-time recursion, and the gradient
//!   flows back through that recursion.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{total_cost, CostParams};
use crate::datagen::{EncodedFeatures, FeatureDataset, Scaler, ENCODED_WIDTH};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::{derive_seed, seeded};

/// Hidden widths accepted by [`TrainConfig`]; 0 means no hidden layer.
pub const HIDDEN_WIDTHS: [usize; 7] = [4, 8, 16, 32, 64, 128, 256];

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer { inputs, outputs, weights: vec![0.0; inputs * outputs], biases: vec![0.0; outputs] }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

/// Dense sigmoid network plus the scaler that maps its output to durations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub scaler: Scaler,
}

impl Network {
    /// All-zero parameters for layer sizes such as `[41, 16, 1]`.
    pub fn zeros(sizes: &[usize], scaler: Scaler) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) || *sizes.last().unwrap() != 1 {
            return Err(Error::invalid(format!("bad layer sizes {sizes:?}")));
        }
        let layers = sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(Network { layers, scaler })
    }

    /// Xavier-uniform weights, zero biases.
    pub fn xavier(sizes: &[usize], scaler: Scaler, seed: u64) -> Result<Self> {
        let mut net = Network::zeros(sizes, scaler)?;
        let mut rng = seeded(seed);
        for layer in &mut net.layers {
            let bound = 6f64.sqrt() / ((layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.layers.last().unwrap().outputs != 1 {
            return Err(Error::invalid("network must end in a single output"));
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(Error::invalid(format!("layer {k} has inconsistent shapes")));
            }
            if k > 0 && self.layers[k - 1].outputs != l.inputs {
                return Err(Error::invalid(format!("layer {k} input width does not match layer {}", k - 1)));
            }
        }
        if !self.params().all(|p| p.is_finite()) {
            return Err(Error::invalid("non-finite parameter"));
        }
        Scaler::new(self.scaler.lo, self.scaler.hi)?;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Parameters in gradient order: per layer, weights then biases.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    fn scratch(&self) -> Vec<Vec<f64>> {
        self.layers.iter().map(|l| vec![0.0; l.outputs]).collect()
    }

    /// Fills `acts[l]` with the post-sigmoid output of layer `l` and returns
    /// the network output. Zero inputs are skipped, which makes the one-hot
    /// first layer cheap.
    fn forward_into(&self, x: &[f64], acts: &mut [Vec<f64>]) -> f64 {
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, rest) = acts.split_at_mut(l);
            let input: &[f64] = if l == 0 { x } else { &before[l - 1] };
            let out = &mut rest[0];
            out.copy_from_slice(&layer.biases);
            for (i, &xi) in input.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (o, z) in out.iter_mut().enumerate() {
                    *z += layer.weights[o * layer.inputs + i] * xi;
                }
            }
            out.iter_mut().for_each(|z| *z = sigmoid(*z));
        }
        acts.last().unwrap()[0]
    }

    /// Output in (0, 1).
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.layers[0].inputs {
            return Err(Error::LengthMismatch { expected: self.layers[0].inputs, actual: x.len() });
        }
        let mut acts = self.scratch();
        Ok(self.forward_into(x, &mut acts))
    }

    /// Prediction in duration units.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.scaler.unscale(self.forward(x)?))
    }

    /// Per-period predictions for every record of `ds`.
    pub fn predict_dataset(&self, ds: &FeatureDataset) -> Result<PredictedSchedule> {
        self.check_input_width(ENCODED_WIDTH)?;
        let enc = crate::datagen::encode(ds);
        let mut acts = self.scratch();
        let preds: Vec<f64> =
            (0..enc.rows).map(|r| self.scaler.unscale(self.forward_into(enc.row(r), &mut acts))).collect();
        Ok(PredictedSchedule { periods: preds.chunks(ds.jobs()).map(<[f64]>::to_vec).collect() })
    }

    fn check_input_width(&self, width: usize) -> Result<()> {
        if self.layers[0].inputs != width {
            return Err(Error::LengthMismatch { expected: width, actual: self.layers[0].inputs });
        }
        Ok(())
    }

    /// Adds `dz` (loss derivative w.r.t. the output pre-activation) times the
    /// parameter Jacobian into `grad`.
    fn backward_into(&self, x: &[f64], acts: &[Vec<f64>], dz: f64, deltas: &mut [Vec<f64>], grad: &mut [f64]) {
        let last = self.layers.len() - 1;
        deltas[last][0] = dz;
        let mut offset = self.param_count();
        for l in (0..=last).rev() {
            let layer = &self.layers[l];
            offset -= layer.param_count();
            let input: &[f64] = if l == 0 { x } else { &acts[l - 1] };
            let (gw, gb) = grad[offset..offset + layer.param_count()].split_at_mut(layer.weights.len());
            let (lower, upper) = deltas.split_at_mut(l);
            let delta = &upper[0];
            for (o, &d) in delta.iter().enumerate() {
                gb[o] += d;
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for (g, &xi) in row.iter_mut().zip(input) {
                    if xi != 0.0 {
                        *g += d * xi;
                    }
                }
            }
            if l > 0 {
                let prev = &mut lower[l - 1];
                for (i, p) in prev.iter_mut().enumerate() {
                    let a = input[i];
                    let back: f64 = delta.iter().enumerate().map(|(o, &d)| layer.weights[o * layer.inputs + i] * d).sum();
                    *p = back * a * (1.0 - a);
                }
            }
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let net: Network = serde_json::from_str(&fs::read_to_string(path)?)?;
        net.validate()?;
        Ok(net)
    }
}

/// Unscaled allowances, one vector of `n` per period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedSchedule {
    pub periods: Vec<Vec<f64>>,
}

impl PredictedSchedule {
    /// Mean realised scheduling cost of each period's schedule against that
    /// period's durations.
    pub fn evaluate(&self, actual: &[Vec<f64>], costs: &CostParams) -> Result<f64> {
        if self.periods.len() != actual.len() || self.periods.is_empty() {
            return Err(Error::LengthMismatch { expected: actual.len(), actual: self.periods.len() });
        }
        let mut sum = 0.0;
        for (s, p) in self.periods.iter().zip(actual) {
            if s.len() != p.len() {
                return Err(Error::LengthMismatch { expected: p.len(), actual: s.len() });
            }
            sum += total_cost(s, p, costs);
        }
        Ok(sum / actual.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Loss {
    /// Mean absolute error.
    Mad,
    /// Mean pinball loss at level `q`.
    Pinball { q: f64 },
    /// Squared hinge on under- and over-prediction, weighted by cW and cI.
    L2Surrogate,
    /// Scheduling cost of using the predictions as allowances.
    AspSurrogate,
}

impl Loss {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Loss::Pinball { q } if !(q > 0.0 && q < 1.0) => Err(Error::invalid(format!("pinball level {q} not in (0,1)"))),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Loss::Mad => "mad",
            Loss::Pinball { .. } => "pinball",
            Loss::L2Surrogate => "l2-surrogate",
            Loss::AspSurrogate => "asp-surrogate",
        }
    }

    /// Divisor turning the summed per-period terms into the loss value.
    fn normaliser(&self, periods: usize, n: usize, costs: &CostParams) -> f64 {
        match self {
            Loss::AspSurrogate => 2.0 * periods as f64 * (costs.wait_cost + costs.idle_cost),
            _ => (periods * n) as f64,
        }
    }

    /// Un-normalised loss of one period; adds the derivative w.r.t. each
    /// prediction into `dpred`, scaled by `weight`.
    fn period_terms(&self, actual: &[f64], pred: &[f64], costs: &CostParams, weight: f64, dpred: &mut [f64]) -> f64 {
        let (cw, ci) = (costs.wait_cost, costs.idle_cost);
        match *self {
            Loss::Mad => actual
                .iter()
                .zip(pred)
                .zip(dpred.iter_mut())
                .map(|((&p, &ph), d)| {
                    *d += weight * sign(ph - p);
                    (p - ph).abs()
                })
                .sum(),
            Loss::Pinball { q } => actual
                .iter()
                .zip(pred)
                .zip(dpred.iter_mut())
                .map(|((&p, &ph), d)| {
                    *d += weight * pinball_derivative(p, ph, q);
                    pinball_value(p, ph, q)
                })
                .sum(),
            Loss::L2Surrogate => actual
                .iter()
                .zip(pred)
                .zip(dpred.iter_mut())
                .map(|((&p, &ph), d)| {
                    let e = p - ph;
                    if e > 0.0 {
                        *d -= weight * cw * e;
                        0.5 * cw * e * e
                    } else {
                        *d -= weight * ci * e;
                        0.5 * ci * e * e
                    }
                })
                .sum(),
            Loss::AspSurrogate => asp_period(actual, pred, costs, weight, dpred),
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn pinball_value(actual: f64, predicted: f64, q: f64) -> f64 {
    if actual >= predicted {
        q * (actual - predicted)
    } else {
        (1.0 - q) * (predicted - actual)
    }
}

fn pinball_derivative(actual: f64, predicted: f64, q: f64) -> f64 {
    if actual > predicted {
        -q
    } else if actual < predicted {
        1.0 - q
    } else {
        0.0
    }
}

fn check_level(q: f64) -> Result<()> {
    Loss::Pinball { q }.validate()
}

pub fn pinball_loss(actual: f64, predicted: f64, q: f64) -> Result<f64> {
    check_level(q)?;
    Ok(pinball_value(actual, predicted, q))
}

/// Derivative w.r.t. the prediction; 0 at a tie.
pub fn pinball_gradient(actual: f64, predicted: f64, q: f64) -> Result<f64> {
    check_level(q)?;
    Ok(pinball_derivative(actual, predicted, q))
}

/// Scheduling terms of one period with predictions as allowances.
/// `a_i = W_{i-1} + p_{i-1} - p̂_{i-1}` gives the wait `a_i⁺` and the idle
/// time `(-a_i)⁺`; the backward sweep carries `∂/∂a` through `W_i = a_i⁺`.
fn asp_period(actual: &[f64], pred: &[f64], costs: &CostParams, weight: f64, dpred: &mut [f64]) -> f64 {
    let n = actual.len();
    let (cw, ci) = (costs.wait_cost, costs.idle_cost);
    let mut args = [0.0f64; 64];
    let mut heap;
    let a: &mut [f64] = if n <= args.len() {
        &mut args[..n]
    } else {
        heap = vec![0.0; n];
        &mut heap
    };
    let mut w = 0.0;
    let mut value = 0.0;
    for i in 1..n {
        a[i] = w + actual[i - 1] - pred[i - 1];
        w = a[i].max(0.0);
        value += cw * w + ci * (-a[i]).max(0.0);
    }
    let mut downstream = 0.0;
    for i in (1..n).rev() {
        let da = if a[i] > 0.0 {
            cw + downstream
        } else if a[i] < 0.0 {
            -ci
        } else {
            0.0
        };
        dpred[i - 1] -= weight * da;
        downstream = da;
    }
    value
}

fn check_periods(actual: &[f64], predicted: &[f64], n: usize) -> Result<usize> {
    if actual.len() != predicted.len() {
        return Err(Error::LengthMismatch { expected: actual.len(), actual: predicted.len() });
    }
    if n == 0 || actual.is_empty() || !actual.len().is_multiple_of(n) {
        return Err(Error::invalid(format!("{} values do not form periods of {n}", actual.len())));
    }
    Ok(actual.len() / n)
}

/// Loss value and its gradient w.r.t. every prediction. `actual` and
/// `predicted` are periods of `n` jobs laid end to end.
pub fn loss_and_gradient(loss: &Loss, actual: &[f64], predicted: &[f64], n: usize, costs: &CostParams) -> Result<(f64, Vec<f64>)> {
    loss.validate()?;
    let periods = check_periods(actual, predicted, n)?;
    let norm = loss.normaliser(periods, n, costs);
    let mut grad = vec![0.0; actual.len()];
    let mut value = 0.0;
    for ((p, ph), d) in actual.chunks(n).zip(predicted.chunks(n)).zip(grad.chunks_mut(n)) {
        value += loss.period_terms(p, ph, costs, 1.0 / norm, d);
    }
    Ok((value / norm, grad))
}

pub fn asp_surrogate_loss(actual: &[f64], predicted: &[f64], n: usize, costs: &CostParams) -> Result<(f64, Vec<f64>)> {
    loss_and_gradient(&Loss::AspSurrogate, actual, predicted, n, costs)
}

pub fn l2_surrogate_loss(actual: &[f64], predicted: &[f64], costs: &CostParams) -> Result<(f64, Vec<f64>)> {
    loss_and_gradient(&Loss::L2Surrogate, actual, predicted, 1, costs)
}

/// Encoded features and durations grouped into periods.
#[derive(Debug, Clone)]
pub struct PeriodData {
    pub jobs: usize,
    pub features: EncodedFeatures,
    pub durations: Vec<f64>,
}

impl PeriodData {
    pub fn from_dataset(ds: &FeatureDataset) -> Self {
        PeriodData { jobs: ds.jobs(), features: crate::datagen::encode(ds), durations: ds.durations() }
    }

    pub fn periods(&self) -> usize {
        self.durations.len() / self.jobs
    }
}

/// Loss over the listed periods of `data` and its gradient w.r.t. all
/// parameters. Periods are processed in fixed chunks and reduced in order,
/// so the result does not depend on `exec`.
pub fn batch_gradient(
    net: &Network,
    data: &PeriodData,
    periods: &[usize],
    loss: &Loss,
    costs: &CostParams,
    exec: Exec,
) -> Result<(f64, Vec<f64>)> {
    net.check_input_width(ENCODED_WIDTH)?;
    loss.validate()?;
    if periods.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let n = data.jobs;
    let norm = loss.normaliser(periods.len(), n, costs);
    let width = net.scaler.width();
    let params = net.param_count();
    let parts = exec.map_chunks(periods, |chunk| {
        let mut grad = vec![0.0; params];
        let mut value = 0.0;
        let mut acts: Vec<Vec<Vec<f64>>> = (0..n).map(|_| net.scratch()).collect();
        let mut deltas = net.scratch();
        let mut out = vec![0.0; n];
        let mut pred = vec![0.0; n];
        let mut dpred = vec![0.0; n];
        for &t in chunk {
            for i in 0..n {
                out[i] = net.forward_into(data.features.row(t * n + i), &mut acts[i]);
                pred[i] = net.scaler.unscale(out[i]);
            }
            dpred.iter_mut().for_each(|d| *d = 0.0);
            let actual = &data.durations[t * n..(t + 1) * n];
            value += loss.period_terms(actual, &pred, costs, 1.0 / norm, &mut dpred);
            for i in 0..n {
                if dpred[i] != 0.0 {
                    let dz = dpred[i] * width * out[i] * (1.0 - out[i]);
                    net.backward_into(data.features.row(t * n + i), &acts[i], dz, &mut deltas, &mut grad);
                }
            }
        }
        (value, grad)
    });
    let mut value = 0.0;
    let mut grad = vec![0.0; params];
    for (v, g) in parts {
        value += v;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    let value = value / norm;
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericalBreakdown("non-finite loss or gradient".into()));
    }
    Ok((value, grad))
}

/// Loss over every period of `data`.
pub fn dataset_loss(net: &Network, data: &PeriodData, loss: &Loss, costs: &CostParams, exec: Exec) -> Result<f64> {
    let all: Vec<usize> = (0..data.periods()).collect();
    let n = data.jobs;
    net.check_input_width(ENCODED_WIDTH)?;
    loss.validate()?;
    let norm = loss.normaliser(all.len(), n, costs);
    let parts = exec.map_chunks(&all, |chunk| {
        let mut acts = net.scratch();
        let mut pred = vec![0.0; n];
        let mut sink = vec![0.0; n];
        chunk
            .iter()
            .map(|&t| {
                for (i, p) in pred.iter_mut().enumerate() {
                    *p = net.scaler.unscale(net.forward_into(data.features.row(t * n + i), &mut acts));
                }
                loss.period_terms(&data.durations[t * n..(t + 1) * n], &pred, costs, 0.0, &mut sink)
            })
            .sum::<f64>()
    });
    Ok(parts.into_iter().sum::<f64>() / norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// `lr / (1 + decay·epoch)`.
    InverseTime { decay: f64 },
    /// `lr · gamma^epoch`.
    Exponential { gamma: f64 },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::InverseTime { decay } => base / (1.0 + decay * epoch as f64),
            LrSchedule::Exponential { gamma } => base * gamma.powi(epoch as i32),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Hidden width; 0 gives a generalised linear model.
    pub hidden: usize,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub epochs: usize,
    /// Periods per mini-batch.
    pub batch_size: usize,
    pub seed: u64,
    pub costs: CostParams,
    pub loss: Loss,
    /// Share of training periods held back to pick the best epoch; 0 keeps
    /// the final parameters.
    #[serde(default)]
    pub validation_fraction: f64,
    #[serde(default)]
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 16,
            optimizer: Optimizer::Adam,
            learning_rate: 0.01,
            schedule: LrSchedule::Constant,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            costs: CostParams { wait_cost: 1.0, idle_cost: 1.0 },
            loss: Loss::Mad,
            validation_fraction: 0.0,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden != 0 && !HIDDEN_WIDTHS.contains(&self.hidden) {
            return Err(Error::invalid(format!("hidden width {} must be 0 or a power of two in 4..=256", self.hidden)));
        }
        // 0 is accepted as an explicit "no update" setting
        if !(self.learning_rate == 0.0 || (0.001..=0.1).contains(&self.learning_rate)) {
            return Err(Error::invalid(format!("learning rate {} outside [0.001, 0.1]", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        match self.schedule {
            LrSchedule::InverseTime { decay } if !(decay >= 0.0 && decay.is_finite()) => {
                return Err(Error::invalid("inverse-time decay must be non-negative"))
            }
            LrSchedule::Exponential { gamma } if !(gamma > 0.0 && gamma <= 1.0) => {
                return Err(Error::invalid("exponential gamma must lie in (0, 1]"))
            }
            _ => {}
        }
        if !(0.0..0.9).contains(&self.validation_fraction) {
            return Err(Error::invalid("validation fraction must lie in [0, 0.9)"));
        }
        CostParams::new(self.costs.wait_cost, self.costs.idle_cost)?;
        self.loss.validate()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        if self.hidden == 0 {
            vec![ENCODED_WIDTH, 1]
        } else {
            vec![ENCODED_WIDTH, self.hidden, 1]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    /// Training loss after the epoch.
    pub loss: f64,
    /// Loss on the held-back periods, when there are any.
    pub validation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub network: Network,
    pub trace: Vec<TraceRow>,
    /// Epoch whose parameters were returned (0 means the initial ones).
    pub best_epoch: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, net: &mut Network, grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, &g), m), v) in net.params_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Trains on `train`; the scaler is fit to its durations. With a positive
/// `validation_fraction` the held-back periods choose the best epoch.
pub fn train(train: &FeatureDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (fit_set, valid_set) = if cfg.validation_fraction > 0.0 {
        let (a, b) = train.split(1.0 - cfg.validation_fraction, derive_seed(cfg.seed, &[0x5eed]))?;
        (a, Some(b))
    } else {
        (train.clone(), None)
    };
    let data = PeriodData::from_dataset(&fit_set);
    let valid = valid_set.as_ref().map(PeriodData::from_dataset);
    let mut net = Network::xavier(&cfg.layer_sizes(), train.scaler(), cfg.seed)?;
    let mut adam = Adam { m: vec![0.0; net.param_count()], v: vec![0.0; net.param_count()], t: 0 };
    let mut order: Vec<usize> = (0..data.periods()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best = valid
        .as_ref()
        .map(|v| dataset_loss(&net, v, &cfg.loss, &cfg.costs, cfg.exec))
        .transpose()?
        .map(|v| (v, 0usize, net.clone()));

    for epoch in 1..=cfg.epochs {
        let lr = cfg.schedule.rate(cfg.learning_rate, epoch - 1);
        order.shuffle(&mut seeded(derive_seed(cfg.seed, &[epoch as u64])));
        for batch in order.chunks(cfg.batch_size) {
            let grad = match batch_gradient(&net, &data, batch, &cfg.loss, &cfg.costs, cfg.exec) {
                Ok((_, g)) => g,
                Err(Error::NumericalBreakdown(_)) => return Err(Error::Diverged { epoch, trace }),
                Err(e) => return Err(e),
            };
            if lr == 0.0 {
                continue;
            }
            match cfg.optimizer {
                Optimizer::Sgd => net.params_mut().zip(&grad).for_each(|(p, g)| *p -= lr * g),
                Optimizer::Adam => adam.step(&mut net, &grad, lr),
            }
        }
        let loss = dataset_loss(&net, &data, &cfg.loss, &cfg.costs, cfg.exec)?;
        let validation = valid.as_ref().map(|v| dataset_loss(&net, v, &cfg.loss, &cfg.costs, cfg.exec)).transpose()?;
        if !loss.is_finite() || validation.is_some_and(|v| !v.is_finite()) || !net.params().all(|p| p.is_finite()) {
            trace.push(TraceRow { epoch, loss, validation });
            return Err(Error::Diverged { epoch, trace });
        }
        trace.push(TraceRow { epoch, loss, validation });
        if let (Some(v), Some(b)) = (validation, best.as_mut()) {
            if v < b.0 {
                *b = (v, epoch, net.clone());
            }
        }
    }
    let (network, best_epoch) = match best {
        Some((_, e, n)) => (n, e),
        None => (net, cfg.epochs),
    };
    Ok(TrainOutcome { network, trace, best_epoch })
}

pub fn write_trace_csv(trace: &[TraceRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss", "validation_objective"])?;
    for r in trace {
        w.write_record([r.epoch.to_string(), r.loss.to_string(), r.validation.map(|v| v.to_string()).unwrap_or_default()])?;
    }
    w.flush()?;
    Ok(())
}

/// Predict-then-schedule: MAD regression, predictions used as allowances.
pub fn schedule_seo(train_set: &FeatureDataset, target: &FeatureDataset, cfg: &TrainConfig) -> Result<(PredictedSchedule, TrainOutcome)> {
    let cfg = TrainConfig { loss: Loss::Mad, ..cfg.clone() };
    let outcome = train(train_set, &cfg)?;
    Ok((outcome.network.predict_dataset(target)?, outcome))
}

/// Integrated training on the scheduling surrogate at `cfg.costs`.
pub fn schedule_ieo(train_set: &FeatureDataset, target: &FeatureDataset, cfg: &TrainConfig) -> Result<(PredictedSchedule, TrainOutcome)> {
    let cfg = TrainConfig { loss: Loss::AspSurrogate, ..cfg.clone() };
    let outcome = train(train_set, &cfg)?;
    Ok((outcome.network.predict_dataset(target)?, outcome))
}

/// One point of the hyperparameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub hidden: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
}

/// `{16, 64, 256} × {0.001, 0.01, 0.1} × {sgd, adam}`.
pub fn default_grid() -> Vec<GridPoint> {
    let mut grid = Vec::new();
    for hidden in [16, 64, 256] {
        for learning_rate in [0.001, 0.01, 0.1] {
            for optimizer in [Optimizer::Sgd, Optimizer::Adam] {
                grid.push(GridPoint { hidden, learning_rate, optimizer });
            }
        }
    }
    grid
}

/// Picks the grid point whose network has the lowest mean scheduling cost
/// on a period-level 80/20 split of `train_set`.
pub fn grid_search(train_set: &FeatureDataset, base: &TrainConfig, grid: &[GridPoint]) -> Result<(TrainConfig, f64)> {
    if grid.is_empty() {
        return Err(Error::invalid("empty hyperparameter grid"));
    }
    let (fit, valid) = train_set.split(0.8, derive_seed(base.seed, &[0x9e1d]))?;
    let actual = valid.duration_periods();
    let mut best: Option<(TrainConfig, f64)> = None;
    for point in grid {
        let cfg = TrainConfig {
            hidden: point.hidden,
            learning_rate: point.learning_rate,
            optimizer: point.optimizer,
            ..base.clone()
        };
        let objective = match train(&fit, &cfg) {
            Ok(out) => out.network.predict_dataset(&valid)?.evaluate(&actual, &cfg.costs)?,
            Err(Error::Diverged { .. }) => continue,
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|b| objective < b.1) {
            best = Some((cfg, objective));
        }
    }
    best.ok_or_else(|| Error::NumericalBreakdown("every grid point diverged".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, Covariates};
    use crate::distributions::Family;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{prop_assert, prop_assert_eq, prop_assume, proptest};

    fn unit_scaler() -> Scaler {
        Scaler::new(0.0, 1.0).unwrap()
    }

    fn costs(cw: f64, ci: f64) -> CostParams {
        CostParams::new(cw, ci).unwrap()
    }

    #[test]
    fn zero_network_outputs_one_half() {
        let net = Network::zeros(&[41, 8, 1], unit_scaler()).unwrap();
        let x = Covariates::new(1, 3, 2, 1).unwrap().encode();
        assert_eq!(net.forward(&x).unwrap(), 0.5);
        let mut acts = net.scratch();
        net.forward_into(&x, &mut acts);
        assert!(acts[0].iter().all(|&a| a == 0.5));
        assert!(net.forward(&[0.0; 40]).is_err());
    }

    #[test]
    fn hand_computed_two_two_one() {
        let mut net = Network::zeros(&[2, 2, 1], unit_scaler()).unwrap();
        net.layers[0].weights = vec![0.5, -1.0, 2.0, 0.25];
        net.layers[0].biases = vec![0.1, -0.2];
        net.layers[1].weights = vec![1.5, -0.5];
        net.layers[1].biases = vec![0.3];
        let x = [1.0, 2.0];
        let h1 = sigmoid(0.5 - 2.0 + 0.1);
        let h2 = sigmoid(2.0 + 0.5 - 0.2);
        let expected = sigmoid(1.5 * h1 - 0.5 * h2 + 0.3);
        assert_abs_diff_eq!(net.forward(&x).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn glm_is_sigmoid_of_active_coefficients() {
        let net = Network::xavier(&[41, 1], unit_scaler(), 3).unwrap();
        let c = Covariates::new(1, 7, 4, 2).unwrap();
        let z: f64 = c.active_columns().iter().map(|&k| net.layers[0].weights[k]).sum();
        assert_abs_diff_eq!(net.forward(&c.encode()).unwrap(), sigmoid(z), epsilon = 1e-15);
    }

    #[test]
    fn pinball_examples() {
        assert_eq!(pinball_loss(2.0, 2.0, 0.3).unwrap(), 0.0);
        assert_eq!(pinball_loss(2.0, 1.0, 0.75).unwrap(), 0.75);
        assert_eq!(pinball_loss(1.0, 2.0, 0.75).unwrap(), 0.25);
        assert_eq!(pinball_gradient(2.0, 1.0, 0.75).unwrap(), -0.75);
        assert_eq!(pinball_gradient(1.0, 2.0, 0.75).unwrap(), 0.25);
        assert_eq!(pinball_gradient(1.0, 1.0, 0.75).unwrap(), 0.0);
        assert!(pinball_loss(1.0, 1.0, 1.0).is_err());
        assert!(pinball_loss(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn pinball_constant_minimiser_scan() {
        let sample = [1.0, 2.0, 3.0, 4.0];
        let risk = |c: f64| sample.iter().map(|&p| pinball_value(p, c, 0.75)).sum::<f64>();
        let grid: Vec<f64> = (0..=500).map(|k| k as f64 / 100.0).collect();
        let best = grid.iter().map(|&c| risk(c)).fold(f64::INFINITY, f64::min);
        let argmin: Vec<f64> = grid.iter().copied().filter(|&c| risk(c) <= best + 1e-12).collect();
        assert_abs_diff_eq!(argmin[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(*argmin.last().unwrap(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn asp_surrogate_examples() {
        let (v, _) = asp_surrogate_loss(&[3.0, 5.0], &[2.0, 0.0], 2, &costs(1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        let p = [1.0, 2.5, 0.7, 3.0, 1.0, 1.0];
        let (v, g) = asp_surrogate_loss(&p, &p, 3, &costs(2.0, 3.0)).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
        assert!(asp_surrogate_loss(&[1.0, 2.0, 3.0], &[1.0, 2.0], 1, &costs(1.0, 1.0)).is_err());
        assert!(asp_surrogate_loss(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 2, &costs(1.0, 1.0)).is_err());
    }

    #[test]
    fn l2_surrogate_example() {
        let (v, g) = l2_surrogate_loss(&[3.0], &[2.0], &costs(2.0, 4.0)).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g[0], -2.0, epsilon = 1e-15);
        assert_eq!(l2_surrogate_loss(&[3.0], &[3.0], &costs(2.0, 4.0)).unwrap().0, 0.0);
    }

    #[test]
    fn prediction_gradients_match_finite_differences() {
        let mut rng = seeded(4);
        let losses = [Loss::Mad, Loss::Pinball { q: 0.3 }, Loss::L2Surrogate, Loss::AspSurrogate];
        for _ in 0..200 {
            let n = rng.random_range(2..6);
            let t = rng.random_range(1..4);
            let actual: Vec<f64> = (0..n * t).map(|_| rng.random_range(0.0..5.0)).collect();
            let pred: Vec<f64> = (0..n * t).map(|_| rng.random_range(0.0..5.0)).collect();
            let c = costs(rng.random_range(0.5..5.0), rng.random_range(0.5..5.0));
            for loss in &losses {
                let (_, g) = loss_and_gradient(loss, &actual, &pred, n, &c).unwrap();
                for k in 0..pred.len() {
                    let h = 1e-6;
                    let mut up = pred.clone();
                    up[k] += h;
                    let mut dn = pred.clone();
                    dn[k] -= h;
                    let fd = (loss_and_gradient(loss, &actual, &up, n, &c).unwrap().0
                        - loss_and_gradient(loss, &actual, &dn, n, &c).unwrap().0)
                        / (2.0 * h);
                    // random draws are away from kinks with overwhelming probability
                    assert!((fd - g[k]).abs() < 1e-6, "{loss:?} k={k}: {fd} vs {}", g[k]);
                }
            }
        }
    }

    fn small_data(seed: u64, n: usize, periods: usize) -> (FeatureDataset, PeriodData) {
        let ds = generate(Family::Normal, periods, n, seed, seed + 1).unwrap();
        let data = PeriodData::from_dataset(&ds);
        (ds, data)
    }

    fn kink_distance(net: &Network, data: &PeriodData, loss: &Loss) -> f64 {
        let n = data.jobs;
        let mut dist = f64::INFINITY;
        for t in 0..data.periods() {
            let pred: Vec<f64> = (0..n).map(|i| net.predict(data.features.row(t * n + i)).unwrap()).collect();
            let actual = &data.durations[t * n..(t + 1) * n];
            match loss {
                Loss::AspSurrogate => {
                    let mut w: f64 = 0.0;
                    for i in 1..n {
                        let a = w + actual[i - 1] - pred[i - 1];
                        dist = dist.min(a.abs());
                        w = a.max(0.0);
                    }
                }
                _ => actual.iter().zip(&pred).for_each(|(p, q)| dist = dist.min((p - q).abs())),
            }
        }
        dist
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let (ds, data) = small_data(5, 3, 6);
        let losses = [Loss::Mad, Loss::Pinball { q: 0.7 }, Loss::L2Surrogate, Loss::AspSurrogate];
        let c = costs(1.5, 3.0);
        let periods: Vec<usize> = (0..data.periods()).collect();
        for (k, loss) in losses.iter().enumerate() {
            let mut checked = 0;
            let mut seed = 100 * k as u64;
            while checked < 5 {
                seed += 1;
                let net = Network::xavier(&[41, 4, 1], ds.scaler(), seed).unwrap();
                if kink_distance(&net, &data, loss) < 1e-3 {
                    continue;
                }
                checked += 1;
                let (_, g) = batch_gradient(&net, &data, &periods, loss, &c, Exec::Sequential).unwrap();
                for j in 0..net.param_count() {
                    let h = 1e-6;
                    let mut up = net.clone();
                    *up.params_mut().nth(j).unwrap() += h;
                    let mut dn = net.clone();
                    *dn.params_mut().nth(j).unwrap() -= h;
                    let fd = (dataset_loss(&up, &data, loss, &c, Exec::Sequential).unwrap()
                        - dataset_loss(&dn, &data, loss, &c, Exec::Sequential).unwrap())
                        / (2.0 * h);
                    assert!((fd - g[j]).abs() <= 1e-4 * fd.abs().max(1e-5), "{loss:?} param {j}: {fd} vs {}", g[j]);
                }
            }
        }
    }

    #[test]
    fn zero_error_batch_has_zero_gradient() {
        let (ds, data) = small_data(9, 4, 3);
        let net = Network::xavier(&[41, 8, 1], ds.scaler(), 1).unwrap();
        let mut exact = data.clone();
        for r in 0..exact.durations.len() {
            exact.durations[r] = net.predict(exact.features.row(r)).unwrap();
        }
        for loss in [Loss::Mad, Loss::Pinball { q: 0.2 }, Loss::L2Surrogate, Loss::AspSurrogate] {
            let (v, g) = batch_gradient(&net, &exact, &[0, 1, 2], &loss, &costs(1.0, 2.0), Exec::Sequential).unwrap();
            assert_eq!(v, 0.0);
            assert!(g.iter().all(|&x| x == 0.0), "{loss:?}");
        }
    }

    #[test]
    fn sequential_and_parallel_batch_gradients_agree() {
        let (ds, data) = small_data(2, 5, 700);
        let net = Network::xavier(&[41, 16, 1], ds.scaler(), 8).unwrap();
        let all: Vec<usize> = (0..700).collect();
        let c = costs(2.0, 1.0);
        let a = batch_gradient(&net, &data, &all, &Loss::AspSurrogate, &c, Exec::Sequential).unwrap();
        let b = batch_gradient(&net, &data, &all, &Loss::AspSurrogate, &c, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let ds = generate(Family::Uniform, 20, 3, 1, 2).unwrap();
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 1, hidden: 8, ..TrainConfig::default() };
        let out = train(&ds, &cfg).unwrap();
        assert_eq!(out.network, Network::xavier(&[41, 8, 1], ds.scaler(), cfg.seed).unwrap());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let ds = generate(Family::Normal, 100, 4, 1, 2).unwrap();
        let cfg = TrainConfig { epochs: 20, hidden: 8, seed: 11, ..TrainConfig::default() };
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        assert_eq!(a.network, b.network);
        assert_eq!(a.trace, b.trace);
        assert!(a.trace.last().unwrap().loss < a.trace[0].loss);
        for sched in &a.network.predict_dataset(&ds).unwrap().periods {
            assert!(sched.iter().all(|&p| p > ds.scaler().lo && p < ds.scaler().hi));
        }
    }

    #[test]
    fn divergence_is_reported_with_trace() {
        let ds = generate(Family::Normal, 10, 3, 1, 2).unwrap();
        let mut net = Network::zeros(&[41, 4, 1], ds.scaler()).unwrap();
        net.layers[1].biases[0] = f64::NAN;
        let data = PeriodData::from_dataset(&ds);
        let r = batch_gradient(&net, &data, &[0], &Loss::Mad, &costs(1.0, 1.0), Exec::Sequential);
        assert!(matches!(r, Err(Error::NumericalBreakdown(_))));
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { hidden: 12, ..ok.clone() },
            TrainConfig { learning_rate: 0.5, ..ok.clone() },
            TrainConfig { epochs: 0, ..ok.clone() },
            TrainConfig { loss: Loss::Pinball { q: 1.5 }, ..ok.clone() },
            TrainConfig { schedule: LrSchedule::Exponential { gamma: 0.0 }, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        assert_eq!(LrSchedule::InverseTime { decay: 1.0 }.rate(0.1, 1), 0.05);
        assert_abs_diff_eq!(LrSchedule::Exponential { gamma: 0.5 }.rate(0.1, 2), 0.025);
    }

    #[test]
    fn identical_covariates_give_identical_predictions() {
        let ds = generate(Family::Logistic, 30, 3, 4, 5).unwrap();
        let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
        let (sched, _) = schedule_seo(&ds, &ds, &cfg).unwrap();
        let flat: Vec<f64> = sched.periods.concat();
        for (i, a) in ds.records().iter().enumerate() {
            for (j, b) in ds.records().iter().enumerate() {
                if a.covariates() == b.covariates() {
                    assert_eq!(flat[i], flat[j]);
                }
            }
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let net = Network::xavier(&[41, 16, 1], Scaler::new(0.3, 9.1).unwrap(), 3).unwrap();
        net.save_json(&path).unwrap();
        assert_eq!(Network::load_json(&path).unwrap(), net);
        let trace = vec![TraceRow { epoch: 1, loss: 0.5, validation: Some(0.6) }];
        write_trace_csv(&trace, &dir.path().join("trace.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        assert_eq!(text, "epoch,loss,validation_objective\n1,0.5,0.6\n");
    }

    #[test]
    fn evaluate_predicted_schedules() {
        let sched = PredictedSchedule { periods: vec![vec![1.0, 2.0], vec![3.0, 1.0]] };
        assert_eq!(sched.evaluate(&[vec![1.0, 2.0], vec![3.0, 1.0]], &costs(1.0, 1.0)).unwrap(), 0.0);
        let shifted = PredictedSchedule { periods: vec![vec![1.0, 0.0]] };
        assert_eq!(shifted.evaluate(&[vec![1.5, 0.0]], &costs(3.0, 1.0)).unwrap(), 1.5);
        assert!(sched.evaluate(&[vec![1.0, 2.0]], &costs(1.0, 1.0)).is_err());
    }

    proptest! {
        #[test]
        fn asp_surrogate_invariances(
            vals in proptest::collection::vec((0.0f64..5.0, 0.0f64..5.0), 3..=12),
            cw in 0.5f64..5.0, ci in 0.5f64..5.0,
        ) {
            let n = 3;
            let periods = vals.len() / n;
            prop_assume!(periods >= 1);
            let actual: Vec<f64> = vals[..periods * n].iter().map(|v| v.0).collect();
            let pred: Vec<f64> = vals[..periods * n].iter().map(|v| v.1).collect();
            let c = costs(cw, ci);
            let (v, _) = asp_surrogate_loss(&actual, &pred, n, &c).unwrap();
            prop_assert!(v >= 0.0);
            // duplicating the data leaves the value unchanged
            let a2 = [actual.clone(), actual.clone()].concat();
            let p2 = [pred.clone(), pred.clone()].concat();
            prop_assert!((asp_surrogate_loss(&a2, &p2, n, &c).unwrap().0 - v).abs() < 1e-12);
            // so does reversing the period order
            let ar: Vec<f64> = actual.chunks(n).rev().flatten().copied().collect();
            let pr: Vec<f64> = pred.chunks(n).rev().flatten().copied().collect();
            prop_assert!((asp_surrogate_loss(&ar, &pr, n, &c).unwrap().0 - v).abs() < 1e-12);
            // zero exactly when jobs 1..n-1 are predicted exactly
            let mut exact = pred.clone();
            for (k, e) in exact.iter_mut().enumerate() {
                if k % n != n - 1 {
                    *e = actual[k];
                }
            }
            prop_assert_eq!(asp_surrogate_loss(&actual, &exact, n, &c).unwrap().0, 0.0);
        }

        #[test]
        fn two_job_reduction(p in 0.0f64..5.0, ph in 0.0f64..5.0, cw in 0.1f64..5.0, ci in 0.1f64..5.0) {
            prop_assume!((p - ph).abs() > 1e-9);
            let c = costs(cw, ci);
            let q = c.critical_ratio();
            let (v, g) = asp_surrogate_loss(&[p, 1.0], &[ph, 2.0], 2, &c).unwrap();
            let k = 1.0 / (2.0 * (cw + ci));
            prop_assert!((v - k * (cw + ci) * pinball_value(p, ph, q)).abs() < 1e-10);
            prop_assert!((g[0] - k * (cw + ci) * pinball_derivative(p, ph, q)).abs() < 1e-10);
            prop_assert_eq!(g[1], 0.0);
        }
    }
}
