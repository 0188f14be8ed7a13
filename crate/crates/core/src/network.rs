//! Feedforward regression network producing per-superpixel color transforms.
//!
//! Hidden layers use a rectifier and inverted dropout during training; the
//! output layer is linear. With the transform head, the outputs are read
//! row-major as a 3 x m matrix and multiplied with each sample's basis
//! vector; the squared error of that product is the training loss, so
//! gradients flow back through the fixed basis product before entering the
//! output layer. The direct head instead regresses scaled Lab directly and
//! is kept for ablations.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::colorspace::{make_basis, BasisKind, ColorBasisVector, ColorTransform, LabColor};
use crate::error::{contract, Error, Result};
use crate::features::{AnalysisParams, FeatureNormalizer};
use crate::sampling::{split, TrainingSet};
use crate::semantics::CategoryTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    /// Linear hidden units; only used to test dropout scaling.
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Outputs are a color transform applied to the basis vector.
    #[default]
    Transform,
    /// Outputs are the scaled Lab color itself.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkArchitecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub basis: BasisKind,
    #[serde(default)]
    pub head: HeadKind,
    #[serde(default)]
    pub activation: Activation,
}

impl NetworkArchitecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, basis: BasisKind) -> Self {
        NetworkArchitecture {
            input_dim,
            hidden,
            basis,
            head: HeadKind::Transform,
            activation: Activation::Relu,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.head {
            HeadKind::Transform => 3 * self.basis.len(),
            HeadKind::Direct => 3,
        }
    }

    /// `(fan_out, fan_in)` of every layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.output_dim());
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(contract("network input dimension must be >= 1"));
        }
        if self.hidden.is_empty() {
            return Err(contract("network needs at least one hidden layer"));
        }
        if self.hidden.contains(&0) {
            return Err(contract("hidden layers must have at least one unit"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_out x fan_in`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    pub layers: Vec<Layer>,
}

impl NetworkWeights {
    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn init(arch: &NetworkArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(out, inp)| {
                let normal = Normal::new(0.0, (2.0 / inp as f64).sqrt()).expect("positive std");
                Layer {
                    weights: Array2::from_shape_simple_fn((out, inp), || normal.sample(&mut rng)),
                    bias: Array1::zeros(out),
                }
            })
            .collect();
        Ok(NetworkWeights { layers })
    }

    pub fn zeros(arch: &NetworkArchitecture) -> Self {
        NetworkWeights {
            layers: arch
                .layer_shapes()
                .into_iter()
                .map(|(out, inp)| Layer {
                    weights: Array2::zeros((out, inp)),
                    bias: Array1::zeros(out),
                })
                .collect(),
        }
    }

    pub fn check(&self, arch: &NetworkArchitecture) -> Result<()> {
        let shapes = arch.layer_shapes();
        if shapes.len() != self.layers.len() {
            return Err(contract(format!(
                "architecture has {} layers, weights have {}",
                shapes.len(),
                self.layers.len()
            )));
        }
        for (i, ((out, inp), l)) in shapes.iter().zip(&self.layers).enumerate() {
            if l.weights.dim() != (*out, *inp) || l.bias.len() != *out {
                return Err(contract(format!(
                    "layer {i}: expected {out}x{inp} weights, found {:?} with {} biases",
                    l.weights.dim(),
                    l.bias.len()
                )));
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(contract(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameter `i` in layer order, weights (row-major) before biases.
    pub fn param_mut(&mut self, mut i: usize) -> &mut f64 {
        for l in &mut self.layers {
            if i < l.weights.len() {
                let cols = l.weights.ncols();
                return &mut l.weights[[i / cols, i % cols]];
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                return &mut l.bias[i];
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn param(&self, mut i: usize) -> f64 {
        for l in &self.layers {
            if i < l.weights.len() {
                let cols = l.weights.ncols();
                return l.weights[[i / cols, i % cols]];
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                return l.bias[i];
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// `self += alpha * other`
    fn scaled_add(&mut self, alpha: f64, other: &NetworkWeights) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.scaled_add(alpha, &b.weights);
            a.bias.scaled_add(alpha, &b.bias);
        }
    }

    /// Global L2 norm over all parameters.
    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weights.iter().chain(l.bias.iter()).map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&mut self, alpha: f64) {
        for l in &mut self.layers {
            l.weights *= alpha;
            l.bias *= alpha;
        }
    }
}

/// Per-hidden-layer multipliers: 0 for dropped units, `1 / keep` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub layers: Vec<Array2<f64>>,
}

impl DropoutMasks {
    pub fn sample(
        arch: &NetworkArchitecture,
        rows: usize,
        drop_probability: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let keep = 1.0 - drop_probability;
        let layers = arch
            .hidden
            .iter()
            .map(|&h| {
                Array2::from_shape_simple_fn((rows, h), || {
                    if rng.gen::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        DropoutMasks { layers }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    Eval,
    Train(&'a DropoutMasks),
}

/// Intermediate values of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of every layer; `inputs[0]` is the feature batch.
    pub inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pub hidden_pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

pub fn forward(
    weights: &NetworkWeights,
    arch: &NetworkArchitecture,
    x: ArrayView2<f64>,
    mode: Mode<'_>,
) -> Result<ForwardCache> {
    if x.ncols() != arch.input_dim {
        return Err(contract(format!(
            "feature dimension {} does not match network input {}",
            x.ncols(),
            arch.input_dim
        )));
    }
    if let Mode::Train(m) = mode {
        if m.layers.len() != arch.hidden.len()
            || m.layers.iter().zip(&arch.hidden).any(|(l, &h)| l.dim() != (x.nrows(), h))
        {
            return Err(contract("dropout masks do not match batch and architecture"));
        }
    }
    let n = weights.layers.len();
    let mut inputs = vec![x.to_owned()];
    let mut hidden_pre = Vec::with_capacity(n - 1);
    for (i, layer) in weights.layers.iter().enumerate() {
        let mut z = inputs[i].dot(&layer.weights.t());
        z += &layer.bias;
        if i + 1 == n {
            return Ok(ForwardCache {
                inputs,
                hidden_pre,
                output: z,
            });
        }
        let mut a = z.mapv(|v| arch.activation.apply(v));
        if let Mode::Train(m) = mode {
            a *= &m.layers[i];
        }
        hidden_pre.push(z);
        inputs.push(a);
    }
    unreachable!("network has at least one layer")
}

/// Transform predicted for one (normalized) feature vector.
pub fn forward_transform(
    weights: &NetworkWeights,
    arch: &NetworkArchitecture,
    x: &[f64],
    mode: Mode<'_>,
) -> Result<ColorTransform> {
    if arch.head != HeadKind::Transform {
        return Err(contract("network has a direct-color head, not a transform head"));
    }
    let row = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
    let out = forward(weights, arch, row, mode)?.output;
    ColorTransform::from_row_major(arch.basis, out.row(0).to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchSample {
    /// Row of [`Batch::features`] holding this sample's superpixel feature.
    pub row: usize,
    pub basis: ColorBasisVector,
    /// Target color in scaled Lab units.
    pub target: [f64; 3],
}

/// Feature rows (one per superpixel) and the samples that share them.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Array2<f64>,
    pub samples: Vec<BatchSample>,
}

fn head_prediction(arch: &NetworkArchitecture, out: &[f64], basis: &ColorBasisVector) -> [f64; 3] {
    match arch.head {
        HeadKind::Direct => [out[0], out[1], out[2]],
        HeadKind::Transform => {
            let m = basis.kind().len();
            let v = basis.values();
            let mut p = [0.0; 3];
            for (r, pr) in p.iter_mut().enumerate() {
                *pr = out[r * m..(r + 1) * m].iter().zip(v).map(|(w, x)| w * x).sum();
            }
            p
        }
    }
}

/// Mean squared error over the batch samples and its gradient.
pub fn loss_and_gradient(
    weights: &NetworkWeights,
    arch: &NetworkArchitecture,
    batch: &Batch,
    mode: Mode<'_>,
) -> Result<(f64, NetworkWeights)> {
    if batch.samples.is_empty() {
        return Err(contract("loss needs a non-empty batch"));
    }
    let cache = forward(weights, arch, batch.features.view(), mode)?;
    let n = batch.samples.len() as f64;
    let mut d_out = Array2::<f64>::zeros(cache.output.raw_dim());
    let mut loss = 0.0;
    for s in &batch.samples {
        if arch.head == HeadKind::Transform && s.basis.kind() != arch.basis {
            return Err(contract("sample basis kind does not match the network"));
        }
        let out = cache.output.row(s.row);
        let out = out.as_slice().expect("standard layout");
        let pred = head_prediction(arch, out, &s.basis);
        let mut grad_row = d_out.row_mut(s.row);
        for r in 0..3 {
            let e = pred[r] - s.target[r];
            loss += e * e;
            let g = 2.0 * e / n;
            match arch.head {
                HeadKind::Direct => grad_row[r] += g,
                HeadKind::Transform => {
                    let m = s.basis.kind().len();
                    for (c, v) in s.basis.values().iter().enumerate() {
                        grad_row[r * m + c] += g * v;
                    }
                }
            }
        }
    }
    let grads = backward(weights, arch, &cache, d_out, mode);
    Ok((loss / n, grads))
}

fn backward(
    weights: &NetworkWeights,
    arch: &NetworkArchitecture,
    cache: &ForwardCache,
    d_out: Array2<f64>,
    mode: Mode<'_>,
) -> NetworkWeights {
    let mut grads = Vec::with_capacity(weights.layers.len());
    let mut delta = d_out;
    for l in (0..weights.layers.len()).rev() {
        let gw = delta.t().dot(&cache.inputs[l]);
        let gb = delta.sum_axis(Axis(0));
        grads.push(Layer {
            weights: gw,
            bias: gb,
        });
        if l == 0 {
            break;
        }
        let mut da = delta.dot(&weights.layers[l].weights);
        let pre = &cache.hidden_pre[l - 1];
        da.zip_mut_with(pre, |d, &z| *d *= arch.activation.derivative(z));
        if let Mode::Train(m) = mode {
            da *= &m.layers[l - 1];
        }
        delta = da;
    }
    grads.reverse();
    NetworkWeights { layers: grads }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingHyperparams {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Samples per minibatch; the last batch of an epoch may be smaller.
    pub batch_size: usize,
    pub epochs: usize,
    /// Probability of dropping a hidden unit.
    pub dropout: f64,
    /// Learning rate multiplier applied after `patience` epochs without a
    /// validation improvement.
    pub lr_decay: f64,
    pub patience: usize,
    /// Training stops once the rate falls below `learning_rate * min_lr_ratio`.
    pub min_lr_ratio: f64,
    /// Gradients with a larger global L2 norm are rescaled to this norm.
    /// `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainingHyperparams {
    fn default() -> Self {
        TrainingHyperparams {
            learning_rate: 0.03,
            momentum: 0.9,
            batch_size: 64,
            epochs: 100,
            dropout: 0.5,
            lr_decay: 0.5,
            patience: 5,
            min_lr_ratio: 1e-3,
            max_grad_norm: Some(3.0),
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainingHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(contract("learning rate must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(contract("momentum must be in [0, 1)"));
        }
        if !(self.dropout >= 0.0 && self.dropout < 1.0) {
            return Err(contract("dropout probability must be in [0, 1)"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(contract("batch size and epoch count must be >= 1"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(contract("lr decay must be in (0, 1]"));
        }
        if self.max_grad_norm.is_some_and(|m| !(m > 0.0)) {
            return Err(contract("max_grad_norm must be > 0"));
        }
        if !(self.validation_fraction >= 0.0 && self.validation_fraction < 1.0) {
            return Err(contract("validation fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub samples_per_superpixel: usize,
    pub hyper: TrainingHyperparams,
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub best_epoch: usize,
    pub train_superpixels: usize,
    pub train_samples: usize,
}

/// Everything needed to enhance a new image.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub arch: NetworkArchitecture,
    pub weights: NetworkWeights,
    pub normalizer: FeatureNormalizer,
    pub analysis: AnalysisParams,
    pub categories: CategoryTable,
    pub meta: TrainingMeta,
}

/// Network output for one feature vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Transform(ColorTransform),
    Color(LabColor),
}

impl Prediction {
    /// Adjusted color of a pixel with input color `c` (unclamped).
    pub fn apply(&self, c: LabColor) -> LabColor {
        match self {
            Prediction::Transform(t) => LabColor::from_scaled(t.apply_scaled(&make_basis(c, t.kind()))),
            Prediction::Color(col) => *col,
        }
    }
}

impl TrainedModel {
    pub fn check(&self) -> Result<()> {
        self.weights.check(&self.arch)?;
        let d = self.analysis.features.dim();
        if self.arch.input_dim != d || self.normalizer.dim() != d {
            return Err(contract(format!(
                "feature dim {d}, network input {}, normalizer {}",
                self.arch.input_dim,
                self.normalizer.dim()
            )));
        }
        if self.analysis.features.categories != self.categories.len() {
            return Err(contract("feature config and category table disagree on N"));
        }
        Ok(())
    }

    /// Eval-mode predictions for raw (unnormalized) feature vectors.
    pub fn predict_batch(&self, raw: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        let d = self.arch.input_dim;
        let mut x = Array2::<f64>::zeros((raw.len(), d));
        for (i, v) in raw.iter().enumerate() {
            let z = self.normalizer.normalize(v)?;
            x.row_mut(i).assign(&Array1::from(z));
        }
        let out = forward(&self.weights, &self.arch, x.view(), Mode::Eval)?.output;
        out.rows()
            .into_iter()
            .map(|r| match self.arch.head {
                HeadKind::Transform => {
                    ColorTransform::from_row_major(self.arch.basis, r.to_vec()).map(Prediction::Transform)
                }
                HeadKind::Direct => Ok(Prediction::Color(LabColor::from_scaled([r[0], r[1], r[2]]))),
            })
            .collect()
    }

    pub fn predict(&self, raw: &[f64]) -> Result<Prediction> {
        Ok(self.predict_batch(&[raw.to_vec()])?.remove(0))
    }

    pub fn predict_transform(&self, raw: &[f64]) -> Result<ColorTransform> {
        match self.predict(raw)? {
            Prediction::Transform(t) => Ok(t),
            Prediction::Color(_) => Err(contract("model has a direct-color head")),
        }
    }
}

/// Normalized feature matrix plus samples, for batch assembly.
struct PreparedSet {
    features: Array2<f64>,
    samples: Vec<BatchSample>,
    groups: Vec<std::ops::Range<usize>>,
}

fn prepare(set: &TrainingSet, normalizer: &FeatureNormalizer, basis: BasisKind) -> Result<PreparedSet> {
    let d = normalizer.dim();
    let mut features = Array2::<f64>::zeros((set.superpixels.len(), d));
    for (i, sp) in set.superpixels.iter().enumerate() {
        let z = normalizer.normalize(&sp.feature)?;
        features.row_mut(i).assign(&Array1::from(z));
    }
    let samples = set
        .samples
        .iter()
        .map(|s| BatchSample {
            row: s.superpixel,
            basis: make_basis(s.input, basis),
            target: s.target,
        })
        .collect();
    let groups = set.superpixels.iter().map(|s| s.samples.clone()).collect();
    Ok(PreparedSet {
        features,
        samples,
        groups,
    })
}

impl PreparedSet {
    /// One feature row per sample, so every sample gets its own dropout mask.
    fn batch(&self, ids: &[usize]) -> Batch {
        let mut features = Array2::<f64>::zeros((ids.len(), self.features.ncols()));
        let mut samples = Vec::with_capacity(ids.len());
        for (i, &k) in ids.iter().enumerate() {
            let s = self.samples[k];
            features.row_mut(i).assign(&self.features.row(s.row));
            samples.push(BatchSample { row: i, ..s });
        }
        Batch { features, samples }
    }

    /// Eval-mode mean loss over the whole set.
    fn eval_loss(&self, weights: &NetworkWeights, arch: &NetworkArchitecture) -> Result<f64> {
        const CHUNK: usize = 2048;
        let n = self.features.nrows();
        let mut total = 0.0;
        let mut count = 0usize;
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let out = forward(weights, arch, self.features.slice(s![start..end, ..]), Mode::Eval)?.output;
            for r in start..end {
                let o = out.row(r - start);
                let o = o.as_slice().expect("standard layout");
                for s in &self.samples[self.groups[r].clone()] {
                    let p = head_prediction(arch, o, &s.basis);
                    total += (0..3).map(|k| (p[k] - s.target[k]).powi(2)).sum::<f64>();
                    count += 1;
                }
            }
            start = end;
        }
        Ok(if count == 0 { 0.0 } else { total / count as f64 })
    }
}

/// Minibatch SGD with momentum; returns the weights with the lowest
/// validation loss.
pub fn train(
    set: &TrainingSet,
    hidden: &[usize],
    head: HeadKind,
    hyper: &TrainingHyperparams,
) -> Result<TrainedModel> {
    hyper.validate()?;
    if set.samples.is_empty() {
        return Err(contract("training set has no samples"));
    }
    let mut arch = NetworkArchitecture::new(set.feature_dim(), hidden.to_vec(), set.basis);
    arch.head = head;
    arch.validate()?;

    let use_validation = hyper.validation_fraction > 0.0 && set.superpixels.len() >= 10;
    let (train_set, val_set) = if use_validation {
        let (t, v) = split(set, 1.0 - hyper.validation_fraction, hyper.seed ^ 0x5eed)?;
        (t, Some(v))
    } else {
        (set.clone(), None)
    };
    let normalizer = train_set.normalizer.clone();
    let train_data = prepare(&train_set, &normalizer, set.basis)?;
    let val_data = val_set
        .as_ref()
        .map(|v| prepare(v, &normalizer, set.basis))
        .transpose()?;

    let mut weights = NetworkWeights::init(&arch, hyper.seed)?;
    let mut velocity = NetworkWeights::zeros(&arch);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_data.samples.len()).collect();
    let mut lr = hyper.learning_rate;

    let mut train_curve = Vec::new();
    let mut val_curve = Vec::new();
    let mut best = (f64::INFINITY, weights.clone(), 0usize);
    let mut stall = 0usize;

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let (mut epoch_loss, mut epoch_count) = (0.0, 0usize);
        for ids in order.chunks(hyper.batch_size) {
            let batch = train_data.batch(ids);
            let masks = DropoutMasks::sample(&arch, batch.features.nrows(), hyper.dropout, &mut rng);
            let (loss, mut grad) = loss_and_gradient(&weights, &arch, &batch, Mode::Train(&masks))?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            if let Some(max) = hyper.max_grad_norm {
                let norm = grad.norm();
                if norm > max {
                    grad.scale(max / norm);
                }
            }
            epoch_loss += loss * batch.samples.len() as f64;
            epoch_count += batch.samples.len();
            velocity.scale(hyper.momentum);
            velocity.scaled_add(-lr, &grad);
            weights.scaled_add(1.0, &velocity);
        }
        let train_loss = epoch_loss / epoch_count.max(1) as f64;
        let monitor = match &val_data {
            Some(v) => v.eval_loss(&weights, &arch)?,
            None => train_data.eval_loss(&weights, &arch)?,
        };
        if !monitor.is_finite() || !train_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: if monitor.is_finite() { train_loss } else { monitor },
            });
        }
        log::info!(
            "epoch {epoch:3}  lr {lr:.2e}  train {train_loss:.6}  validation {monitor:.6}"
        );
        train_curve.push(train_loss);
        val_curve.push(monitor);
        if monitor < best.0 {
            best = (monitor, weights.clone(), epoch);
            stall = 0;
        } else {
            stall += 1;
            if stall >= hyper.patience {
                lr *= hyper.lr_decay;
                stall = 0;
                if lr < hyper.learning_rate * hyper.min_lr_ratio {
                    break;
                }
            }
        }
    }

    Ok(TrainedModel {
        arch,
        weights: best.1,
        normalizer,
        analysis: set.params.analysis.clone(),
        categories: set.categories.clone(),
        meta: TrainingMeta {
            seed: hyper.seed,
            samples_per_superpixel: set.params.samples_per_superpixel,
            hyper: hyper.clone(),
            train_loss: train_curve,
            validation_loss: val_curve,
            best_epoch: best.2,
            train_superpixels: train_set.superpixels.len(),
            train_samples: train_set.samples.len(),
        },
    })
}
