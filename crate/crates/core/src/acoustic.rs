//! Frame-level feedforward acoustic model: affine+ReLU hidden layers and an
//! affine+softmax output over the label inventory, trained with minibatch
//! SGD on frame cross-entropy. Supports from-scratch training, fine-tuning
//! at a reduced learning rate, and output-layer transfer.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{CorpusError, Manifest, UtteranceRecord};
use crate::dsp::{self, DspError, FeatureMatrix, MfccConfig};

const MODEL_MAGIC: &[u8; 5] = b"SSTAM";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AcousticError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("dsp error: {0}")]
    Dsp(#[from] DspError),
    #[error("corpus error: {0}")]
    Corpus(#[from] CorpusError),
    #[error("feature dim {found} does not match model input dim {expected} per frame")]
    DimMismatch { expected: usize, found: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("record {id}: label {label} outside inventory of {n_labels}")]
    LabelOutOfInventory { id: String, label: u32, n_labels: usize },
    #[error("record {id} has no frame labels")]
    MissingFrameLabels { id: String },
    #[error("record {id}: {labels} frame labels vs {frames} feature frames")]
    FrameCountMismatch { id: String, labels: usize, frames: usize },
    #[error("model file corrupt: {0}")]
    Corrupt(String),
    #[error("model file version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("label inventory must be non-empty")]
    EmptyLabels,
    #[error("layer dimensions must be positive")]
    BadDims,
}

/// Affine layer, weights row-major out_dim x in_dim.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Layer {
        let scale = 1.0 / (in_dim as f64).sqrt();
        Layer {
            in_dim,
            out_dim,
            weights: (0..in_dim * out_dim)
                .map(|_| rng.gen_range(-scale..scale))
                .collect(),
            bias: vec![0.0; out_dim],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Scratch,
    FineTune,
    Transfer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub base_learning_rate: f64,
    pub fine_tune_lr_scale: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Scratch,
            base_learning_rate: 0.05,
            fine_tune_lr_scale: 0.1,
            epochs: 10,
            batch_size: 128,
            seed: 0,
            l2: 1e-5,
        }
    }
}

impl TrainConfig {
    pub fn effective_lr(&self) -> f64 {
        match self.mode {
            TrainMode::FineTune => self.base_learning_rate * self.fine_tune_lr_scale,
            _ => self.base_learning_rate,
        }
    }
}

/// Hidden affine+ReLU layers followed by an affine+softmax output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticModel {
    pub layers: Vec<Layer>,
    pub context: usize,
    /// Index 0 is the silence label.
    pub labels: Vec<String>,
}

impl AcousticModel {
    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.input_dim() / (2 * self.context + 1)
    }

    fn flat_len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.flat_len());
        let mut pos = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[pos..pos + nw]);
            pos += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[pos..pos + nb]);
            pos += nb;
        }
    }
}

/// Deterministic fan-in-scaled uniform initialization.
pub fn init_model(
    feature_dim: usize,
    context: usize,
    hidden_dims: &[usize],
    labels: Vec<String>,
    seed: u64,
) -> Result<AcousticModel, AcousticError> {
    if labels.is_empty() {
        return Err(AcousticError::EmptyLabels);
    }
    if feature_dim == 0 || hidden_dims.iter().any(|&d| d == 0) {
        return Err(AcousticError::BadDims);
    }
    let input_dim = feature_dim * (2 * context + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dims = vec![input_dim];
    dims.extend_from_slice(hidden_dims);
    dims.push(labels.len());
    let layers = dims
        .windows(2)
        .map(|w| Layer::init(w[0], w[1], &mut rng))
        .collect();
    Ok(AcousticModel {
        layers,
        context,
        labels,
    })
}

/// Splice a frame with +-context neighbours, replicating edges.
fn splice(features: &FeatureMatrix, frame: usize, context: usize, out: &mut Vec<f64>) {
    out.clear();
    let last = features.frames as i64 - 1;
    for off in -(context as i64)..=(context as i64) {
        let f = (frame as i64 + off).clamp(0, last) as usize;
        out.extend_from_slice(features.row(f));
    }
}

/// Per-frame log-probabilities, rows log-sum-exp normalized to 0.
pub fn forward(
    model: &AcousticModel,
    features: &FeatureMatrix,
) -> Result<Vec<f64>, AcousticError> {
    if features.frames > 0 && features.dim != model.feature_dim() {
        return Err(AcousticError::DimMismatch {
            expected: model.feature_dim(),
            found: features.dim,
        });
    }
    let n_labels = model.n_labels();
    let mut out = Vec::with_capacity(features.frames * n_labels);
    let mut input = Vec::new();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for frame in 0..features.frames {
        splice(features, frame, model.context, &mut input);
        let logits = forward_frame(model, &input, &mut a, &mut b);
        let lse = log_sum_exp(logits);
        out.extend(logits.iter().map(|v| v - lse));
    }
    Ok(out)
}

fn forward_frame<'a>(
    model: &AcousticModel,
    input: &[f64],
    a: &'a mut Vec<f64>,
    b: &'a mut Vec<f64>,
) -> &'a [f64] {
    let n = model.layers.len();
    model.layers[0].apply(input, a);
    if n == 1 {
        return a;
    }
    for v in a.iter_mut() {
        *v = v.max(0.0);
    }
    let mut cur_in_a = true;
    for (i, layer) in model.layers[1..].iter().enumerate() {
        let last = i == n - 2;
        if cur_in_a {
            layer.apply(a, b);
            if !last {
                for v in b.iter_mut() {
                    *v = v.max(0.0);
                }
            }
        } else {
            layer.apply(b, a);
            if !last {
                for v in a.iter_mut() {
                    *v = v.max(0.0);
                }
            }
        }
        cur_in_a = !cur_in_a;
    }
    if cur_in_a {
        a
    } else {
        b
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Mean cross-entropy and flat gradient over a batch of (spliced input, label).
pub fn loss_and_gradient(
    model: &AcousticModel,
    batch: &[(Vec<f64>, u32)],
) -> (f64, Vec<f64>) {
    let n_layers = model.layers.len();
    let mut grad: Vec<Vec<f64>> = model
        .layers
        .iter()
        .map(|l| vec![0.0; l.weights.len() + l.bias.len()])
        .collect();
    let mut loss = 0.0;
    // per-example activations: pre-relu linear outputs per layer
    for (input, label) in batch {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut x: Vec<f64> = input.clone();
        for (i, layer) in model.layers.iter().enumerate() {
            let mut out = Vec::new();
            layer.apply(&x, &mut out);
            if i + 1 < n_layers {
                x = out.iter().map(|v| v.max(0.0)).collect();
            }
            acts.push(out);
        }
        let logits = &acts[n_layers - 1];
        let lse = log_sum_exp(logits);
        loss -= logits[*label as usize] - lse;
        // delta at output: softmax - onehot
        let mut delta: Vec<f64> = logits.iter().map(|v| (v - lse).exp()).collect();
        delta[*label as usize] -= 1.0;
        for i in (0..n_layers).rev() {
            let layer = &model.layers[i];
            let below: Vec<f64> = if i == 0 {
                input.clone()
            } else {
                acts[i - 1].iter().map(|v| v.max(0.0)).collect()
            };
            let g = &mut grad[i];
            for o in 0..layer.out_dim {
                let d = delta[o];
                let row = &mut g[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (gw, v) in row.iter_mut().zip(&below) {
                    *gw += d * v;
                }
                g[layer.weights.len() + o] += d;
            }
            if i > 0 {
                let mut next = vec![0.0; layer.in_dim];
                for o in 0..layer.out_dim {
                    let d = delta[o];
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (nv, w) in next.iter_mut().zip(row) {
                        *nv += d * w;
                    }
                }
                // relu gate from the pre-activation below
                for (nv, pre) in next.iter_mut().zip(&acts[i - 1]) {
                    if *pre <= 0.0 {
                        *nv = 0.0;
                    }
                }
                delta = next;
            }
        }
    }
    let scale = 1.0 / batch.len() as f64;
    let flat: Vec<f64> = grad.into_iter().flatten().map(|g| g * scale).collect();
    (loss * scale, flat)
}

/// Computes features for a record on demand.
pub trait FeatureProvider {
    fn features(&self, rec: &UtteranceRecord) -> Result<FeatureMatrix, AcousticError>;
}

/// Reads the record's WAV and extracts MFCCs.
pub struct WavMfccProvider {
    pub cfg: MfccConfig,
}

impl FeatureProvider for WavMfccProvider {
    fn features(&self, rec: &UtteranceRecord) -> Result<FeatureMatrix, AcousticError> {
        let buf = dsp::read_wav(&rec.audio)?;
        Ok(dsp::mfcc(&buf, &self.cfg)?)
    }
}

/// Minibatch SGD on frame cross-entropy. Deterministic given the config
/// seed. Returns the trained model and per-epoch mean losses.
pub fn train(
    model: &AcousticModel,
    manifest: &Manifest,
    provider: &dyn FeatureProvider,
    cfg: &TrainConfig,
) -> Result<(AcousticModel, Vec<f64>), AcousticError> {
    let mut examples: Vec<(Vec<f64>, u32)> = Vec::new();
    let n_labels = model.n_labels() as u32;
    for rec in manifest.records() {
        let labels = rec
            .frame_labels
            .as_ref()
            .ok_or_else(|| AcousticError::MissingFrameLabels { id: rec.id.clone() })?;
        let feats = provider.features(rec)?;
        if feats.frames != labels.len() {
            return Err(AcousticError::FrameCountMismatch {
                id: rec.id.clone(),
                labels: labels.len(),
                frames: feats.frames,
            });
        }
        if feats.frames > 0 && feats.dim != model.feature_dim() {
            return Err(AcousticError::DimMismatch {
                expected: model.feature_dim(),
                found: feats.dim,
            });
        }
        let mut input = Vec::new();
        for (frame, &label) in labels.iter().enumerate() {
            if label >= n_labels {
                return Err(AcousticError::LabelOutOfInventory {
                    id: rec.id.clone(),
                    label,
                    n_labels: n_labels as usize,
                });
            }
            splice(&feats, frame, model.context, &mut input);
            examples.push((input.clone(), label));
        }
    }
    if examples.is_empty() {
        return Err(AcousticError::EmptyTrainingSet);
    }
    train_on_examples(model, &mut examples, cfg)
}

fn train_on_examples(
    model: &AcousticModel,
    examples: &mut [(Vec<f64>, u32)],
    cfg: &TrainConfig,
) -> Result<(AcousticModel, Vec<f64>), AcousticError> {
    let mut m = model.clone();
    let lr = cfg.effective_lr();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        let mut batch: Vec<(Vec<f64>, u32)> = Vec::with_capacity(cfg.batch_size);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i].clone()));
            let (loss, grad) = loss_and_gradient(&m, &batch);
            epoch_loss += loss;
            n_batches += 1;
            if lr != 0.0 {
                let mut params = m.params_flat();
                for (p, g) in params.iter_mut().zip(&grad) {
                    *p -= lr * (g + cfg.l2 * *p);
                }
                m.set_params_flat(&params);
            }
        }
        let mean = epoch_loss / n_batches as f64;
        if !mean.is_finite() {
            return Err(AcousticError::Corrupt(format!(
                "non-finite training loss at epoch {epoch}"
            )));
        }
        losses.push(mean);
    }
    Ok((m, losses))
}

/// Copy the hidden layers verbatim and reinitialize the output layer for a
/// new label inventory.
pub fn transfer_output_layer(
    model: &AcousticModel,
    new_labels: Vec<String>,
    seed: u64,
) -> Result<AcousticModel, AcousticError> {
    if new_labels.is_empty() {
        return Err(AcousticError::EmptyLabels);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = model.layers.clone();
    let last = layers.last_mut().expect("model has layers");
    *last = Layer::init(last.in_dim, new_labels.len(), &mut rng);
    Ok(AcousticModel {
        layers,
        context: model.context,
        labels: new_labels,
    })
}

pub fn save_model(model: &AcousticModel, path: &Path) -> Result<(), AcousticError> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.context as u32).to_le_bytes());
    out.extend_from_slice(&(model.labels.len() as u32).to_le_bytes());
    for l in &model.labels {
        let b = l.as_bytes();
        out.extend_from_slice(&(b.len() as u32).to_le_bytes());
        out.extend_from_slice(b);
    }
    out.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for l in &model.layers {
        out.extend_from_slice(&(l.in_dim as u32).to_le_bytes());
        out.extend_from_slice(&(l.out_dim as u32).to_le_bytes());
    }
    for l in &model.layers {
        for v in l.weights.iter().chain(&l.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    File::create(path)?.write_all(&out)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<AcousticModel, AcousticError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], AcousticError> {
        if *pos + n > bytes.len() {
            return Err(AcousticError::Corrupt("truncated file".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 5)? != MODEL_MAGIC {
        return Err(AcousticError::Corrupt("bad magic".into()));
    }
    let u32_at = |pos: &mut usize| -> Result<u32, AcousticError> {
        if *pos + 4 > bytes.len() {
            return Err(AcousticError::Corrupt("truncated file".into()));
        }
        let v = u32::from_le_bytes(bytes[*pos..*pos + 4].try_into().unwrap());
        *pos += 4;
        Ok(v)
    };
    let version = u32_at(&mut pos)?;
    if version != MODEL_VERSION {
        return Err(AcousticError::VersionMismatch {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let context = u32_at(&mut pos)? as usize;
    let n_labels = u32_at(&mut pos)? as usize;
    let mut labels = Vec::with_capacity(n_labels);
    for _ in 0..n_labels {
        let len = u32_at(&mut pos)? as usize;
        let s = take(&mut pos, len)?;
        labels.push(
            String::from_utf8(s.to_vec())
                .map_err(|_| AcousticError::Corrupt("label not utf-8".into()))?,
        );
    }
    let n_layers = u32_at(&mut pos)? as usize;
    let mut dims = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let i = u32_at(&mut pos)? as usize;
        let o = u32_at(&mut pos)? as usize;
        dims.push((i, o));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for (in_dim, out_dim) in dims {
        let mut weights = Vec::with_capacity(in_dim * out_dim);
        for _ in 0..in_dim * out_dim {
            weights.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        let mut bias = Vec::with_capacity(out_dim);
        for _ in 0..out_dim {
            bias.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        layers.push(Layer {
            in_dim,
            out_dim,
            weights,
            bias,
        });
    }
    if pos != bytes.len() {
        return Err(AcousticError::Corrupt("trailing bytes".into()));
    }
    if layers.is_empty() || labels.is_empty() {
        return Err(AcousticError::Corrupt("empty model".into()));
    }
    Ok(AcousticModel {
        layers,
        context,
        labels,
    })
}
