//! Local model and optimizer: a two-layer MLP (ReLU hidden layer, softmax
//! cross-entropy loss) with analytic backpropagation and minibatch SGD.
//!
//! Parameters live in one flat `f64` vector laid out as
//! `[W1 (hidden x input, row-major), b1, W2 (output x hidden, row-major), b2]`
//! so aggregation and checkpointing treat the model as a plain vector. All
//! arithmetic is 64-bit; per-sample gradients accumulate in slice order, which
//! keeps results reproducible for a fixed batch sequence.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer sizes of the MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub with_bias: bool,
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        MlpArchitecture { input_dim, hidden_dim, output_dim, with_bias: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 1 || self.hidden_dim < 1 || self.output_dim < 1 {
            return Err(Error::config("all architecture dimensions must be at least 1"));
        }
        Ok(())
    }

    /// Total parameter count for this layout.
    pub fn param_count(&self) -> usize {
        let bias = if self.with_bias { self.hidden_dim + self.output_dim } else { 0 };
        self.input_dim * self.hidden_dim + self.hidden_dim * self.output_dim + bias
    }

    fn w1_range(&self) -> std::ops::Range<usize> {
        0..self.input_dim * self.hidden_dim
    }

    fn b1_range(&self) -> std::ops::Range<usize> {
        let start = self.input_dim * self.hidden_dim;
        let len = if self.with_bias { self.hidden_dim } else { 0 };
        start..start + len
    }

    fn w2_range(&self) -> std::ops::Range<usize> {
        let start = self.b1_range().end;
        start..start + self.hidden_dim * self.output_dim
    }

    fn b2_range(&self) -> std::ops::Range<usize> {
        let start = self.w2_range().end;
        let len = if self.with_bias { self.output_dim } else { 0 };
        start..start + len
    }
}

/// Flat, ordered model parameter vector plus its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: MlpArchitecture,
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: MlpArchitecture) -> Self {
        ModelParams { arch, values: vec![0.0; arch.param_count()] }
    }

    /// First-layer weights, row-major `hidden x input`.
    pub fn w1(&self) -> &[f64] {
        &self.values[self.arch.w1_range()]
    }

    /// First-layer biases (empty when `with_bias` is off).
    pub fn b1(&self) -> &[f64] {
        &self.values[self.arch.b1_range()]
    }

    /// Second-layer weights, row-major `output x hidden`.
    pub fn w2(&self) -> &[f64] {
        &self.values[self.arch.w2_range()]
    }

    /// Second-layer biases (empty when `with_bias` is off).
    pub fn b2(&self) -> &[f64] {
        &self.values[self.arch.b2_range()]
    }
}

/// SGD hyperparameters for one local update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::config("learning_rate must be non-negative and finite"));
        }
        if self.local_epochs < 1 {
            return Err(Error::config("local_epochs must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// One client's bound samples: a row-major feature matrix and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub input_dim: usize,
}

impl ClientDataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, input_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::dimension("input_dim must be at least 1".to_string()));
        }
        if features.len() != labels.len() * input_dim {
            return Err(Error::dimension(format!(
                "feature matrix has {} values, expected {} rows x {input_dim}",
                features.len(),
                labels.len()
            )));
        }
        Ok(ClientDataset { features, labels, input_dim })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }
}

/// Glorot-uniform weights (`+-sqrt(6 / (fan_in + fan_out))` per layer), zero
/// biases. Weight draws happen in layout order so a seed pins the vector.
pub fn init_params(arch: MlpArchitecture, rng: &mut ChaCha8Rng) -> ModelParams {
    let mut params = ModelParams::zeros(arch);
    let bound1 = (6.0 / (arch.input_dim + arch.hidden_dim) as f64).sqrt();
    for v in &mut params.values[arch.w1_range()] {
        *v = rng.random_range(-bound1..=bound1);
    }
    let bound2 = (6.0 / (arch.hidden_dim + arch.output_dim) as f64).sqrt();
    for v in &mut params.values[arch.w2_range()] {
        *v = rng.random_range(-bound2..=bound2);
    }
    params
}

/// Scratch buffers for one forward/backward pass, reused across samples.
struct Workspace {
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    dz2: Vec<f64>,
    dz1: Vec<f64>,
}

impl Workspace {
    fn new(arch: &MlpArchitecture) -> Self {
        Workspace {
            z1: vec![0.0; arch.hidden_dim],
            a1: vec![0.0; arch.hidden_dim],
            z2: vec![0.0; arch.output_dim],
            dz2: vec![0.0; arch.output_dim],
            dz1: vec![0.0; arch.hidden_dim],
        }
    }
}

fn forward(params: &ModelParams, x: &[f64], ws: &mut Workspace) {
    let arch = &params.arch;
    let w1 = &params.values[arch.w1_range()];
    let w2 = &params.values[arch.w2_range()];
    let b1 = &params.values[arch.b1_range()];
    let b2 = &params.values[arch.b2_range()];

    for h in 0..arch.hidden_dim {
        let row = &w1[h * arch.input_dim..(h + 1) * arch.input_dim];
        let mut acc = if arch.with_bias { b1[h] } else { 0.0 };
        for (w, xi) in row.iter().zip(x) {
            acc += w * xi;
        }
        ws.z1[h] = acc;
        ws.a1[h] = acc.max(0.0);
    }
    for o in 0..arch.output_dim {
        let row = &w2[o * arch.hidden_dim..(o + 1) * arch.hidden_dim];
        let mut acc = if arch.with_bias { b2[o] } else { 0.0 };
        for (w, a) in row.iter().zip(&ws.a1) {
            acc += w * a;
        }
        ws.z2[o] = acc;
    }
}

/// Numerically stabilized softmax cross-entropy of the logits in `ws.z2`
/// against `label`; fills `ws.dz2` with `softmax - onehot`.
fn softmax_loss(ws: &mut Workspace, label: usize) -> f64 {
    let max = ws.z2.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for o in 0..ws.z2.len() {
        let e = (ws.z2[o] - max).exp();
        ws.dz2[o] = e;
        sum += e;
    }
    let lse = max + sum.ln();
    for v in &mut ws.dz2 {
        *v /= sum;
    }
    ws.dz2[label] -= 1.0;
    lse - ws.z2[label]
}

fn backward(params: &ModelParams, x: &[f64], ws: &mut Workspace, grad: &mut [f64]) {
    let arch = &params.arch;
    let w2 = &params.values[arch.w2_range()];
    let (gw1_r, gb1_r, gw2_r, gb2_r) =
        (arch.w1_range(), arch.b1_range(), arch.w2_range(), arch.b2_range());

    // Output layer.
    for o in 0..arch.output_dim {
        let d = ws.dz2[o];
        let grow = &mut grad[gw2_r.start + o * arch.hidden_dim..gw2_r.start + (o + 1) * arch.hidden_dim];
        for (g, a) in grow.iter_mut().zip(&ws.a1) {
            *g += d * a;
        }
        if arch.with_bias {
            grad[gb2_r.start + o] += d;
        }
    }
    // Backprop into the hidden layer. ReLU passes gradient only where the
    // pre-activation was strictly positive.
    for h in 0..arch.hidden_dim {
        let mut acc = 0.0;
        for o in 0..arch.output_dim {
            acc += ws.dz2[o] * w2[o * arch.hidden_dim + h];
        }
        ws.dz1[h] = if ws.z1[h] > 0.0 { acc } else { 0.0 };
    }
    for h in 0..arch.hidden_dim {
        let d = ws.dz1[h];
        if d == 0.0 {
            continue;
        }
        let grow = &mut grad[gw1_r.start + h * arch.input_dim..gw1_r.start + (h + 1) * arch.input_dim];
        for (g, xi) in grow.iter_mut().zip(x) {
            *g += d * xi;
        }
        if arch.with_bias {
            grad[gb1_r.start + h] += d;
        }
    }
}

/// Mean softmax cross-entropy and its analytic gradient over the rows of
/// `data` named by `rows`.
pub fn loss_and_grad(
    params: &ModelParams,
    data: &ClientDataset,
    rows: &[usize],
) -> Result<(f64, Vec<f64>)> {
    if rows.is_empty() {
        return Err(Error::config("empty batch"));
    }
    check_dims(params, data)?;
    let mut ws = Workspace::new(&params.arch);
    let mut grad = vec![0.0; params.values.len()];
    let mut loss = 0.0;
    for &i in rows {
        let x = data.row(i);
        forward(params, x, &mut ws);
        loss += softmax_loss(&mut ws, data.labels[i]);
        backward(params, x, &mut ws, &mut grad);
    }
    let scale = 1.0 / rows.len() as f64;
    loss *= scale;
    for g in &mut grad {
        *g *= scale;
    }
    Ok((loss, grad))
}

/// `loss_and_grad` over every row.
pub fn loss_and_grad_full(params: &ModelParams, data: &ClientDataset) -> Result<(f64, Vec<f64>)> {
    let rows: Vec<usize> = (0..data.len()).collect();
    loss_and_grad(params, data, &rows)
}

fn check_dims(params: &ModelParams, data: &ClientDataset) -> Result<()> {
    if data.input_dim != params.arch.input_dim {
        return Err(Error::dimension(format!(
            "dataset has input_dim {}, model expects {}",
            data.input_dim, params.arch.input_dim
        )));
    }
    if let Some(&l) = data.labels.iter().find(|&&l| l >= params.arch.output_dim) {
        return Err(Error::dimension(format!(
            "label {l} out of range for output_dim {}",
            params.arch.output_dim
        )));
    }
    Ok(())
}

/// Result of a local update; `skipped` marks a client with no data.
#[derive(Debug, Clone)]
pub struct LocalUpdate {
    pub params: ModelParams,
    pub skipped: bool,
}

/// Runs `local_epochs` epochs of shuffled minibatch SGD and returns the
/// updated parameters. Each epoch shuffles the row indices, cuts them into
/// `batch_size` batches (the final short batch is trained on, averaged over
/// its actual size), and applies one step per batch. An empty dataset returns
/// the parameters untouched with `skipped` set.
pub fn local_train(
    params: &ModelParams,
    data: &ClientDataset,
    spec: &TrainSpec,
    rng: &mut ChaCha8Rng,
) -> Result<LocalUpdate> {
    spec.validate()?;
    if data.is_empty() {
        return Ok(LocalUpdate { params: params.clone(), skipped: true });
    }
    check_dims(params, data)?;

    let mut current = params.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..spec.local_epochs {
        order.shuffle(rng);
        for batch in order.chunks(spec.batch_size) {
            let (_, grad) = loss_and_grad(&current, data, batch)?;
            for (p, g) in current.values.iter_mut().zip(&grad) {
                *p -= spec.learning_rate * g;
            }
        }
    }
    Ok(LocalUpdate { params: current, skipped: false })
}

/// Mean loss and top-1 accuracy over the whole dataset, streamed in fixed
/// chunks. Argmax ties resolve to the lowest class index.
pub fn evaluate(params: &ModelParams, data: &ClientDataset) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::config("cannot evaluate on an empty dataset"));
    }
    check_dims(params, data)?;

    const CHUNK: usize = 512;
    let n = data.len();
    let chunk_stats: Vec<(f64, usize)> = {
        use rayon::prelude::*;
        (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let lo = c * CHUNK;
                let hi = ((c + 1) * CHUNK).min(n);
                let mut ws = Workspace::new(&params.arch);
                let mut loss_sum = 0.0;
                let mut correct = 0usize;
                for i in lo..hi {
                    forward(params, data.row(i), &mut ws);
                    let mut best = 0usize;
                    for o in 1..params.arch.output_dim {
                        if ws.z2[o] > ws.z2[best] {
                            best = o;
                        }
                    }
                    if best == data.labels[i] {
                        correct += 1;
                    }
                    loss_sum += softmax_loss(&mut ws, data.labels[i]);
                }
                (loss_sum, correct)
            })
            .collect()
    };
    // Chunk results reduce in chunk order, independent of thread scheduling.
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for (l, c) in chunk_stats {
        loss_sum += l;
        correct += c;
    }
    Ok((loss_sum / n as f64, correct as f64 / n as f64))
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"FSIMCKPT";
const CHECKPOINT_VERSION: u32 = 1;
const PRECISION_F64: u8 = 64;

/// Writes a checkpoint: fixed little-endian header (magic, version, dims,
/// bias flag, precision, seed, completed round, value count) followed by the
/// raw parameter vector. Round-trips bit-exactly.
pub fn save_checkpoint(params: &ModelParams, seed: u64, round: u64, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + params.values.len() * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.arch.input_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(params.arch.hidden_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(params.arch.output_dim as u32).to_le_bytes());
    buf.push(params.arch.with_bias as u8);
    buf.push(PRECISION_F64);
    buf.extend_from_slice(&[0u8; 2]);
    buf.extend_from_slice(&seed.to_le_bytes());
    buf.extend_from_slice(&round.to_le_bytes());
    buf.extend_from_slice(&(params.values.len() as u64).to_le_bytes());
    for v in &params.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Loaded checkpoint contents.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub seed: u64,
    pub round: u64,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    let fail = |reason: &str| Error::Format { path: path.to_path_buf(), reason: reason.into() };

    if buf.len() < 48 {
        return Err(fail("truncated header"));
    }
    if &buf[0..8] != CHECKPOINT_MAGIC {
        return Err(fail("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    if u32_at(8) != CHECKPOINT_VERSION {
        return Err(fail("unsupported version"));
    }
    let arch = MlpArchitecture {
        input_dim: u32_at(12) as usize,
        hidden_dim: u32_at(16) as usize,
        output_dim: u32_at(20) as usize,
        with_bias: buf[24] != 0,
    };
    if buf[25] != PRECISION_F64 {
        return Err(fail("unsupported precision"));
    }
    let seed = u64_at(28);
    let round = u64_at(36);
    let count = u64_at(44) as usize;
    if count != arch.param_count() {
        return Err(fail("parameter count does not match architecture"));
    }
    if buf.len() != 52 + count * 8 {
        return Err(fail("truncated parameter vector"));
    }
    let values: Vec<f64> = buf[52..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Checkpoint { params: ModelParams { arch, values }, seed, round })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    fn rng(seed: u64) -> ChaCha8Rng {
        stream(seed, Domain::Init, 0)
    }

    /// Random dataset with features in [0,1] and labels covering the classes.
    fn random_dataset(n: usize, dim: usize, classes: usize, seed: u64) -> ClientDataset {
        let mut r = rng(seed);
        let features = (0..n * dim).map(|_| r.random_range(0.0..1.0)).collect();
        let labels = (0..n).map(|i| i % classes).collect();
        ClientDataset::new(features, labels, dim).unwrap()
    }

    #[test]
    fn param_count_for_reference_architecture() {
        let arch = MlpArchitecture::new(784, 200, 10);
        assert_eq!(arch.param_count(), 784 * 200 + 200 + 200 * 10 + 10);
        assert_eq!(arch.param_count(), 159_010);
        let no_bias = MlpArchitecture { with_bias: false, ..arch };
        assert_eq!(no_bias.param_count(), 784 * 200 + 200 * 10);
    }

    #[test]
    fn init_biases_zero_and_deterministic() {
        let arch = MlpArchitecture::new(12, 7, 4);
        let params = init_params(arch, &mut rng(1));
        assert_eq!(params.values.len(), arch.param_count());
        assert!(params.values[arch.b1_range()].iter().all(|&v| v == 0.0));
        assert!(params.values[arch.b2_range()].iter().all(|&v| v == 0.0));
        let bound = (6.0f64 / (12 + 7) as f64).sqrt();
        assert!(params.values[arch.w1_range()].iter().all(|&v| v.abs() <= bound));
        let again = init_params(arch, &mut rng(1));
        assert_eq!(params, again);
    }

    #[test]
    fn zero_params_give_uniform_softmax_loss() {
        let arch = MlpArchitecture::new(5, 3, 10);
        let params = ModelParams::zeros(arch);
        let data = random_dataset(20, 5, 10, 2);
        let (loss, _) = loss_and_grad_full(&params, &data).unwrap();
        assert!((loss - 10.0f64.ln()).abs() < 1e-12, "loss = {loss}");
    }

    #[test]
    fn gradient_matches_central_differences() {
        // Finite differences are only valid away from ReLU kinks: nets whose
        // pre-activations come within 1e-3 of zero are re-drawn, a margin two
        // orders above the probe step h = 1e-5.
        let h = 1e-5;
        let mut checked = 0;
        let mut seed = 0u64;
        while checked < 5 {
            seed += 1;
            let arch = MlpArchitecture::new(6, 4, 3);
            let params = init_params(arch, &mut rng(1000 + seed));
            let data = random_dataset(5, 6, 3, 2000 + seed);
            if kink_too_close(&params, &data, 1e-3) {
                continue;
            }
            checked += 1;
            let (_, grad) = loss_and_grad_full(&params, &data).unwrap();
            for (c, &analytic) in grad.iter().enumerate() {
                let mut plus = params.clone();
                plus.values[c] += h;
                let mut minus = params.clone();
                minus.values[c] -= h;
                let (lp, _) = loss_and_grad_full(&plus, &data).unwrap();
                let (lm, _) = loss_and_grad_full(&minus, &data).unwrap();
                let numeric = (lp - lm) / (2.0 * h);
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                let rel = (analytic - numeric).abs() / denom;
                assert!(rel < 1e-4, "coord {c}: analytic {analytic} vs numeric {numeric}");
            }
        }
    }

    /// True when any hidden pre-activation over the dataset is within
    /// `margin` of the ReLU kink.
    pub(crate) fn kink_too_close(params: &ModelParams, data: &ClientDataset, margin: f64) -> bool {
        let mut ws = Workspace::new(&params.arch);
        for i in 0..data.len() {
            forward(params, data.row(i), &mut ws);
            if ws.z1.iter().any(|z| z.abs() < margin) {
                return true;
            }
        }
        false
    }

    #[test]
    fn duplicated_batch_leaves_loss_and_grad_unchanged() {
        let arch = MlpArchitecture::new(6, 4, 3);
        let params = init_params(arch, &mut rng(3));
        let data = random_dataset(8, 6, 3, 4);
        let rows: Vec<usize> = (0..8).collect();
        let doubled: Vec<usize> = rows.iter().chain(&rows).copied().collect();
        let (l1, g1) = loss_and_grad(&params, &data, &rows).unwrap();
        let (l2, g2) = loss_and_grad(&params, &data, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_batch_and_dim_mismatch_are_errors() {
        let arch = MlpArchitecture::new(6, 4, 3);
        let params = init_params(arch, &mut rng(5));
        let data = random_dataset(4, 6, 3, 6);
        assert!(loss_and_grad(&params, &data, &[]).is_err());
        let wrong = random_dataset(4, 5, 3, 6);
        assert!(loss_and_grad_full(&params, &wrong).is_err());
        let bad_labels = ClientDataset::new(vec![0.0; 6], vec![7], 6).unwrap();
        assert!(loss_and_grad_full(&params, &bad_labels).is_err());
    }

    #[test]
    fn single_full_batch_step_matches_direct_gradient() {
        let arch = MlpArchitecture::new(6, 4, 3);
        let params = init_params(arch, &mut rng(7));
        let data = random_dataset(20, 6, 3, 8);
        let spec = TrainSpec { learning_rate: 0.05, local_epochs: 1, batch_size: 64 };
        let update = local_train(&params, &data, &spec, &mut rng(9)).unwrap();
        assert!(!update.skipped);
        let (_, grad) = loss_and_grad_full(&params, &data).unwrap();
        for ((p0, g), p1) in params.values.iter().zip(&grad).zip(&update.params.values) {
            assert!((p1 - (p0 - 0.05 * g)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let arch = MlpArchitecture::new(6, 4, 3);
        let params = init_params(arch, &mut rng(10));
        let data = random_dataset(10, 6, 3, 11);
        let spec = TrainSpec { learning_rate: 0.0, local_epochs: 2, batch_size: 4 };
        let update = local_train(&params, &data, &spec, &mut rng(12)).unwrap();
        assert_eq!(update.params, params);
    }

    #[test]
    fn local_train_deterministic_and_skips_empty() {
        let arch = MlpArchitecture::new(6, 4, 3);
        let params = init_params(arch, &mut rng(13));
        let data = random_dataset(33, 6, 3, 14);
        let spec = TrainSpec { learning_rate: 0.01, local_epochs: 3, batch_size: 8 };
        let a = local_train(&params, &data, &spec, &mut rng(15)).unwrap();
        let b = local_train(&params, &data, &spec, &mut rng(15)).unwrap();
        assert_eq!(a.params, b.params);

        let empty = ClientDataset::new(Vec::new(), Vec::new(), 6).unwrap();
        let update = local_train(&params, &empty, &spec, &mut rng(16)).unwrap();
        assert!(update.skipped);
        assert_eq!(update.params, params);
    }

    #[test]
    fn full_batch_step_never_increases_loss() {
        // Descent check: small eta on [0,1]-scaled data.
        for trial in 0..100u64 {
            let arch = MlpArchitecture::new(8, 6, 4);
            let params = init_params(arch, &mut rng(100 + trial));
            let data = random_dataset(16, 8, 4, 200 + trial);
            let (before, grad) = loss_and_grad_full(&params, &data).unwrap();
            let mut stepped = params.clone();
            for (p, g) in stepped.values.iter_mut().zip(&grad) {
                *p -= 1e-3 * g;
            }
            let (after, _) = loss_and_grad_full(&stepped, &data).unwrap();
            assert!(after <= before + 1e-12, "trial {trial}: {before} -> {after}");
        }
    }

    #[test]
    fn evaluate_matches_loss_and_ties_break_low() {
        let arch = MlpArchitecture::new(5, 3, 10);
        let zero = ModelParams::zeros(arch);
        // Balanced set: 2 samples per class.
        let data = random_dataset(20, 5, 10, 17);
        let (loss, acc) = evaluate(&zero, &data).unwrap();
        assert!((loss - 10.0f64.ln()).abs() < 1e-12);
        // All logits tie at zero, so every prediction is class 0.
        assert!((acc - 0.1).abs() < 1e-12);

        let params = init_params(arch, &mut rng(18));
        let (eval_loss, _) = evaluate(&params, &data).unwrap();
        let (direct_loss, _) = loss_and_grad_full(&params, &data).unwrap();
        assert!((eval_loss - direct_loss).abs() < 1e-10);
    }

    #[test]
    fn evaluate_perfect_separation() {
        // Hand-built net that routes feature 0 to class 0 and feature 1 to
        // class 1 through two ReLU units.
        let arch = MlpArchitecture::new(2, 2, 2);
        let mut params = ModelParams::zeros(arch);
        params.values[arch.w1_range()].copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        params.values[arch.w2_range()].copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let data =
            ClientDataset::new(vec![1.0, 0.0, 0.0, 1.0], vec![0, 1], 2).unwrap();
        let (_, acc) = evaluate(&params, &data).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn evaluate_invariant_under_row_permutation() {
        let arch = MlpArchitecture::new(6, 4, 3);
        let params = init_params(arch, &mut rng(19));
        let data = random_dataset(700, 6, 3, 20);
        let (loss_a, acc_a) = evaluate(&params, &data).unwrap();

        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng(21));
        let mut features = Vec::with_capacity(data.features.len());
        let mut labels = Vec::with_capacity(data.len());
        for &i in &order {
            features.extend_from_slice(data.row(i));
            labels.push(data.labels[i]);
        }
        let shuffled = ClientDataset::new(features, labels, 6).unwrap();
        let (loss_b, acc_b) = evaluate(&params, &shuffled).unwrap();
        assert!((loss_a - loss_b).abs() < 1e-10);
        assert_eq!(acc_a, acc_b);
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let arch = MlpArchitecture::new(9, 5, 4);
        let params = init_params(arch, &mut rng(22));
        let dir = std::env::temp_dir().join("fedsim_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        save_checkpoint(&params, 42, 17, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.params, params);
        assert_eq!(loaded.seed, 42);
        assert_eq!(loaded.round, 17);

        // Corrupt the magic.
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn param_count_formula_holds_for_random_architectures() {
        let mut r = rng(23);
        for _ in 0..50 {
            let arch = MlpArchitecture::new(
                r.random_range(1..40),
                r.random_range(1..40),
                r.random_range(1..20),
            );
            let params = init_params(arch, &mut rng(24));
            assert_eq!(
                params.values.len(),
                arch.input_dim * arch.hidden_dim
                    + arch.hidden_dim
                    + arch.hidden_dim * arch.output_dim
                    + arch.output_dim
            );
        }
    }
}
