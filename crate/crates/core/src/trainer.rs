//! Joint contrastive training of both encoders and the logit scale.
//!
//! Each step embeds a batch of N aligned (image, caption) pairs, forms the
//! N×N matrix `exp(log_scale) · ⟨img_i, txt_j⟩` and minimizes the mean of
//! the row-wise (image→text) and column-wise (text→image) cross-entropies
//! against the diagonal. Negatives come only from the batch.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::datagen::{Corpus, Split};
use crate::encoders::{
    image_forward, patch_batch, text_forward, ClipModel, EncoderDims, ImageVars, ModelParams, Pixels, TextMode,
    TextVars, Vocabulary,
};
use crate::error::{Error, Result};
use crate::tensor::{dot, norm, Tensor};

/// Batch size of the original full-scale run; kept as a reference point
/// for the desk-scale sweeps.
pub const REFERENCE_BATCH_SIZE: usize = 32_768;

/// Tolerance on `‖row‖ = 1` accepted by [`similarity_matrix`].
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub text_mode: TextMode,
    pub dims: EncoderDims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            steps: 1500,
            learning_rate: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 7,
            text_mode: TextMode::Bow,
            dims: EncoderDims::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch size must be at least 2".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be finite and ≥ 0".into()));
        }
        self.dims.validate()
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// `S[i,j] = exp(log_scale) · ⟨img_i, txt_j⟩` for unit-norm rows.
pub fn similarity_matrix(img: &[Vec<f64>], txt: &[Vec<f64>], log_scale: f64) -> Result<Tensor> {
    if img.is_empty() || img.len() != txt.len() {
        return Err(Error::shape(
            "similarity_matrix",
            format!("{} image rows vs {} text rows", img.len(), txt.len()),
        ));
    }
    for v in img.iter().chain(txt) {
        let n = norm(v);
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::NotUnit { norm: n });
        }
    }
    let scale = log_scale.exp();
    let n = img.len();
    let data = img
        .iter()
        .flat_map(|a| txt.iter().map(move |b| scale * dot(a, b)))
        .collect();
    Tensor::matrix(n, n, data)
}

/// Records the symmetric cross-entropy of a square similarity matrix.
pub fn contrastive_loss_graph(tape: &mut Tape, sim: Var) -> Result<Var> {
    let (n, m) = tape.value(sim)?.dims2()?;
    if n != m {
        return Err(Error::shape(
            "contrastive_loss",
            format!("similarity matrix must be square, got [{n}, {m}]"),
        ));
    }
    let targets: Vec<usize> = (0..n).collect();
    let rows = tape.log_softmax_rows(sim)?;
    let image_to_text = tape.nll(rows, &targets)?;
    let cols = tape.transpose(sim)?;
    let cols = tape.log_softmax_rows(cols)?;
    let text_to_image = tape.nll(cols, &targets)?;
    let total = tape.add(image_to_text, text_to_image)?;
    tape.scale(total, 0.5)
}

pub fn contrastive_loss(sim: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.constant(sim.clone());
    let loss = contrastive_loss_graph(&mut tape, s)?;
    tape.scalar_value(loss)
}

/// N aligned pairs: `images[i]` goes with `captions[i]`.
#[derive(Clone, Debug)]
pub struct Batch<'a> {
    pub images: Vec<&'a Pixels>,
    pub captions: Vec<&'a [usize]>,
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Parameter leaves of the full model, in [`crate::encoders::PARAM_NAMES`] order.
#[derive(Clone, Copy, Debug)]
pub struct ModelVars {
    pub text: TextVars,
    pub image: ImageVars,
    pub log_scale: Var,
}

impl ModelVars {
    pub fn record(tape: &mut Tape, params: &ModelParams, requires_grad: bool) -> Self {
        let text = TextVars::record(tape, &params.text, requires_grad);
        let image = ImageVars::record(tape, &params.image, requires_grad);
        let log_scale = tape.leaf(Tensor::scalar(params.log_scale).with_requires_grad(requires_grad));
        Self { text, image, log_scale }
    }

    /// Reassembles handles from a slice of seven leaves.
    pub fn from_slice(v: &[Var]) -> Result<Self> {
        if v.len() != 7 {
            return Err(Error::InvalidConfig(format!(
                "expected 7 parameter vars, got {}",
                v.len()
            )));
        }
        Ok(Self {
            text: TextVars {
                token_table: v[0],
                positional_table: v[1],
                proj_text: v[2],
            },
            image: ImageVars {
                patch_proj: v[3],
                hidden: v[4],
                proj_image: v[5],
            },
            log_scale: v[6],
        })
    }

    pub fn all(&self) -> [Var; 7] {
        [
            self.text.token_table,
            self.text.positional_table,
            self.text.proj_text,
            self.image.patch_proj,
            self.image.hidden,
            self.image.proj_image,
            self.log_scale,
        ]
    }
}

/// Records the full forward pass (both encoders, scaled similarities, loss).
pub fn loss_graph(
    tape: &mut Tape,
    vars: &ModelVars,
    batch: &Batch<'_>,
    mode: TextMode,
    dims: &EncoderDims,
) -> Result<Var> {
    if batch.images.len() != batch.captions.len() {
        return Err(Error::shape(
            "batch",
            format!("{} images vs {} captions", batch.images.len(), batch.captions.len()),
        ));
    }
    let txt = text_forward(tape, &vars.text, &batch.captions, mode)?;
    let patches = patch_batch(&batch.images, dims)?;
    let img = image_forward(tape, &vars.image, patches, dims.patches_per_image())?;
    let txt_t = tape.transpose(txt)?;
    let cos = tape.matmul(img, txt_t)?;
    let scale = tape.exp(vars.log_scale)?;
    let sim = tape.scale_by_scalar_param(cos, scale)?;
    contrastive_loss_graph(tape, sim)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One bias-corrected Adam update; `step` counts from 1.
pub fn adam_update(
    moments: &mut AdamMoments,
    step: u64,
    param: &mut [f64],
    grad: &[f64],
    hp: &AdamHyper,
) -> Result<()> {
    if param.len() != grad.len() || moments.m.len() != param.len() || moments.v.len() != param.len() {
        return Err(Error::shape(
            "adam_update",
            format!(
                "param {}, grad {}, moments {}/{}",
                param.len(),
                grad.len(),
                moments.m.len(),
                moments.v.len()
            ),
        ));
    }
    let t = step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for i in 0..param.len() {
        let g = grad[i];
        moments.m[i] = hp.beta1 * moments.m[i] + (1.0 - hp.beta1) * g;
        moments.v[i] = hp.beta2 * moments.v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = moments.m[i] / c1;
        let v_hat = moments.v[i] / c2;
        param[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}

/// Adam state for all seven parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub hyper: AdamHyper,
    pub step: u64,
    pub moments: Vec<AdamMoments>,
}

impl Optimizer {
    pub fn new(params: &ModelParams, hyper: AdamHyper) -> Self {
        let moments = params.tensors().iter().map(|t| AdamMoments::zeros(t.numel())).collect();
        Self {
            hyper,
            step: 0,
            moments,
        }
    }
}

/// One forward, one backward and one Adam update of every parameter.
/// `step_index` is only used to label a divergence.
pub fn train_step(
    params: &mut ModelParams,
    batch: &Batch<'_>,
    mode: TextMode,
    dims: &EncoderDims,
    opt: &mut Optimizer,
    step_index: usize,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = ModelVars::record(&mut tape, params, true);
    let loss_var = match loss_graph(&mut tape, &vars, batch, mode, dims) {
        Err(Error::NonFinite { .. }) => return Err(Error::Divergence { step: step_index }),
        other => other?,
    };
    let loss = tape.scalar_value(loss_var)?;
    if !loss.is_finite() {
        return Err(Error::Divergence { step: step_index });
    }
    tape.backward(loss_var)?;

    let grads: Vec<Vec<f64>> = vars
        .all()
        .iter()
        .zip(params.tensors())
        .map(|(v, t)| {
            tape.grad(*v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    opt.step += 1;
    let hyper = opt.hyper;
    let step = opt.step;
    for ((slot, p), g) in opt.moments.iter_mut().zip(params.tensors_mut()).zip(&grads) {
        adam_update(slot, step, p, g, &hyper)?;
    }
    let mut log_scale = [params.log_scale];
    adam_update(&mut opt.moments[6], step, &mut log_scale, &grads[6], &hyper)?;
    params.log_scale = log_scale[0];
    params.clamp_log_scale();
    Ok(loss)
}

/// Training pairs with captions already tokenized.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub vocab: Vocabulary,
    pub images: Vec<Pixels>,
    pub captions: Vec<Vec<usize>>,
}

impl TrainingSet {
    /// Uses the `train` split; the vocabulary is built from its captions.
    pub fn from_corpus(corpus: &Corpus, max_len: usize) -> Self {
        let idx = corpus.split_indices(Split::Train);
        let vocab = Vocabulary::from_texts(idx.iter().map(|&i| corpus.entries[i].caption.as_str()));
        let captions = idx
            .iter()
            .map(|&i| crate::encoders::tokenize(&corpus.entries[i].caption, &vocab, max_len))
            .collect();
        let images = idx.iter().map(|&i| corpus.rasters[i].to_pixels()).collect();
        Self {
            vocab,
            images,
            captions,
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Keeps only the first `n` pairs (the vocabulary is unchanged).
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            vocab: self.vocab.clone(),
            images: self.images[..n.min(self.len())].to_vec(),
            captions: self.captions[..n.min(self.len())].to_vec(),
        }
    }
}

/// Stateful training loop: model, optimizer and the epoch shuffle.
#[derive(Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: ClipModel,
    pub optimizer: Optimizer,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    steps_done: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, set: &TrainingSet) -> Result<Self> {
        config.validate()?;
        if set.len() < config.batch_size {
            return Err(Error::CorpusTooSmall {
                have: set.len(),
                need: config.batch_size,
            });
        }
        if let Some(i) = set.captions.iter().position(Vec::is_empty) {
            return Err(Error::InvalidConfig(format!("caption {i} has no tokens")));
        }
        let model = ClipModel::init(set.vocab.clone(), config.text_mode, config.dims, config.seed)?;
        let optimizer = Optimizer::new(&model.params, config.adam());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(&mut rng);
        Ok(Self {
            config,
            model,
            optimizer,
            rng,
            order,
            cursor: 0,
            steps_done: 0,
        })
    }

    /// Pair indices of the next batch; reshuffles when the epoch runs out.
    pub fn next_batch_indices(&mut self) -> Vec<usize> {
        let n = self.config.batch_size;
        if self.cursor + n > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let out = self.order[self.cursor..self.cursor + n].to_vec();
        self.cursor += n;
        out
    }

    pub fn step(&mut self, set: &TrainingSet) -> Result<f64> {
        let idx = self.next_batch_indices();
        let batch = Batch {
            images: idx.iter().map(|&i| &set.images[i]).collect(),
            captions: idx.iter().map(|&i| set.captions[i].as_slice()).collect(),
        };
        let loss = train_step(
            &mut self.model.params,
            &batch,
            self.config.text_mode,
            &self.config.dims,
            &mut self.optimizer,
            self.steps_done,
        )?;
        self.steps_done += 1;
        Ok(loss)
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub loss_trace: Vec<f64>,
    pub model: ClipModel,
    pub wall_ms: u128,
}

#[derive(Serialize)]
struct TrainReportJson<'a> {
    seed: u64,
    config: &'a TrainConfig,
    loss_trace: &'a [f64],
    wall_ms: u128,
}

impl TrainReport {
    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&TrainReportJson {
            seed: self.config.seed,
            config: &self.config,
            loss_trace: &self.loss_trace,
            wall_ms: self.wall_ms,
        })?)
    }

    /// Mean loss over the first and last 10% of steps (at least one each).
    pub fn head_tail_means(&self) -> (f64, f64) {
        head_tail_means(&self.loss_trace)
    }
}

/// Mean loss over the first and last tenth of a non-empty trace (at least one step each).
pub fn head_tail_means(trace: &[f64]) -> (f64, f64) {
    let n = trace.len();
    let w = (n / 10).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&trace[..w]), mean(&trace[n - w..]))
}

pub fn train(config: &TrainConfig, set: &TrainingSet) -> Result<TrainReport> {
    let start = Instant::now();
    let mut trainer = Trainer::new(config.clone(), set)?;
    let mut loss_trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let loss = trainer.step(set)?;
        if step % 100 == 0 {
            log::debug!("step {step}: loss {loss:.6}");
        }
        loss_trace.push(loss);
    }
    Ok(TrainReport {
        config: config.clone(),
        loss_trace,
        model: trainer.model,
        wall_ms: start.elapsed().as_millis(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(i: usize, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    #[test]
    fn similarity_of_basis_vectors() {
        let img: Vec<_> = (0..3).map(|i| basis(i, 3)).collect();
        let s = similarity_matrix(&img, &img, 0.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(s.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn identical_embeddings_give_constant_matrix() {
        let v = vec![basis(1, 4); 4];
        let s = similarity_matrix(&v, &v, 2.0).unwrap();
        assert!(s.data().iter().all(|&x| x == 2f64.exp()));
    }

    #[test]
    fn similarity_rejects_non_unit_rows() {
        let a = vec![vec![0.5, 0.0]];
        let b = vec![vec![1.0, 0.0]];
        assert!(matches!(similarity_matrix(&a, &b, 0.0), Err(Error::NotUnit { .. })));
    }

    #[test]
    fn uniform_and_single_pair_losses() {
        let s = Tensor::matrix(4, 4, vec![3.0; 16]).unwrap();
        assert!((contrastive_loss(&s).unwrap() - 4f64.ln()).abs() < 1e-9);
        let s = Tensor::matrix(1, 1, vec![5.0]).unwrap();
        assert_eq!(contrastive_loss(&s).unwrap(), 0.0);
    }

    #[test]
    fn non_square_loss_is_shape_error() {
        let s = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
        assert!(matches!(contrastive_loss(&s), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_gradient_leaves_param_unchanged() {
        let hp = AdamHyper {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut m = AdamMoments::zeros(2);
        let mut p = [1.5, -2.0];
        for step in 1..=5 {
            adam_update(&mut m, step, &mut p, &[0.0, 0.0], &hp).unwrap();
        }
        assert_eq!(p, [1.5, -2.0]);
    }

    #[test]
    fn adam_shape_mismatch() {
        let hp = AdamHyper {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut m = AdamMoments::zeros(2);
        let mut p = [0.0; 3];
        assert!(adam_update(&mut m, 1, &mut p, &[0.0; 3], &hp).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
