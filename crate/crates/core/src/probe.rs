//! Linear probes on frozen image embeddings, the few-shot curve and the
//! distribution-shift gap.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::zeroshot::{accuracy_from_embeddings, argmax, ClassEmbedding};

pub const PROBE_ITERATIONS: usize = 500;
pub const PROBE_LEARNING_RATE: f64 = 0.1;
pub const PROBE_LAMBDA: f64 = 1e-3;

/// Labeled examples per class used to fit a probe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Shots {
    /// Only meaningful as a curve label: the zero-shot classifier.
    Zero,
    K(usize),
    All,
}

impl Shots {
    pub const FEW_SHOT_LADDER: [Shots; 5] = [Shots::K(1), Shots::K(2), Shots::K(4), Shots::K(8), Shots::K(16)];
}

impl fmt::Display for Shots {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shots::Zero => f.write_str("0"),
            Shots::K(k) => write!(f, "{k}"),
            Shots::All => f.write_str("all"),
        }
    }
}

/// Frozen embeddings of one split with class-index labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrozenSplit {
    pub embs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl FrozenSplit {
    pub fn len(&self) -> usize {
        self.embs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embs.is_empty()
    }
}

/// Multinomial logistic regression over embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeModel {
    pub weights: Tensor,
    pub bias: Tensor,
    pub classes: Vec<String>,
}

impl ProbeModel {
    pub fn logits(&self, emb: &[f64]) -> Vec<f64> {
        let c = self.classes.len();
        let mut out = self.bias.data().to_vec();
        for (p, &x) in emb.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(&self.weights.data()[p * c..(p + 1) * c]) {
                *o += x * w;
            }
        }
        out
    }

    pub fn predict(&self, emb: &[f64]) -> usize {
        argmax(&self.logits(emb))
    }

    pub fn accuracy(&self, split: &FrozenSplit) -> Result<f64> {
        if split.is_empty() {
            return Err(Error::EmptyInput("probe evaluation split"));
        }
        let hits = split
            .embs
            .iter()
            .zip(&split.labels)
            .filter(|(e, &l)| self.predict(e) == l)
            .count();
        Ok(hits as f64 / split.len() as f64)
    }

    pub fn weight_norm(&self) -> f64 {
        crate::tensor::norm(self.weights.data())
    }
}

/// Records `mean NLL + (λ/2)·‖W‖²` for rows `x` and class targets.
pub fn probe_objective(
    tape: &mut Tape,
    weights: Var,
    bias: Var,
    x: Var,
    targets: &[usize],
    lambda: f64,
) -> Result<Var> {
    let logits = tape.matmul(x, weights)?;
    let logits = tape.add(logits, bias)?;
    let logp = tape.log_softmax_rows(logits)?;
    let nll = tape.nll(logp, targets)?;
    if lambda == 0.0 {
        return Ok(nll);
    }
    let sq = tape.sum_squares(weights)?;
    let reg = tape.scale(sq, lambda / 2.0)?;
    tape.add(nll, reg)
}

/// Picks `shots` examples of every class with the seeded PRNG; returns
/// indices in ascending order.
pub fn sample_shots(labels: &[usize], classes: &[String], shots: Shots, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    for (c, name) in classes.iter().enumerate() {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        match shots {
            Shots::All => chosen.extend(members),
            Shots::K(k) => {
                if members.len() < k {
                    return Err(Error::InsufficientData {
                        class: name.clone(),
                        have: members.len(),
                        need: k,
                    });
                }
                members.shuffle(&mut rng);
                chosen.extend_from_slice(&members[..k]);
            }
            Shots::Zero => return Err(Error::InvalidConfig("a probe needs at least one shot".into())),
        }
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Fits a probe by full-batch proximal gradient descent: a gradient step on
/// the mean NLL followed by the closed-form shrink for the ridge term, so any
/// `λ ≥ 0` stays stable. Weights and bias start at zero.
pub fn train_probe(
    train: &FrozenSplit,
    classes: &[String],
    shots: Shots,
    lambda: f64,
    seed: u64,
) -> Result<ProbeModel> {
    if classes.is_empty() {
        return Err(Error::EmptyInput("class list"));
    }
    if train.is_empty() {
        return Err(Error::EmptyInput("probe training split"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!("ridge strength {lambda}")));
    }
    if let Some(&bad) = train.labels.iter().find(|&&l| l >= classes.len()) {
        return Err(Error::UnknownLabel(format!("class index {bad}")));
    }
    let idx = sample_shots(&train.labels, classes, shots, seed)?;
    if idx.is_empty() {
        return Err(Error::EmptyInput("probe training examples"));
    }
    let d = train.embs[0].len();
    let c = classes.len();
    let x = Tensor::matrix(
        idx.len(),
        d,
        idx.iter().flat_map(|&i| train.embs[i].iter().copied()).collect(),
    )?;
    let targets: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();

    let mut w = Tensor::zeros(vec![d, c])?;
    let mut b = Tensor::zeros(vec![1, c])?;
    let shrink = 1.0 / (1.0 + PROBE_LEARNING_RATE * lambda);
    for _ in 0..PROBE_ITERATIONS {
        let mut tape = Tape::new();
        let wv = tape.param(w.clone());
        let bv = tape.param(b.clone());
        let xv = tape.constant(x.clone());
        let loss = probe_objective(&mut tape, wv, bv, xv, &targets, 0.0)?;
        tape.backward(loss)?;
        let gw = tape.grad(wv).expect("weights receive a gradient");
        let gb = tape.grad(bv).expect("bias receives a gradient");
        for (wi, g) in w.data_mut().iter_mut().zip(gw) {
            *wi = (*wi - PROBE_LEARNING_RATE * g) * shrink;
        }
        for (bi, g) in b.data_mut().iter_mut().zip(gb) {
            *bi -= PROBE_LEARNING_RATE * g;
        }
    }
    Ok(ProbeModel {
        weights: w,
        bias: b,
        classes: classes.to_vec(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub shots: Shots,
    pub accuracy: f64,
}

/// Zero-shot accuracy (tagged `Shots::Zero`) followed by one probe per entry
/// of `ladder`, all scored on `test`.
pub fn few_shot_curve(
    class_embs: &[ClassEmbedding],
    log_scale: f64,
    train: &FrozenSplit,
    test: &FrozenSplit,
    ladder: &[Shots],
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    let classes: Vec<String> = class_embs.iter().map(|c| c.class_name.clone()).collect();
    let mut out = vec![CurvePoint {
        shots: Shots::Zero,
        accuracy: accuracy_from_embeddings(&test.embs, &test.labels, class_embs, log_scale)?,
    }];
    for &shots in ladder {
        let probe = train_probe(train, &classes, shots, PROBE_LAMBDA, seed)?;
        out.push(CurvePoint {
            shots,
            accuracy: probe.accuracy(test)?,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gap {
    pub acc_iid: f64,
    pub acc_shifted: f64,
    pub gap: f64,
}

impl Gap {
    pub fn new(acc_iid: f64, acc_shifted: f64) -> Self {
        Self {
            acc_iid,
            acc_shifted,
            gap: acc_iid - acc_shifted,
        }
    }
}

/// Shift gaps of the zero-shot classifier and of the fully supervised probe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShiftGapReport {
    pub zero_shot: Gap,
    pub probe: Gap,
}

impl ShiftGapReport {
    /// Positive when the zero-shot classifier loses less accuracy than the probe.
    pub fn robustness_margin(&self) -> f64 {
        self.probe.gap - self.zero_shot.gap
    }
}

pub fn shift_gap(
    class_embs: &[ClassEmbedding],
    log_scale: f64,
    train: &FrozenSplit,
    test_iid: &FrozenSplit,
    test_shifted: &FrozenSplit,
    seed: u64,
) -> Result<ShiftGapReport> {
    if test_iid.is_empty() || test_shifted.is_empty() {
        return Err(Error::EmptyInput("shift-gap split"));
    }
    let zs = |s: &FrozenSplit| accuracy_from_embeddings(&s.embs, &s.labels, class_embs, log_scale);
    let zero_shot = Gap::new(zs(test_iid)?, zs(test_shifted)?);
    let classes: Vec<String> = class_embs.iter().map(|c| c.class_name.clone()).collect();
    let probe = train_probe(train, &classes, Shots::All, PROBE_LAMBDA, seed)?;
    let probe = Gap::new(probe.accuracy(test_iid)?, probe.accuracy(test_shifted)?);
    Ok(ShiftGapReport { zero_shot, probe })
}
