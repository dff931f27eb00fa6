//! Zero-shot classification: class names are wrapped in prompt templates,
//! encoded, averaged per class and compared against image embeddings with a
//! softmax over scaled cosine similarities.

use serde::{Deserialize, Serialize};

use crate::autodiff::log_softmax_slice;
use crate::encoders::{ClipModel, Pixels};
use crate::error::{Error, Result};
use crate::tensor::{dot, norm};

/// Templates used when the caller supplies none.
pub const DEFAULT_TEMPLATES: [&str; 4] = ["a photo of a {}", "an image of a {}", "a picture of a {}", "{}"];

/// A text pattern with exactly one `{}` placeholder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PromptTemplate(String);

impl PromptTemplate {
    pub fn new(pattern: impl Into<String>) -> Result<Self> {
        let pattern = pattern.into();
        let n = pattern.matches("{}").count();
        if n != 1 {
            return Err(Error::InvalidConfig(format!(
                "template {pattern:?} has {n} placeholders, expected exactly one"
            )));
        }
        Ok(Self(pattern))
    }

    /// The bare class name.
    pub fn contextless() -> Self {
        Self("{}".into())
    }

    pub fn pattern(&self) -> &str {
        &self.0
    }

    pub fn instantiate(&self, class: &str) -> String {
        self.0.replacen("{}", class, 1)
    }

    pub fn defaults() -> Vec<Self> {
        DEFAULT_TEMPLATES
            .iter()
            .map(|p| Self::new(*p).expect("default templates are valid"))
            .collect()
    }
}

impl TryFrom<String> for PromptTemplate {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::new(s)
    }
}

impl From<PromptTemplate> for String {
    fn from(t: PromptTemplate) -> Self {
        t.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassEmbedding {
    pub class_name: String,
    pub vector: Vec<f64>,
    pub n_templates: usize,
}

/// Every prompt built for `classes × templates`, grouped by class.
pub fn instantiate_prompts(classes: &[String], templates: &[PromptTemplate]) -> Vec<Vec<String>> {
    classes
        .iter()
        .map(|c| templates.iter().map(|t| t.instantiate(c)).collect())
        .collect()
}

/// Encodes every prompt of a class, averages the unit vectors and
/// re-normalizes. With one template this is plain prompt encoding.
pub fn build_class_embeddings(
    model: &ClipModel,
    classes: &[String],
    templates: &[PromptTemplate],
) -> Result<Vec<ClassEmbedding>> {
    if classes.is_empty() {
        return Err(Error::EmptyInput("class list"));
    }
    if templates.is_empty() {
        return Err(Error::EmptyInput("template list"));
    }
    let prompts = instantiate_prompts(classes, templates);
    let mut out = Vec::with_capacity(classes.len());
    for (class, class_prompts) in classes.iter().zip(prompts) {
        let ids: Vec<Vec<usize>> = class_prompts.iter().map(|p| model.tokenize(p)).collect();
        if let Some(i) = ids.iter().position(Vec::is_empty) {
            return Err(Error::EmptyPrompt(class_prompts[i].clone()));
        }
        let id_refs: Vec<&[usize]> = ids.iter().map(Vec::as_slice).collect();
        let embs = model.encode_text_id_batch(&id_refs)?;
        let vector = if embs.len() == 1 {
            embs.into_iter().next().expect("one embedding")
        } else {
            let d = embs[0].len();
            let mut mean = vec![0.0; d];
            for e in &embs {
                mean.iter_mut().zip(e).for_each(|(m, v)| *m += v);
            }
            let k = embs.len() as f64;
            mean.iter_mut().for_each(|m| *m /= k);
            let n = norm(&mean);
            if n <= crate::autodiff::NORM_EPS {
                return Err(Error::DegenerateVector { row: 0, norm: n });
            }
            mean.into_iter().map(|v| v / n).collect()
        };
        out.push(ClassEmbedding {
            class_name: class.clone(),
            vector,
            n_templates: templates.len(),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub probs: Vec<f64>,
    /// Highest probability; ties go to the lower class index.
    pub argmax: usize,
}

/// Index of the largest value, ties toward the lower index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax over `exp(log_scale) · ⟨image, class_i⟩`.
pub fn classify(image_emb: &[f64], classes: &[ClassEmbedding], log_scale: f64) -> Result<Classification> {
    if classes.is_empty() {
        return Err(Error::EmptyInput("class list"));
    }
    let scale = log_scale.exp();
    let mut logits = Vec::with_capacity(classes.len());
    for c in classes {
        if c.vector.len() != image_emb.len() {
            return Err(Error::DimMismatch {
                expected: image_emb.len(),
                found: c.vector.len(),
            });
        }
        logits.push(scale * dot(image_emb, &c.vector));
    }
    let probs: Vec<f64> = log_softmax_slice(&logits).into_iter().map(f64::exp).collect();
    // argmax on the logits so that exactly tied similarities pick the lower index
    Ok(Classification {
        argmax: argmax(&logits),
        probs,
    })
}

/// Fraction of embeddings whose argmax class equals the label index.
pub fn accuracy_from_embeddings(
    image_embs: &[Vec<f64>],
    labels: &[usize],
    classes: &[ClassEmbedding],
    log_scale: f64,
) -> Result<f64> {
    if image_embs.len() != labels.len() {
        return Err(Error::shape(
            "zero_shot_accuracy",
            format!("{} embeddings vs {} labels", image_embs.len(), labels.len()),
        ));
    }
    if image_embs.is_empty() {
        return Err(Error::EmptyInput("labeled images"));
    }
    let mut hits = 0usize;
    for (e, &l) in image_embs.iter().zip(labels) {
        if classify(e, classes, log_scale)?.argmax == l {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

/// Maps label names to indices into `classes`.
pub fn label_indices(labels: &[String], classes: &[String]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|l| {
            classes
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| Error::UnknownLabel(l.clone()))
        })
        .collect()
}

pub fn zero_shot_accuracy(
    model: &ClipModel,
    images: &[&Pixels],
    labels: &[String],
    classes: &[String],
    templates: &[PromptTemplate],
) -> Result<f64> {
    let label_idx = label_indices(labels, classes)?;
    let class_embs = build_class_embeddings(model, classes, templates)?;
    let embs = model.encode_image_batch(images)?;
    accuracy_from_embeddings(&embs, &label_idx, &class_embs, model.params.log_scale)
}
