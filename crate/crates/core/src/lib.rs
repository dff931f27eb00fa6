//! Desk-scale contrastive image/text embedding: a small reverse-mode
//! autodiff core, bag-of-words text and patch-MLP image encoders trained
//! with a symmetric contrastive loss, zero-shot and linear-probe
//! evaluation, and an exact cosine top-k index.

pub mod autodiff;
pub mod datagen;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod index;
pub mod probe;
pub mod tensor;
pub mod trainer;
pub mod zeroshot;

pub use datagen::{Corpus, CorpusConfig, CorpusEntry, Raster, SceneSpec, Split};
pub use encoders::{ClipModel, EncoderDims, ModelParams, Pixels, TextMode, Vocabulary};
pub use error::{Error, Result};
pub use index::{EmbeddingRecord, RetrievalIndex, SearchHit};
pub use tensor::Tensor;
pub use trainer::{TrainConfig, TrainReport};
pub use zeroshot::{ClassEmbedding, PromptTemplate};
