//! Fixtures shared by the benchmarks.

use clipdesk_core::datagen::generate_corpus;
use clipdesk_core::index::EmbeddingRecord;
use clipdesk_core::trainer::TrainingSet;
use clipdesk_core::{Corpus, CorpusConfig, RetrievalIndex, Tensor, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

pub fn unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// A corpus with `n_train` training pairs and its tokenized training set.
pub fn small_corpus(n_train: usize) -> (Corpus, TrainingSet) {
    let corpus = generate_corpus(&CorpusConfig {
        n_train,
        n_test: 16,
        ..CorpusConfig::default()
    })
    .expect("valid corpus config");
    let set = TrainingSet::from_corpus(&corpus, TrainConfig::default().dims.max_len);
    (corpus, set)
}

/// An index of `n` random unit vectors with ids `0..n`.
pub fn random_index(n: usize, dim: usize, seed: u64) -> RetrievalIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut index = RetrievalIndex::new(dim).expect("positive dim");
    for id in 0..n as u64 {
        index
            .add(EmbeddingRecord {
                id,
                vector: unit_vector(dim, &mut rng),
                caption: String::new(),
                source: String::new(),
            })
            .expect("unit vector of the right size");
    }
    index
}
