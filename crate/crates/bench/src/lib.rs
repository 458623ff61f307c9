//! Shared fixtures for the benchmarks.

use semctl_core::trainer::init_params;
use semctl_core::{generate_corpus, Corpus, ModelParams, Rng, TrainConfig};

/// A generated corpus with freshly initialized default-size parameters.
pub fn fixture(episodes: usize) -> (Corpus, ModelParams, TrainConfig) {
    let config = TrainConfig::default();
    let corpus = generate_corpus(episodes, config.seed).expect("corpus");
    let params = init_params(&config, corpus.vocab.len(), &mut Rng::new(config.seed)).expect("params");
    (corpus, params, config)
}
