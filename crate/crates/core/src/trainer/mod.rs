//! Initialization, Adam training over episodes, evaluation and checkpoints.

mod checkpoint;
mod evaluate;
mod optimizer;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use evaluate::{evaluate, evaluate_turns, TurnOutput};
pub use optimizer::{adam_step, clip_global_norm, global_norm, AdamConfig, OptimizerState, StepInfo};

use crate::autodiff::{Graph, Tensor};
use crate::control::{orthonormal_rows, ControlParams, ATTR_DIM};
use crate::corpus::{split, Corpus, Domain, Episode, SplitRatios, Splits};
use crate::error::{domain, Error, Result};
use crate::generator::{GenParams, DEFAULT_MAX_LEN};
use crate::model::{episode_gradients, forward_episode, Dims, ModelParams, ModelVars};
use crate::objective::{LossBreakdown, LossWeights};
use crate::rng::Rng;
use crate::semantic_state::{Noise, StateParams};

/// Flat training configuration; the loss weights sit at the top level of
/// the serialized object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub d_emb: usize,
    pub d_s: usize,
    pub d_p: usize,
    pub d_z: usize,
    pub d_h: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub weights: LossWeights,
    pub memory_decay: f64,
    pub noise_sigma_eval: f64,
    pub noise_sigma_train: f64,
    pub max_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d_emb: 16,
            d_s: 32,
            d_p: 16,
            d_z: 8,
            d_h: 32,
            epochs: 20,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 5.0,
            seed: 42,
            weights: LossWeights::default(),
            memory_decay: 0.5,
            noise_sigma_eval: 0.0,
            noise_sigma_train: 0.0,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.dims(1).validate()?;
        if self.epochs == 0 {
            return domain("epochs must be at least 1");
        }
        if self.max_len == 0 {
            return domain("max_len must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return domain(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return domain("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return domain("adam_eps must be positive");
        }
        if !(0.0..1.0).contains(&self.memory_decay) {
            return domain(format!("memory_decay must lie in [0, 1), got {}", self.memory_decay));
        }
        for (name, s) in [
            ("noise_sigma_eval", self.noise_sigma_eval),
            ("noise_sigma_train", self.noise_sigma_train),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return domain(format!("{name} must be finite and >= 0, got {s}"));
            }
        }
        self.weights.validate()
    }

    pub fn dims(&self, vocab: usize) -> Dims {
        Dims {
            vocab,
            d_emb: self.d_emb,
            d_s: self.d_s,
            d_p: self.d_p,
            d_z: self.d_z,
            d_h: self.d_h,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            grad_clip: self.grad_clip,
        }
    }
}

/// Stream salts for the independent uses of the run seed.
pub(crate) mod salt {
    pub const INIT: u64 = 1;
    pub const ATTR_MAP: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const TRAIN_NOISE: u64 = 4;
    pub const EVAL_NOISE: u64 = 5;
}

fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let scale = 1.0 / (cols as f64).sqrt();
    let data = (0..rows * cols).map(|_| scale * rng.gaussian()).collect();
    Tensor::new(vec![rows, cols], data).expect("positive extents")
}

/// Gaussian weights with standard deviation `1/sqrt(fan_in)`, zero biases and
/// a random orthonormal attribute map.
pub fn init_params(config: &TrainConfig, vocab: usize, rng: &mut Rng) -> Result<ModelParams> {
    let d = config.dims(vocab);
    d.validate()?;
    let mut w = rng.fork(salt::INIT);
    let mut attr_rng = rng.fork(salt::ATTR_MAP);
    let n_dom = Domain::ALL.len();
    let params = ModelParams {
        dims: d,
        embeddings: gaussian_matrix(&mut w, d.vocab, d.d_emb),
        state: StateParams {
            w_x: gaussian_matrix(&mut w, d.d_s, d.d_emb),
            w_c: gaussian_matrix(&mut w, d.d_s, n_dom),
            w_h: gaussian_matrix(&mut w, d.d_s, d.d_h),
            b_s: Tensor::zeros(&[d.d_s]),
            w_f: gaussian_matrix(&mut w, d.d_s, 3 * d.d_s),
            b_f: Tensor::zeros(&[d.d_s]),
            w_u: gaussian_matrix(&mut w, d.d_p, d.d_s),
            b_u: Tensor::zeros(&[d.d_p]),
            memory_decay: config.memory_decay,
        },
        control: ControlParams {
            w_z: gaussian_matrix(&mut w, d.d_z, d.d_s),
            b_z: Tensor::zeros(&[d.d_z]),
            attr_map: orthonormal_rows(ATTR_DIM, d.d_h, &mut attr_rng)?,
        },
        gen: GenParams {
            w_phi: gaussian_matrix(&mut w, d.d_h, d.d_s + d.d_z),
            b_phi: Tensor::zeros(&[d.d_h]),
            w_r: gaussian_matrix(&mut w, d.d_h, d.d_h + d.d_emb),
            b_r: Tensor::zeros(&[d.d_h]),
            w_o: gaussian_matrix(&mut w, d.vocab, d.d_h),
            b_o: Tensor::zeros(&[d.vocab]),
        },
    };
    params.validate()?;
    Ok(params)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean breakdown over the epoch's training updates.
    pub train: LossBreakdown,
    /// Mean breakdown on the dev split after the epoch, if there is one.
    pub dev: Option<LossBreakdown>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub splits: Splits,
    pub wall_seconds: f64,
}

impl TrainOutcome {
    pub fn final_total(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |r| r.train.total)
    }
}

/// Losses above this abort training.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Splits the corpus 80/10/10 with the run seed and trains on the train part.
pub fn train(corpus: &Corpus, config: &TrainConfig) -> Result<TrainOutcome> {
    let splits = split(&corpus.episodes, SplitRatios::default(), config.seed)?;
    let start = Instant::now();
    let (params, history) = train_on(&splits.train, &splits.dev, corpus.vocab.len(), config)?;
    Ok(TrainOutcome {
        params,
        history,
        splits,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Mean loss breakdown of `params` over `episodes` (no updates).
pub fn mean_breakdown(params: &ModelParams, episodes: &[Episode], weights: &LossWeights) -> Result<LossBreakdown> {
    let items = episodes
        .iter()
        .map(|ep| {
            let mut g = Graph::new();
            let vars = ModelVars::bind(&mut g, params)?;
            Ok(forward_episode(&mut g, &vars, params, ep, weights, None)?.breakdown)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LossBreakdown::mean(&items))
}

/// Per-episode Adam training. Episode order is reshuffled every epoch.
pub fn train_on(
    train: &[Episode],
    dev: &[Episode],
    vocab: usize,
    config: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochRecord>)> {
    if train.is_empty() {
        return domain("training split is empty");
    }
    config.validate()?;
    let root = Rng::new(config.seed);
    let mut params = init_params(config, vocab, &mut root.clone())?;
    let mut shuffle_rng = root.fork(salt::SHUFFLE);
    let mut noise_rng = root.fork(salt::TRAIN_NOISE);
    let names: Vec<&'static str> = params.named().iter().map(|(n, _)| *n).collect();
    let mut opt = OptimizerState::new(params.named().into_iter().map(|(_, t)| t));
    let adam = config.adam();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut seen = Vec::with_capacity(train.len());
        for &i in &order {
            let mut noise = Noise {
                sigma: config.noise_sigma_train,
                rng: &mut noise_rng,
            };
            let noise = (config.noise_sigma_train > 0.0).then_some(&mut noise);
            let (breakdown, mut grads) = episode_gradients(&params, &train[i], &config.weights, noise)?;
            if !breakdown.total.is_finite() || breakdown.total > DIVERGENCE_THRESHOLD {
                log::error!("diverged in epoch {epoch}: {breakdown:?}");
                return Err(Error::Diverged {
                    epoch,
                    total: breakdown.total,
                });
            }
            adam_step(&mut params.trainable_mut(), &names, &mut grads, &mut opt, &adam)?;
            seen.push(breakdown);
        }
        let record = EpochRecord {
            epoch,
            train: LossBreakdown::mean(&seen),
            dev: if dev.is_empty() {
                None
            } else {
                Some(mean_breakdown(&params, dev, &config.weights)?)
            },
        };
        log::info!(
            "epoch {epoch}: train total {:.4} (gen {:.4}), dev total {}",
            record.train.total,
            record.train.gen,
            record.dev.map_or("-".to_string(), |d| format!("{:.4}", d.total))
        );
        history.push(record);
    }
    Ok((params, history))
}
