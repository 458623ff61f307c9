//! Sensitivity sweeps over one configuration axis with CSV output.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check, GradCheckReport, DEFAULT_EPS};
use crate::corpus::{generate_corpus, Corpus, Domain, Episode, Style, Turn, EOS};
use crate::error::{domain, Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{forward_episode, ModelVars};
use crate::rng::Rng;
use crate::trainer::{evaluate, init_params, train, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Control-vector width `d_z`.
    ControlDim,
    /// Semantic-state width `d_s`.
    HiddenDim,
    /// Evaluation-time embedding noise `sigma`.
    Noise,
    /// Number of generated episodes.
    DataSize,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::ControlDim, Axis::HiddenDim, Axis::Noise, Axis::DataSize];

    pub fn label(self) -> &'static str {
        match self {
            Axis::ControlDim => "control_dim",
            Axis::HiddenDim => "hidden_dim",
            Axis::Noise => "noise",
            Axis::DataSize => "data_size",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            Axis::ControlDim => vec![2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
            Axis::HiddenDim => vec![8.0, 16.0, 32.0, 64.0, 128.0],
            Axis::Noise => vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            Axis::DataSize => vec![100.0, 300.0, 1000.0, 3000.0],
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Axis::Noise)
    }

    /// Applies an axis value to a configuration (data size is handled by the
    /// corpus, not the configuration).
    pub fn apply(self, base: &TrainConfig, value: f64) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Axis::ControlDim => cfg.d_z = value as usize,
            Axis::HiddenDim => cfg.d_s = value as usize,
            Axis::Noise => cfg.noise_sigma_eval = value,
            Axis::DataSize => {}
        }
        cfg
    }

    fn format_value(self, v: f64) -> String {
        if self.is_integer() {
            format!("{}", v as u64)
        } else {
            format!("{v}")
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Axis::ALL
            .into_iter()
            .find(|a| a.label() == s)
            .ok_or_else(|| {
                Error::Domain(format!(
                    "unknown axis `{s}` (expected control_dim, hidden_dim, noise or data_size)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub base: TrainConfig,
    /// Corpus size for every axis except `data_size`.
    pub episodes: usize,
    /// Seed of the generated corpus; fixed across runs so that only the
    /// run seed varies between repetitions.
    pub corpus_seed: u64,
}

pub const DEFAULT_SEEDS: usize = 5;
pub const DEFAULT_EPISODES: usize = 1000;

impl SweepSpec {
    /// Default grid, five consecutive seeds starting at the base seed.
    pub fn new(axis: Axis, base: TrainConfig) -> Self {
        let seeds = (0..DEFAULT_SEEDS as u64).map(|k| base.seed.wrapping_add(k)).collect();
        Self {
            axis,
            values: axis.default_values(),
            seeds,
            corpus_seed: base.seed,
            base,
            episodes: DEFAULT_EPISODES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return domain(format!("{} sweep has no values", self.axis));
        }
        if self.seeds.is_empty() {
            return domain("sweep has no seeds");
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            return domain(format!("{} values must be strictly increasing", self.axis));
        }
        for &v in &self.values {
            if !v.is_finite() || v < 0.0 {
                return domain(format!("{} value {v} must be finite and >= 0", self.axis));
            }
            if self.axis.is_integer() && (v.fract() != 0.0 || v < 1.0) {
                return domain(format!("{} value {v} must be a positive integer", self.axis));
            }
            if self.axis == Axis::DataSize && v < 10.0 {
                return domain(format!("data_size {v} leaves no room for a dev and test split"));
            }
        }
        if self.axis != Axis::DataSize && self.episodes < 10 {
            return domain(format!("corpus of {} episodes is too small to split", self.episodes));
        }
        for &v in &self.values {
            self.axis.apply(&self.base, v).validate()?;
        }
        Ok(())
    }
}

/// One CSV row: a single run, or (with `seed == None`) the mean over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub axis: Axis,
    pub value: f64,
    pub seed: Option<u64>,
    pub bleu: f64,
    pub rouge_l: f64,
    pub meteor_s: f64,
    pub control_accuracy: f64,
    pub mean_drift: f64,
    pub final_total_loss: f64,
    pub wall_seconds: f64,
}

impl SweepRow {
    pub fn is_aggregate(&self) -> bool {
        self.seed.is_none()
    }

    fn from_run(axis: Axis, value: f64, seed: u64, m: &MetricsReport, loss: f64, secs: f64) -> Self {
        Self {
            axis,
            value,
            seed: Some(seed),
            bleu: m.bleu,
            rouge_l: m.rouge_l,
            meteor_s: m.meteor_s,
            control_accuracy: m.control_accuracy,
            mean_drift: m.mean_drift,
            final_total_loss: loss,
            wall_seconds: secs,
        }
    }
}

pub const CSV_HEADER: [&str; 11] = [
    "axis",
    "value",
    "seed",
    "bleu",
    "rouge_l",
    "meteor_s",
    "control_accuracy",
    "mean_drift",
    "final_total_loss",
    "wall_seconds",
    "aggregate",
];

fn mean_of(rows: &[&SweepRow], f: impl Fn(&SweepRow) -> f64) -> f64 {
    rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64
}

/// Appends one aggregate row per value after that value's seed rows.
pub fn with_aggregates(rows: Vec<SweepRow>) -> Vec<SweepRow> {
    let mut out = Vec::with_capacity(rows.len() + rows.len() / 2);
    let mut i = 0;
    while i < rows.len() {
        let value = rows[i].value;
        let group: Vec<&SweepRow> = rows[i..].iter().take_while(|r| r.value == value).collect();
        let n = group.len();
        out.extend(group.iter().map(|r| (*r).clone()));
        out.push(SweepRow {
            axis: rows[i].axis,
            value,
            seed: None,
            bleu: mean_of(&group, |r| r.bleu),
            rouge_l: mean_of(&group, |r| r.rouge_l),
            meteor_s: mean_of(&group, |r| r.meteor_s),
            control_accuracy: mean_of(&group, |r| r.control_accuracy),
            mean_drift: mean_of(&group, |r| r.mean_drift),
            final_total_loss: mean_of(&group, |r| r.final_total_loss),
            wall_seconds: mean_of(&group, |r| r.wall_seconds),
        });
        i += n;
    }
    out
}

/// Trains and evaluates (on the test split) every `(value, seed)` pair.
/// Runs execute in parallel; rows come back in `(value, seed)` order followed
/// by the per-value aggregate row.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let axis = spec.axis;
    let shared = if axis == Axis::DataSize {
        None
    } else {
        Some(generate_corpus(spec.episodes, spec.corpus_seed)?)
    };

    let rows: Vec<SweepRow> = if axis == Axis::Noise {
        // evaluation noise does not touch training: one model per seed
        let corpus = shared.as_ref().expect("shared corpus");
        let per_seed = spec
            .seeds
            .par_iter()
            .map(|&seed| -> Result<Vec<SweepRow>> {
                let cfg = TrainConfig { seed, ..spec.base.clone() };
                let out = train(corpus, &cfg)?;
                spec.values
                    .iter()
                    .map(|&sigma| {
                        let start = Instant::now();
                        let cfg = axis.apply(&cfg, sigma);
                        let m = evaluate(&out.params, &out.splits.test, &corpus.vocab, &cfg)?;
                        let secs = out.wall_seconds + start.elapsed().as_secs_f64();
                        Ok(SweepRow::from_run(axis, sigma, seed, &m, out.final_total(), secs))
                    })
                    .collect()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::with_capacity(spec.values.len() * spec.seeds.len());
        for k in 0..spec.values.len() {
            rows.extend(per_seed.iter().map(|r| r[k].clone()));
        }
        rows
    } else {
        let jobs: Vec<(f64, u64)> = spec
            .values
            .iter()
            .flat_map(|&v| spec.seeds.iter().map(move |&s| (v, s)))
            .collect();
        jobs.par_iter()
            .map(|&(value, seed)| {
                let start = Instant::now();
                let owned;
                let corpus: &Corpus = match &shared {
                    Some(c) => c,
                    None => {
                        owned = generate_corpus(value as usize, spec.corpus_seed)?;
                        &owned
                    }
                };
                let cfg = axis.apply(&TrainConfig { seed, ..spec.base.clone() }, value);
                let out = train(corpus, &cfg)?;
                let m = evaluate(&out.params, &out.splits.test, &corpus.vocab, &cfg)?;
                log::info!("{axis}={} seed {seed}: bleu {:.4}", axis.format_value(value), m.bleu);
                Ok(SweepRow::from_run(axis, value, seed, &m, out.final_total(), start.elapsed().as_secs_f64()))
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok(with_aggregates(rows))
}

/// Writes rows under [`CSV_HEADER`].
pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.axis.label().to_string(),
            r.axis.format_value(r.value),
            r.seed.map_or_else(String::new, |s| s.to_string()),
            r.bleu.to_string(),
            r.rouge_l.to_string(),
            r.meteor_s.to_string(),
            r.control_accuracy.to_string(),
            r.mean_drift.to_string(),
            r.final_total_loss.to_string(),
            r.wall_seconds.to_string(),
            if r.is_aggregate() { "1" } else { "0" }.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(rows: &[SweepRow], path: &Path) -> Result<()> {
    write_csv(rows, std::fs::File::create(path)?)
}

/// Seed-averaged `(value, metric)` points from the aggregate rows.
pub fn aggregate_series(rows: &[SweepRow], metric: impl Fn(&SweepRow) -> f64) -> Vec<(f64, f64)> {
    rows.iter().filter(|r| r.is_aggregate()).map(|r| (r.value, metric(r))).collect()
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties. `NaN` when either
/// side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return domain(format!(
            "spearman needs two equal-length series of at least 2 points, got {} and {}",
            xs.len(),
            ys.len()
        ));
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Vocabulary size of the gradient-integrity probe.
pub const PROBE_VOCAB: usize = 50;

/// Random two-turn episode over a `vocab`-token alphabet.
pub fn random_episode(vocab: usize, rng: &mut Rng) -> Episode {
    let style = *rng.choose(&Style::ALL);
    let mut tokens = |len: usize| -> Vec<usize> { (0..len).map(|_| 4 + rng.below(vocab - 4)).collect() };
    let mut turns = Vec::new();
    for _ in 0..2 {
        let user_tokens = tokens(3);
        let mut response_tokens = tokens(4);
        response_tokens.push(EOS);
        turns.push(Turn {
            user_tokens,
            condition: Domain::Hotel,
            response_tokens,
            style,
        });
    }
    turns[1].condition = Domain::Taxi;
    Episode {
        episode_id: 0,
        style,
        turns,
    }
}

/// Finite-difference check of the full weighted objective on a random
/// two-turn episode with small widths (`d_p = d_z = 4`, `d_h = 8`).
pub fn gradient_integrity(seed: u64, d_s: usize) -> Result<GradCheckReport> {
    let cfg = TrainConfig {
        d_emb: 8,
        d_s,
        d_p: 4,
        d_z: 4,
        d_h: 8,
        seed,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let mut rng = Rng::new(seed);
    let params = init_params(&cfg, PROBE_VOCAB, &mut rng)?;
    let episode = random_episode(PROBE_VOCAB, &mut rng.fork(99));
    grad_check(&params.trainable(), DEFAULT_EPS, |g, v| {
        let vars = ModelVars::from_slice(g, v, &params)?;
        Ok(forward_episode(g, &vars, &params, &episode, &cfg.weights, None)?.loss)
    })
}
