use rayon::prelude::*;

use crate::autodiff::Graph;
use crate::control::condition_on_target;
use crate::corpus::{Episode, Style, TokenId, Vocab, EOS};
use crate::error::{domain, Result};
use crate::generator::{generate_from_seed, DecodeMode};
use crate::metrics::{bleu, control_accuracy, meteor_simplified, rouge_l, MetricsReport};
use crate::model::{encode_episode, turn_target, ModelParams, ModelVars};
use crate::rng::Rng;
use crate::semantic_state::Noise;

use super::{salt, TrainConfig};

/// Greedy outputs for one turn.
#[derive(Clone, Debug, PartialEq)]
pub struct TurnOutput {
    /// Reference response without EOS.
    pub reference: Vec<TokenId>,
    /// Output under the turn's own style target, without EOS.
    pub hypothesis: Vec<TokenId>,
    /// Output with the style slot of the target flipped, without EOS.
    pub flipped: Vec<TokenId>,
    pub style: Style,
}

fn strip_eos(tokens: &[TokenId]) -> Vec<TokenId> {
    match tokens.split_last() {
        Some((&EOS, rest)) => rest.to_vec(),
        _ => tokens.to_vec(),
    }
}

/// Decodes every turn of one episode; returns the outputs and the episode's
/// per-turn mean drift.
fn episode_outputs(
    params: &ModelParams,
    episode: &Episode,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<(Vec<TurnOutput>, f64)> {
    let mut g = Graph::new();
    let vars = ModelVars::bind(&mut g, params)?;
    let mut noise = Noise {
        sigma: config.noise_sigma_eval,
        rng,
    };
    let traces = encode_episode(
        &mut g,
        &vars,
        &params.dims,
        params.state.memory_decay,
        episode,
        Some(&mut noise),
    )?;
    let anchor = g.value(traces[0].s).to_vec();
    let drift: f64 = traces
        .iter()
        .map(|t| g.value(t.s).iter().zip(&anchor).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .sum::<f64>()
        / traces.len() as f64;

    let mut outputs = Vec::with_capacity(traces.len());
    for (trace, turn) in traces.iter().zip(&episode.turns) {
        let mut decode = |style: Style| -> Result<Vec<TokenId>> {
            let r = turn_target(turn.style, turn.condition, Some(style));
            let seed = condition_on_target(&mut g, &vars.control, trace.h, &r)?;
            let (tokens, _) = generate_from_seed(&mut g, &vars.gen, seed, config.max_len, &mut DecodeMode::Greedy)?;
            Ok(strip_eos(&tokens))
        };
        let hypothesis = decode(turn.style)?;
        let flipped = decode(turn.style.flipped())?;
        outputs.push(TurnOutput {
            reference: strip_eos(&turn.response_tokens),
            hypothesis,
            flipped,
            style: turn.style,
        });
    }
    Ok((outputs, drift))
}

/// Greedy outputs for every turn of `episodes`, in order, plus the mean
/// per-episode drift.
pub fn evaluate_turns(params: &ModelParams, episodes: &[Episode], config: &TrainConfig) -> Result<(Vec<TurnOutput>, f64)> {
    if episodes.is_empty() {
        return domain("evaluation split is empty");
    }
    let base = Rng::new(config.seed).fork(salt::EVAL_NOISE);
    let per_episode = episodes
        .par_iter()
        .enumerate()
        .map(|(i, ep)| episode_outputs(params, ep, config, &mut base.fork(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mean_drift = per_episode.iter().map(|(_, d)| d).sum::<f64>() / per_episode.len() as f64;
    Ok((per_episode.into_iter().flat_map(|(o, _)| o).collect(), mean_drift))
}

/// Greedy generation on every turn with its reference style target and with
/// the style flipped, scored against the references.
pub fn evaluate(params: &ModelParams, episodes: &[Episode], vocab: &Vocab, config: &TrainConfig) -> Result<MetricsReport> {
    let (turns, mean_drift) = evaluate_turns(params, episodes, config)?;
    let hyps: Vec<&[TokenId]> = turns.iter().map(|t| t.hypothesis.as_slice()).collect();
    let refs: Vec<&[TokenId]> = turns.iter().map(|t| t.reference.as_slice()).collect();
    let n = turns.len() as f64;
    let mut rouge = 0.0;
    let mut meteor = 0.0;
    for t in &turns {
        rouge += rouge_l(&t.hypothesis, &t.reference)?;
        meteor += meteor_simplified(&t.hypothesis, &t.reference)?;
    }
    let styles: Vec<Style> = turns.iter().map(|t| t.style).collect();
    let flipped_styles: Vec<Style> = styles.iter().map(|s| s.flipped()).collect();
    let flipped: Vec<&[TokenId]> = turns.iter().map(|t| t.flipped.as_slice()).collect();
    Ok(MetricsReport {
        bleu: bleu(&hyps, &refs, 4)?,
        rouge_l: rouge / n,
        meteor_s: meteor / n,
        control_accuracy: control_accuracy(&hyps, &styles, vocab),
        flip_rate: control_accuracy(&flipped, &flipped_styles, vocab),
        mean_drift,
        n_turns: turns.len(),
    })
}
