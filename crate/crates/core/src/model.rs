//! The full model: parameter container, graph binding and the per-episode
//! forward pass that ties state, control, generation and objective together.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::control::{attribute_loss, attribute_target, condition_on_target, control_vector, ControlParams, ControlVars, ATTR_DIM};
use crate::corpus::{Domain, Episode, Style};
use crate::error::{Error, Result};
use crate::generator::{fuse, turn_nll, GenParams, GenVars};
use crate::objective::{drift_loss, struct_loss, total_loss, LossBreakdown, LossTerms, LossWeights};
use crate::semantic_state::{aggregate, encode_state, project, smoothness_loss, update_memory, Noise, StateParams, StateVars, TurnTrace};

/// Layer widths. `vocab` is the embedding / output-head size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub vocab: usize,
    pub d_emb: usize,
    pub d_s: usize,
    pub d_p: usize,
    pub d_z: usize,
    pub d_h: usize,
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        for (name, d) in [
            ("vocab", self.vocab),
            ("d_emb", self.d_emb),
            ("d_s", self.d_s),
            ("d_p", self.d_p),
            ("d_z", self.d_z),
            ("d_h", self.d_h),
        ] {
            if d == 0 {
                return Err(Error::Domain(format!("{name} must be at least 1")));
            }
        }
        if self.d_h < ATTR_DIM {
            return Err(Error::Domain(format!(
                "d_h must be at least {ATTR_DIM} to hold the attribute subspace, got {}",
                self.d_h
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: Dims,
    /// Token embeddings shared by the encoder and the decoder.
    pub embeddings: Tensor,
    pub state: StateParams,
    pub control: ControlParams,
    pub gen: GenParams,
}

pub const N_TRAINABLE: usize = 17;

impl ModelParams {
    /// Trainable tensors with their checkpoint names, in canonical order.
    /// The attribute map is not among them.
    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = Vec::with_capacity(N_TRAINABLE);
        out.push(("embeddings", &self.embeddings));
        out.extend(self.state.named());
        out.extend(self.control.named());
        out.extend(self.gen.named());
        out
    }

    /// Mutable trainable tensors in the order of [`ModelParams::named`].
    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::with_capacity(N_TRAINABLE);
        out.push(&mut self.embeddings);
        out.extend(self.state.tensors_mut());
        out.extend(self.control.tensors_mut());
        out.extend(self.gen.tensors_mut());
        out
    }

    pub fn trainable(&self) -> Vec<Tensor> {
        self.named().into_iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn n_scalars(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Checks every tensor shape against `dims`.
    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        d.validate()?;
        let expected: [(&str, &Tensor, Vec<usize>); 18] = [
            ("embeddings", &self.embeddings, vec![d.vocab, d.d_emb]),
            ("state.w_x", &self.state.w_x, vec![d.d_s, d.d_emb]),
            ("state.w_c", &self.state.w_c, vec![d.d_s, Domain::ALL.len()]),
            ("state.w_h", &self.state.w_h, vec![d.d_s, d.d_h]),
            ("state.b_s", &self.state.b_s, vec![d.d_s]),
            ("state.w_f", &self.state.w_f, vec![d.d_s, 3 * d.d_s]),
            ("state.b_f", &self.state.b_f, vec![d.d_s]),
            ("state.w_u", &self.state.w_u, vec![d.d_p, d.d_s]),
            ("state.b_u", &self.state.b_u, vec![d.d_p]),
            ("control.w_z", &self.control.w_z, vec![d.d_z, d.d_s]),
            ("control.b_z", &self.control.b_z, vec![d.d_z]),
            ("control.attr_map", &self.control.attr_map, vec![ATTR_DIM, d.d_h]),
            ("gen.w_phi", &self.gen.w_phi, vec![d.d_h, d.d_s + d.d_z]),
            ("gen.b_phi", &self.gen.b_phi, vec![d.d_h]),
            ("gen.w_r", &self.gen.w_r, vec![d.d_h, d.d_h + d.d_emb]),
            ("gen.b_r", &self.gen.b_r, vec![d.d_h]),
            ("gen.w_o", &self.gen.w_o, vec![d.vocab, d.d_h]),
            ("gen.b_o", &self.gen.b_o, vec![d.vocab]),
        ];
        for (name, t, shape) in expected {
            if t.shape() != shape.as_slice() {
                return Err(Error::Contract(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        if !(0.0..1.0).contains(&self.state.memory_decay) {
            return Err(Error::Domain(format!(
                "memory decay must lie in [0, 1), got {}",
                self.state.memory_decay
            )));
        }
        Ok(())
    }
}

/// [`ModelParams`] bound into one graph.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub embeddings: Var,
    pub state: StateVars,
    pub control: ControlVars,
    pub gen: GenVars,
    /// Trainable leaves in canonical order.
    pub trainable: Vec<Var>,
}

impl ModelVars {
    /// Binds every trainable tensor as a gradient-carrying leaf.
    pub fn bind(g: &mut Graph, params: &ModelParams) -> Result<Self> {
        let vars: Vec<Var> = params.named().iter().map(|(_, t)| g.param(t)).collect();
        Self::from_slice(g, &vars, params)
    }

    /// Wraps leaves already created for `params.named()` (in that order).
    pub fn from_slice(g: &mut Graph, vars: &[Var], params: &ModelParams) -> Result<Self> {
        if vars.len() != N_TRAINABLE {
            return Err(Error::Contract(format!(
                "expected {N_TRAINABLE} parameter leaves, got {}",
                vars.len()
            )));
        }
        Ok(Self {
            embeddings: vars[0],
            state: StateVars::from_slice(&vars[1..9]),
            control: ControlVars::bind(g, vars[9], vars[10], &params.control.attr_map)?,
            gen: GenVars::from_slice(vars[0], &vars[11..17]),
            trainable: vars.to_vec(),
        })
    }
}

/// Runs the state, memory, projection, control and fusion stages over every
/// turn of an episode.
pub fn encode_episode(
    g: &mut Graph,
    vars: &ModelVars,
    dims: &Dims,
    memory_decay: f64,
    episode: &Episode,
    mut noise: Option<&mut Noise<'_>>,
) -> Result<Vec<TurnTrace>> {
    if episode.turns.is_empty() {
        return Err(Error::Domain(format!("episode {} has no turns", episode.episode_id)));
    }
    let zeros_h = g.constant(&Tensor::zeros(&[dims.d_h]));
    let zeros_s = g.constant(&Tensor::zeros(&[dims.d_s]));
    let mut traces: Vec<TurnTrace> = Vec::with_capacity(episode.turns.len());
    for turn in &episode.turns {
        let prev = traces.last().copied();
        let h_prev = prev.map_or(zeros_h, |p| p.h);
        let s = encode_state(
            g,
            &vars.state,
            vars.embeddings,
            &turn.user_tokens,
            turn.condition,
            h_prev,
            noise.as_deref_mut(),
        )?;
        let (s_lag, m) = match prev {
            None => (zeros_s, zeros_s),
            Some(p) => (p.s, update_memory(g, p.m, p.s, memory_decay)?),
        };
        let s_hat = aggregate(g, &vars.state, s, s_lag, m)?;
        let (u, v) = project(g, &vars.state, s_hat)?;
        let z = control_vector(g, &vars.control, s)?;
        let h = fuse(g, &vars.gen, s, z)?;
        traces.push(TurnTrace { s, s_hat, u, v, m, z, h });
    }
    Ok(traces)
}

/// Attribute target `r_t` for a turn, optionally with the style overridden.
pub fn turn_target(episode_style: Style, condition: Domain, style_override: Option<Style>) -> Tensor {
    attribute_target(style_override.unwrap_or(episode_style), condition)
}

#[derive(Clone, Debug)]
pub struct EpisodeForward {
    pub traces: Vec<TurnTrace>,
    /// Decoder seed of each turn.
    pub seeds: Vec<Var>,
    pub loss: Var,
    pub breakdown: LossBreakdown,
}

/// Full teacher-forced forward pass and weighted objective for one episode.
pub fn forward_episode(
    g: &mut Graph,
    vars: &ModelVars,
    params: &ModelParams,
    episode: &Episode,
    weights: &LossWeights,
    noise: Option<&mut Noise<'_>>,
) -> Result<EpisodeForward> {
    let traces = encode_episode(g, vars, &params.dims, params.state.memory_decay, episode, noise)?;
    let mut seeds = Vec::with_capacity(traces.len());
    let mut targets = Vec::with_capacity(traces.len());
    let mut nll = Vec::with_capacity(traces.len());
    for (trace, turn) in traces.iter().zip(&episode.turns) {
        let r = turn_target(turn.style, turn.condition, None);
        let seed = condition_on_target(g, &vars.control, trace.h, &r)?;
        nll.push(turn_nll(g, &vars.gen, seed, &turn.response_tokens)?);
        targets.push(g.constant(&r));
        seeds.push(seed);
    }
    let h_seq: Vec<Var> = traces.iter().map(|t| t.h).collect();
    let s_seq: Vec<Var> = traces.iter().map(|t| t.s).collect();
    let v_seq: Vec<Var> = traces.iter().map(|t| t.v).collect();
    let terms = LossTerms {
        gen: g.add_all(&nll)?,
        attr: attribute_loss(g, vars.control.attr_map, &h_seq, &targets)?,
        smooth: smoothness_loss(g, &v_seq)?,
        struct_: struct_loss(g, &h_seq)?,
        drift: drift_loss(g, &s_seq)?,
    };
    let (loss, breakdown) = total_loss(g, &terms, weights)?;
    Ok(EpisodeForward {
        traces,
        seeds,
        loss,
        breakdown,
    })
}

/// Loss and per-parameter gradients (canonical order) for one episode.
pub fn episode_gradients(
    params: &ModelParams,
    episode: &Episode,
    weights: &LossWeights,
    noise: Option<&mut Noise<'_>>,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let vars = ModelVars::bind(&mut g, params)?;
    let fwd = forward_episode(&mut g, &vars, params, episode, weights, noise)?;
    g.backward(fwd.loss)?;
    let grads = vars
        .trainable
        .iter()
        .zip(params.named())
        .map(|(&v, (_, t))| g.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();
    Ok((fwd.breakdown, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, DEFAULT_EPS};
    use crate::corpus::{generate_corpus, Turn, EOS};
    use crate::generator::{generate, DecodeMode};
    use crate::rng::Rng;
    use crate::trainer::init_params;
    use crate::TrainConfig;

    fn small_config() -> TrainConfig {
        TrainConfig {
            d_emb: 6,
            d_s: 8,
            d_p: 4,
            d_z: 4,
            d_h: 8,
            ..TrainConfig::default()
        }
    }

    fn two_turn_episode(vocab: usize) -> Episode {
        let turn = |u: Vec<usize>, c, r: Vec<usize>| Turn {
            user_tokens: u,
            condition: c,
            response_tokens: r,
            style: Style::Casual,
        };
        Episode {
            episode_id: 0,
            style: Style::Casual,
            turns: vec![
                turn(vec![4, 9, 17], Domain::Hotel, vec![5, vocab - 1, 12, EOS]),
                turn(vec![23, 8], Domain::Taxi, vec![30, 7, EOS]),
            ],
        }
    }

    #[test]
    fn full_objective_gradient_check() {
        let cfg = small_config();
        let params = init_params(&cfg, 50, &mut Rng::new(7)).unwrap();
        let ep = two_turn_episode(50);
        let report = grad_check(&params.trainable(), DEFAULT_EPS, |g, v| {
            let vars = ModelVars::from_slice(g, v, &params)?;
            Ok(forward_episode(g, &vars, &params, &ep, &cfg.weights, None)?.loss)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert_eq!(report.entries_checked, params.n_scalars());
    }

    #[test]
    fn state_module_gradient_check() {
        let cfg = small_config();
        let params = init_params(&cfg, 50, &mut Rng::new(7)).unwrap();
        let ep = two_turn_episode(50);
        let report = grad_check(&params.state.named().map(|(_, t)| t.clone()), DEFAULT_EPS, |g, v| {
            let mut vars = ModelVars::bind(g, &params)?;
            vars.state = StateVars::from_slice(v);
            let traces = encode_episode(g, &vars, &params.dims, params.state.memory_decay, &ep, None)?;
            let vs: Vec<Var> = traces.iter().map(|t| t.v).collect();
            let ss: Vec<Var> = traces.iter().map(|t| t.s_hat).collect();
            let a = smoothness_loss(g, &vs)?;
            let b = struct_loss(g, &ss)?;
            g.add(a, b)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn memory_starts_at_zero_and_lag_is_previous_state() {
        let cfg = small_config();
        let params = init_params(&cfg, 50, &mut Rng::new(7)).unwrap();
        let ep = two_turn_episode(50);
        let mut g = Graph::new();
        let vars = ModelVars::bind(&mut g, &params).unwrap();
        let tr = encode_episode(&mut g, &vars, &params.dims, 0.0, &ep, None).unwrap();
        assert_eq!(g.value(tr[0].m), &[0.0; 8]);
        assert_eq!(g.value(tr[1].m), g.value(tr[0].s));
    }

    #[test]
    fn generate_and_losses_share_the_fused_state() {
        let cfg = small_config();
        let params = init_params(&cfg, 50, &mut Rng::new(7)).unwrap();
        let ep = two_turn_episode(50);
        let mut g = Graph::new();
        let vars = ModelVars::bind(&mut g, &params).unwrap();
        let fwd = forward_episode(&mut g, &vars, &params, &ep, &cfg.weights, None).unwrap();
        for tr in &fwd.traces {
            let out = generate(&mut g, &vars.gen, tr.s, tr.z, 5, &mut DecodeMode::Greedy, |_, h| Ok(h)).unwrap();
            assert_eq!(out.h_t, g.value(tr.h));
        }
    }

    #[test]
    fn conditioned_seed_matches_target_in_attribute_space() {
        let cfg = small_config();
        let params = init_params(&cfg, 50, &mut Rng::new(7)).unwrap();
        let ep = two_turn_episode(50);
        let mut g = Graph::new();
        let vars = ModelVars::bind(&mut g, &params).unwrap();
        let fwd = forward_episode(&mut g, &vars, &params, &ep, &cfg.weights, None).unwrap();
        for (seed, turn) in fwd.seeds.iter().zip(&ep.turns) {
            let a = vars.control.attr_map;
            let proj = g.matvec(a, *seed).unwrap();
            let r = turn_target(turn.style, turn.condition, None);
            for (p, t) in g.value(proj).iter().zip(r.data()) {
                assert!((p - t).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn breakdown_components_nonnegative_on_corpus() {
        let corpus = generate_corpus(20, 1).unwrap();
        let cfg = TrainConfig::default();
        let params = init_params(&cfg, corpus.vocab.len(), &mut Rng::new(7)).unwrap();
        for ep in &corpus.episodes {
            let (b, grads) = episode_gradients(&params, ep, &cfg.weights, None).unwrap();
            assert!(b.gen > 0.0 && b.attr >= 0.0 && b.smooth >= 0.0 && b.struct_ >= 0.0 && b.drift >= 0.0);
            assert!(grads.iter().flatten().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn shape_validation() {
        let cfg = small_config();
        let mut params = init_params(&cfg, 50, &mut Rng::new(7)).unwrap();
        params.validate().unwrap();
        params.gen.b_o = Tensor::zeros(&[49]);
        assert!(params.validate().is_err());
    }
}
