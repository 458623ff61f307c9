//! Fusion of state and control, token-level recurrent decoding, teacher-forced
//! likelihood and greedy / sampled generation.
//!
//! The semantic state `s_t` and control vector `z_t` are fixed for a turn;
//! their fusion `h_t` seeds a single-layer tanh cell that emits the response
//! token by token:
//!
//! ```text
//! h_t     = tanh(W_φ [s_t; z_t] + b_φ)
//! d_k     = tanh(W_r [d_{k-1}; e(y_{k-1})] + b_r),   d_0 = seed(h_t), y_0 = BOS
//! p(y_k)  = softmax(W_o d_k + b_o)
//! ```

use serde::{Deserialize, Serialize};

use crate::autodiff::{log_softmax_at, softmax, Graph, Tensor, Var};
use crate::corpus::{TokenId, BOS, EOS};
use crate::error::{domain, Result};
use crate::rng::Rng;

pub const DEFAULT_MAX_LEN: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub w_phi: Tensor,
    pub b_phi: Tensor,
    pub w_r: Tensor,
    pub b_r: Tensor,
    pub w_o: Tensor,
    pub b_o: Tensor,
}

impl GenParams {
    pub(crate) fn named(&self) -> [(&'static str, &Tensor); 6] {
        [
            ("gen.w_phi", &self.w_phi),
            ("gen.b_phi", &self.b_phi),
            ("gen.w_r", &self.w_r),
            ("gen.b_r", &self.b_r),
            ("gen.w_o", &self.w_o),
            ("gen.b_o", &self.b_o),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.w_phi,
            &mut self.b_phi,
            &mut self.w_r,
            &mut self.b_r,
            &mut self.w_o,
            &mut self.b_o,
        ]
    }
}

/// Generator weights bound into a graph, plus the shared embedding table.
#[derive(Clone, Copy, Debug)]
pub struct GenVars {
    pub embeddings: Var,
    pub w_phi: Var,
    pub b_phi: Var,
    pub w_r: Var,
    pub b_r: Var,
    pub w_o: Var,
    pub b_o: Var,
}

impl GenVars {
    pub(crate) fn from_slice(embeddings: Var, v: &[Var]) -> Self {
        Self {
            embeddings,
            w_phi: v[0],
            b_phi: v[1],
            w_r: v[2],
            b_r: v[3],
            w_o: v[4],
            b_o: v[5],
        }
    }

    pub fn vocab_size(&self, g: &Graph) -> usize {
        g.shape(self.w_o)[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    /// Emitted tokens, ending in EOS unless truncated at `max_len`.
    pub tokens: Vec<TokenId>,
    /// Sum of the log-probabilities of the emitted tokens.
    pub log_prob: f64,
    /// The turn's fused representation `h_t`.
    pub h_t: Vec<f64>,
}

impl DecodeResult {
    /// Tokens with the trailing EOS removed.
    pub fn content(&self) -> &[TokenId] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

pub enum DecodeMode<'a> {
    /// Argmax with ties broken toward the lowest token id.
    Greedy,
    Sample { temperature: f64, rng: &'a mut Rng },
}

/// `h_t = tanh(W_φ [s_t; z_t] + b_φ)`.
pub fn fuse(g: &mut Graph, vars: &GenVars, s_t: Var, z_t: Var) -> Result<Var> {
    let cat = g.concat(&[s_t, z_t])?;
    let pre = g.linear(cat, vars.w_phi, vars.b_phi)?;
    Ok(g.tanh(pre))
}

/// One decoder step: returns `(logits, d_next)`.
pub fn decode_step(g: &mut Graph, vars: &GenVars, d_prev: Var, y_prev: TokenId) -> Result<(Var, Var)> {
    let e = g.row(vars.embeddings, y_prev)?;
    let cat = g.concat(&[d_prev, e])?;
    let pre = g.linear(cat, vars.w_r, vars.b_r)?;
    let d_next = g.tanh(pre);
    let logits = g.linear(d_next, vars.w_o, vars.b_o)?;
    Ok((logits, d_next))
}

/// Teacher-forced `−log p(y | seed)` for one response (which should end in EOS).
pub fn turn_nll(g: &mut Graph, vars: &GenVars, seed: Var, response: &[TokenId]) -> Result<Var> {
    if response.is_empty() {
        return domain("turn_nll: empty response");
    }
    let mut d = seed;
    let mut prev = BOS;
    let mut terms = Vec::with_capacity(response.len());
    for &y in response {
        let (logits, next) = decode_step(g, vars, d, prev)?;
        terms.push(g.softmax_xent(logits, y)?);
        d = next;
        prev = y;
    }
    g.add_all(&terms)
}

/// `L_gen = Σ_t turn_nll(seed_t, y_t)` over an episode's turns.
pub fn sequence_nll(g: &mut Graph, vars: &GenVars, seeds: &[Var], responses: &[&[TokenId]]) -> Result<Var> {
    if seeds.len() != responses.len() {
        return Err(crate::Error::Contract(format!(
            "sequence_nll: {} seeds vs {} responses",
            seeds.len(),
            responses.len()
        )));
    }
    let terms = seeds
        .iter()
        .zip(responses)
        .map(|(&s, r)| turn_nll(g, vars, s, r))
        .collect::<Result<Vec<_>>>()?;
    g.add_all(&terms)
}

/// Greedy argmax, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Autoregressive decoding from a seed state until EOS or `max_len` tokens.
pub fn generate_from_seed(
    g: &mut Graph,
    vars: &GenVars,
    seed: Var,
    max_len: usize,
    mode: &mut DecodeMode<'_>,
) -> Result<(Vec<TokenId>, f64)> {
    if max_len == 0 {
        return domain("max_len must be at least 1");
    }
    if let DecodeMode::Sample { temperature, .. } = mode {
        if !(*temperature > 0.0) {
            return domain(format!("temperature must be positive, got {temperature}"));
        }
    }
    let mut d = seed;
    let mut prev = BOS;
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    while tokens.len() < max_len {
        let (logits, next) = decode_step(g, vars, d, prev)?;
        let lv = g.value(logits);
        let y = match mode {
            DecodeMode::Greedy => argmax(lv),
            DecodeMode::Sample { temperature, rng } => {
                let scaled: Vec<f64> = lv.iter().map(|l| l / *temperature).collect();
                let probs = softmax(&scaled);
                let u = rng.uniform01();
                let mut acc = 0.0;
                let mut pick = probs.len() - 1;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                pick
            }
        };
        log_prob += log_softmax_at(lv, y);
        tokens.push(y);
        d = next;
        prev = y;
        if y == EOS {
            break;
        }
    }
    Ok((tokens, log_prob))
}

/// Fuses `s_t` and `z_t`, applies `seed_fn` to the fused state (identity
/// or attribute conditioning) and decodes.
pub fn generate(
    g: &mut Graph,
    vars: &GenVars,
    s_t: Var,
    z_t: Var,
    max_len: usize,
    mode: &mut DecodeMode<'_>,
    seed_fn: impl FnOnce(&mut Graph, Var) -> Result<Var>,
) -> Result<DecodeResult> {
    let h = fuse(g, vars, s_t, z_t)?;
    let seed = seed_fn(g, h)?;
    let (tokens, log_prob) = generate_from_seed(g, vars, seed, max_len, mode)?;
    Ok(DecodeResult {
        tokens,
        log_prob,
        h_t: g.value(h).to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, DEFAULT_EPS};

    struct Toy {
        emb: Tensor,
        gen: GenParams,
    }

    fn randn(rng: &mut Rng, shape: &[usize], scale: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| scale * rng.gaussian()).collect()).unwrap()
    }

    fn toy(seed: u64, v: usize, d_emb: usize, d_s: usize, d_z: usize, d_h: usize) -> Toy {
        let mut rng = Rng::new(seed);
        Toy {
            emb: randn(&mut rng, &[v, d_emb], 0.5),
            gen: GenParams {
                w_phi: randn(&mut rng, &[d_h, d_s + d_z], 0.5),
                b_phi: randn(&mut rng, &[d_h], 0.1),
                w_r: randn(&mut rng, &[d_h, d_h + d_emb], 0.5),
                b_r: randn(&mut rng, &[d_h], 0.1),
                w_o: randn(&mut rng, &[v, d_h], 0.5),
                b_o: randn(&mut rng, &[v], 0.1),
            },
        }
    }

    fn bind(g: &mut Graph, t: &Toy) -> GenVars {
        let e = g.param(&t.emb);
        let v: Vec<Var> = t.gen.named().iter().map(|(_, x)| g.param(x)).collect();
        GenVars::from_slice(e, &v)
    }

    fn all_params(t: &Toy) -> Vec<Tensor> {
        let mut v = vec![t.emb.clone()];
        v.extend(t.gen.named().iter().map(|(_, x)| (*x).clone()));
        v
    }

    #[test]
    fn zero_fusion_weights() {
        let mut t = toy(1, 6, 3, 4, 2, 5);
        t.gen.w_phi = Tensor::zeros(&[5, 6]);
        t.gen.b_phi = Tensor::zeros(&[5]);
        let mut g = Graph::new();
        let v = bind(&mut g, &t);
        let s = g.constant_vec(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let z = g.constant_vec(vec![0.5, -0.5]).unwrap();
        let h = fuse(&mut g, &v, s, z).unwrap();
        assert_eq!(g.value(h), &[0.0; 5]);
    }

    #[test]
    fn fusion_depends_on_control() {
        let t = toy(2, 6, 3, 4, 2, 5);
        let mut g = Graph::new();
        let v = bind(&mut g, &t);
        let s = g.constant_vec(vec![0.1, 0.2, -0.3, 0.4]).unwrap();
        let z1 = g.constant_vec(vec![0.9, -0.2]).unwrap();
        let z2 = g.constant_vec(vec![-0.4, 0.7]).unwrap();
        let h1 = fuse(&mut g, &v, s, z1).unwrap();
        let h2 = fuse(&mut g, &v, s, z2).unwrap();
        assert_ne!(g.value(h1), g.value(h2));
    }

    #[test]
    fn fusion_gradient_check() {
        let t = toy(3, 6, 3, 4, 2, 5);
        let s = Tensor::vector(vec![0.1, 0.2, -0.3, 0.4]);
        let z = Tensor::vector(vec![0.3, -0.6]);
        let report = grad_check(&[t.gen.w_phi.clone(), t.gen.b_phi.clone()], DEFAULT_EPS, |g, p| {
            let mut v = bind(g, &t);
            v.w_phi = p[0];
            v.b_phi = p[1];
            let (s, z) = (g.constant(&s), g.constant(&z));
            let h = fuse(g, &v, s, z)?;
            Ok(g.sum_sq(h))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn decode_step_normalized_and_deterministic() {
        let t = toy(4, 9, 3, 4, 2, 5);
        let mut g = Graph::new();
        let v = bind(&mut g, &t);
        let d = g.constant_vec(vec![0.1, -0.2, 0.3, 0.0, 0.5]).unwrap();
        let (l1, d1) = decode_step(&mut g, &v, d, 4).unwrap();
        let (l2, d2) = decode_step(&mut g, &v, d, 4).unwrap();
        assert!((softmax(g.value(l1)).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(g.value(l1), g.value(l2));
        assert_eq!(g.value(d1), g.value(d2));
        assert!(matches!(
            decode_step(&mut g, &v, d, 9),
            Err(crate::Error::Index { .. })
        ));
    }

    #[test]
    fn three_chained_steps_gradient_check() {
        let t = toy(5, 7, 3, 4, 2, 5);
        let d0 = Tensor::vector(vec![0.2, -0.1, 0.4, 0.3, -0.5]);
        let report = grad_check(&all_params(&t), DEFAULT_EPS, |g, p| {
            let v = GenVars::from_slice(p[0], &p[1..]);
            let d = g.constant(&d0);
            turn_nll(g, &v, d, &[4, 6, EOS])
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn uniform_model_nll() {
        let mut t = toy(6, 2, 3, 4, 2, 5);
        t.gen.w_o = Tensor::zeros(&[2, 5]);
        t.gen.b_o = Tensor::zeros(&[2]);
        let mut g = Graph::new();
        let v = bind(&mut g, &t);
        let d = g.constant_vec(vec![0.3; 5]).unwrap();
        let l = turn_nll(&mut g, &v, d, &[0, 1, 1]).unwrap();
        assert!((g.scalar(l) - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn chain_rule_identity_against_stepwise_oracle() {
        let t = toy(7, 11, 3, 4, 2, 5);
        let responses: Vec<Vec<TokenId>> = vec![vec![4, 5, 9, EOS], vec![10, EOS], vec![3, 3, 7, 8, EOS]];
        let mut g = Graph::new();
        let v = bind(&mut g, &t);
        let seeds: Vec<Var> = (0..3)
            .map(|k| g.constant_vec(vec![0.1 * k as f64, -0.2, 0.3, 0.0, 0.5]).unwrap())
            .collect();
        let refs: Vec<&[TokenId]> = responses.iter().map(Vec::as_slice).collect();
        let l = sequence_nll(&mut g, &v, &seeds, &refs).unwrap();

        // oracle: plain-float recurrence, product of per-token probabilities
        let mut prob = 1.0;
        for (k, resp) in responses.iter().enumerate() {
            let mut d = vec![0.1 * k as f64, -0.2, 0.3, 0.0, 0.5];
            let mut prev = BOS;
            for &y in resp {
                let mut x = d.clone();
                x.extend_from_slice(t.emb.row(prev));
                let dn: Vec<f64> = (0..5)
                    .map(|i| {
                        let pre: f64 = (0..x.len()).map(|j| t.gen.w_r.at(i, j) * x[j]).sum::<f64>()
                            + t.gen.b_r.data()[i];
                        pre.tanh()
                    })
                    .collect();
                let logits: Vec<f64> = (0..11)
                    .map(|i| (0..5).map(|j| t.gen.w_o.at(i, j) * dn[j]).sum::<f64>() + t.gen.b_o.data()[i])
                    .collect();
                let z: f64 = logits.iter().map(|l| l.exp()).sum();
                prob *= logits[y].exp() / z;
                d = dn;
                prev = y;
            }
        }
        assert!(((-g.scalar(l)).exp() - prob).abs() < 1e-10);
        assert!(g.scalar(l) >= 0.0);
    }

    #[test]
    fn empty_response_rejected() {
        let t = toy(8, 5, 3, 4, 2, 5);
        let mut g = Graph::new();
        let v = bind(&mut g, &t);
        let d = g.constant_vec(vec![0.0; 5]).unwrap();
        assert!(turn_nll(&mut g, &v, d, &[]).is_err());
    }

    #[test]
    fn greedy_is_deterministic_and_ties_break_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
        let t = toy(9, 12, 3, 4, 2, 5);
        let run = || {
            let mut g = Graph::new();
            let v = bind(&mut g, &t);
            let s = g.constant_vec(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
            let z = g.constant_vec(vec![0.5, 0.6]).unwrap();
            generate(&mut g, &v, s, z, 20, &mut DecodeMode::Greedy, |_, h| Ok(h)).unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.log_prob <= 0.0);
        assert!(a.tokens.len() <= 20);
    }

    #[test]
    fn forced_token_repeats_until_max_len() {
        let mut t = toy(10, 8, 3, 4, 2, 5);
        let mut b = vec![0.0; 8];
        b[5] = 1000.0;
        t.gen.b_o = Tensor::vector(b);
        let mut g = Graph::new();
        let v = bind(&mut g, &t);
        let s = g.constant_vec(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let z = g.constant_vec(vec![0.5, 0.6]).unwrap();
        let r = generate(&mut g, &v, s, z, 7, &mut DecodeMode::Greedy, |_, h| Ok(h)).unwrap();
        assert_eq!(r.tokens, vec![5; 7]);

        let mut b = vec![0.0; 8];
        b[EOS] = 1000.0;
        t.gen.b_o = Tensor::vector(b);
        let mut g = Graph::new();
        let v = bind(&mut g, &t);
        let s = g.constant_vec(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let z = g.constant_vec(vec![0.5, 0.6]).unwrap();
        let r = generate(&mut g, &v, s, z, 7, &mut DecodeMode::Greedy, |_, h| Ok(h)).unwrap();
        assert_eq!(r.tokens, vec![EOS]);
        assert!(r.content().is_empty());
    }

    #[test]
    fn sampling_log_prob_bounded_and_seeded() {
        let t = toy(11, 12, 3, 4, 2, 5);
        let run = |seed: u64| {
            let mut g = Graph::new();
            let v = bind(&mut g, &t);
            let s = g.constant_vec(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
            let z = g.constant_vec(vec![0.5, 0.6]).unwrap();
            let mut rng = Rng::new(seed);
            let mut mode = DecodeMode::Sample {
                temperature: 1.3,
                rng: &mut rng,
            };
            generate(&mut g, &v, s, z, 20, &mut mode, |_, h| Ok(h)).unwrap()
        };
        for seed in 0..20 {
            let r = run(seed);
            assert!(r.log_prob <= 0.0 && r.log_prob.exp() <= 1.0);
            assert_eq!(r, run(seed));
        }
    }

    #[test]
    fn bad_decode_arguments() {
        let t = toy(12, 6, 3, 4, 2, 5);
        let mut g = Graph::new();
        let v = bind(&mut g, &t);
        let d = g.constant_vec(vec![0.0; 5]).unwrap();
        let mut rng = Rng::new(0);
        let mut mode = DecodeMode::Sample {
            temperature: 0.0,
            rng: &mut rng,
        };
        assert!(generate_from_seed(&mut g, &v, d, 5, &mut mode).is_err());
        assert!(generate_from_seed(&mut g, &v, d, 0, &mut DecodeMode::Greedy).is_err());
    }
}
