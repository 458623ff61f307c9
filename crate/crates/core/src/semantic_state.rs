//! Per-turn semantic state: encoding, memory, aggregation, projection and the
//! cross-turn smoothness penalty.
//!
//! ```text
//! s_t = tanh(W_x · ē(x_t) + W_c · onehot(c_t) + W_h · h_{t-1} + b_s)
//! m_t = μ · m_{t-1} + (1 − μ) · s_{t-1}          (no gradient)
//! ŝ_t = tanh(W_f · [s_t; s_{t-1}; m_t] + b_f)
//! u_t = W_u · ŝ_t + b_u,   v_t = sigmoid(u_t)
//! L_smooth = Σ_{t≥2} ‖v_t − v_{t-1}‖²
//! ```

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::corpus::{inject_noise, Domain, TokenId};
use crate::error::{domain, Result};
use crate::rng::Rng;

/// Encoder, aggregator and projection weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateParams {
    pub w_x: Tensor,
    pub w_c: Tensor,
    pub w_h: Tensor,
    pub b_s: Tensor,
    pub w_f: Tensor,
    pub b_f: Tensor,
    pub w_u: Tensor,
    pub b_u: Tensor,
    /// EMA decay of the external memory, in `[0, 1)`.
    pub memory_decay: f64,
}

impl StateParams {
    pub(crate) fn named(&self) -> [(&'static str, &Tensor); 8] {
        [
            ("state.w_x", &self.w_x),
            ("state.w_c", &self.w_c),
            ("state.w_h", &self.w_h),
            ("state.b_s", &self.b_s),
            ("state.w_f", &self.w_f),
            ("state.b_f", &self.b_f),
            ("state.w_u", &self.w_u),
            ("state.b_u", &self.b_u),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.w_x,
            &mut self.w_c,
            &mut self.w_h,
            &mut self.b_s,
            &mut self.w_f,
            &mut self.b_f,
            &mut self.w_u,
            &mut self.b_u,
        ]
    }
}

/// [`StateParams`] bound into a graph.
#[derive(Clone, Copy, Debug)]
pub struct StateVars {
    pub w_x: Var,
    pub w_c: Var,
    pub w_h: Var,
    pub b_s: Var,
    pub w_f: Var,
    pub b_f: Var,
    pub w_u: Var,
    pub b_u: Var,
}

impl StateVars {
    pub(crate) fn from_slice(v: &[Var]) -> Self {
        Self {
            w_x: v[0],
            w_c: v[1],
            w_h: v[2],
            b_s: v[3],
            w_f: v[4],
            b_f: v[5],
            w_u: v[6],
            b_u: v[7],
        }
    }
}

/// Per-turn intermediate values of the state pipeline.
#[derive(Clone, Copy, Debug)]
pub struct TurnTrace {
    pub s: Var,
    pub s_hat: Var,
    pub u: Var,
    pub v: Var,
    pub m: Var,
    pub z: Var,
    pub h: Var,
}

/// Evaluation-time perturbation of the user-utterance embeddings.
pub struct Noise<'a> {
    pub sigma: f64,
    pub rng: &'a mut Rng,
}

/// Semantic state of one turn. `h_prev` is the previous turn's fused
/// representation (zeros on the first turn).
///
/// With noise, every token embedding of `x_t` is perturbed independently
/// before averaging; since the perturbation is additive it enters the graph
/// as a constant offset on the mean embedding.
pub fn encode_state(
    g: &mut Graph,
    vars: &StateVars,
    embeddings: Var,
    x_t: &[TokenId],
    c_t: Domain,
    h_prev: Var,
    noise: Option<&mut Noise<'_>>,
) -> Result<Var> {
    if x_t.is_empty() {
        return domain("encode_state: empty user utterance");
    }
    let mut e_bar = g.gather_mean(embeddings, x_t)?;
    if let Some(n) = noise {
        if n.sigma > 0.0 {
            let d_emb = g.shape(e_bar)[0];
            let mut offset = vec![0.0; d_emb];
            let zero = Tensor::zeros(&[d_emb]);
            for _ in x_t {
                let eps = inject_noise(&zero, n.sigma, n.rng)?;
                for (o, e) in offset.iter_mut().zip(eps.data()) {
                    *o += e;
                }
            }
            let k = x_t.len() as f64;
            offset.iter_mut().for_each(|o| *o /= k);
            let c = g.constant_vec(offset)?;
            e_bar = g.add(e_bar, c)?;
        } else if n.sigma < 0.0 {
            return domain(format!("negative noise sigma {}", n.sigma));
        }
    }
    let n_dom = g.shape(vars.w_c)[1];
    let mut onehot = vec![0.0; n_dom];
    *onehot.get_mut(c_t.index()).ok_or(crate::Error::Index {
        what: "domain",
        index: c_t.index(),
        bound: n_dom,
    })? = 1.0;
    let onehot = g.constant_vec(onehot)?;

    let a = g.linear(e_bar, vars.w_x, vars.b_s)?;
    let b = g.matvec(vars.w_c, onehot)?;
    let c = g.matvec(vars.w_h, h_prev)?;
    let ab = g.add(a, b)?;
    let pre = g.add(ab, c)?;
    Ok(g.tanh(pre))
}

/// `m_t = μ · m_prev + (1 − μ) · s_prev`, returned as a constant node.
pub fn update_memory(g: &mut Graph, m_prev: Var, s_prev: Var, mu: f64) -> Result<Var> {
    if !(0.0..1.0).contains(&mu) {
        return domain(format!("memory decay must lie in [0, 1), got {mu}"));
    }
    let s = g.detach(s_prev)?;
    let m = g.detach(m_prev)?;
    if g.shape(s) != g.shape(m) {
        return Err(crate::Error::Dimension {
            op: "update_memory",
            left: g.shape(m).to_vec(),
            right: g.shape(s).to_vec(),
        });
    }
    let value: Vec<f64> = g
        .value(m)
        .iter()
        .zip(g.value(s))
        .map(|(mp, sp)| mu * mp + (1.0 - mu) * sp)
        .collect();
    g.constant_vec(value)
}

/// `ŝ_t = tanh(W_f · [s_t; s_lag; m_t] + b_f)`.
pub fn aggregate(g: &mut Graph, vars: &StateVars, s_t: Var, s_lag: Var, m_t: Var) -> Result<Var> {
    let cat = g.concat(&[s_t, s_lag, m_t])?;
    let pre = g.linear(cat, vars.w_f, vars.b_f)?;
    Ok(g.tanh(pre))
}

/// `(u_t, v_t)` with `u_t = W_u ŝ_t + b_u` and `v_t = sigmoid(u_t)`.
pub fn project(g: &mut Graph, vars: &StateVars, s_hat: Var) -> Result<(Var, Var)> {
    let u = g.linear(s_hat, vars.w_u, vars.b_u)?;
    let v = g.sigmoid(u);
    Ok((u, v))
}

/// `Σ_{t=2..T} ‖v_t − v_{t−1}‖²`; zero for a single turn.
pub fn smoothness_loss(g: &mut Graph, v_seq: &[Var]) -> Result<Var> {
    if v_seq.is_empty() {
        return domain("smoothness_loss over an empty sequence");
    }
    if v_seq.len() == 1 {
        return Ok(g.constant(&Tensor::scalar(0.0)));
    }
    let mut terms = Vec::with_capacity(v_seq.len() - 1);
    for w in v_seq.windows(2) {
        let d = g.sub(w[1], w[0])?;
        terms.push(g.sum_sq(d));
    }
    g.add_all(&terms)
}
