//! Structural and drift penalties and the weighted total objective.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{domain, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Weight of the structural-consistency term.
    pub alpha: f64,
    /// Weight of the drift penalty.
    pub beta: f64,
    pub gamma_gen: f64,
    pub lambda_attr: f64,
    pub lambda_smooth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.01,
            gamma_gen: 1.0,
            lambda_attr: 0.1,
            lambda_smooth: 0.1,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        alpha: 0.0,
        beta: 0.0,
        gamma_gen: 0.0,
        lambda_attr: 0.0,
        lambda_smooth: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma_gen", self.gamma_gen),
            ("lambda_attr", self.lambda_attr),
            ("lambda_smooth", self.lambda_smooth),
        ] {
            if !w.is_finite() || w < 0.0 {
                return domain(format!("loss weight {name} must be finite and >= 0, got {w}"));
            }
        }
        Ok(())
    }
}

/// Unweighted loss components of one forward pass and the weighted total.
/// `ctrl` is `lambda_attr · attr`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub gen: f64,
    pub attr: f64,
    pub ctrl: f64,
    pub smooth: f64,
    pub struct_: f64,
    pub drift: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Component-wise mean.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut m = LossBreakdown::default();
        for b in items {
            m.gen += b.gen;
            m.attr += b.attr;
            m.ctrl += b.ctrl;
            m.smooth += b.smooth;
            m.struct_ += b.struct_;
            m.drift += b.drift;
            m.total += b.total;
        }
        m.gen /= n;
        m.attr /= n;
        m.ctrl /= n;
        m.smooth /= n;
        m.struct_ /= n;
        m.drift /= n;
        m.total /= n;
        m
    }
}

/// `Σ_t ‖h_t − h̄‖²` with `h̄` the episode mean, held constant.
pub fn struct_loss(g: &mut Graph, h_seq: &[Var]) -> Result<Var> {
    if h_seq.is_empty() {
        return domain("struct_loss over an empty sequence");
    }
    let frozen = h_seq.iter().map(|&h| g.detach(h)).collect::<Result<Vec<_>>>()?;
    // running mean: exact when all states coincide
    let mut mean = g.value(frozen[0]).to_vec();
    for (k, &h) in frozen.iter().enumerate().skip(1) {
        for (m, x) in mean.iter_mut().zip(g.value(h)) {
            *m += (x - *m) / (k + 1) as f64;
        }
    }
    let mean = g.constant_vec(mean)?;
    let terms = h_seq
        .iter()
        .map(|&h| {
            let d = g.sub(h, mean)?;
            Ok(g.sum_sq(d))
        })
        .collect::<Result<Vec<_>>>()?;
    g.add_all(&terms)
}

/// `Σ_t ‖s_t − s_1‖₁` with the first state held constant.
pub fn drift_loss(g: &mut Graph, s_seq: &[Var]) -> Result<Var> {
    let Some(&first) = s_seq.first() else {
        return domain("drift_loss over an empty sequence");
    };
    let anchor = g.detach(first)?;
    let terms = s_seq
        .iter()
        .map(|&s| {
            let d = g.sub(s, anchor)?;
            Ok(g.l1(d))
        })
        .collect::<Result<Vec<_>>>()?;
    g.add_all(&terms)
}

/// Unweighted component nodes of one episode.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub gen: Var,
    pub attr: Var,
    pub smooth: Var,
    pub struct_: Var,
    pub drift: Var,
}

/// Weighted sum of the components. Zero-weight terms are left out of the
/// graph entirely.
pub fn total_loss(g: &mut Graph, terms: &LossTerms, weights: &LossWeights) -> Result<(Var, LossBreakdown)> {
    weights.validate()?;
    let weighted = [
        (terms.struct_, weights.alpha),
        (terms.drift, weights.beta),
        (terms.gen, weights.gamma_gen),
        (terms.attr, weights.lambda_attr),
        (terms.smooth, weights.lambda_smooth),
    ];
    let mut parts = Vec::with_capacity(weighted.len());
    for (v, w) in weighted {
        if w != 0.0 {
            parts.push(g.scale(v, w));
        }
    }
    let total = if parts.is_empty() {
        g.constant(&Tensor::scalar(0.0))
    } else {
        g.add_all(&parts)?
    };
    let attr = g.scalar(terms.attr);
    let breakdown = LossBreakdown {
        gen: g.scalar(terms.gen),
        attr,
        ctrl: weights.lambda_attr * attr,
        smooth: g.scalar(terms.smooth),
        struct_: g.scalar(terms.struct_),
        drift: g.scalar(terms.drift),
        total: g.scalar(total),
    };
    Ok((total, breakdown))
}
