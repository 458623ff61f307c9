//! Control vectors and the attribute constraint.
//!
//! The attribute map `A` (`5 × d_h`, orthonormal rows) is frozen at
//! initialization. Its rows span the part of the fused representation that
//! carries the controllable attributes: `L_attr = Σ_t ‖A h_t − r_t‖²` pulls
//! `h_t` toward the target inside that subspace, and at decode time the
//! decoder is seeded with `h_t` whose attribute coordinates are replaced by
//! the requested target, so that changing `r_t` steers generation.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::corpus::{Domain, Style};
use crate::error::{domain, Error, Result};
use crate::rng::Rng;

/// Two style slots followed by three domain slots.
pub const ATTR_DIM: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    pub w_z: Tensor,
    pub b_z: Tensor,
    /// Frozen attribute map `A`; never updated by the optimizer.
    pub attr_map: Tensor,
}

impl ControlParams {
    pub(crate) fn named(&self) -> [(&'static str, &Tensor); 2] {
        [("control.w_z", &self.w_z), ("control.b_z", &self.b_z)]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.w_z, &mut self.b_z]
    }
}

/// Graph handles for the control module. `attr_map`, `complement` and
/// `attr_map_t` are constants.
#[derive(Clone, Debug)]
pub struct ControlVars {
    pub w_z: Var,
    pub b_z: Var,
    pub attr_map: Var,
    /// `I − AᵀA`: projector onto the orthogonal complement of A's row space.
    pub complement: Var,
    /// `Aᵀ` as plain data, for building `Aᵀ r` offsets.
    pub attr_map_t: Tensor,
}

impl ControlVars {
    pub fn bind(g: &mut Graph, w_z: Var, b_z: Var, attr_map: &Tensor) -> Result<Self> {
        let (rows, cols) = (attr_map.rows(), attr_map.cols());
        let mut at = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                at[j * rows + i] = attr_map.at(i, j);
            }
        }
        let mut comp = vec![0.0; cols * cols];
        for a in 0..cols {
            for b in 0..cols {
                let dot: f64 = (0..rows).map(|k| attr_map.at(k, a) * attr_map.at(k, b)).sum();
                comp[a * cols + b] = if a == b { 1.0 - dot } else { -dot };
            }
        }
        Ok(Self {
            w_z,
            b_z,
            attr_map: g.constant(attr_map),
            complement: g.constant(&Tensor::matrix(cols, cols, comp)?),
            attr_map_t: Tensor::matrix(cols, rows, at)?,
        })
    }
}

/// `r_t`: style one-hot (formal, casual) then domain one-hot.
pub fn attribute_target(style: Style, domain: Domain) -> Tensor {
    let mut r = vec![0.0; ATTR_DIM];
    r[style.index()] = 1.0;
    r[2 + domain.index()] = 1.0;
    Tensor::vector(r)
}

/// `z_t = tanh(W_z s_t + b_z)`.
pub fn control_vector(g: &mut Graph, vars: &ControlVars, s_t: Var) -> Result<Var> {
    let pre = g.linear(s_t, vars.w_z, vars.b_z)?;
    Ok(g.tanh(pre))
}

/// `Σ_t ‖A h_t − r_t‖²`. Gradient reaches `h_t` only.
pub fn attribute_loss(g: &mut Graph, attr_map: Var, h_seq: &[Var], r_seq: &[Var]) -> Result<Var> {
    if h_seq.len() != r_seq.len() {
        return Err(Error::Contract(format!(
            "attribute_loss: {} hidden states vs {} targets",
            h_seq.len(),
            r_seq.len()
        )));
    }
    if h_seq.is_empty() {
        return domain("attribute_loss over an empty sequence");
    }
    let mut terms = Vec::with_capacity(h_seq.len());
    for (&h, &r) in h_seq.iter().zip(r_seq) {
        let ah = g.matvec(attr_map, h)?;
        let d = g.sub(ah, r)?;
        terms.push(g.sum_sq(d));
    }
    g.add_all(&terms)
}

/// `λ_attr · L_attr`.
pub fn ctrl_loss(g: &mut Graph, attr: Var, lambda_attr: f64) -> Result<Var> {
    if !(lambda_attr >= 0.0) || !lambda_attr.is_finite() {
        return domain(format!("lambda_attr must be finite and >= 0, got {lambda_attr}"));
    }
    Ok(g.scale(attr, lambda_attr))
}

/// Decoder seed `(I − AᵀA) h + Aᵀ r`: `h` with its attribute coordinates set
/// to `r`, so that `A · seed = r` exactly.
pub fn condition_on_target(g: &mut Graph, vars: &ControlVars, h: Var, r: &Tensor) -> Result<Var> {
    let at = &vars.attr_map_t;
    if r.len() != at.cols() {
        return Err(Error::Dimension {
            op: "condition_on_target",
            left: at.shape().to_vec(),
            right: r.shape().to_vec(),
        });
    }
    let offset: Vec<f64> = (0..at.rows())
        .map(|i| at.row(i).iter().zip(r.data()).map(|(a, b)| a * b).sum())
        .collect();
    let offset = g.constant_vec(offset)?;
    g.linear(h, vars.complement, offset)
}

/// `rows × cols` matrix with orthonormal rows: Gram–Schmidt over Gaussian
/// rows drawn from `rng` (redrawing any row that becomes degenerate).
pub fn orthonormal_rows(rows: usize, cols: usize, rng: &mut Rng) -> Result<Tensor> {
    if rows == 0 || rows > cols {
        return domain(format!(
            "cannot build {rows} orthonormal rows in dimension {cols}"
        ));
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rows);
    while basis.len() < rows {
        let mut v: Vec<f64> = (0..cols).map(|_| rng.gaussian()).collect();
        // two passes of classical Gram–Schmidt for numerical orthogonality
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let m = Tensor::matrix(rows, cols, basis.concat())?;
    let err = orthonormality_error(&m);
    if err > 1e-9 {
        return Err(Error::Contract(format!(
            "attribute map rows not orthonormal (max |AAᵀ − I| = {err:e})"
        )));
    }
    Ok(m)
}

/// `max |A Aᵀ − I|`.
pub fn orthonormality_error(a: &Tensor) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..a.rows() {
        for j in 0..a.rows() {
            let dot: f64 = a.row(i).iter().zip(a.row(j)).map(|(x, y)| x * y).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).abs());
        }
    }
    worst
}
