use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Relative error used by [`grad_check`]: `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Worst-case disagreement between backward and central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(param index, entry index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub entries_checked: usize,
}

/// Compares the reverse-mode gradient of `f` against central finite
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε` for every entry of every parameter
/// and returns the maximum relative error.
///
/// `f` receives a fresh graph plus one trainable leaf per parameter, in order,
/// and must return a scalar node. Values routed through [`Graph::detach`] are
/// frozen at their unperturbed values during the perturbed evaluations, so
/// the numeric side differentiates the same stop-gradient surrogate that
/// backward does.
pub fn grad_check<F>(params: &[Tensor], eps: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("eps must be positive, got {eps}")));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p)).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| g.grad(v).map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec))
        .collect();
    let frozen = g.detached_values().to_vec();

    let mut work: Vec<Tensor> = params.to_vec();
    let mut eval = |work: &[Tensor]| -> Result<f64> {
        let mut g = Graph::with_frozen_detached(frozen.clone());
        let vars: Vec<Var> = work.iter().map(|p| g.param(p)).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.scalar(out))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    for pi in 0..work.len() {
        #[allow(clippy::needless_range_loop)]
        for k in 0..work[pi].len() {
            let orig = work[pi].data()[k];
            work[pi].data_mut()[k] = orig + eps;
            let plus = eval(&work)?;
            work[pi].data_mut()[k] = orig - eps;
            let minus = eval(&work)?;
            work[pi].data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic[pi][k], numeric);
            report.entries_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((pi, k));
            }
        }
    }
    Ok(report)
}
