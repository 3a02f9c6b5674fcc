use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, Precision, Var};
use crate::error::{contract_err, Result};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step, within `[1e-6, 1e-3]`.
    pub eps: f64,
    /// Check at most this many coordinates of each parameter (sampled
    /// deterministically from `seed`); `None` checks every coordinate.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
    /// Steps tried, in order, for a coordinate whose error at `eps` exceeds
    /// `retry_above`; the coordinate keeps its smallest error. One step size
    /// cannot suit both a coordinate near an activation kink (needs a small
    /// step) and a tiny gradient drowned in roundoff (needs a large one).
    pub retry_eps: Vec<f64>,
    pub retry_above: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            max_coords_per_param: None,
            seed: 0,
            retry_eps: Vec::new(),
            retry_above: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Step that produced `numeric`.
    pub eps: f64,
    pub coords_checked: usize,
    /// Coordinates that needed a retry step.
    pub retried: usize,
}

/// Compares tape gradients of the scalar `f` against central differences
/// `(f(x+eps) - f(x-eps)) / 2eps` for the parameters of `store`.
///
/// The relative error of a coordinate is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`. Every perturbed
/// value is restored bit-exactly before returning.
pub fn grad_check<F>(store: &mut ParamStore, f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, &ParamStore) -> Result<Var<'g>>,
{
    for &eps in std::iter::once(&opts.eps).chain(&opts.retry_eps) {
        if !(1e-6..=1e-3).contains(&eps) {
            return Err(contract_err!("grad_check eps {eps} outside [1e-6, 1e-3]"));
        }
    }
    let graph = Graph::new(Precision::F64);
    let loss = f(&graph, store)?;
    if loss.numel() != 1 {
        return Err(contract_err!(
            "grad_check needs a scalar function, got shape {:?}",
            loss.shape()
        ));
    }
    graph.backward(loss)?;
    let grads = graph.param_grads(store);
    drop(graph);

    let eval = |store: &ParamStore| -> Result<f64> {
        let g = Graph::new(Precision::F64);
        Ok(f(&g, store)?.item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        eps: opts.eps,
        coords_checked: 0,
        retried: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).numel();
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(k) if k < n => {
                let mut picked = rand::seq::index::sample(&mut rng, n, k).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..n).collect(),
        };
        for j in coords {
            let analytic = grads.get(id)[j];
            let mut central = |eps: f64| -> Result<(f64, f64)> {
                let original = store.get(id).data()[j];
                store.get_mut(id).data_mut()[j] = original + eps;
                let plus = eval(store);
                store.get_mut(id).data_mut()[j] = original - eps;
                let minus = eval(store);
                store.get_mut(id).data_mut()[j] = original;
                let numeric = (plus? - minus?) / (2.0 * eps);
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                Ok(((analytic - numeric).abs() / denom, numeric))
            };
            let (mut rel, mut numeric) = central(opts.eps)?;
            let mut used = opts.eps;
            if rel > opts.retry_above && !opts.retry_eps.is_empty() {
                report.retried += 1;
                for &eps in &opts.retry_eps {
                    let (r, n) = central(eps)?;
                    if r < rel {
                        (rel, numeric, used) = (r, n, eps);
                    }
                    if rel <= opts.retry_above {
                        break;
                    }
                }
            }
            report.coords_checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst_param = store.name(id).to_string();
                report.worst_index = j;
                report.analytic = analytic;
                report.numeric = numeric;
                report.eps = used;
            }
        }
    }
    Ok(report)
}
