use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Grads, ParamStore, Precision};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with bias correction. Moment buffers follow the store's canonical
/// parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        Adam {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update with learning rate `lr`. Any non-finite gradient aborts
    /// before a single value changes.
    pub fn update(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64, precision: Precision) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(crate::error::contract_err!(
                "optimizer state covers {} tensors, gradients {}, store {}",
                self.m.len(),
                grads.len(),
                store.len()
            ));
        }
        let ids: Vec<_> = store.ids().collect();
        for &id in &ids {
            if let Some(j) = grads.get(id).iter().position(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {} at {}[{j}]",
                    grads.get(id)[j],
                    store.name(id)
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for id in ids {
            let k = id.index();
            let g = grads.get(id);
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let values = store.get_mut(id).data_mut();
            for j in 0..g.len() {
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                values[j] = precision.round(values[j] - lr * m_hat / (v_hat.sqrt() + EPSILON));
            }
        }
        Ok(())
    }
}

/// Per-epoch learning-rate multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Flat, then linear decay to 0.1 at the final epoch.
    #[default]
    FlatThenLinear,
}

impl LrSchedule {
    pub fn factor(self, epoch: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::FlatThenLinear => lr_factor(epoch, total),
        }
    }
}

/// 1.0 through epoch `total / 2 + 1`, then linear down to 0.1 at
/// `total - 1`. Epoch 45 of 60 gives 0.55.
pub fn lr_factor(epoch: usize, total: usize) -> f64 {
    debug_assert!(epoch < total, "epoch {epoch} of {total}");
    if total <= 1 {
        return 1.0;
    }
    let last = total - 1;
    let flat_end = (total / 2 + 1).min(last - 1);
    if epoch <= flat_end {
        return 1.0;
    }
    let frac = (epoch.min(last) - flat_end) as f64 / (last - flat_end) as f64;
    1.0 - 0.9 * frac
}
