use super::{join, Initializer, LayerSpec, Linear};
use crate::error::{shape_err, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone)]
pub struct TextCnn {
    pub input_dim: usize,
    pub widths: Vec<usize>,
    pub filters: usize,
    /// One `[w·d × filters]` kernel and `[filters]` bias per width.
    pub kernels: Vec<(ParamId, ParamId)>,
    pub projection: Linear,
}

impl TextCnn {
    pub(crate) fn new(store: &mut ParamStore, prefix: &str, spec: &LayerSpec, init: &mut Initializer) -> Result<Self> {
        let d = spec.input_dim;
        let f = spec.filters_per_width;
        let mut kernels = Vec::with_capacity(spec.kernel_widths.len());
        for &w in &spec.kernel_widths {
            let k = init.weight(store, join(prefix, &format!("conv{w}/weight")), w * d, f)?;
            let b = init.bias(store, join(prefix, &format!("conv{w}/bias")), f)?;
            kernels.push((k, b));
        }
        let projection = Linear::new(
            store,
            &join(prefix, "proj"),
            f * spec.kernel_widths.len(),
            spec.output_dim,
            init,
        )?;
        Ok(TextCnn {
            input_dim: d,
            widths: spec.kernel_widths.clone(),
            filters: f,
            kernels,
            projection,
        })
    }

    /// `[L × d] -> [out]`. Inputs shorter than the widest kernel are padded
    /// with zero rows.
    pub fn encode<'g>(&self, g: &'g Graph, store: &ParamStore, tokens: Var<'g>) -> Result<Var<'g>> {
        let s = tokens.shape();
        if s.len() != 2 || s[1] != self.input_dim {
            return Err(shape_err!("textcnn expects [L × {}], got {s:?}", self.input_dim));
        }
        let widest = *self.widths.iter().max().expect("validated widths");
        let tokens = if s[0] < widest {
            let pad = g.constant(Tensor::zeros(&[widest - s[0], self.input_dim]));
            g.concat(&[tokens, pad], 0)?
        } else {
            tokens
        };
        let mut pooled = Vec::with_capacity(self.widths.len());
        for (&w, &(k, b)) in self.widths.iter().zip(&self.kernels) {
            let feature = tokens
                .unfold_rows(w)?
                .matmul(g.param(store, k))?
                .add(g.param(store, b))?
                .relu()
                .max(0)?;
            pooled.push(feature);
        }
        let joined = g.concat(&pooled, 0)?;
        self.projection.forward(g, store, joined)
    }
}
