use super::{join, Initializer};
use crate::error::{shape_err, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Var};

/// `y = x·W + b` with `W: [in × out]`; the bias is optional.
#[derive(Debug, Clone)]
pub struct Linear {
    pub input_dim: usize,
    pub output_dim: usize,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub(crate) fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        output_dim: usize,
        init: &mut Initializer,
    ) -> Result<Self> {
        let mut lin = Self::without_bias(store, prefix, input_dim, output_dim, init)?;
        lin.bias = Some(init.bias(store, join(prefix, "bias"), output_dim)?);
        Ok(lin)
    }

    pub(crate) fn without_bias(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        output_dim: usize,
        init: &mut Initializer,
    ) -> Result<Self> {
        let weight = init.weight(store, join(prefix, "weight"), input_dim, output_dim)?;
        Ok(Linear {
            input_dim,
            output_dim,
            weight,
            bias: None,
        })
    }

    /// Applies the map to the last axis; accepts `[in]` or `[rows × in]`.
    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        let shape = x.shape();
        if shape.last() != Some(&self.input_dim) {
            return Err(shape_err!(
                "linear expects last dim {}, got {:?}",
                self.input_dim,
                shape
            ));
        }
        let w = g.param(store, self.weight);
        let affine = |x2: Var<'g>| -> Result<Var<'g>> {
            let y = x2.matmul(w)?;
            match self.bias {
                Some(b) => y.add(g.param(store, b)),
                None => Ok(y),
            }
        };
        match shape.len() {
            1 => affine(x.reshape(&[1, self.input_dim])?)?.reshape(&[self.output_dim]),
            2 => affine(x),
            _ => {
                let rows = x.numel() / self.input_dim;
                let mut out_shape = shape.clone();
                *out_shape.last_mut().unwrap() = self.output_dim;
                affine(x.reshape(&[rows, self.input_dim])?)?.reshape(&out_shape)
            }
        }
    }
}
