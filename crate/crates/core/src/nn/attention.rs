use super::{join, Initializer, Linear};
use crate::error::{contract_err, shape_err, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Scaled dot-product attention split over `heads` equal slices of the
/// model dimension, with bias-free Q, K, V and output maps.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub dim: usize,
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
}

impl MultiHeadAttention {
    pub(crate) fn new(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        init: &mut Initializer,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(contract_err!("model dim {dim} not divisible by {heads} heads"));
        }
        Ok(MultiHeadAttention {
            dim,
            heads,
            query: Linear::without_bias(store, &join(prefix, "w_q"), dim, dim, init)?,
            key: Linear::without_bias(store, &join(prefix, "w_k"), dim, dim, init)?,
            value: Linear::without_bias(store, &join(prefix, "w_v"), dim, dim, init)?,
            out: Linear::without_bias(store, &join(prefix, "w_o"), dim, dim, init)?,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn forward<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        q_in: Var<'g>,
        k_in: Var<'g>,
        v_in: Var<'g>,
    ) -> Result<Var<'g>> {
        Ok(self.forward_with_weights(g, store, q_in, k_in, v_in)?.0)
    }

    /// Also returns the `[Lq × Lk]` attention matrix of every head.
    pub fn forward_with_weights<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        q_in: Var<'g>,
        k_in: Var<'g>,
        v_in: Var<'g>,
    ) -> Result<(Var<'g>, Vec<Var<'g>>)> {
        let (qs, ks, vs) = (q_in.shape(), k_in.shape(), v_in.shape());
        if qs.len() != 2 || ks.len() != 2 || qs[1] != self.dim || ks != vs {
            return Err(shape_err!(
                "attention over dim {} got q {qs:?}, k {ks:?}, v {vs:?}",
                self.dim
            ));
        }
        let q = self.query.forward(g, store, q_in)?;
        let k = self.key.forward(g, store, k_in)?;
        let v = self.value.forward(g, store, v_in)?;
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = q.slice(1, h * dh, dh)?;
            let kh = k.slice(1, h * dh, dh)?;
            let vh = v.slice(1, h * dh, dh)?;
            let a = qh.matmul(kh.t()?)?.scale(scale).softmax(1)?;
            heads.push(a.matmul(vh)?);
            weights.push(a);
        }
        let joined = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat(&heads, 1)?
        };
        Ok((self.out.forward(g, store, joined)?, weights))
    }
}

/// Post-norm encoder layer: `x + attn(x)` then layer norm, `x + ffn(x)` then
/// layer norm, with a relu feed-forward.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub attention: MultiHeadAttention,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub norm1: (ParamId, ParamId),
    pub norm2: (ParamId, ParamId),
}

impl TransformerLayer {
    pub(crate) fn new(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        ffn_dim: usize,
        init: &mut Initializer,
    ) -> Result<Self> {
        let attention = MultiHeadAttention::new(store, &join(prefix, "attn"), dim, heads, init)?;
        let norm1 = (
            init.filled(store, join(prefix, "norm1/gamma"), dim, 1.0)?,
            init.bias(store, join(prefix, "norm1/beta"), dim)?,
        );
        let ffn_in = Linear::new(store, &join(prefix, "ffn1"), dim, ffn_dim, init)?;
        let ffn_out = Linear::new(store, &join(prefix, "ffn2"), ffn_dim, dim, init)?;
        let norm2 = (
            init.filled(store, join(prefix, "norm2/gamma"), dim, 1.0)?,
            init.bias(store, join(prefix, "norm2/beta"), dim)?,
        );
        Ok(TransformerLayer {
            attention,
            ffn_in,
            ffn_out,
            norm1,
            norm2,
        })
    }

    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, seq: Var<'g>) -> Result<Var<'g>> {
        let attended = self.attention.forward(g, store, seq, seq, seq)?;
        let x = norm(g, store, seq.add(attended)?, self.norm1)?;
        let hidden = self.ffn_in.forward(g, store, x)?.relu();
        let y = self.ffn_out.forward(g, store, hidden)?;
        norm(g, store, x.add(y)?, self.norm2)
    }
}

fn norm<'g>(g: &'g Graph, store: &ParamStore, x: Var<'g>, (gamma, beta): (ParamId, ParamId)) -> Result<Var<'g>> {
    x.layer_norm(LAYER_NORM_EPS)?
        .mul(g.param(store, gamma))?
        .add(g.param(store, beta))
}
