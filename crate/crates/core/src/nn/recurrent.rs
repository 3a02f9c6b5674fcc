use super::{join, Initializer};
use crate::error::{contract_err, shape_err, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Var};

fn check_sequence(seq: &Var<'_>, input_dim: usize, what: &str) -> Result<usize> {
    let s = seq.shape();
    if s.len() != 2 || s[1] != input_dim {
        return Err(shape_err!("{what} expects [L × {input_dim}], got {s:?}"));
    }
    Ok(s[0])
}

fn truncate<'g>(seq: Var<'g>, input_dim: usize, valid_len: usize, what: &str) -> Result<Var<'g>> {
    let len = check_sequence(&seq, input_dim, what)?;
    if valid_len == 0 || valid_len > len {
        return Err(contract_err!("valid length {valid_len} outside 1..={len}"));
    }
    if valid_len == len {
        Ok(seq)
    } else {
        seq.slice(0, 0, valid_len)
    }
}

/// Single-layer LSTM, gate order `i, f, g, o`, one fused bias.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub input_dim: usize,
    pub hidden: usize,
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

impl Lstm {
    pub(crate) fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        init: &mut Initializer,
    ) -> Result<Self> {
        let w_ih = init.weight(store, join(prefix, "w_ih"), input_dim, 4 * hidden)?;
        let w_hh = init.weight(store, join(prefix, "w_hh"), hidden, 4 * hidden)?;
        let bias = init.bias(store, join(prefix, "bias"), 4 * hidden)?;
        Ok(Lstm {
            input_dim,
            hidden,
            w_ih,
            w_hh,
            bias,
        })
    }

    /// Hidden states for every step, as `[L × H]`.
    pub fn run<'g>(&self, g: &'g Graph, store: &ParamStore, seq: Var<'g>) -> Result<Var<'g>> {
        let len = check_sequence(&seq, self.input_dim, "lstm")?;
        let h_dim = self.hidden;
        let xw = seq.matmul(g.param(store, self.w_ih))?.add(g.param(store, self.bias))?;
        let w_hh = g.param(store, self.w_hh);
        let mut state: Option<(Var<'g>, Var<'g>)> = None;
        let mut outputs = Vec::with_capacity(len);
        for t in 0..len {
            let mut gates = xw.slice(0, t, 1)?;
            if let Some((h, _)) = state {
                gates = gates.add(h.matmul(w_hh)?)?;
            }
            let i = gates.slice(1, 0, h_dim)?.sigmoid();
            let f = gates.slice(1, h_dim, h_dim)?.sigmoid();
            let cand = gates.slice(1, 2 * h_dim, h_dim)?.tanh();
            let o = gates.slice(1, 3 * h_dim, h_dim)?.sigmoid();
            let c = match state {
                Some((_, c)) => f.mul(c)?.add(i.mul(cand)?)?,
                None => i.mul(cand)?,
            };
            let h = o.mul(c.tanh())?;
            outputs.push(h);
            state = Some((h, c));
        }
        g.concat(&outputs, 0)
    }

    /// Max-pool over time of the hidden states, `[L × in] -> [H]`.
    pub fn encode<'g>(&self, g: &'g Graph, store: &ParamStore, seq: Var<'g>) -> Result<Var<'g>> {
        self.run(g, store, seq)?.max(0)
    }

    /// Like [`Lstm::encode`] but only the first `valid_len` rows are read.
    pub fn encode_masked<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        seq: Var<'g>,
        valid_len: usize,
    ) -> Result<Var<'g>> {
        let seq = truncate(seq, self.input_dim, valid_len, "lstm")?;
        self.encode(g, store, seq)
    }
}

/// Single-layer GRU, gate order `r, z, n`, separate input and hidden biases:
///
/// ```text
/// r = σ(x·W_r + b_r + h·U_r + c_r)
/// z = σ(x·W_z + b_z + h·U_z + c_z)
/// n = tanh(x·W_n + b_n + r ⊙ (h·U_n + c_n))
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone)]
pub struct Gru {
    pub input_dim: usize,
    pub hidden: usize,
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
}

impl Gru {
    pub(crate) fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        init: &mut Initializer,
    ) -> Result<Self> {
        let w_ih = init.weight(store, join(prefix, "w_ih"), input_dim, 3 * hidden)?;
        let w_hh = init.weight(store, join(prefix, "w_hh"), hidden, 3 * hidden)?;
        let b_ih = init.bias(store, join(prefix, "b_ih"), 3 * hidden)?;
        let b_hh = init.bias(store, join(prefix, "b_hh"), 3 * hidden)?;
        Ok(Gru {
            input_dim,
            hidden,
            w_ih,
            w_hh,
            b_ih,
            b_hh,
        })
    }

    /// State after every step; element `t` has read rows `0..=t`. Each state
    /// is a `[H]` vector. The initial state is zero.
    pub fn run_all<'g>(&self, g: &'g Graph, store: &ParamStore, seq: Var<'g>) -> Result<Vec<Var<'g>>> {
        let len = check_sequence(&seq, self.input_dim, "gru")?;
        let h_dim = self.hidden;
        let xw = seq.matmul(g.param(store, self.w_ih))?.add(g.param(store, self.b_ih))?;
        let w_hh = g.param(store, self.w_hh);
        let b_hh = g.param(store, self.b_hh);
        let mut h: Option<Var<'g>> = None;
        let mut states = Vec::with_capacity(len);
        for t in 0..len {
            let x = xw.slice(0, t, 1)?;
            let hw = match h {
                Some(h) => h.matmul(w_hh)?.add(b_hh)?,
                None => b_hh.reshape(&[1, 3 * h_dim])?,
            };
            let r = x.slice(1, 0, h_dim)?.add(hw.slice(1, 0, h_dim)?)?.sigmoid();
            let z = x.slice(1, h_dim, h_dim)?.add(hw.slice(1, h_dim, h_dim)?)?.sigmoid();
            let n = x
                .slice(1, 2 * h_dim, h_dim)?
                .add(r.mul(hw.slice(1, 2 * h_dim, h_dim)?)?)?
                .tanh();
            let keep_new = z.affine(-1.0, 1.0).mul(n)?;
            let next = match h {
                Some(h) => keep_new.add(z.mul(h)?)?,
                None => keep_new,
            };
            states.push(next.reshape(&[h_dim])?);
            h = Some(next);
        }
        Ok(states)
    }

    /// Final state, `[L × in] -> [H]`.
    pub fn encode<'g>(&self, g: &'g Graph, store: &ParamStore, seq: Var<'g>) -> Result<Var<'g>> {
        Ok(*self.run_all(g, store, seq)?.last().expect("non-empty sequence"))
    }

    /// Like [`Gru::encode`] but only the first `valid_len` rows are read.
    pub fn encode_masked<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        seq: Var<'g>,
        valid_len: usize,
    ) -> Result<Var<'g>> {
        let seq = truncate(seq, self.input_dim, valid_len, "gru")?;
        self.encode(g, store, seq)
    }
}
