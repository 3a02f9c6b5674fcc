// Raw row-major loops shared by the forward and backward passes.

/// `c[m×n] = a[m×k] · b[k×n]`
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cj, bj) in c_row.iter_mut().zip(b_row) {
                *cj += aip * bj;
            }
        }
    }
    c
}

/// `out[m×k] += g[m×n] · b[k×n]ᵀ`
pub(crate) fn matmul_bt_acc(out: &mut [f64], g: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for (x, y) in g_row.iter().zip(b_row) {
                s += x * y;
            }
            out[i * k + p] += s;
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · g[m×n]`
pub(crate) fn matmul_at_acc(out: &mut [f64], a: &[f64], g: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, gj) in out_row.iter_mut().zip(g_row) {
                *o += aip * gj;
            }
        }
    }
}

pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

/// Decomposition of a shape around one axis: `index = (o * len + k) * inner + i`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AxisSplit {
    pub outer: usize,
    pub len: usize,
    pub inner: usize,
}

impl AxisSplit {
    pub fn new(shape: &[usize], axis: usize) -> Self {
        AxisSplit {
            outer: shape[..axis].iter().product(),
            len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        }
    }

    #[inline]
    pub fn index(&self, o: usize, k: usize, i: usize) -> usize {
        (o * self.len + k) * self.inner + i
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_hand_evaluated() {
        let c = matmul(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0], 2, 2, 1);
        assert_eq!(c, vec![17.0, 39.0]);
    }

    #[test]
    fn transpose_twice_is_identity() {
        let a: Vec<f64> = (0..6).map(f64::from).collect();
        assert_eq!(transpose(&transpose(&a, 2, 3), 3, 2), a);
    }

    #[test]
    fn sigmoid_branches_agree_at_zero() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(-40.0) - (-40f64).exp() / (1.0 + (-40f64).exp())).abs() < 1e-30);
    }
}
