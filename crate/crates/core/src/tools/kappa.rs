use serde::Serialize;

use crate::error::{contract_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaResult {
    pub kappa: f64,
    /// Mean per-item agreement.
    pub observed: f64,
    /// Chance agreement from the category marginals.
    pub expected: f64,
    pub items: usize,
    pub raters: u64,
    /// Every rating fell in one category; kappa is defined as 1.
    pub degenerate: bool,
}

/// Fleiss's kappa of an items x categories matrix of rating counts. Every
/// row must sum to the same rater count, at least 2.
pub fn fleiss_kappa(counts: &[Vec<u64>]) -> Result<KappaResult> {
    let Some(first) = counts.first() else {
        return Err(contract_err!("fleiss_kappa needs at least one item"));
    };
    let k = first.len();
    let r: u64 = first.iter().sum();
    if r < 2 {
        return Err(contract_err!(
            "fleiss_kappa needs at least 2 raters per item, found {r}"
        ));
    }
    for (i, row) in counts.iter().enumerate() {
        if row.len() != k {
            return Err(contract_err!("item {i} has {} categories, expected {k}", row.len()));
        }
        let s: u64 = row.iter().sum();
        if s != r {
            return Err(contract_err!("item {i} has {s} ratings, expected {r}"));
        }
    }
    let n = counts.len();
    // Integer form: observed = a / b, expected = c / d.
    let a: u128 = counts
        .iter()
        .map(|row| row.iter().map(|&x| (x as u128) * (x as u128)).sum::<u128>() - r as u128)
        .sum();
    let b = n as u128 * r as u128 * (r as u128 - 1);
    let c: u128 = (0..k)
        .map(|j| {
            let col: u128 = counts.iter().map(|row| row[j] as u128).sum();
            col * col
        })
        .sum();
    let d = (n as u128 * r as u128).pow(2);
    let observed = a as f64 / b as f64;
    let expected = c as f64 / d as f64;
    let degenerate = c == d;
    let kappa = if degenerate {
        1.0
    } else {
        exact_kappa(a, b, c, d).unwrap_or_else(|| (observed - expected) / (1.0 - expected))
    };
    Ok(KappaResult {
        kappa,
        observed,
        expected,
        items: n,
        raters: r,
        degenerate,
    })
}

/// `(a d - c b) / (b (d - c))` with one final rounding, or `None` on
/// overflow.
fn exact_kappa(a: u128, b: u128, c: u128, d: u128) -> Option<f64> {
    let num = (a.checked_mul(d)? as i128).checked_sub(c.checked_mul(b)? as i128)?;
    let den = b.checked_mul(d - c)?;
    let g = gcd(num.unsigned_abs(), den);
    let (num, den) = (num / g as i128, den / g);
    Some(num as f64 / den as f64)
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Per-item category counts of label-index triples.
pub fn counts_from_triples(triples: &[[usize; 3]], categories: usize) -> Vec<Vec<u64>> {
    triples
        .iter()
        .map(|t| {
            let mut row = vec![0; categories];
            for &l in t {
                row[l] += 1;
            }
            row
        })
        .collect()
}
