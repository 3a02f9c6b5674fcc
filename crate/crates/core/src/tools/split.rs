use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{AnnotationRecord, Emotion, Label, Split};
use crate::error::{contract_err, Result};

pub const MIN_CONVERSATIONS: usize = 10;
/// Candidate swaps tried by the balancing pass.
pub const SWAP_CANDIDATES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitOutcome {
    pub split: Split,
    /// Sum over non-empty subsets of the L1 distance between the subset's
    /// emotion and intent distributions and the global ones.
    pub distance: f64,
}

/// Subset sizes for `n` conversations: train and valid by rounding their
/// share, test takes the rest.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let total: f64 = ratios.iter().sum();
    let train = (n as f64 * ratios[0] / total).round() as usize;
    let valid = ((n as f64 * ratios[1] / total).round() as usize).min(n - train.min(n));
    let train = train.min(n);
    [train, valid, n - train - valid]
}

/// Emotion and intent counts of one dialogue.
#[derive(Debug, Clone)]
struct Profile {
    dia_no: u32,
    counts: Vec<f64>,
}

const BINS: usize = 7 + 9;

fn profiles(records: &[AnnotationRecord]) -> Vec<Profile> {
    let mut by_dia: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for r in records {
        let c = by_dia.entry(r.dia_no).or_insert_with(|| vec![0.0; BINS]);
        c[r.emotion.index()] += 1.0;
        c[Emotion::count() + r.intent.index()] += 1.0;
    }
    by_dia
        .into_iter()
        .map(|(dia_no, counts)| Profile { dia_no, counts })
        .collect()
}

fn l1_to_global(sum: &[f64], global: &[f64]) -> f64 {
    let mut d = 0.0;
    for range in [0..Emotion::count(), Emotion::count()..BINS] {
        let s: f64 = sum[range.clone()].iter().sum();
        let g: f64 = global[range.clone()].iter().sum();
        if s == 0.0 || g == 0.0 {
            continue;
        }
        d += range.map(|k| (sum[k] / s - global[k] / g).abs()).sum::<f64>();
    }
    d
}

fn total_distance(sums: &[Vec<f64>; 3], global: &[f64]) -> f64 {
    sums.iter().map(|s| l1_to_global(s, global)).sum()
}

/// Dialogue-level random split with sizes from `ratios`, followed by one
/// pass over [`SWAP_CANDIDATES`] random cross-subset swaps that keeps a swap
/// only when it lowers the label-distribution distance. The pass stops early
/// once the distance is within `tolerance`.
pub fn split_corpus(records: &[AnnotationRecord], ratios: [f64; 3], seed: u64, tolerance: f64) -> Result<SplitOutcome> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || ratios.iter().sum::<f64>() <= 0.0 {
        return Err(contract_err!("split ratios must be non-negative with a positive sum"));
    }
    let dias = profiles(records);
    let n = dias.len();
    if n < MIN_CONVERSATIONS {
        return Err(contract_err!(
            "splitting needs at least {MIN_CONVERSATIONS} conversations, found {n}"
        ));
    }
    let sizes = split_sizes(n, ratios);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut assign = vec![0usize; n];
    let mut members: [Vec<usize>; 3] = Default::default();
    let mut cursor = 0;
    for (subset, &size) in sizes.iter().enumerate() {
        for &d in &order[cursor..cursor + size] {
            assign[d] = subset;
            members[subset].push(d);
        }
        cursor += size;
    }
    let mut global = vec![0.0; BINS];
    let mut sums: [Vec<f64>; 3] = [vec![0.0; BINS], vec![0.0; BINS], vec![0.0; BINS]];
    for (d, p) in dias.iter().enumerate() {
        for k in 0..BINS {
            global[k] += p.counts[k];
            sums[assign[d]][k] += p.counts[k];
        }
    }
    let mut distance = total_distance(&sums, &global);
    for _ in 0..SWAP_CANDIDATES {
        if distance <= tolerance {
            break;
        }
        let a = rng.random_range(0..3);
        let b = (a + rng.random_range(1..3)) % 3;
        if members[a].is_empty() || members[b].is_empty() {
            continue;
        }
        let ia = rng.random_range(0..members[a].len());
        let ib = rng.random_range(0..members[b].len());
        let (da, db) = (members[a][ia], members[b][ib]);
        let mut trial = sums.clone();
        for k in 0..BINS {
            let delta = dias[db].counts[k] - dias[da].counts[k];
            trial[a][k] += delta;
            trial[b][k] -= delta;
        }
        let d = total_distance(&trial, &global);
        if d < distance {
            distance = d;
            sums = trial;
            members[a][ia] = db;
            members[b][ib] = da;
        }
    }
    let ids = |subset: usize| -> Vec<u32> {
        let mut v: Vec<u32> = members[subset].iter().map(|&d| dias[d].dia_no).collect();
        v.sort_unstable();
        v
    };
    let split = Split {
        train: ids(0),
        valid: ids(1),
        test: ids(2),
    };
    let mut fresh: [Vec<f64>; 3] = [vec![0.0; BINS], vec![0.0; BINS], vec![0.0; BINS]];
    for (subset, list) in members.iter().enumerate() {
        for &d in list {
            for k in 0..BINS {
                fresh[subset][k] += dias[d].counts[k];
            }
        }
    }
    Ok(SplitOutcome {
        distance: total_distance(&fresh, &global),
        split,
    })
}
