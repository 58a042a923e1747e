//! Means and block-jackknife errors over realizations.

use serde::Serialize;

/// Upper bound on the number of jackknife blocks.
pub const MAX_BLOCKS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    /// `|mean - target| <= k * std_error`.
    pub fn consistent_with(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error
    }
}

/// Contiguous assignment of `n` realizations to at most [`MAX_BLOCKS`] blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Blocking {
    pub n: usize,
    pub n_blocks: usize,
}

impl Blocking {
    pub fn new(n: usize) -> Self {
        Blocking {
            n,
            n_blocks: n.clamp(1, MAX_BLOCKS),
        }
    }

    pub fn block_of(&self, index: usize) -> usize {
        index * self.n_blocks / self.n.max(1)
    }
}

/// Leave-one-block-out jackknife. `f(None)` evaluates the estimator on the full
/// sample, `f(Some(g))` on the sample without block `g`. Blocks with a zero
/// `counts` entry are ignored.
pub fn jackknife<F: Fn(Option<usize>) -> f64>(counts: &[usize], f: F) -> Estimate {
    let mean = f(None);
    let used: Vec<usize> = (0..counts.len()).filter(|&g| counts[g] > 0).collect();
    let g = used.len();
    if g < 2 {
        return Estimate {
            mean,
            std_error: f64::NAN,
        };
    }
    let loo: Vec<f64> = used.iter().map(|&b| f(Some(b))).collect();
    let avg = loo.iter().sum::<f64>() / g as f64;
    let var = loo.iter().map(|x| (x - avg).powi(2)).sum::<f64>() * (g as f64 - 1.0) / g as f64;
    Estimate {
        mean,
        std_error: var.sqrt(),
    }
}

/// Block sums of one scalar observable.
#[derive(Debug, Clone)]
pub struct BlockSums {
    pub sums: Vec<f64>,
    pub counts: Vec<usize>,
}

impl BlockSums {
    pub fn new(n_blocks: usize) -> Self {
        BlockSums {
            sums: vec![0.0; n_blocks],
            counts: vec![0; n_blocks],
        }
    }

    pub fn push(&mut self, block: usize, value: f64) {
        self.sums[block] += value;
        self.counts[block] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Mean over all blocks, or over all but `skip`.
    pub fn mean(&self, skip: Option<usize>) -> f64 {
        mean_without(&self.sums, &self.counts, skip)
    }

    pub fn estimate(&self) -> Estimate {
        jackknife(&self.counts, |g| self.mean(g))
    }
}

pub fn mean_without(sums: &[f64], counts: &[usize], skip: Option<usize>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for (g, (&x, &c)) in sums.iter().zip(counts).enumerate() {
        if Some(g) != skip {
            s += x;
            n += c;
        }
    }
    s / n as f64
}
