//! Paired Wilcoxon signed-rank test.

use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

/// Largest number of non-zero pairs handled by exact enumeration.
pub const EXACT_MAX_PAIRS: usize = 20;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StatsError {
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 5 non-zero differences, got {0}")]
    TooFewPairs(usize),
    #[error("non-finite score in input")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alternative {
    /// `a` tends to exceed `b`.
    Greater,
    Less,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Exact for up to [`EXACT_MAX_PAIRS`] pairs, normal approximation beyond.
    Auto,
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    /// Non-zero pairs used.
    pub n: usize,
    /// Sum of the ranks of the positive differences `a - b`.
    pub w_plus: f64,
    pub p_value: f64,
    pub exact: bool,
}

pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], alternative: Alternative) -> Result<WilcoxonResult, StatsError> {
    wilcoxon_signed_rank_with(a, b, alternative, Method::Auto)
}

pub fn wilcoxon_signed_rank_with(
    a: &[f64],
    b: &[f64],
    alternative: Alternative,
    method: Method,
) -> Result<WilcoxonResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n < 5 {
        return Err(StatsError::TooFewPairs(n));
    }
    let (doubled, tie_sizes) = doubled_ranks(&diffs);
    let w2: u64 = diffs
        .iter()
        .zip(&doubled)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();
    let exact = match method {
        Method::Auto => n <= EXACT_MAX_PAIRS,
        Method::Exact => true,
        Method::Normal => false,
    };
    let p_value = if exact {
        exact_p(&doubled, w2, alternative)
    } else {
        normal_p(n, w2 as f64 / 2.0, &tie_sizes, alternative)
    };
    Ok(WilcoxonResult {
        n,
        w_plus: w2 as f64 / 2.0,
        p_value,
        exact,
    })
}

/// Twice the mid-ranks of `|d|`, so tied ranks stay integral, plus the sizes
/// of the tie groups.
fn doubled_ranks(diffs: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    order.sort_by(|&i, &j| diffs[i].abs().total_cmp(&diffs[j].abs()));
    let mut ranks = vec![0u64; diffs.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        // Ranks i+1 ..= j+1 averaged, doubled.
        let r2 = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = r2;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// Null distribution of the doubled statistic by dynamic programming over
/// the `2^n` sign assignments.
fn exact_p(doubled: &[u64], w2: u64, alternative: Alternative) -> f64 {
    let total: u64 = doubled.iter().sum();
    let mut dist = vec![0f64; total as usize + 1];
    dist[0] = 1.0;
    let mut reach = 0usize;
    for &r in doubled {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if dist[s] != 0.0 {
                dist[s + r] += dist[s];
            }
        }
        reach += r;
    }
    let count: f64 = dist.iter().sum();
    let upper = dist[w2 as usize..].iter().sum::<f64>() / count;
    let lower = dist[..=w2 as usize].iter().sum::<f64>() / count;
    match alternative {
        Alternative::Greater => upper,
        Alternative::Less => lower,
        Alternative::TwoSided => (2.0 * upper.min(lower)).min(1.0),
    }
}

fn normal_p(n: usize, w: f64, tie_sizes: &[usize], alternative: Alternative) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = tie_sizes.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let sd = var.sqrt();
    let phi = Normal::new(0.0, 1.0).expect("standard normal");
    let upper = phi.sf((w - mean - 0.5) / sd);
    let lower = phi.cdf((w - mean + 0.5) / sd);
    match alternative {
        Alternative::Greater => upper,
        Alternative::Less => lower,
        Alternative::TwoSided => (2.0 * upper.min(lower)).min(1.0),
    }
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_samples_are_rejected() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(
            wilcoxon_signed_rank(&a, &a, Alternative::Greater),
            Err(StatsError::TooFewPairs(0))
        );
        assert!(matches!(
            wilcoxon_signed_rank(&a, &a[..5], Alternative::Greater),
            Err(StatsError::LengthMismatch(6, 5))
        ));
    }

    #[test]
    fn five_positive_differences() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [0.0; 5];
        let r = wilcoxon_signed_rank(&a, &b, Alternative::Greater).unwrap();
        assert!(r.exact);
        assert_eq!(r.w_plus, 15.0);
        assert_eq!(r.p_value, 1.0 / 32.0);
        let two = wilcoxon_signed_rank(&a, &b, Alternative::TwoSided).unwrap();
        assert_eq!(two.p_value, 1.0 / 16.0);
        let less = wilcoxon_signed_rank(&a, &b, Alternative::Less).unwrap();
        assert_eq!(less.p_value, 1.0);
    }

    #[test]
    fn zero_differences_are_dropped() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 7.0];
        let b = [0.0, 0.0, 0.0, 0.0, 0.0, 7.0];
        let r = wilcoxon_signed_rank(&a, &b, Alternative::Greater).unwrap();
        assert_eq!(r.n, 5);
        assert_eq!(r.p_value, 1.0 / 32.0);
    }

    #[test]
    fn ties_use_mid_ranks() {
        let a = [1.0, 1.0, -1.0, 2.0, 3.0];
        let r = wilcoxon_signed_rank(&a, &[0.0; 5], Alternative::Greater).unwrap();
        // |d| ranks: 2, 2, 2, 4, 5; negative one contributes 2.
        assert_eq!(r.w_plus, 13.0);
    }

    #[test]
    fn median_and_mean() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(mean(&[1.0, 2.0]), 1.5);
    }
}
