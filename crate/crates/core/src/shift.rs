//! Train/test distribution discrepancy via one-dimensional Wasserstein-1
//! distances between pooled channel values.

use std::fmt::Write as _;

use thiserror::Error;

use crate::dataset::{zscore_per_channel_train_stats, DataError, TimeSeriesDataset};

#[derive(Debug, Error)]
pub enum ShiftError {
    #[error("empirical distribution needs at least one finite value")]
    Empty,
    #[error("channel {channel} out of range for {channels} channels")]
    BadChannel { channel: usize, channels: usize },
    #[error("class {class} ({name}) has no samples in the {split} split")]
    MissingClass {
        class: usize,
        name: String,
        split: &'static str,
    },
    #[error("train and test declare different class sets")]
    ClassSetMismatch,
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T> = std::result::Result<T, ShiftError>;

/// Sorted sample of one real-valued channel.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    values: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(ShiftError::Empty);
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.values.iter().map(|&v| f(v)).collect())
    }
}

/// Wasserstein-1 distance between two empirical measures with uniform
/// weights.
///
/// With equal counts this is the mean absolute difference of the sorted
/// samples. Otherwise the two quantile functions are step functions with
/// breakpoints at `i/n` and `j/m`, and the integral of their absolute
/// difference is accumulated segment by segment on the common grid of
/// `1/(n m)` units, which keeps the segment weights exact.
pub fn wasserstein1(p: &EmpiricalDistribution, q: &EmpiricalDistribution) -> f64 {
    let (a, b) = (p.values(), q.values());
    if a.len() == b.len() {
        return sorted_equal_count(a, b);
    }
    quantile_integral(a, b)
}

fn sorted_equal_count(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Inverse-CDF integral for arbitrary counts.
pub(crate) fn quantile_integral(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut pos = 0usize;
    let mut total = 0.0;
    while i < n && j < m {
        let end_a = (i + 1) * m;
        let end_b = (j + 1) * n;
        let next = end_a.min(end_b);
        total += (next - pos) as f64 * (a[i] - b[j]).abs();
        pos = next;
        if end_a == next {
            i += 1;
        }
        if end_b == next {
            j += 1;
        }
    }
    total / (n * m) as f64
}

/// `C x C` matrix of distances; rows index the train classes, columns the
/// test classes.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    pub size: usize,
    pub entries: Vec<f64>,
    pub normalized: bool,
}

impl DissimilarityMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.size + col]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.size).map(|i| self.get(i, i)).collect()
    }

    pub fn min(&self) -> f64 {
        self.entries.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.entries.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Mean of the off-diagonal entries (0 for a 1x1 matrix).
    pub fn mean_off_diagonal(&self) -> f64 {
        let c = self.size;
        if c < 2 {
            return 0.0;
        }
        let s: f64 = (0..c)
            .flat_map(|i| (0..c).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .sum();
        s / (c * (c - 1)) as f64
    }

    /// Joint min-max scaling of all entries to `[0, 1]`; a constant matrix
    /// is left as is.
    pub fn min_max_normalized(&self) -> Self {
        let (lo, hi) = (self.min(), self.max());
        let entries = if hi > lo {
            self.entries.iter().map(|v| (v - lo) / (hi - lo)).collect()
        } else {
            self.entries.clone()
        };
        Self {
            size: self.size,
            entries,
            normalized: true,
        }
    }

    /// Row-major block with six decimals.
    pub fn to_text_block(&self, title: &str) -> String {
        let mut s = format!("[{title}] size={} normalized={}\n", self.size, self.normalized);
        for r in 0..self.size {
            let row: Vec<String> = (0..self.size).map(|c| format!("{:.6}", self.get(r, c))).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }
}

fn check_channel(ds: &TimeSeriesDataset, channel: usize) -> Result<()> {
    if channel >= ds.channels() {
        return Err(ShiftError::BadChannel {
            channel,
            channels: ds.channels(),
        });
    }
    Ok(())
}

/// Values of `channel` over all time points of all samples of `class`.
pub fn pooled_class_values(ds: &TimeSeriesDataset, class: usize, channel: usize) -> Result<EmpiricalDistribution> {
    check_channel(ds, channel)?;
    let vals: Vec<f64> = ds
        .class_indices(class)
        .into_iter()
        .flat_map(|i| ds.series[i][channel].iter().copied())
        .collect();
    if vals.is_empty() {
        return Err(ShiftError::MissingClass {
            class,
            name: ds.class_names.get(class).cloned().unwrap_or_default(),
            split: ds.split.as_str(),
        });
    }
    EmpiricalDistribution::new(vals)
}

/// Entry `(i, j)` is the distance between train class `i` and test class `j`.
pub fn class_dissimilarity_matrix(
    train: &TimeSeriesDataset,
    test: &TimeSeriesDataset,
    channel: usize,
    normalize: bool,
) -> Result<DissimilarityMatrix> {
    if train.class_names != test.class_names {
        return Err(ShiftError::ClassSetMismatch);
    }
    let c = train.num_classes();
    let rows = (0..c)
        .map(|k| pooled_class_values(train, k, channel))
        .collect::<Result<Vec<_>>>()?;
    let cols = (0..c)
        .map(|k| pooled_class_values(test, k, channel))
        .collect::<Result<Vec<_>>>()?;
    let entries = rows
        .iter()
        .flat_map(|r| cols.iter().map(move |q| wasserstein1(r, q)))
        .collect();
    let m = DissimilarityMatrix {
        size: c,
        entries,
        normalized: false,
    };
    Ok(if normalize { m.min_max_normalized() } else { m })
}

/// Class distances before and after instance normalization.
#[derive(Debug, Clone)]
pub struct InEffectReport {
    pub channel: usize,
    pub train_vs_test_before: DissimilarityMatrix,
    pub train_vs_test_after: DissimilarityMatrix,
    pub within_train_before: DissimilarityMatrix,
    pub within_train_after: DissimilarityMatrix,
    pub within_test_before: DissimilarityMatrix,
    pub within_test_after: DissimilarityMatrix,
}

impl InEffectReport {
    /// Mean between-class distance inside the train split, (before, after).
    pub fn train_between_class(&self) -> (f64, f64) {
        (
            self.within_train_before.mean_off_diagonal(),
            self.within_train_after.mean_off_diagonal(),
        )
    }

    pub fn test_between_class(&self) -> (f64, f64) {
        (
            self.within_test_before.mean_off_diagonal(),
            self.within_test_after.mean_off_diagonal(),
        )
    }
}

pub fn in_effect_report(train: &TimeSeriesDataset, test: &TimeSeriesDataset, channel: usize) -> Result<InEffectReport> {
    let train_in = train.instance_normalize();
    let test_in = test.instance_normalize();
    Ok(InEffectReport {
        channel,
        train_vs_test_before: class_dissimilarity_matrix(train, test, channel, false)?,
        train_vs_test_after: class_dissimilarity_matrix(&train_in, &test_in, channel, false)?,
        within_train_before: class_dissimilarity_matrix(train, train, channel, false)?,
        within_train_after: class_dissimilarity_matrix(&train_in, &train_in, channel, false)?,
        within_test_before: class_dissimilarity_matrix(test, test, channel, false)?,
        within_test_after: class_dissimilarity_matrix(&test_in, &test_in, channel, false)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width histogram of one channel pooled over every sample and time
/// point. The top edge is inclusive.
pub fn channel_histogram(ds: &TimeSeriesDataset, channel: usize, bins: usize) -> Result<Histogram> {
    check_channel(ds, channel)?;
    let vals: Vec<f64> = ds.series.iter().flat_map(|s| s[channel].iter().copied()).collect();
    Ok(histogram(&vals, bins))
}

pub fn histogram(vals: &[f64], bins: usize) -> Histogram {
    assert!(bins >= 1, "histogram needs at least one bin");
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0; bins];
    for &v in vals {
        let k = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[k] += 1;
    }
    Histogram { edges, counts }
}

/// Distances computed on raw values, on train-statistics z-scored values,
/// and after instance normalization, each labelled.
#[derive(Debug, Clone)]
pub struct ShiftReport {
    pub dataset: String,
    pub channel: usize,
    pub raw: DissimilarityMatrix,
    pub zscored: DissimilarityMatrix,
    pub in_effect: InEffectReport,
}

pub fn shift_report(train: &TimeSeriesDataset, test: &TimeSeriesDataset, channel: usize) -> Result<ShiftReport> {
    let (ztr, zte) = zscore_per_channel_train_stats(train, test)?;
    Ok(ShiftReport {
        dataset: train.name.clone(),
        channel,
        raw: class_dissimilarity_matrix(train, test, channel, false)?,
        zscored: class_dissimilarity_matrix(&ztr, &zte, channel, false)?,
        in_effect: in_effect_report(train, test, channel)?,
    })
}

impl ShiftReport {
    fn blocks(&self) -> Vec<(&'static str, &DissimilarityMatrix)> {
        let e = &self.in_effect;
        vec![
            ("raw", &self.raw),
            ("zscore", &self.zscored),
            ("in", &e.train_vs_test_after),
            ("raw_within_train", &e.within_train_before),
            ("in_within_train", &e.within_train_after),
            ("raw_within_test", &e.within_test_before),
            ("in_within_test", &e.within_test_after),
        ]
    }

    /// One block per matrix (raw and min-max normalized), row-major.
    pub fn to_text(&self) -> String {
        let mut s = format!("# shift report dataset={} channel={}\n", self.dataset, self.channel);
        for (label, m) in self.blocks() {
            s.push_str(&m.to_text_block(label));
            s.push_str(&m.min_max_normalized().to_text_block(&format!("{label}_normalized")));
        }
        s
    }

    /// `key=value` records, one per line.
    pub fn to_records(&self) -> String {
        let mut s = String::new();
        for (label, m) in self.blocks() {
            for r in 0..m.size {
                for c in 0..m.size {
                    writeln!(
                        s,
                        "record=shift matrix={label} channel={} row={r} col={c} value={:.12}",
                        self.channel,
                        m.get(r, c)
                    )
                    .unwrap();
                }
            }
        }
        let (b, a) = self.in_effect.train_between_class();
        writeln!(
            s,
            "record=in_effect split=train between_before={b:.12} between_after={a:.12}"
        )
        .unwrap();
        let (b, a) = self.in_effect.test_between_class();
        writeln!(
            s,
            "record=in_effect split=test between_before={b:.12} between_after={a:.12}"
        )
        .unwrap();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;

    fn ed(v: &[f64]) -> EmpiricalDistribution {
        EmpiricalDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn point_masses_and_identity() {
        assert_eq!(wasserstein1(&ed(&[0.0]), &ed(&[1.0])), 1.0);
        assert_eq!(wasserstein1(&ed(&[3.0, 1.0, 2.0]), &ed(&[2.0, 3.0, 1.0])), 0.0);
        assert_eq!(wasserstein1(&ed(&[0.0, 1.0]), &ed(&[1.0, 2.0])), 1.0);
    }

    #[test]
    fn unequal_counts() {
        // {0} vs {0, 2}: half the mass moves by 2.
        assert!((wasserstein1(&ed(&[0.0]), &ed(&[0.0, 2.0])) - 1.0).abs() < 1e-15);
        // {0, 1} vs {0, 0.5, 1}: quantile steps at 1/2 and 1/3, 2/3.
        let w = wasserstein1(&ed(&[0.0, 1.0]), &ed(&[0.0, 0.5, 1.0]));
        assert!((w - (1.0 / 6.0) * 0.5 * 2.0).abs() < 1e-15, "{w}");
    }

    #[test]
    fn paths_agree_on_equal_counts() {
        let a = [0.3, 1.7, -2.0, 5.5];
        let b = [1.0, 1.0, 0.0, -4.0];
        let (p, q) = (ed(&a), ed(&b));
        let direct = wasserstein1(&p, &q);
        let integral = quantile_integral(p.values(), q.values());
        assert!((direct - integral).abs() < 1e-12);
    }

    #[test]
    fn empty_distribution_is_rejected() {
        assert!(matches!(EmpiricalDistribution::new(vec![]), Err(ShiftError::Empty)));
    }

    fn two_class(offset: f64) -> TimeSeriesDataset {
        TimeSeriesDataset::new(
            "fx",
            Split::Train,
            vec![
                vec![vec![0.0 + offset, 1.0 + offset, 2.0 + offset]],
                vec![vec![0.5 + offset, 0.7 + offset, 4.0 + offset]],
                vec![vec![10.0 + offset, 11.0 + offset, 12.0 + offset]],
            ],
            vec![0, 0, 1],
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    #[test]
    fn matrix_translation_and_identity() {
        let tr = two_class(0.0);
        let m = class_dissimilarity_matrix(&tr, &tr, 0, false).unwrap();
        assert_eq!(m.diagonal(), vec![0.0, 0.0]);
        let mut te = two_class(3.0);
        te.split = Split::Test;
        let m = class_dissimilarity_matrix(&tr, &te, 0, false).unwrap();
        for d in m.diagonal() {
            assert!((d - 3.0).abs() < 1e-12);
        }
        let n = m.min_max_normalized();
        assert_eq!(n.min(), 0.0);
        assert_eq!(n.max(), 1.0);
        assert!(n.normalized);
    }

    #[test]
    fn missing_class_and_bad_channel() {
        let tr = two_class(0.0);
        let mut te = tr.clone();
        te.labels = vec![0, 0, 0];
        assert!(matches!(
            class_dissimilarity_matrix(&tr, &te, 0, false),
            Err(ShiftError::MissingClass { class: 1, .. })
        ));
        assert!(matches!(
            class_dissimilarity_matrix(&tr, &tr, 1, false),
            Err(ShiftError::BadChannel { .. })
        ));
    }

    #[test]
    fn histogram_examples() {
        assert_eq!(histogram(&[0.0, 1.0], 2).counts, vec![1, 1]);
        let h = histogram(&[4.0, 4.0, 4.0], 3);
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        let grid: Vec<f64> = (0..10).map(f64::from).collect();
        assert_eq!(histogram(&grid, 5).counts, vec![2, 2, 2, 2, 2]);
    }

    #[test]
    fn report_text_has_six_decimals() {
        let tr = two_class(0.0);
        let rep = shift_report(&tr, &tr, 0).unwrap();
        let text = rep.to_text();
        assert!(text.contains("[raw] size=2 normalized=false\n0.000000 "));
        assert!(rep
            .to_records()
            .contains("matrix=raw channel=0 row=0 col=0 value=0.000000000000"));
    }
}
