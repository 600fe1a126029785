//! Labeled time-series datasets: loading, padding, normalization, batching.
//!
//! Two on-disk formats are understood. The wide CSV fixture format:
//!
//! ```text
//! #d=2,T=3,classes=up,down
//! up,1,2,3,0.5,0.5,0.5
//! down,3,2,1,0.1,0.2,0.3
//! ```
//!
//! where each row holds the label followed by the channel-major values
//! `v(c0,t0), v(c0,t1), ..., v(c1,t0), ...`. A row may carry fewer than `T`
//! points per channel; such datasets are flagged variable-length and must be
//! padded before use.
//!
//! And the subset of the sktime `.ts` format used by the UCR/UEA archives
//! (`@problemName`, `@dimensions`, `@classLabel`, `@data`, with channels
//! separated by `:` and the label last).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::Tensor;

/// Floor applied to the per-instance standard deviation.
pub const INSTANCE_NORM_STD_FLOOR: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: expected a multiple of {channels} channels, got {values} values")]
    ChannelCount {
        line: usize,
        channels: usize,
        values: usize,
    },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("cannot pad to length {target}: sample {sample} has length {len}")]
    PadTooShort { target: usize, sample: usize, len: usize },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Ts,
}

impl Format {
    /// Guesses the format from the file extension; anything but `.ts` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("ts") => Format::Ts,
            _ => Format::Csv,
        }
    }
}

/// `n` samples of `d` channels each. `series[i][c]` is one channel of one
/// sample; channel lengths agree within a sample but may differ between
/// samples until [`TimeSeriesDataset::pad_to_length`] is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub name: String,
    pub split: Split,
    pub series: Vec<Vec<Vec<f64>>>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl TimeSeriesDataset {
    pub fn new(
        name: impl Into<String>,
        split: Split,
        series: Vec<Vec<Vec<f64>>>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            split,
            series,
            labels,
            class_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        if self.series.is_empty() {
            return Err(DataError::Invalid("dataset has no samples".into()));
        }
        if self.series.len() != self.labels.len() {
            return Err(DataError::Invalid(format!(
                "{} samples but {} labels",
                self.series.len(),
                self.labels.len()
            )));
        }
        let d = self.series[0].len();
        if d == 0 {
            return Err(DataError::Invalid("samples have no channels".into()));
        }
        for (i, s) in self.series.iter().enumerate() {
            if s.len() != d {
                return Err(DataError::Invalid(format!(
                    "sample {i} has {} channels, expected {d}",
                    s.len()
                )));
            }
            let len = s[0].len();
            if len == 0 || s.iter().any(|c| c.len() != len) {
                return Err(DataError::Invalid(format!(
                    "sample {i} has empty or unequal-length channels"
                )));
            }
        }
        let c = self.class_names.len();
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= c) {
            return Err(DataError::Invalid(format!("label {bad} outside 0..{c}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.series[0].len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn sample_length(&self, i: usize) -> usize {
        self.series[i][0].len()
    }

    pub fn max_length(&self) -> usize {
        (0..self.len()).map(|i| self.sample_length(i)).max().unwrap_or(0)
    }

    pub fn is_variable_length(&self) -> bool {
        let first = self.sample_length(0);
        (1..self.len()).any(|i| self.sample_length(i) != first)
    }

    /// Common series length, or `None` when lengths differ.
    pub fn length(&self) -> Option<usize> {
        (!self.is_variable_length()).then(|| self.sample_length(0))
    }

    /// Right-pads every series with zeros to `target` points.
    pub fn pad_to_length(&self, target: usize) -> Result<Self> {
        let mut out = self.clone();
        for (i, s) in out.series.iter_mut().enumerate() {
            let len = s[0].len();
            if len > target {
                return Err(DataError::PadTooShort { target, sample: i, len });
            }
            for ch in s.iter_mut() {
                ch.resize(target, 0.0);
            }
        }
        Ok(out)
    }

    /// Per-sample, per-channel standardization over time.
    pub fn instance_normalize(&self) -> Self {
        let mut out = self.clone();
        for s in out.series.iter_mut() {
            for ch in s.iter_mut() {
                instance_normalize_channel(ch);
            }
        }
        out
    }

    /// Stacks the selected samples into an `[n, d, t]` tensor.
    pub fn batch_tensor(&self, indices: &[usize]) -> Result<Tensor> {
        let t = self
            .length()
            .ok_or_else(|| DataError::Invalid("variable-length dataset must be padded before batching".into()))?;
        let d = self.channels();
        let mut data = Vec::with_capacity(indices.len() * d * t);
        for &i in indices {
            for ch in &self.series[i] {
                data.extend_from_slice(ch);
            }
        }
        Tensor::new(vec![indices.len(), d, t], data).map_err(|e| DataError::Invalid(e.to_string()))
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// Samples whose label is `class`.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    /// Writes the CSV fixture format. Requires equal lengths.
    pub fn to_csv_string(&self) -> Result<String> {
        let t = self
            .length()
            .ok_or_else(|| DataError::Invalid("cannot write a variable-length dataset as CSV".into()))?;
        let mut s = format!(
            "#d={},T={},classes={}\n",
            self.channels(),
            t,
            self.class_names.join(",")
        );
        for (series, &label) in self.series.iter().zip(&self.labels) {
            s.push_str(&self.class_names[label]);
            for ch in series {
                for v in ch {
                    write!(s, ",{v}").unwrap();
                }
            }
            s.push('\n');
        }
        Ok(s)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let body = self.to_csv_string()?;
        std::fs::write(path, body).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Standardizes one channel in place; population variance, and channels
/// whose standard deviation falls below [`INSTANCE_NORM_STD_FLOOR`] map to
/// zeros.
pub fn instance_normalize_channel(ch: &mut [f64]) {
    let n = ch.len() as f64;
    let mean = ch.iter().sum::<f64>() / n;
    let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < INSTANCE_NORM_STD_FLOOR {
        ch.iter_mut().for_each(|v| *v = 0.0);
    } else {
        ch.iter_mut().for_each(|v| *v = (*v - mean) / std);
    }
}

/// Standardizes both splits per channel using statistics pooled over all
/// samples and time points of `train`. Zero-variance channels become zeros.
pub fn zscore_per_channel_train_stats(
    train: &TimeSeriesDataset,
    test: &TimeSeriesDataset,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    let d = train.channels();
    if test.channels() != d {
        return Err(DataError::Invalid(format!(
            "train has {d} channels, test has {}",
            test.channels()
        )));
    }
    let stats: Vec<(f64, f64)> = (0..d)
        .map(|c| {
            let vals = train.series.iter().flat_map(|s| s[c].iter());
            let (mut n, mut sum) = (0usize, 0.0);
            for v in vals.clone() {
                n += 1;
                sum += v;
            }
            let mean = sum / n as f64;
            let var = vals.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            (mean, var.sqrt())
        })
        .collect();
    let apply = |ds: &TimeSeriesDataset| {
        let mut out = ds.clone();
        for s in out.series.iter_mut() {
            for (ch, &(mean, std)) in s.iter_mut().zip(&stats) {
                for v in ch.iter_mut() {
                    *v = if std > 0.0 { (*v - mean) / std } else { 0.0 };
                }
            }
        }
        out
    };
    Ok((apply(train), apply(test)))
}

pub fn load_dataset(path: &Path, format: Format, split: Split) -> Result<TimeSeriesDataset> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    match format {
        Format::Csv => parse_csv(&text, &name, split),
        Format::Ts => parse_ts(&text, &name, split),
    }
}

fn parse_values(line: usize, fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            f.trim().parse::<f64>().map_err(|_| DataError::Parse {
                line,
                msg: format!("invalid number {:?}", f.trim()),
            })
        })
        .collect()
}

pub fn parse_csv(text: &str, name: &str, split: Split) -> Result<TimeSeriesDataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines.next().ok_or(DataError::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let header = header.strip_prefix('#').ok_or(DataError::Parse {
        line: hline,
        msg: "expected header `#d=<int>,T=<int>,classes=<list>`".into(),
    })?;
    let (dims, classes) = header.split_once("classes=").ok_or(DataError::Parse {
        line: hline,
        msg: "header lacks `classes=`".into(),
    })?;
    let mut d = None;
    let mut t = None;
    for kv in dims.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = kv.split_once('=').ok_or(DataError::Parse {
            line: hline,
            msg: format!("bad header field {kv:?}"),
        })?;
        let v: usize = v.trim().parse().map_err(|_| DataError::Parse {
            line: hline,
            msg: format!("bad integer in {kv:?}"),
        })?;
        match k.trim() {
            "d" => d = Some(v),
            "T" => t = Some(v),
            other => {
                return Err(DataError::Parse {
                    line: hline,
                    msg: format!("unknown header key {other:?}"),
                })
            }
        }
    }
    let (d, t) = match (d, t) {
        (Some(d), Some(t)) if d > 0 && t > 0 => (d, t),
        _ => {
            return Err(DataError::Parse {
                line: hline,
                msg: "header needs positive d and T".into(),
            })
        }
    };
    let class_names: Vec<String> = classes
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if class_names.is_empty() {
        return Err(DataError::Parse {
            line: hline,
            msg: "no classes declared".into(),
        });
    }
    let index: HashMap<&str, usize> = class_names.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();

    let mut series = Vec::new();
    let mut labels = Vec::new();
    for (line, row) in lines {
        let fields: Vec<&str> = row.split(',').collect();
        let label = fields[0].trim();
        let &class = index.get(label).ok_or_else(|| DataError::UnknownLabel {
            line,
            label: label.to_string(),
        })?;
        let values = parse_values(line, &fields[1..])?;
        if values.is_empty() || values.len() % d != 0 {
            return Err(DataError::ChannelCount {
                line,
                channels: d,
                values: values.len(),
            });
        }
        let len = values.len() / d;
        if len > t {
            return Err(DataError::Parse {
                line,
                msg: format!("series length {len} exceeds declared T={t}"),
            });
        }
        series.push(values.chunks(len).map(<[f64]>::to_vec).collect());
        labels.push(class);
    }
    if series.is_empty() {
        return Err(DataError::Parse {
            line: hline + 1,
            msg: "no data rows".into(),
        });
    }
    TimeSeriesDataset::new(name, split, series, labels, class_names)
}

pub fn parse_ts(text: &str, name: &str, split: Split) -> Result<TimeSeriesDataset> {
    let mut problem = name.to_string();
    let mut dims: Option<usize> = None;
    let mut class_names: Vec<String> = Vec::new();
    let mut in_data = false;
    let mut series = Vec::new();
    let mut labels = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        if !in_data {
            if !l.starts_with('@') {
                return Err(DataError::Parse {
                    line,
                    msg: "expected @-directive before @data".into(),
                });
            }
            let mut parts = l.split_whitespace();
            let key = parts.next().unwrap_or("").to_ascii_lowercase();
            match key.as_str() {
                "@problemname" => {
                    if let Some(p) = parts.next() {
                        problem = p.to_string();
                    }
                }
                "@dimensions" | "@dimension" => {
                    let v = parts.next().and_then(|p| p.parse().ok()).ok_or(DataError::Parse {
                        line,
                        msg: "bad @dimensions".into(),
                    })?;
                    dims = Some(v);
                }
                "@classlabel" => {
                    let flag = parts.next().unwrap_or("false");
                    if !flag.eq_ignore_ascii_case("true") {
                        return Err(DataError::Parse {
                            line,
                            msg: "only labelled classification files are supported".into(),
                        });
                    }
                    class_names = parts.map(str::to_string).collect();
                    index = class_names.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
                }
                "@data" => {
                    if class_names.is_empty() {
                        return Err(DataError::Parse {
                            line,
                            msg: "@data before @classLabel".into(),
                        });
                    }
                    in_data = true;
                }
                _ => {}
            }
            continue;
        }
        let parts: Vec<&str> = l.split(':').collect();
        if parts.len() < 2 {
            return Err(DataError::Parse {
                line,
                msg: "data row needs at least one channel and a label".into(),
            });
        }
        let label = parts[parts.len() - 1].trim();
        let &class = index.get(label).ok_or_else(|| DataError::UnknownLabel {
            line,
            label: label.to_string(),
        })?;
        let chans = &parts[..parts.len() - 1];
        let d = *dims.get_or_insert(chans.len());
        if chans.len() != d {
            return Err(DataError::ChannelCount {
                line,
                channels: d,
                values: chans.len(),
            });
        }
        let mut sample = Vec::with_capacity(d);
        for ch in chans {
            let fields: Vec<&str> = ch.split(',').collect();
            sample.push(parse_values(line, &fields)?);
        }
        let len = sample[0].len();
        if sample.iter().any(|c| c.len() != len) {
            return Err(DataError::Parse {
                line,
                msg: "channels of one sample differ in length".into(),
            });
        }
        series.push(sample);
        labels.push(class);
    }
    if series.is_empty() {
        return Err(DataError::Parse {
            line: text.lines().count().max(1),
            msg: "no data rows".into(),
        });
    }
    TimeSeriesDataset::new(problem, split, series, labels, class_names)
}

/// Shuffled mini-batches; the order of epoch `e` depends only on `(seed, e)`.
#[derive(Debug, Clone)]
pub struct BatchIterator {
    n: usize,
    batch: usize,
    seed: u64,
}

impl BatchIterator {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        assert!(batch >= 1, "batch size must be at least 1");
        Self { n, batch, seed }
    }

    pub fn permutation(&self, epoch: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        let mut idx: Vec<usize> = (0..self.n).collect();
        idx.shuffle(&mut rng);
        idx
    }

    /// All batches of one epoch; the last one may be short.
    pub fn epoch(&self, epoch: u64) -> Vec<Vec<usize>> {
        self.permutation(epoch)
            .chunks(self.batch)
            .map(<[usize]>::to_vec)
            .collect()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_sample_csv() -> &'static str {
        "#d=1,T=3,classes=a,b\na,1,2,3\nb,4,5,6\n"
    }

    #[test]
    fn csv_direct_parse() {
        let ds = parse_csv(two_sample_csv(), "x", Split::Train).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.channels(), 1);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.labels, vec![0, 1]);
        assert_eq!(ds.series[1][0], vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn csv_channel_major() {
        let ds = parse_csv("#d=2,T=2,classes=x\nx,1,2,3,4\n", "x", Split::Test).unwrap();
        assert_eq!(ds.series[0], vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }

    #[test]
    fn empty_file_fails() {
        assert!(matches!(parse_csv("", "x", Split::Train), Err(DataError::Parse { .. })));
        assert!(parse_csv("#d=1,T=2,classes=a\n", "x", Split::Train).is_err());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse_csv("#d=1,T=3,classes=a\na,1,2,3\na,1,zz,3\n", "x", Split::Train).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 3, .. }), "{err}");
        let err = parse_csv("#d=2,T=3,classes=a\na,1,2,3\n", "x", Split::Train).unwrap_err();
        assert!(matches!(err, DataError::ChannelCount { line: 2, .. }), "{err}");
        let err = parse_csv("#d=1,T=3,classes=a\nq,1,2,3\n", "x", Split::Train).unwrap_err();
        assert!(matches!(err, DataError::UnknownLabel { line: 2, .. }), "{err}");
    }

    #[test]
    fn ragged_fixture_is_flagged_and_padded() {
        let mut text = String::from("#d=1,T=29,classes=a,b\n");
        let long: Vec<String> = (1..=29).map(|v| v.to_string()).collect();
        let short: Vec<String> = (1..=27).map(|v| v.to_string()).collect();
        text += &format!("a,{}\nb,{}\n", long.join(","), short.join(","));
        let ds = parse_csv(&text, "ragged", Split::Train).unwrap();
        assert!(ds.is_variable_length());
        assert_eq!(ds.max_length(), 29);
        assert!(ds.batch_tensor(&[0]).is_err());
        let padded = ds.pad_to_length(29).unwrap();
        assert!(!padded.is_variable_length());
        assert_eq!(padded.sample_length(1), 29);
        assert_eq!(&padded.series[1][0][27..], &[0.0, 0.0]);
        assert_eq!(&padded.series[1][0][..27], &ds.series[1][0][..]);
        assert!(matches!(ds.pad_to_length(28), Err(DataError::PadTooShort { .. })));
    }

    #[test]
    fn pad_examples() {
        let ds =
            TimeSeriesDataset::new("p", Split::Train, vec![vec![vec![1.0, 2.0]]], vec![0], vec!["a".into()]).unwrap();
        assert_eq!(ds.pad_to_length(4).unwrap().series[0][0], vec![1.0, 2.0, 0.0, 0.0]);
        assert_eq!(ds.pad_to_length(2).unwrap(), ds);
    }

    #[test]
    fn instance_norm_examples() {
        let mut ch = vec![1.0, 2.0, 3.0];
        instance_normalize_channel(&mut ch);
        let r = 1.5f64.sqrt();
        for (a, b) in ch.iter().zip([-r, 0.0, r]) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut c = vec![5.0, 5.0, 5.0];
        instance_normalize_channel(&mut c);
        assert_eq!(c, vec![0.0, 0.0, 0.0]);
        let mut u = vec![-1.0, 1.0, -1.0, 1.0];
        let orig = u.clone();
        instance_normalize_channel(&mut u);
        for (a, b) in u.iter().zip(&orig) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zscore_examples() {
        // Train channel values 8 and 12: mean 10, population std 2.
        let train = TimeSeriesDataset::new(
            "z",
            Split::Train,
            vec![vec![vec![8.0, 12.0]], vec![vec![8.0, 12.0]]],
            vec![0, 0],
            vec!["a".into()],
        )
        .unwrap();
        let test = TimeSeriesDataset::new(
            "z",
            Split::Test,
            vec![vec![vec![14.0, 10.0]]],
            vec![0],
            vec!["a".into()],
        )
        .unwrap();
        let (tr, te) = zscore_per_channel_train_stats(&train, &test).unwrap();
        assert!((te.series[0][0][0] - 2.0).abs() < 1e-12);
        assert_eq!(tr.series[0][0], vec![-1.0, 1.0]);

        let flat =
            TimeSeriesDataset::new("z", Split::Train, vec![vec![vec![3.0, 3.0]]], vec![0], vec!["a".into()]).unwrap();
        let (a, b) = zscore_per_channel_train_stats(&flat, &test).unwrap();
        assert_eq!(a.series[0][0], vec![0.0, 0.0]);
        assert_eq!(b.series[0][0], vec![0.0, 0.0]);
    }

    #[test]
    fn zscore_self_has_zero_mean() {
        let ds = parse_csv(two_sample_csv(), "x", Split::Train).unwrap();
        let one = TimeSeriesDataset::new(
            "o",
            Split::Train,
            vec![ds.series[0].clone()],
            vec![0],
            ds.class_names.clone(),
        )
        .unwrap();
        let (a, _) = zscore_per_channel_train_stats(&one, &one).unwrap();
        let m: f64 = a.series[0][0].iter().sum::<f64>() / 3.0;
        assert!(m.abs() < 1e-12);
    }

    #[test]
    fn ts_format_subset() {
        let text = "# comment\n@problemName Toy\n@timeStamps false\n@univariate false\n@dimensions 2\n@classLabel true up down\n@data\n1,2,3:4,5,6:up\n3,2,1:6,5,4:down\n1,2:3,4:up\n";
        let ds = parse_ts(text, "file", Split::Test).unwrap();
        assert_eq!(ds.name, "Toy");
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.channels(), 2);
        assert_eq!(ds.labels, vec![0, 1, 0]);
        assert!(ds.is_variable_length());
        assert_eq!(ds.series[1][1], vec![6.0, 5.0, 4.0]);
        let bad = "@dimensions 2\n@classLabel true a\n@data\n1,2:a\n";
        assert!(matches!(
            parse_ts(bad, "f", Split::Train),
            Err(DataError::ChannelCount { line: 4, .. })
        ));
        let unknown = "@classLabel true a\n@data\n1,2:zz\n";
        assert!(matches!(
            parse_ts(unknown, "f", Split::Train),
            Err(DataError::UnknownLabel { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let ds = parse_csv(two_sample_csv(), "x", Split::Train).unwrap();
        let again = parse_csv(&ds.to_csv_string().unwrap(), "x", Split::Train).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn batch_iterator_is_seeded_permutation() {
        let it = BatchIterator::new(10, 3, 7);
        let e0 = it.epoch(0);
        assert_eq!(e0.len(), 4);
        assert_eq!(e0[3].len(), 1);
        let mut all: Vec<usize> = e0.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(it.epoch(0), BatchIterator::new(10, 3, 7).epoch(0));
        assert_ne!(it.permutation(0), it.permutation(1));
    }
}
