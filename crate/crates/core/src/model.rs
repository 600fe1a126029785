//! Classifiers: a flatten-and-project linear model, an MLP, and a small
//! Inception-style 1-D CNN. All share the two-layer MLP head
//! `F -> F (ReLU) -> C` except the linear model.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::instance_normalize_channel;
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Kernel sizes of the three convolution branches in one inception block.
pub const INCEPTION_KERNELS: [usize; 3] = [9, 19, 39];
/// Window of the max-pool branch.
pub const INCEPTION_POOL: usize = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("input shape {got:?} does not match model input [n, {d}, {t}]")]
    InputShape { got: Vec<usize>, d: usize, t: usize },
    #[error("non-finite logits; parameters may have diverged")]
    NonFinite,
    #[error("parameter vector of length {got} does not match {expected}")]
    ParamLength { got: usize, expected: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Linear,
    Mlp,
    InceptionLite,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Linear => "linear",
            Architecture::Mlp => "mlp",
            Architecture::InceptionLite => "inception-lite",
        })
    }
}

impl FromStr for Architecture {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "linear" => Ok(Architecture::Linear),
            "mlp" => Ok(Architecture::Mlp),
            "inception-lite" | "inception" => Ok(Architecture::InceptionLite),
            _ => Err(format!("unknown architecture {s:?} (linear|mlp|inception-lite)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub channels: usize,
    pub length: usize,
    pub classes: usize,
    /// Feature width `F`.
    pub width: usize,
    /// Number of stacked inception blocks (1 or 2).
    pub depth: usize,
    pub use_instance_norm: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(architecture: Architecture, channels: usize, length: usize, classes: usize) -> Self {
        Self {
            architecture,
            channels,
            length,
            classes,
            width: 128,
            depth: 1,
            use_instance_norm: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.channels == 0 || self.length == 0 {
            return bad("channels and length must be positive");
        }
        if self.classes < 2 {
            return bad("need at least two classes");
        }
        if self.width == 0 {
            return bad("width must be positive");
        }
        if self.architecture == Architecture::InceptionLite {
            if !self.width.is_multiple_of(4) {
                return bad("inception-lite width must be divisible by 4");
            }
            if !(1..=2).contains(&self.depth) {
                return bad("inception-lite depth must be 1 or 2");
            }
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (d, t, c, f) = (self.channels, self.length, self.classes, self.width);
        match self.architecture {
            Architecture::Linear => d * t * c + c,
            Architecture::Mlp => d * t * f + f + head_param_count(f, c),
            Architecture::InceptionLite => {
                let mut total = head_param_count(f, c);
                let mut cin = d;
                for _ in 0..self.depth {
                    total += inception_block_param_count(cin, f);
                    cin = f;
                }
                total
            }
        }
    }

    /// `key=value` lines; inverse of [`ModelConfig::from_kv`].
    pub fn to_kv(&self) -> String {
        format!(
            "architecture={}\nchannels={}\nlength={}\nclasses={}\nwidth={}\ndepth={}\nuse_instance_norm={}\nseed={}\n",
            self.architecture,
            self.channels,
            self.length,
            self.classes,
            self.width,
            self.depth,
            self.use_instance_norm,
            self.seed
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::new(Architecture::Linear, 0, 0, 0);
        let err = |m: String| ModelError::Checkpoint(m);
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("bad config line {line:?}")))?;
            let num = |v: &str| v.parse::<u64>().map_err(|_| err(format!("bad value for {k}")));
            match k {
                "architecture" => cfg.architecture = v.parse().map_err(err)?,
                "channels" => cfg.channels = num(v)? as usize,
                "length" => cfg.length = num(v)? as usize,
                "classes" => cfg.classes = num(v)? as usize,
                "width" => cfg.width = num(v)? as usize,
                "depth" => cfg.depth = num(v)? as usize,
                "use_instance_norm" => cfg.use_instance_norm = v.parse().map_err(|_| err(format!("bad bool {v:?}")))?,
                "seed" => cfg.seed = num(v)?,
                other => return Err(err(format!("unknown config key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `F x F + F + F x C + C`.
pub fn head_param_count(width: usize, classes: usize) -> usize {
    width * width + width + width * classes + classes
}

pub fn inception_block_param_count(in_channels: usize, width: usize) -> usize {
    let branch = width / 4;
    let kernel_sum: usize = INCEPTION_KERNELS.iter().sum::<usize>() + 1;
    branch * in_channels * kernel_sum + 4 * branch
}

#[derive(Debug, Clone, PartialEq)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    fan_in: usize,
    is_bias: bool,
}

/// Named parameter tensors stored back to back in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    specs: Vec<ParamSpec>,
    values: Vec<f64>,
}

impl ParameterSet {
    fn new() -> Self {
        Self {
            specs: Vec::new(),
            values: Vec::new(),
        }
    }

    fn add(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, is_bias: bool) {
        let n: usize = shape.iter().product();
        self.specs.push(ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.values.len(),
            fan_in,
            is_bias,
        });
        self.values.resize(self.values.len() + n, 0.0);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.specs.iter().map(|s| s.name.as_str()).collect()
    }

    /// Index range of each named tensor in the flat vector.
    pub fn groups(&self) -> Vec<std::ops::Range<usize>> {
        self.specs
            .iter()
            .map(|s| s.offset..s.offset + s.shape.iter().product::<usize>())
            .collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.values.len() {
            return Err(ModelError::ParamLength {
                got: flat.len(),
                expected: self.values.len(),
            });
        }
        self.values.copy_from_slice(flat);
        Ok(())
    }

    /// Tensor view of the named parameter.
    pub fn tensor(&self, name: &str) -> Option<Tensor> {
        let s = self.specs.iter().find(|s| s.name == name)?;
        let n: usize = s.shape.iter().product();
        Tensor::new(s.shape.clone(), self.values[s.offset..s.offset + n].to_vec()).ok()
    }

    fn register(&self, tape: &mut Tape, flat: &[f64]) -> Vec<Var> {
        self.specs
            .iter()
            .map(|s| {
                let n: usize = s.shape.iter().product();
                let t = Tensor::new(s.shape.clone(), flat[s.offset..s.offset + n].to_vec())
                    .expect("parameter shapes are non-empty");
                tape.param(t)
            })
            .collect()
    }

    /// Weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases zero.
    fn init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in &self.specs {
            let n: usize = s.shape.iter().product();
            let dst = &mut self.values[s.offset..s.offset + n];
            if s.is_bias {
                dst.fill(0.0);
            } else {
                let bound = (6.0 / s.fan_in as f64).sqrt();
                dst.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParameterSet,
}

impl Model {
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (d, t, c, f) = (config.channels, config.length, config.classes, config.width);
        let mut p = ParameterSet::new();
        match config.architecture {
            Architecture::Linear => {
                p.add("linear.weight", &[d * t, c], d * t, false);
                p.add("linear.bias", &[c], d * t, true);
            }
            Architecture::Mlp => {
                p.add("input.weight", &[d * t, f], d * t, false);
                p.add("input.bias", &[f], d * t, true);
                add_head(&mut p, f, c);
            }
            Architecture::InceptionLite => {
                let b = f / 4;
                let mut cin = d;
                for blk in 0..config.depth {
                    for k in INCEPTION_KERNELS {
                        p.add(format!("block{blk}.conv{k}.weight"), &[b, cin, k], cin * k, false);
                        p.add(format!("block{blk}.conv{k}.bias"), &[b], cin * k, true);
                    }
                    p.add(format!("block{blk}.pool_conv.weight"), &[b, cin, 1], cin, false);
                    p.add(format!("block{blk}.pool_conv.bias"), &[b], cin, true);
                    cin = f;
                }
                add_head(&mut p, f, c);
            }
        }
        debug_assert_eq!(p.len(), config.param_count());
        p.init(config.seed);
        Ok(Self { config, params: p })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if s.len() != 3 || s[1] != self.config.channels || s[2] != self.config.length {
            return Err(ModelError::InputShape {
                got: s.to_vec(),
                d: self.config.channels,
                t: self.config.length,
            });
        }
        Ok(())
    }

    fn prepare_input(&self, x: &Tensor) -> Tensor {
        if !self.config.use_instance_norm {
            return x.clone();
        }
        let mut out = x.clone();
        let t = self.config.length;
        for ch in out.data_mut().chunks_mut(t) {
            instance_normalize_channel(ch);
        }
        out
    }

    /// Records the forward pass using parameter values `flat`; returns the
    /// logits variable and the parameter variables in flattening order.
    pub fn forward_on_tape(&self, tape: &mut Tape, flat: &[f64], x: &Tensor) -> Result<(Var, Vec<Var>)> {
        self.check_input(x)?;
        if flat.len() != self.params.len() {
            return Err(ModelError::ParamLength {
                got: flat.len(),
                expected: self.params.len(),
            });
        }
        let vars = self.params.register(tape, flat);
        let input = self.prepare_input(x);
        let n = input.shape()[0];
        let cfg = &self.config;
        let logits = match cfg.architecture {
            Architecture::Linear => {
                let flat_in = Tensor::new(vec![n, cfg.channels * cfg.length], input.into_data())?;
                let xin = tape.constant(flat_in);
                tape.affine(xin, vars[0], vars[1])?
            }
            Architecture::Mlp => {
                let flat_in = Tensor::new(vec![n, cfg.channels * cfg.length], input.into_data())?;
                let xin = tape.constant(flat_in);
                let h = tape.affine(xin, vars[0], vars[1])?;
                let h = tape.relu(h)?;
                head(tape, h, &vars[2..])?
            }
            Architecture::InceptionLite => {
                let mut h = tape.constant(input);
                let mut i = 0;
                for _ in 0..cfg.depth {
                    let mut branches = Vec::with_capacity(4);
                    for _ in INCEPTION_KERNELS {
                        branches.push(tape.conv1d(h, vars[i], Some(vars[i + 1]))?);
                        i += 2;
                    }
                    let pooled = tape.max_pool1d(h, INCEPTION_POOL)?;
                    branches.push(tape.conv1d(pooled, vars[i], Some(vars[i + 1]))?);
                    i += 2;
                    let cat = tape.concat_channels(&branches)?;
                    h = tape.relu(cat)?;
                }
                let pooled = tape.mean_time(h)?;
                head(tape, pooled, &vars[i..])?
            }
        };
        Ok((logits, vars))
    }

    /// Logits `[n, C]` at the current parameters.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_with(self.params.as_slice(), x)
    }

    pub fn forward_with(&self, flat: &[f64], x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let (logits, _) = self.forward_on_tape(&mut tape, flat, x)?;
        let out = tape.value(logits)?.clone();
        if out.data().iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(out)
    }

    pub fn loss_with(&self, flat: &[f64], x: &Tensor, labels: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let (logits, _) = self.forward_on_tape(&mut tape, flat, x)?;
        let l = tape.softmax_cross_entropy(logits, labels)?;
        Ok(tape.value(l)?.item())
    }

    /// Mean cross-entropy and its flat gradient at parameters `flat`.
    pub fn loss_and_grad_with(&self, flat: &[f64], x: &Tensor, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let (logits, vars) = self.forward_on_tape(&mut tape, flat, x)?;
        let l = tape.softmax_cross_entropy(logits, labels)?;
        let loss = tape.value(l)?.item();
        let grads = tape.backward(l)?;
        let mut g = Vec::with_capacity(flat.len());
        for (v, r) in vars.iter().zip(self.params.groups()) {
            match grads.get(*v) {
                Some(t) => g.extend_from_slice(t.data()),
                None => g.extend(std::iter::repeat_n(0.0, r.len())),
            }
        }
        Ok((loss, g))
    }

    pub fn loss_and_grad(&self, x: &Tensor, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.loss_and_grad_with(self.params.as_slice(), x, labels)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.forward(x)?;
        let c = self.config.classes;
        Ok(logits
            .data()
            .chunks(c)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |best, (i, &v)| if v > best.1 { (i, v) } else { best },
                    )
                    .0
            })
            .collect())
    }

    /// Binary checkpoint: 8-byte magic, version byte, `u32` length-prefixed
    /// config text, `u64` parameter count, little-endian `f64` values.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let cfg = self.config.to_kv();
        let mut out = Vec::with_capacity(8 + 1 + 4 + cfg.len() + 8 + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for v in self.params.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor(bytes);
        if cur.take(8)? != CHECKPOINT_MAGIC {
            return Err(ModelError::Checkpoint("bad magic".into()));
        }
        let version = cur.take(1)?[0];
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
        }
        let cfg_len = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
        let cfg_text = std::str::from_utf8(cur.take(cfg_len)?)
            .map_err(|_| ModelError::Checkpoint("config is not utf-8".into()))?;
        let config = ModelConfig::from_kv(cfg_text)?;
        let count = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
        if count != config.param_count() {
            return Err(ModelError::ParamLength {
                got: count,
                expected: config.param_count(),
            });
        }
        let values: Vec<f64> = cur
            .take(count * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if !cur.0.is_empty() {
            return Err(ModelError::Checkpoint("trailing bytes".into()));
        }
        let mut model = Model::build(config)?;
        model.params.unflatten(&values)?;
        Ok(model)
    }
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.0.len() < n {
            return Err(ModelError::Checkpoint("truncated".into()));
        }
        let (a, b) = self.0.split_at(n);
        self.0 = b;
        Ok(a)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FICTSCKP";
pub const CHECKPOINT_VERSION: u8 = 1;

fn add_head(p: &mut ParameterSet, f: usize, c: usize) {
    p.add("head.fc1.weight", &[f, f], f, false);
    p.add("head.fc1.bias", &[f], f, true);
    p.add("head.fc2.weight", &[f, c], f, false);
    p.add("head.fc2.bias", &[c], f, true);
}

fn head(tape: &mut Tape, x: Var, vars: &[Var]) -> Result<Var> {
    let h = tape.affine(x, vars[0], vars[1])?;
    let h = tape.relu(h)?;
    Ok(tape.affine(h, vars[2], vars[3])?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_counts() {
        let lin = ModelConfig::new(Architecture::Linear, 1, 4, 2);
        assert_eq!(Model::build(lin).unwrap().param_count(), 10);
        assert_eq!(head_param_count(128, 3), 16_899);
        let mut inc = ModelConfig::new(Architecture::InceptionLite, 2, 16, 3);
        assert_eq!(
            Model::build(inc.clone()).unwrap().param_count(),
            32 * 2 * 68 + 128 + 16_899
        );
        inc.depth = 2;
        assert_eq!(
            Model::build(inc).unwrap().param_count(),
            32 * 2 * 68 + 128 + 32 * 128 * 68 + 128 + 16_899
        );
    }

    #[test]
    fn same_seed_same_parameters() {
        let mut cfg = ModelConfig::new(Architecture::InceptionLite, 2, 8, 3);
        cfg.width = 8;
        cfg.seed = 11;
        let a = Model::build(cfg.clone()).unwrap();
        let b = Model::build(cfg.clone()).unwrap();
        assert_eq!(a.params, b.params);
        cfg.seed = 12;
        assert_ne!(a.params, Model::build(cfg).unwrap().params);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = ModelConfig::new(Architecture::InceptionLite, 2, 8, 3);
        cfg.width = 6;
        assert!(Model::build(cfg.clone()).is_err());
        cfg.width = 8;
        cfg.depth = 3;
        assert!(Model::build(cfg).is_err());
        assert!(Model::build(ModelConfig::new(Architecture::Linear, 0, 8, 3)).is_err());
        assert!(Model::build(ModelConfig::new(Architecture::Linear, 1, 8, 1)).is_err());
    }

    #[test]
    fn zero_parameters_give_uniform_loss() {
        let mut m = Model::build(ModelConfig::new(Architecture::Mlp, 1, 4, 2)).unwrap();
        let zeros = vec![0.0; m.param_count()];
        m.params.unflatten(&zeros).unwrap();
        let x = Tensor::new(vec![3, 1, 4], (0..12).map(f64::from).collect()).unwrap();
        let logits = m.forward(&x).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
        let (loss, _) = m.loss_and_grad(&x, &[0, 1, 1]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn identity_linear_map() {
        let mut m = Model::build(ModelConfig::new(Architecture::Linear, 1, 2, 2)).unwrap();
        m.params.unflatten(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let x = Tensor::new(vec![1, 1, 2], vec![0.7, -2.5]).unwrap();
        assert_eq!(m.forward(&x).unwrap().data(), &[0.7, -2.5]);
        m.params.unflatten(&[2.0, 1.0, 0.0, 3.0, 0.5, -0.5]).unwrap();
        // [0.7, -2.5] x [[2, 1], [0, 3]] + [0.5, -0.5]
        let out = m.forward(&x).unwrap();
        assert!((out.data()[0] - 1.9).abs() < 1e-12);
        assert!((out.data()[1] - (0.7 - 7.5 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn duplicated_rows_match() {
        let mut cfg = ModelConfig::new(Architecture::InceptionLite, 2, 12, 3);
        cfg.width = 8;
        let m = Model::build(cfg).unwrap();
        let row: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = Tensor::new(vec![2, 2, 12], [row.clone(), row].concat()).unwrap();
        let out = m.forward(&x).unwrap();
        assert_eq!(&out.data()[..3], &out.data()[3..]);
    }

    #[test]
    fn input_shape_checked() {
        let m = Model::build(ModelConfig::new(Architecture::Linear, 1, 4, 2)).unwrap();
        let x = Tensor::zeros(&[1, 2, 4]);
        assert!(matches!(m.forward(&x), Err(ModelError::InputShape { .. })));
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let mut cfg = ModelConfig::new(Architecture::InceptionLite, 2, 10, 3);
        cfg.width = 8;
        cfg.use_instance_norm = true;
        cfg.seed = 3;
        let m = Model::build(cfg).unwrap();
        let bytes = m.to_checkpoint();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        assert_eq!(bytes[8], CHECKPOINT_VERSION);
        let back = Model::from_checkpoint(&bytes).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.params, m.params);
        assert!(Model::from_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Model::from_checkpoint(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Model::from_checkpoint(&extra).is_err());
    }

    #[test]
    fn parameter_names_are_stable() {
        let m = Model::build(ModelConfig::new(Architecture::Linear, 1, 3, 2)).unwrap();
        assert_eq!(m.params.names(), vec!["linear.weight", "linear.bias"]);
        assert_eq!(m.params.tensor("linear.bias").unwrap().shape(), &[2]);
    }
}
