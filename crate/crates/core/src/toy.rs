//! Small closed-form objectives: scalar quadratics, logistic regression and
//! least squares. They back the convergence and curvature probes, where
//! exact answers are available.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::optim::{Result, SampleObjective};

/// One parameter `θ`; sample `i` contributes `½ λ (θ - c_i)²`.
#[derive(Debug, Clone)]
pub struct QuadraticSamples {
    pub centers: Vec<f64>,
    pub curvature: f64,
}

impl QuadraticSamples {
    pub fn new(centers: Vec<f64>, curvature: f64) -> Self {
        assert!(!centers.is_empty());
        Self { centers, curvature }
    }
}

impl SampleObjective for QuadraticSamples {
    fn num_samples(&self) -> usize {
        self.centers.len()
    }

    fn num_params(&self) -> usize {
        1
    }

    fn sample_loss_and_grad(&self, params: &[f64], index: usize) -> Result<(f64, Vec<f64>)> {
        let r = params[0] - self.centers[index];
        Ok((0.5 * self.curvature * r * r, vec![self.curvature * r]))
    }
}

/// Binary logistic regression with labels in `{0, 1}`; parameters are the
/// weights followed by the bias.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl LogisticRegression {
    fn logit(&self, params: &[f64], i: usize) -> f64 {
        let d = self.features[i].len();
        self.features[i].iter().zip(params).map(|(x, w)| x * w).sum::<f64>() + params[d]
    }

    /// Separable two-cluster toy in the plane: points of class 1 lie above
    /// the line `x + y = 0` with margin at least `margin`, class 0 below.
    pub fn separable_2d(n: usize, margin: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        while features.len() < n {
            let cls = features.len() % 2;
            let sign = if cls == 1 { 1.0 } else { -1.0 };
            let x: f64 = sign * 1.5 + rng.sample::<f64, _>(StandardNormal) * 0.8;
            let y: f64 = sign * 1.5 + rng.sample::<f64, _>(StandardNormal) * 0.8;
            if sign * (x + y) / 2f64.sqrt() >= margin {
                features.push(vec![x, y]);
                labels.push(cls as f64);
            }
        }
        Self { features, labels }
    }

    /// Data drawn from the model itself: `x ~ N(0, I)`, `y ~ Bernoulli(σ(wᵀx + b))`.
    pub fn well_specified(n: usize, weights: &[f64], bias: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = weights.iter().map(|_| rng.sample(StandardNormal)).collect();
            let z = x.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>() + bias;
            let p = 1.0 / (1.0 + (-z).exp());
            labels.push(if rng.gen::<f64>() < p { 1.0 } else { 0.0 });
            features.push(x);
        }
        Self { features, labels }
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl SampleObjective for LogisticRegression {
    fn num_samples(&self) -> usize {
        self.features.len()
    }

    fn num_params(&self) -> usize {
        self.features[0].len() + 1
    }

    fn sample_loss_and_grad(&self, params: &[f64], index: usize) -> Result<(f64, Vec<f64>)> {
        let z = self.logit(params, index);
        let y = self.labels[index];
        // -[y ln σ(z) + (1-y) ln(1-σ(z))] = softplus(z) - y z
        let loss = softplus(z) - y * z;
        let r = sigmoid(z) - y;
        let mut g: Vec<f64> = self.features[index].iter().map(|x| r * x).collect();
        g.push(r);
        Ok((loss, g))
    }
}

/// `½ (y - xᵀw)²` per sample; the Gaussian negative log-likelihood with unit
/// noise variance, up to a constant.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl LeastSquares {
    /// Each design row appears twice, with residuals `+1` and `-1` around
    /// `truth`; `truth` is then the exact minimizer and every squared
    /// residual equals the noise variance of one.
    pub fn paired_unit_residuals(rows: usize, dim: usize, truth: &[f64], seed: u64) -> Self {
        assert_eq!(truth.len(), dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Vec::with_capacity(2 * rows);
        let mut targets = Vec::with_capacity(2 * rows);
        for _ in 0..rows {
            let x: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let fit: f64 = x.iter().zip(truth).map(|(a, w)| a * w).sum();
            for r in [1.0, -1.0] {
                features.push(x.clone());
                targets.push(fit + r);
            }
        }
        Self { features, targets }
    }
}

impl SampleObjective for LeastSquares {
    fn num_samples(&self) -> usize {
        self.features.len()
    }

    fn num_params(&self) -> usize {
        self.features[0].len()
    }

    fn sample_loss_and_grad(&self, params: &[f64], index: usize) -> Result<(f64, Vec<f64>)> {
        let x = &self.features[index];
        let r = self.targets[index] - x.iter().zip(params).map(|(a, w)| a * w).sum::<f64>();
        Ok((0.5 * r * r, x.iter().map(|a| -r * a).collect()))
    }
}
