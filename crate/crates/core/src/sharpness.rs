//! Curvature diagnostics at a trained point: Fisher-norm estimators, the
//! Taylor estimate of α-sharpness, a Hessian-trace vs Fisher-trace check and
//! two-dimensional loss-landscape slices.

use std::fmt::Write as _;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::TimeSeriesDataset;
use crate::model::Model;
use crate::optim::{fim_entrywise_norm, OptimError, SampleObjective};

#[derive(Debug, Error)]
pub enum SharpnessError {
    #[error("objective has no samples")]
    Empty,
    #[error("squared gradient norm {grad_sq_norm:.3e} exceeds {threshold:.3e}; not near a minimum")]
    NotConverged { grad_sq_norm: f64, threshold: f64 },
    #[error("landscape resolution must be odd and at least 3, got {0}")]
    Resolution(usize),
    #[error("alpha must be positive, got {0}")]
    Alpha(f64),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

pub type Result<T> = std::result::Result<T, SharpnessError>;

/// Mean cross-entropy of a model over a whole (equal-length) dataset.
pub struct DatasetObjective<'a> {
    pub model: &'a Model,
    pub data: &'a TimeSeriesDataset,
    /// Samples per forward pass when computing the full-data mean.
    pub chunk: usize,
}

impl<'a> DatasetObjective<'a> {
    pub fn new(model: &'a Model, data: &'a TimeSeriesDataset) -> Self {
        Self {
            model,
            data,
            chunk: 128,
        }
    }
}

fn to_optim<E: Into<crate::model::ModelError>>(e: E) -> OptimError {
    OptimError::Model(e.into())
}

impl SampleObjective for DatasetObjective<'_> {
    fn num_samples(&self) -> usize {
        self.data.len()
    }

    fn num_params(&self) -> usize {
        self.model.param_count()
    }

    fn sample_loss_and_grad(&self, params: &[f64], index: usize) -> crate::optim::Result<(f64, Vec<f64>)> {
        let x = self
            .data
            .batch_tensor(&[index])
            .map_err(|e| OptimError::Invalid(e.to_string()))?;
        self.model
            .loss_and_grad_with(params, &x, &self.data.batch_labels(&[index]))
            .map_err(to_optim)
    }

    fn mean_loss_and_grad(&self, params: &[f64]) -> crate::optim::Result<(f64, Vec<f64>)> {
        let n = self.data.len();
        let idx: Vec<usize> = (0..n).collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; params.len()];
        for c in idx.chunks(self.chunk.max(1)) {
            let x = self
                .data
                .batch_tensor(c)
                .map_err(|e| OptimError::Invalid(e.to_string()))?;
            let (l, g) = self
                .model
                .loss_and_grad_with(params, &x, &self.data.batch_labels(c))
                .map_err(to_optim)?;
            let w = c.len() as f64 / n as f64;
            loss += w * l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += w * b);
        }
        Ok((loss, grad))
    }

    fn param_groups(&self) -> Vec<Range<usize>> {
        self.model.params.groups()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FimEstimator {
    /// Squared norm of the mean gradient over the data.
    BatchMean,
    /// Mean over samples of the per-sample squared gradient norm.
    PerSampleExpectation,
}

impl FimEstimator {
    pub fn as_str(self) -> &'static str {
        match self {
            FimEstimator::BatchMean => "batch-mean",
            FimEstimator::PerSampleExpectation => "per-sample-expectation",
        }
    }
}

pub fn empirical_fim_norm<O: SampleObjective + ?Sized>(
    obj: &O,
    params: &[f64],
    estimator: FimEstimator,
) -> Result<f64> {
    if obj.num_samples() == 0 {
        return Err(SharpnessError::Empty);
    }
    match estimator {
        FimEstimator::BatchMean => {
            let (_, g) = obj.mean_loss_and_grad(params)?;
            Ok(fim_entrywise_norm(&g))
        }
        FimEstimator::PerSampleExpectation => {
            let n = obj.num_samples();
            let norms = (0..n)
                .into_par_iter()
                .map(|i| obj.sample_loss_and_grad(params, i).map(|(_, g)| fim_entrywise_norm(&g)))
                .collect::<crate::optim::Result<Vec<f64>>>()?;
            Ok(norms.iter().sum::<f64>() / n as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpnessReport {
    pub alpha: f64,
    pub loss_at_point: f64,
    pub fim_norm: f64,
    pub sharpness: f64,
    pub estimator: FimEstimator,
    /// Squared norm of the full-data mean gradient at the point.
    pub grad_sq_norm: f64,
}

impl SharpnessReport {
    pub fn record_line(&self) -> String {
        format!(
            "record=sharpness estimator={} alpha={:.6e} loss={:.12e} fim_norm={:.12e} sharpness={:.12e} grad_sq_norm={:.12e}",
            self.estimator.as_str(),
            self.alpha,
            self.loss_at_point,
            self.fim_norm,
            self.sharpness,
            self.grad_sq_norm
        )
    }
}

/// `α² ‖F‖₁ / (2 (1 + L))`.
pub fn sharpness_from_parts(alpha: f64, fim_norm: f64, loss: f64) -> f64 {
    alpha * alpha * fim_norm / (2.0 * (1.0 + loss))
}

pub fn sharpness<O: SampleObjective + ?Sized>(
    obj: &O,
    params: &[f64],
    alpha: f64,
    estimator: FimEstimator,
) -> Result<SharpnessReport> {
    if !(alpha > 0.0) {
        return Err(SharpnessError::Alpha(alpha));
    }
    if obj.num_samples() == 0 {
        return Err(SharpnessError::Empty);
    }
    let (loss, g) = obj.mean_loss_and_grad(params)?;
    let grad_sq_norm = fim_entrywise_norm(&g);
    let fim_norm = match estimator {
        FimEstimator::BatchMean => grad_sq_norm,
        FimEstimator::PerSampleExpectation => empirical_fim_norm(obj, params, estimator)?,
    };
    Ok(SharpnessReport {
        alpha,
        loss_at_point: loss,
        fim_norm,
        sharpness: sharpness_from_parts(alpha, fim_norm, loss),
        estimator,
        grad_sq_norm,
    })
}

/// Both estimators side by side for a model on a dataset.
pub fn model_sharpness_pair(
    model: &Model,
    data: &TimeSeriesDataset,
    alpha: f64,
) -> Result<(SharpnessReport, SharpnessReport)> {
    let obj = DatasetObjective::new(model, data);
    let p = model.params.as_slice();
    Ok((
        sharpness(&obj, p, alpha, FimEstimator::BatchMean)?,
        sharpness(&obj, p, alpha, FimEstimator::PerSampleExpectation)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Report {
    pub hessian_trace: f64,
    pub fim_trace: f64,
    /// `|tr H - tr F| / |tr H|`.
    pub relative_gap: f64,
    pub grad_sq_norm: f64,
}

/// Compares the central-difference Hessian trace of the mean loss with the
/// per-sample Fisher trace at `params`. Refuses points whose squared
/// gradient norm exceeds `grad_tolerance`.
pub fn lemma1_check<O: SampleObjective + ?Sized>(
    obj: &O,
    params: &[f64],
    grad_tolerance: f64,
    step: f64,
) -> Result<Lemma1Report> {
    if obj.num_samples() == 0 {
        return Err(SharpnessError::Empty);
    }
    let (_, g) = obj.mean_loss_and_grad(params)?;
    let grad_sq_norm = fim_entrywise_norm(&g);
    if grad_sq_norm > grad_tolerance {
        return Err(SharpnessError::NotConverged {
            grad_sq_norm,
            threshold: grad_tolerance,
        });
    }
    let diag = (0..params.len())
        .into_par_iter()
        .map(|i| -> crate::optim::Result<f64> {
            let mut p = params.to_vec();
            p[i] = params[i] + step;
            let (_, up) = obj.mean_loss_and_grad(&p)?;
            p[i] = params[i] - step;
            let (_, down) = obj.mean_loss_and_grad(&p)?;
            Ok((up[i] - down[i]) / (2.0 * step))
        })
        .collect::<crate::optim::Result<Vec<f64>>>()?;
    let hessian_trace: f64 = diag.iter().sum();
    let fim_trace = empirical_fim_norm(obj, params, FimEstimator::PerSampleExpectation)?;
    Ok(Lemma1Report {
        hessian_trace,
        fim_trace,
        relative_gap: (hessian_trace - fim_trace).abs() / hessian_trace.abs(),
        grad_sq_norm,
    })
}

/// Loss on the plane `θ + a d₁ + b d₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeSlice {
    pub direction1: Vec<f64>,
    pub direction2: Vec<f64>,
    pub radius: f64,
    pub resolution: usize,
    /// Grid coordinates, shared by both axes.
    pub coords: Vec<f64>,
    /// `losses[i * resolution + j]` is the loss at `(coords[i], coords[j])`.
    pub losses: Vec<f64>,
}

impl LandscapeSlice {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.losses[i * self.resolution + j]
    }

    pub fn center(&self) -> f64 {
        let m = self.resolution / 2;
        self.at(m, m)
    }

    /// `a b loss` rows.
    pub fn to_grid_text(&self) -> String {
        let mut s = String::from("# a b loss\n");
        for (i, a) in self.coords.iter().enumerate() {
            for (j, b) in self.coords.iter().enumerate() {
                writeln!(s, "{a:.6} {b:.6} {:.12e}", self.at(i, j)).unwrap();
            }
        }
        s
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Two random directions, each rescaled per parameter group to the norm of
/// that group's parameters (groups with zero norm get a zero direction);
/// the second is then orthogonalized against the first and brought back to
/// the first one's overall norm.
pub fn filter_normalized_directions(params: &[f64], groups: &[Range<usize>], seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> Vec<f64> {
        let mut d: Vec<f64> = (0..params.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        for g in groups {
            let pn = norm(&params[g.clone()]);
            let dn = norm(&d[g.clone()]);
            let k = if dn > 0.0 { pn / dn } else { 0.0 };
            d[g.clone()].iter_mut().for_each(|v| *v *= k);
        }
        d
    };
    let d1 = draw();
    let mut d2 = draw();
    let n1 = norm(&d1);
    if n1 > 0.0 {
        let proj = dot(&d2, &d1) / (n1 * n1);
        d2.iter_mut().zip(&d1).for_each(|(b, a)| *b -= proj * a);
        let n2 = norm(&d2);
        if n2 > 1e-12 * n1 {
            d2.iter_mut().for_each(|v| *v *= n1 / n2);
            // One more pass removes the rounding left by the first.
            let proj = dot(&d2, &d1) / (n1 * n1);
            d2.iter_mut().zip(&d1).for_each(|(b, a)| *b -= proj * a);
        } else {
            d2.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    (d1, d2)
}

pub fn landscape_slice_with_directions<O: SampleObjective + ?Sized>(
    obj: &O,
    params: &[f64],
    direction1: Vec<f64>,
    direction2: Vec<f64>,
    radius: f64,
    resolution: usize,
) -> Result<LandscapeSlice> {
    if resolution < 3 || resolution.is_multiple_of(2) {
        return Err(SharpnessError::Resolution(resolution));
    }
    let half = (resolution / 2) as f64;
    let coords: Vec<f64> = (0..resolution)
        .map(|i| {
            if i == resolution / 2 {
                0.0
            } else {
                radius * (i as f64 - half) / half
            }
        })
        .collect();
    let cells: Vec<(usize, usize)> = (0..resolution)
        .flat_map(|i| (0..resolution).map(move |j| (i, j)))
        .collect();
    let losses = cells
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (coords[i], coords[j]);
            let p: Vec<f64> = params
                .iter()
                .zip(&direction1)
                .zip(&direction2)
                .map(|((t, u), v)| t + a * u + b * v)
                .collect();
            obj.mean_loss(&p)
        })
        .collect::<crate::optim::Result<Vec<f64>>>()?;
    Ok(LandscapeSlice {
        direction1,
        direction2,
        radius,
        resolution,
        coords,
        losses,
    })
}

pub fn landscape_slice<O: SampleObjective + ?Sized>(
    obj: &O,
    params: &[f64],
    seed: u64,
    radius: f64,
    resolution: usize,
) -> Result<LandscapeSlice> {
    let (d1, d2) = filter_normalized_directions(params, &obj.param_groups(), seed);
    landscape_slice_with_directions(obj, params, d1, d2, radius, resolution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::QuadraticSamples;

    fn plus_minus() -> QuadraticSamples {
        QuadraticSamples::new(vec![1.0, -1.0], 1.0)
    }

    #[test]
    fn estimators_on_plus_minus_quadratic() {
        let obj = plus_minus();
        let bm = empirical_fim_norm(&obj, &[0.0], FimEstimator::BatchMean).unwrap();
        let ps = empirical_fim_norm(&obj, &[0.0], FimEstimator::PerSampleExpectation).unwrap();
        assert_eq!(bm, 0.0);
        assert_eq!(ps, 1.0);
    }

    #[test]
    fn estimators_agree_on_one_sample_and_duplicates() {
        for centers in [vec![0.7], vec![0.7, 0.7, 0.7]] {
            let obj = QuadraticSamples::new(centers, 2.0);
            let bm = empirical_fim_norm(&obj, &[0.1], FimEstimator::BatchMean).unwrap();
            let ps = empirical_fim_norm(&obj, &[0.1], FimEstimator::PerSampleExpectation).unwrap();
            assert!((bm - ps).abs() < 1e-12);
        }
    }

    #[test]
    fn sharpness_examples() {
        let r = sharpness(&plus_minus(), &[0.0], 0.1, FimEstimator::PerSampleExpectation).unwrap();
        assert_eq!(r.loss_at_point, 0.5);
        assert!((r.sharpness - 1.0 / 300.0).abs() < 1e-15);
        assert_eq!(sharpness_from_parts(0.3, 0.0, 2.0), 0.0);
        let s1 = sharpness_from_parts(0.1, 3.0, 0.4);
        let s2 = sharpness_from_parts(0.2, 3.0, 0.4);
        assert!((s2 / s1 - 4.0).abs() < 1e-12);
        assert!(sharpness(&plus_minus(), &[0.0], 0.0, FimEstimator::BatchMean).is_err());
    }

    #[test]
    fn lemma1_refuses_non_stationary_points() {
        let obj = plus_minus();
        assert!(matches!(
            lemma1_check(&obj, &[3.0], 1e-6, 1e-4),
            Err(SharpnessError::NotConverged { .. })
        ));
        let r = lemma1_check(&obj, &[0.0], 1e-6, 1e-4).unwrap();
        // Hessian 1, Fisher trace 1.
        assert!(r.relative_gap < 1e-8, "{r:?}");
    }

    #[test]
    fn slice_on_scalar_quadratic() {
        let lambda = 2.5;
        let obj = QuadraticSamples::new(vec![0.0], lambda);
        let theta = 0.4;
        let s = landscape_slice_with_directions(&obj, &[theta], vec![1.0], vec![0.0], 1.0, 5).unwrap();
        let m = s.resolution / 2;
        for (i, a) in s.coords.iter().enumerate() {
            let expected = 0.5 * lambda * (theta + a).powi(2);
            assert!((s.at(i, m) - expected).abs() < 1e-15);
        }
        assert_eq!(s.center(), obj.mean_loss(&[theta]).unwrap());
        let flat = landscape_slice(&obj, &[theta], 3, 0.0, 3).unwrap();
        assert!(flat.losses.iter().all(|&v| v == flat.losses[0]));
        assert!(landscape_slice(&obj, &[theta], 3, 1.0, 4).is_err());
        assert!(landscape_slice(&obj, &[theta], 3, 1.0, 1).is_err());
    }

    #[test]
    fn directions_are_orthogonal_and_seeded() {
        let params: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).cos()).collect();
        let groups = vec![0..20, 20..45, 45..50];
        let (a, b) = filter_normalized_directions(&params, &groups, 9);
        assert!(dot(&a, &b).abs() < 1e-9);
        // First direction carries each group's parameter norm.
        for g in &groups {
            assert!((norm(&a[g.clone()]) - norm(&params[g.clone()])).abs() < 1e-12);
        }
        assert_eq!(
            (a.clone(), b.clone()),
            filter_normalized_directions(&params, &groups, 9)
        );
        assert_ne!(a, filter_normalized_directions(&params, &groups, 10).0);
    }

    #[test]
    fn grid_text_rows() {
        let obj = QuadraticSamples::new(vec![0.0], 1.0);
        let s = landscape_slice_with_directions(&obj, &[0.0], vec![1.0], vec![0.0], 1.0, 3).unwrap();
        let text = s.to_grid_text();
        assert_eq!(text.lines().count(), 10);
        assert!(text.contains("\n0.000000 0.000000 0.000000000000e0\n"));
    }
}
