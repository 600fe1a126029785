//! Fisher-information-constrained gradient steps.
//!
//! The diagonal of the empirical Fisher information is approximated by the
//! element-wise square of the mini-batch gradient, so its entrywise 1-norm is
//! the squared Euclidean norm of that gradient. When the norm reaches the
//! bound `epsilon`, the whole gradient is rescaled by `sqrt(epsilon / norm)`,
//! which puts the norm exactly on the bound while keeping the direction.
//! The rescaled gradient is then handed to the underlying update rule
//! (AdamW or plain gradient descent). Weight decay is decoupled and never
//! enters the norm.
//!
//! [`sam_step`] implements the sharpness-aware baseline, which costs a second
//! forward/backward pass per step.

use std::ops::Range;
use std::sync::mpsc::Sender;

use thiserror::Error;

use crate::model::{Model, ModelError};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite loss at step {}", .0.step)]
    NonFiniteLoss(StepDiagnostics),
    #[error("invalid optimizer setting: {0}")]
    Invalid(String),
    #[error("state has {state} moment entries but the objective has {params} parameters")]
    StateMismatch { state: usize, params: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, OptimError>;

/// A differentiable scalar objective over a flat parameter vector.
pub trait Objective {
    fn num_params(&self) -> usize;
    fn loss_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// An objective that is the mean of per-sample losses.
pub trait SampleObjective: Sync {
    fn num_samples(&self) -> usize;
    fn num_params(&self) -> usize;
    fn sample_loss_and_grad(&self, params: &[f64], index: usize) -> Result<(f64, Vec<f64>)>;

    /// Mean loss and gradient over all samples.
    fn mean_loss_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let n = self.num_samples();
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.num_params()];
        for i in 0..n {
            let (l, g) = self.sample_loss_and_grad(params, i)?;
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        let inv = 1.0 / n as f64;
        grad.iter_mut().for_each(|v| *v *= inv);
        Ok((loss * inv, grad))
    }

    fn mean_loss(&self, params: &[f64]) -> Result<f64> {
        Ok(self.mean_loss_and_grad(params)?.0)
    }

    /// Index ranges of parameter groups (one tensor each); used for filter
    /// normalization of landscape directions.
    fn param_groups(&self) -> Vec<Range<usize>> {
        vec![0..self.num_params()]
    }
}

impl<T: SampleObjective> Objective for T {
    fn num_params(&self) -> usize {
        SampleObjective::num_params(self)
    }

    fn loss_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.mean_loss_and_grad(params)
    }
}

/// Mean cross-entropy of a model on one fixed mini-batch.
pub struct ModelBatch<'a> {
    pub model: &'a Model,
    pub inputs: &'a Tensor,
    pub labels: &'a [usize],
}

impl Objective for ModelBatch<'_> {
    fn num_params(&self) -> usize {
        self.model.param_count()
    }

    fn loss_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok(self.model.loss_and_grad_with(params, self.inputs, self.labels)?)
    }
}

/// Diagonal Fisher estimate `g ∘ g`.
pub fn diag_fim(grads: &[f64]) -> Vec<f64> {
    grads.iter().map(|g| g * g).collect()
}

/// Entrywise 1-norm of the diagonal estimate, i.e. `Σ g_i²`.
pub fn fim_entrywise_norm(grads: &[f64]) -> f64 {
    grads.iter().map(|g| g * g).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FicConfig {
    pub epsilon: f64,
    pub enabled: bool,
}

impl Default for FicConfig {
    fn default() -> Self {
        Self {
            epsilon: 2.0,
            enabled: true,
        }
    }
}

impl FicConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(OptimError::Invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { epsilon, enabled: true })
    }

    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

/// Outcome of one renormalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Renormalization {
    pub fim_norm_before: f64,
    pub triggered: bool,
    pub scale: f64,
}

/// Rescales `grads` in place when `Σ g² >= epsilon`. Untriggered gradients
/// are not touched.
pub fn fic_renormalize_in_place(grads: &mut [f64], epsilon: f64) -> Renormalization {
    let norm = fim_entrywise_norm(grads);
    if norm >= epsilon && norm > 0.0 {
        let scale = (epsilon / norm).sqrt();
        grads.iter_mut().for_each(|g| *g *= scale);
        Renormalization {
            fim_norm_before: norm,
            triggered: true,
            scale,
        }
    } else {
        Renormalization {
            fim_norm_before: norm,
            triggered: false,
            scale: 1.0,
        }
    }
}

pub fn fic_renormalize(grads: &[f64], epsilon: f64) -> (Vec<f64>, Renormalization) {
    let mut out = grads.to_vec();
    let r = fic_renormalize_in_place(&mut out, epsilon);
    (out, r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub step: u64,
    pub loss: f64,
    pub fim_norm_before: f64,
    pub triggered: bool,
    pub scale_applied: f64,
}

impl StepDiagnostics {
    /// One line of the diagnostics record log.
    pub fn record_line(&self) -> String {
        format!(
            "step={} loss={:.12e} fim_norm_before={:.12e} triggered={} scale={:.12e}",
            self.step, self.loss, self.fim_norm_before, self.triggered, self.scale_applied
        )
    }
}

/// Destination for per-step diagnostics.
pub trait DiagnosticsSink {
    fn record(&mut self, d: &StepDiagnostics);
}

impl DiagnosticsSink for Vec<StepDiagnostics> {
    fn record(&mut self, d: &StepDiagnostics) {
        self.push(*d);
    }
}

impl DiagnosticsSink for Sender<StepDiagnostics> {
    fn record(&mut self, d: &StepDiagnostics) {
        // A dropped receiver just means nobody is listening.
        let _ = self.send(*d);
    }
}

/// Appends diagnostics as lines to any writer.
pub struct RecordLog<W: std::io::Write>(pub W);

impl<W: std::io::Write> DiagnosticsSink for RecordLog<W> {
    fn record(&mut self, d: &StepDiagnostics) {
        let _ = writeln!(self.0, "{}", d.record_line());
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateRule {
    /// `θ ← θ - η g`.
    Sgd,
    AdamW {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl UpdateRule {
    pub fn adamw() -> Self {
        UpdateRule::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Learning-rate, decay, moment buffers and pass counters of one run.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub lr: f64,
    pub weight_decay: f64,
    pub rule: UpdateRule,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub forward_passes: u64,
    pub backward_passes: u64,
}

impl OptimizerState {
    pub fn new(num_params: usize, lr: f64, weight_decay: f64, rule: UpdateRule) -> Self {
        Self {
            lr,
            weight_decay,
            rule,
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step: 0,
            forward_passes: 0,
            backward_passes: 0,
        }
    }

    /// AdamW with learning rate 5e-3 and weight decay 1e-4.
    pub fn adamw_default(num_params: usize) -> Self {
        Self::new(num_params, 5e-3, 1e-4, UpdateRule::adamw())
    }

    pub fn sgd(num_params: usize, lr: f64) -> Self {
        Self::new(num_params, lr, 0.0, UpdateRule::Sgd)
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.first_moment.len() != n {
            return Err(OptimError::StateMismatch {
                state: self.first_moment.len(),
                params: n,
            });
        }
        Ok(())
    }

    fn evaluate<O: Objective + ?Sized>(&mut self, obj: &O, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.forward_passes += 1;
        self.backward_passes += 1;
        obj.loss_and_grad(params)
    }

    /// Applies decoupled weight decay and the update rule with `grad`.
    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let lr = self.lr;
        if self.weight_decay != 0.0 {
            let keep = 1.0 - lr * self.weight_decay;
            params.iter_mut().for_each(|p| *p *= keep);
        }
        match self.rule {
            UpdateRule::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            UpdateRule::AdamW { beta1, beta2, eps } => {
                let t = self.step as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(self.first_moment.iter_mut())
                    .zip(self.second_moment.iter_mut())
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
    }
}

/// One training iteration: a forward/backward pass, the conditional
/// renormalization, then the update.
pub fn fic_step<O: Objective + ?Sized>(
    obj: &O,
    params: &mut [f64],
    fic: &FicConfig,
    state: &mut OptimizerState,
) -> Result<StepDiagnostics> {
    state.check(params.len())?;
    let (loss, mut grad) = state.evaluate(obj, params)?;
    let renorm = if fic.enabled {
        fic_renormalize_in_place(&mut grad, fic.epsilon)
    } else {
        Renormalization {
            fim_norm_before: fim_entrywise_norm(&grad),
            triggered: false,
            scale: 1.0,
        }
    };
    let diag = StepDiagnostics {
        step: state.step + 1,
        loss,
        fim_norm_before: renorm.fim_norm_before,
        triggered: renorm.triggered,
        scale_applied: renorm.scale,
    };
    if !loss.is_finite() || !renorm.fim_norm_before.is_finite() {
        return Err(OptimError::NonFiniteLoss(diag));
    }
    state.apply(params, &grad);
    Ok(diag)
}

/// Sharpness-aware step: ascend by `rho` along the normalized gradient,
/// take the gradient there, restore the parameters and update with it.
pub fn sam_step<O: Objective + ?Sized>(
    obj: &O,
    params: &mut [f64],
    rho: f64,
    state: &mut OptimizerState,
) -> Result<StepDiagnostics> {
    if !(rho > 0.0) {
        return Err(OptimError::Invalid(format!("rho must be positive, got {rho}")));
    }
    state.check(params.len())?;
    let (loss, g1) = state.evaluate(obj, params)?;
    let sq = fim_entrywise_norm(&g1);
    let diag = StepDiagnostics {
        step: state.step + 1,
        loss,
        fim_norm_before: sq,
        triggered: false,
        scale_applied: 1.0,
    };
    if !loss.is_finite() || !sq.is_finite() {
        return Err(OptimError::NonFiniteLoss(diag));
    }
    if sq == 0.0 {
        state.apply(params, &g1);
        return Ok(diag);
    }
    let k = rho / sq.sqrt();
    let origin = params.to_vec();
    params.iter_mut().zip(&g1).for_each(|(p, g)| *p += k * g);
    let evaluated = state.evaluate(obj, params);
    params.copy_from_slice(&origin);
    let (perturbed_loss, g2) = evaluated?;
    if !perturbed_loss.is_finite() {
        return Err(OptimError::NonFiniteLoss(diag));
    }
    state.apply(params, &g2);
    Ok(diag)
}

/// [`fic_step`] on a model's own parameters for one mini-batch.
pub fn fic_step_model(
    model: &mut Model,
    inputs: &Tensor,
    labels: &[usize],
    fic: &FicConfig,
    state: &mut OptimizerState,
) -> Result<StepDiagnostics> {
    let mut params = model.params.flatten();
    let diag = {
        let obj = ModelBatch { model, inputs, labels };
        fic_step(&obj, &mut params, fic, state)?
    };
    model.params.unflatten(&params)?;
    Ok(diag)
}

pub fn sam_step_model(
    model: &mut Model,
    inputs: &Tensor,
    labels: &[usize],
    rho: f64,
    state: &mut OptimizerState,
) -> Result<StepDiagnostics> {
    let mut params = model.params.flatten();
    let diag = {
        let obj = ModelBatch { model, inputs, labels };
        sam_step(&obj, &mut params, rho, state)?
    };
    model.params.unflatten(&params)?;
    Ok(diag)
}

/// Monotonicity and rate summary of a full-batch trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DecreaseReport {
    pub steps: usize,
    pub monotone: bool,
    /// First `t` (0-based) with `loss[t+1] > loss[t]`.
    pub first_violation: Option<usize>,
    /// Least-squares slope of `log min_{s<=t} ‖g_s‖²` against `log t`.
    pub decay_exponent: f64,
    pub fit_window: (usize, usize),
}

/// Checks `L(θ_{t+1}) <= L(θ_t)` along `losses` and fits the decay of the
/// running minimum of `grad_sq_norms` over iterations `T/10 ..= T`.
pub fn sufficient_decrease_probe(losses: &[f64], grad_sq_norms: &[f64]) -> DecreaseReport {
    let first_violation = losses.windows(2).position(|w| !(w[1] <= w[0]));
    let steps = grad_sq_norms.len();
    let mut running = Vec::with_capacity(steps);
    let mut best = f64::INFINITY;
    for &g in grad_sq_norms {
        best = best.min(g);
        running.push(best);
    }
    let lo = (steps / 10).max(1);
    let window = (lo, steps);
    let pts: Vec<(f64, f64)> = (lo..=steps)
        .filter(|&t| running[t - 1] > 0.0 && running[t - 1].is_finite())
        .map(|t| ((t as f64).ln(), running[t - 1].ln()))
        .collect();
    DecreaseReport {
        steps: losses.len(),
        monotone: first_violation.is_none(),
        first_violation,
        decay_exponent: least_squares_slope(&pts),
        fit_window: window,
    }
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Runs `steps` deterministic full-batch iterations and returns the loss and
/// squared gradient norm observed at each iterate.
pub fn full_batch_trajectory<O: Objective + ?Sized>(
    obj: &O,
    params: &mut [f64],
    fic: &FicConfig,
    state: &mut OptimizerState,
    steps: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut losses = Vec::with_capacity(steps);
    let mut norms = Vec::with_capacity(steps);
    for _ in 0..steps {
        let d = fic_step(obj, params, fic, state)?;
        losses.push(d.loss);
        norms.push(d.fim_norm_before);
    }
    Ok((losses, norms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::QuadraticSamples;

    #[test]
    fn diag_and_norm_examples() {
        assert_eq!(diag_fim(&[3.0, -4.0]), vec![9.0, 16.0]);
        assert_eq!(diag_fim(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(fim_entrywise_norm(&[3.0, -4.0]), 25.0);
        assert_eq!(fim_entrywise_norm(&[0.0]), 0.0);
        let a = [1.0, 2.0];
        let b = [-0.5, 3.0, 0.25];
        let joined = [a.as_slice(), b.as_slice()].concat();
        assert_eq!(
            fim_entrywise_norm(&joined),
            fim_entrywise_norm(&a) + fim_entrywise_norm(&b)
        );
    }

    #[test]
    fn renormalize_examples() {
        let (g, r) = fic_renormalize(&[3.0, 4.0], 1.0);
        assert!(r.triggered);
        assert!((r.scale - 0.2).abs() < 1e-15);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        assert!((fim_entrywise_norm(&g) - 1.0).abs() < 1e-15);

        let (g, r) = fic_renormalize(&[0.5, 0.5], 2.0);
        assert!(!r.triggered);
        assert_eq!(r.scale, 1.0);
        assert_eq!(g, vec![0.5, 0.5]);

        // Exactly on the bound: the rescale factor is one.
        let (g, r) = fic_renormalize(&[1.0, 1.0], 2.0);
        assert!(r.triggered);
        assert_eq!(r.scale, 1.0);
        assert_eq!(g, vec![1.0, 1.0]);

        let (g, r) = fic_renormalize(&[0.0, 0.0], 1e-300);
        assert!(!r.triggered);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn epsilon_must_be_positive() {
        assert!(FicConfig::new(0.0).is_err());
        assert!(FicConfig::new(-1.0).is_err());
        assert!(FicConfig::new(f64::NAN).is_err());
        assert!(FicConfig::new(f64::INFINITY).is_ok());
    }

    fn half_square() -> QuadraticSamples {
        QuadraticSamples::new(vec![0.0], 1.0)
    }

    #[test]
    fn plain_gradient_step() {
        let obj = half_square();
        let mut p = vec![10.0];
        let mut st = OptimizerState::sgd(1, 0.1);
        let d = fic_step(&obj, &mut p, &FicConfig::new(1e6).unwrap(), &mut st).unwrap();
        assert!(!d.triggered);
        assert!((p[0] - 9.0).abs() < 1e-12);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn constrained_gradient_step() {
        let obj = half_square();
        let mut p = vec![10.0];
        let mut st = OptimizerState::sgd(1, 0.1);
        let d = fic_step(&obj, &mut p, &FicConfig::new(1.0).unwrap(), &mut st).unwrap();
        assert!(d.triggered);
        assert_eq!(d.fim_norm_before, 100.0);
        assert!((d.scale_applied - 0.1).abs() < 1e-15);
        assert!((p[0] - 9.9).abs() < 1e-12);
    }

    #[test]
    fn disabled_matches_unconstrained() {
        let obj = QuadraticSamples::new(vec![1.0, -3.0], 2.0);
        let mut a = vec![5.0];
        let mut b = vec![5.0];
        let mut sa = OptimizerState::adamw_default(1);
        let mut sb = OptimizerState::adamw_default(1);
        for _ in 0..5 {
            fic_step(&obj, &mut a, &FicConfig::disabled(), &mut sa).unwrap();
            fic_step(&obj, &mut b, &FicConfig::new(f64::INFINITY).unwrap(), &mut sb).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn sam_two_pass_rule() {
        let obj = half_square();
        let mut p = vec![1.0];
        let mut st = OptimizerState::sgd(1, 0.1);
        sam_step(&obj, &mut p, 0.1, &mut st).unwrap();
        assert!((p[0] - 0.89).abs() < 1e-12);
        assert_eq!(st.backward_passes, 2);
        assert_eq!(st.forward_passes, 2);

        let mut q = vec![1.0];
        let mut st2 = OptimizerState::sgd(1, 0.1);
        fic_step(&obj, &mut q, &FicConfig::default(), &mut st2).unwrap();
        assert_eq!(st2.backward_passes, 1);
    }

    #[test]
    fn sam_small_rho_approaches_plain() {
        let obj = half_square();
        let mut p = vec![1.0];
        let mut st = OptimizerState::sgd(1, 0.1);
        sam_step(&obj, &mut p, 1e-9, &mut st).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-9);
    }

    #[test]
    fn sam_zero_gradient_falls_back() {
        let obj = half_square();
        let mut p = vec![0.0];
        let mut st = OptimizerState::sgd(1, 0.1);
        sam_step(&obj, &mut p, 0.05, &mut st).unwrap();
        assert_eq!(p, vec![0.0]);
        assert_eq!(st.backward_passes, 1);
        assert!(sam_step(&obj, &mut p, 0.0, &mut st).is_err());
    }

    #[test]
    fn adamw_matches_hand_computation() {
        let obj = half_square();
        let mut p = vec![2.0];
        let mut st = OptimizerState::new(1, 0.1, 0.01, UpdateRule::adamw());
        fic_step(&obj, &mut p, &FicConfig::disabled(), &mut st).unwrap();
        // Decay first, then a bias-corrected first step of size lr * g/(|g| + eps).
        let expected = 2.0 * (1.0 - 0.1 * 0.01) - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn state_mismatch_detected() {
        let obj = half_square();
        let mut p = vec![1.0];
        let mut st = OptimizerState::sgd(3, 0.1);
        assert!(matches!(
            fic_step(&obj, &mut p, &FicConfig::default(), &mut st),
            Err(OptimError::StateMismatch { .. })
        ));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let obj = half_square();
        let mut p = vec![f64::INFINITY];
        let mut st = OptimizerState::sgd(1, 0.1);
        let err = fic_step(&obj, &mut p, &FicConfig::default(), &mut st).unwrap_err();
        assert!(matches!(err, OptimError::NonFiniteLoss(d) if d.step == 1));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn decrease_probe_on_quadratic() {
        let obj = QuadraticSamples::new(vec![0.0], 1.0);
        let mut p = vec![3.0];
        let mut st = OptimizerState::sgd(1, 0.5);
        let (l, g) = full_batch_trajectory(&obj, &mut p, &FicConfig::new(1e9).unwrap(), &mut st, 50).unwrap();
        let r = sufficient_decrease_probe(&l, &g);
        assert!(r.monotone);
        // Geometric decay is far steeper than 1/T.
        assert!(r.decay_exponent < -1.0, "{r:?}");
    }

    #[test]
    fn decrease_probe_flags_divergence() {
        // L = 1, lr = 3/L overshoots.
        let obj = QuadraticSamples::new(vec![0.0], 1.0);
        let mut p = vec![1.0];
        let mut st = OptimizerState::sgd(1, 3.0);
        let (l, g) = full_batch_trajectory(&obj, &mut p, &FicConfig::disabled(), &mut st, 20).unwrap();
        let r = sufficient_decrease_probe(&l, &g);
        assert!(!r.monotone);
        assert_eq!(r.first_violation, Some(0));
    }

    #[test]
    fn record_line_format() {
        let d = StepDiagnostics {
            step: 3,
            loss: 0.5,
            fim_norm_before: 4.0,
            triggered: true,
            scale_applied: 0.5,
        };
        assert_eq!(
            d.record_line(),
            "step=3 loss=5.000000000000e-1 fim_norm_before=4.000000000000e0 triggered=true scale=5.000000000000e-1"
        );
        let (tx, rx) = std::sync::mpsc::channel();
        let mut sink = tx;
        sink.record(&d);
        assert_eq!(rx.recv().unwrap(), d);
        let mut log = RecordLog(Vec::new());
        log.record(&d);
        assert_eq!(String::from_utf8(log.0).unwrap(), format!("{}\n", d.record_line()));
    }
}
