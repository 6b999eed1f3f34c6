//! Loss, Adam, the teacher-forced training loop and the gradient checker.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BackwardFault, Tape, Tensor, Var};
use crate::data::WindowSample;
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::seq2seq::{forecast, rollout, ModelParams, TeacherForcing};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub grad_clip_norm: f64,
    /// Teacher-forcing threshold `K`: the teacher signal is used when a
    /// uniform draw falls below it.
    pub teacher_k: f64,
    pub dropout_rate: f64,
    pub seed: u64,
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            grad_clip_norm: 5.0,
            teacher_k: 0.8,
            dropout_rate: 0.2,
            seed: 0,
            early_stop_patience: 20,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("early_stop_patience", self.early_stop_patience),
        ] {
            if v == 0 {
                return bad(format!("train.{name} must be positive"));
            }
        }
        for (name, v) in [
            ("teacher_k", self.teacher_k),
            ("validation_fraction", self.validation_fraction),
            ("adam_betas[0]", self.adam_betas.0),
            ("adam_betas[1]", self.adam_betas.1),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("train.{name} = {v} is outside [0, 1]"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("train.dropout_rate = {} is outside [0, 1)", self.dropout_rate));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "train.learning_rate = {} must be non-negative",
                self.learning_rate
            ));
        }
        if !(self.adam_eps > 0.0 && self.grad_clip_norm > 0.0) {
            return bad("train.adam_eps and train.grad_clip_norm must be positive".into());
        }
        Ok(())
    }
}

/// Per-epoch record of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    /// `None` when no validation windows were held out.
    pub val_loss: Vec<Option<f64>>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub epoch_seconds: Vec<f64>,
    pub teacher_draws: u64,
    pub teacher_used: u64,
}

impl TrainHistory {
    pub fn epochs_run(&self) -> usize {
        self.train_loss.len()
    }

    /// `epoch,train_loss,val_loss` rows (CRLF); empty `val_loss` when none was held out.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\r\n");
        for (i, (t, v)) in self.train_loss.iter().zip(&self.val_loss).enumerate() {
            let v = v.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{t},{v}\r\n", i + 1));
        }
        out
    }
}

/// Mean of squared differences.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape("mse_loss", &[pred.len()], &[target.len()]));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

/// [`mse_loss`] recorded on a tape over length-1 prediction nodes.
pub fn mse_on_tape(tape: &Tape, preds: &[Var], target: &[f64]) -> Result<Var> {
    if preds.len() != target.len() || preds.is_empty() {
        return Err(Error::shape("mse_loss", &[preds.len()], &[target.len()]));
    }
    let pred = tape.concat_all(preds)?;
    let truth = tape.leaf(Tensor::vector(target.to_vec()));
    let diff = tape.sub(pred, truth)?;
    let sq = tape.sum(tape.hadamard(diff, diff)?);
    Ok(tape.scale(sq, 1.0 / target.len() as f64))
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, betas: (f64, f64), eps: f64) -> Self {
        Adam {
            learning_rate,
            beta1: betas.0,
            beta2: betas.1,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn from_config(config: &TrainConfig) -> Self {
        Adam::new(config.learning_rate, config.adam_betas, config.adam_eps)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.v
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("adam_step", &[params.len()], &[grads.len()]));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape("adam_step", &p.shape().dims(), &g.shape().dims()));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
            return Err(Error::shape("adam_step", &[self.m.len()], &[params.len()]));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((x, &gi), mi), vi) in p
                .values_mut()
                .iter_mut()
                .zip(g.values())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *x -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.values_mut() {
                *v *= s;
            }
        }
    }
    norm
}

/// Loss and parameter gradients (in [`ModelParams::tensors`] order) for one
/// window.
pub fn sample_gradients(
    params: &ModelParams,
    sample: &WindowSample,
    teacher: Option<&TeacherForcing<'_>>,
    mode: &mut Mode<'_>,
    fault: Option<BackwardFault>,
) -> Result<(f64, Vec<Tensor>)> {
    let tape = fault.map_or_else(Tape::new, Tape::with_fault);
    let (vars, leaves) = params.bind(&tape)?;
    let r = rollout(&tape, &vars, &sample.input, sample.target.len(), teacher, mode)?;
    let loss = mse_on_tape(&tape, &r.predictions, &sample.target)?;
    let grads = tape.backward(loss)?;
    Ok((tape.scalar(loss), leaves.iter().map(|&l| grads.wrt(l)).collect()))
}

/// Teacher-forced, dropout-free loss: deterministic in the parameters.
pub fn teacher_forced_loss(params: &ModelParams, sample: &WindowSample) -> Result<f64> {
    let draws = vec![0.0; sample.target.len()];
    let teacher = TeacherForcing {
        threshold: 1.0,
        targets: &sample.target,
        draws: &draws,
    };
    let tape = Tape::new();
    let (vars, _) = params.bind(&tape)?;
    let r = rollout(
        &tape,
        &vars,
        &sample.input,
        sample.target.len(),
        Some(&teacher),
        &mut Mode::Inference,
    )?;
    Ok(tape.scalar(mse_on_tape(&tape, &r.predictions, &sample.target)?))
}

/// Free-running (no teacher, no dropout) MSE over `samples`.
pub fn evaluate_loss(params: &ModelParams, samples: &[WindowSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let f = forecast(params, &s.input, s.target.len())?;
        total += mse_loss(&f.values, &s.target)?;
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Trains `params` and returns the parameters of the best epoch.
pub fn train(
    params: ModelParams,
    samples: &[WindowSample],
    config: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    train_with(params, samples, config, |_, _| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with(
    mut params: ModelParams,
    samples: &[WindowSample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &TrainHistory),
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Domain("training set is empty".into()));
    }
    let horizon = samples[0].target.len();
    if samples.iter().any(|s| s.target.len() != horizon) {
        return Err(Error::Domain("training windows have differing horizons".into()));
    }
    let n_val = if samples.len() >= 2 {
        ((samples.len() as f64 * config.validation_fraction).floor() as usize)
            .max(usize::from(config.validation_fraction > 0.0))
            .min(samples.len() - 1)
    } else {
        0
    };
    let (fit, val) = samples.split_at(samples.len() - n_val);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::from_config(config);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..fit.len()).collect();

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let draws: Vec<f64> = (0..horizon).map(|_| rng.gen::<f64>()).collect();
            history.teacher_draws += horizon as u64;
            history.teacher_used += draws.iter().filter(|&&k| k < config.teacher_k).count() as u64;
            let mut sum: Option<Vec<Tensor>> = None;
            let mut batch_loss = 0.0;
            for &i in batch {
                let teacher = TeacherForcing {
                    threshold: config.teacher_k,
                    targets: &fit[i].target,
                    draws: &draws,
                };
                let mut mode = Mode::Training {
                    rng: &mut rng as &mut dyn RngCore,
                    dropout: config.dropout_rate,
                };
                let (loss, grads) = sample_gradients(&params, &fit[i], Some(&teacher), &mut mode, None)?;
                batch_loss += loss;
                match &mut sum {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            for (x, y) in a.values_mut().iter_mut().zip(g.values()) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            let mean_loss = batch_loss / batch.len() as f64;
            if !mean_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b + 1,
                    loss: mean_loss,
                });
            }
            epoch_loss += batch_loss;
            let mut grads = sum.expect("non-empty batch");
            let inv = 1.0 / batch.len() as f64;
            for g in &mut grads {
                for v in g.values_mut() {
                    *v *= inv;
                }
            }
            clip_global_norm(&mut grads, config.grad_clip_norm);
            adam.step(&mut params.tensors_mut(), &grads)?;
        }
        let train_loss = epoch_loss / fit.len() as f64;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(evaluate_loss(&params, val)?)
        };
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
        history.epoch_seconds.push(started.elapsed().as_secs_f64());

        let score = val_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, params.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        on_epoch(epoch, &history);
        if since_best >= config.early_stop_patience {
            break;
        }
    }
    let (_, best_params) = best.expect("at least one epoch");
    Ok((best_params, history))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    pub tensors_checked: usize,
}

impl GradCheckReport {
    /// The `n` coordinates with the largest relative error.
    pub fn worst(&self, n: usize) -> Vec<&GradCheckEntry> {
        let mut sorted: Vec<&GradCheckEntry> = self.entries.iter().collect();
        sorted.sort_by(|a, b| b.rel_error.total_cmp(&a.rel_error));
        sorted.truncate(n);
        sorted
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Minimum number of coordinates checked overall.
    pub min_coordinates: usize,
    /// Coordinates sampled from every tensor before topping up.
    pub per_tensor: usize,
    pub seed: u64,
    /// Corrupts the analytic side; used to confirm failures are caught.
    pub fault: Option<BackwardFault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            min_coordinates: 200,
            per_tensor: 3,
            seed: 0,
            fault: None,
        }
    }
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares tape gradients of the teacher-forced, dropout-free window loss
/// against central finite differences on a random subsample of coordinates
/// that covers every parameter tensor.
pub fn gradient_check(
    params: &ModelParams,
    sample: &WindowSample,
    options: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let base = teacher_forced_loss(params, sample)?;
    let again = teacher_forced_loss(params, sample)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Contract(format!("loss is not deterministic: {base} vs {again}")));
    }
    let draws = vec![0.0; sample.target.len()];
    let teacher = TeacherForcing {
        threshold: 1.0,
        targets: &sample.target,
        draws: &draws,
    };
    let (_, analytic) = sample_gradients(params, sample, Some(&teacher), &mut Mode::Inference, options.fault)?;

    let named: Vec<(String, usize)> = params.tensors().into_iter().map(|(n, t)| (n, t.len())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (ti, (_, len)) in named.iter().enumerate() {
        let mut idx: Vec<usize> = (0..*len).collect();
        idx.shuffle(&mut rng);
        coords.extend(idx.into_iter().take(options.per_tensor).map(|i| (ti, i)));
    }
    let total: usize = named.iter().map(|(_, l)| l).sum();
    while coords.len() < options.min_coordinates.min(total) {
        let mut flat = rng.gen_range(0..total);
        let mut ti = 0;
        while flat >= named[ti].1 {
            flat -= named[ti].1;
            ti += 1;
        }
        if !coords.contains(&(ti, flat)) {
            coords.push((ti, flat));
        }
    }

    let mut entries = Vec::with_capacity(coords.len());
    let mut probe = params.clone();
    for (ti, i) in coords {
        let original = probe.tensors_mut()[ti].values()[i];
        probe.tensors_mut()[ti].values_mut()[i] = original + options.epsilon;
        let plus = teacher_forced_loss(&probe, sample)?;
        probe.tensors_mut()[ti].values_mut()[i] = original - options.epsilon;
        let minus = teacher_forced_loss(&probe, sample)?;
        probe.tensors_mut()[ti].values_mut()[i] = original;
        let numeric = (plus - minus) / (2.0 * options.epsilon);
        let a = analytic[ti].values()[i];
        entries.push(GradCheckEntry {
            tensor: named[ti].0.clone(),
            index: i,
            analytic: a,
            numeric,
            rel_error: relative_error(a, numeric),
        });
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    let tensors_checked = {
        let mut seen: Vec<&str> = entries.iter().map(|e| e.tensor.as_str()).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    };
    Ok(GradCheckReport {
        entries,
        max_rel_error,
        tensors_checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Shape;
    use approx::assert_abs_diff_eq;

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[1.0; 4], &[0.0; 4]).unwrap(), 1.0);
        assert_eq!(mse_loss(&[0.0, 2.0], &[1.0, 0.0]).unwrap(), 2.5);
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mse_on_tape_matches_plain() {
        let tape = Tape::new();
        let preds: Vec<Var> = [0.0, 2.0].iter().map(|&v| tape.leaf(Tensor::scalar(v))).collect();
        let l = mse_on_tape(&tape, &preds, &[1.0, 0.0]).unwrap();
        assert_eq!(tape.scalar(l), 2.5);
        let g = tape.backward(l).unwrap();
        // d/dp_i = (p_i - t_i)
        assert_eq!(g.wrt(preds[0]).values(), &[-1.0]);
        assert_eq!(g.wrt(preds[1]).values(), &[2.0]);
    }

    #[test]
    fn adam_zero_gradient_keeps_params_and_decays_moments() {
        let mut p = Tensor::vector(vec![1.5, -2.0]);
        let mut adam = Adam::new(1e-3, (0.9, 0.999), 1e-8);
        adam.step(&mut [&mut p], &[Tensor::vector(vec![1.0, 1.0])]).unwrap();
        let after_first = p.clone();
        let m1 = adam.first_moment()[0].clone();
        adam.step(&mut [&mut p], &[Tensor::vector(vec![0.0, 0.0])]).unwrap();
        for (m_new, m_old) in adam.first_moment()[0].iter().zip(&m1) {
            assert_abs_diff_eq!(*m_new, 0.9 * m_old, epsilon = 1e-15);
        }
        // The decayed first moment still moves params; a fresh optimizer with a
        // zero gradient does not.
        assert_ne!(p, after_first);
        let mut q = Tensor::vector(vec![1.5, -2.0]);
        let mut fresh = Adam::new(1e-3, (0.9, 0.999), 1e-8);
        fresh.step(&mut [&mut q], &[Tensor::vector(vec![0.0, 0.0])]).unwrap();
        assert_eq!(q.values(), &[1.5, -2.0]);
        assert_eq!(fresh.steps(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        for g in [1e-3, 0.5, 7.0, 1e4] {
            let mut p = Tensor::scalar(2.0);
            let mut adam = Adam::new(1e-3, (0.9, 0.999), 1e-8);
            adam.step(&mut [&mut p], &[Tensor::scalar(g)]).unwrap();
            // m̂ = g, v̂ = g², update = lr · g / (|g| + eps)
            let want = 2.0 - 1e-3 * g / (g.abs() + 1e-8);
            assert_abs_diff_eq!(p.values()[0], want, epsilon = 1e-15);
            assert_abs_diff_eq!(p.values()[0], 2.0 - 1e-3, epsilon = 1e-8);
        }
    }

    #[test]
    fn adam_minimizes_a_parabola() {
        let mut x = Tensor::scalar(5.0);
        let mut adam = Adam::new(0.05, (0.9, 0.999), 1e-8);
        for _ in 0..2000 {
            let g = Tensor::scalar(2.0 * x.values()[0]);
            adam.step(&mut [&mut x], &[g]).unwrap();
        }
        assert!(x.values()[0].abs() < 1e-2, "{}", x.values()[0]);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut p = Tensor::vector(vec![1.0, 2.0]);
        let mut adam = Adam::new(1e-3, (0.9, 0.999), 1e-8);
        assert!(adam.step(&mut [&mut p], &[Tensor::zeros(Shape::Vector(3))]).is_err());
    }

    #[test]
    fn clipping_bounds_the_global_norm() {
        let mut g = vec![Tensor::vector(vec![3.0, 4.0]), Tensor::vector(vec![12.0])];
        let before = clip_global_norm(&mut g, 5.0);
        assert_eq!(before, 13.0);
        assert!(global_norm(&g) <= 5.0 + 1e-9);
        let mut small = vec![Tensor::vector(vec![0.3])];
        clip_global_norm(&mut small, 5.0);
        assert_eq!(small[0].values(), &[0.3]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            teacher_k: 1.5,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            dropout_rate: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn history_csv_layout() {
        let h = TrainHistory {
            train_loss: vec![0.5, 0.25],
            val_loss: vec![Some(0.75), None],
            best_epoch: 2,
            epoch_seconds: vec![0.1, 0.1],
            teacher_draws: 8,
            teacher_used: 6,
        };
        assert_eq!(h.to_csv(), "epoch,train_loss,val_loss\r\n1,0.5,0.75\r\n2,0.25,\r\n");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1e-10, 0.0), 1e-10 / 1e-8);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
    }
}
