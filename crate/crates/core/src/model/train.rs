//! Mini-batch training with Adam or SGD-momentum, learning-rate schedules and
//! per-epoch history.

use std::f64::consts::PI;

use log::info;
use rand::seq::SliceRandom;

use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::model::config::{OptimizerKind, ScheduleKind, TrainConfig};
use crate::model::network::{batch_loss, Model, Params, Role};
use crate::tensor::Tensor;

pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;
/// One-cycle starts and ends relative to the peak rate.
const ONE_CYCLE_START_DIV: f64 = 25.0;
const ONE_CYCLE_FINAL_DIV: f64 = 1e4;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Rate at the last step of the epoch.
    pub learning_rate: f64,
    /// Mean of the mini-batch losses seen during the epoch.
    pub train_loss: f64,
    /// Inference-mode accuracy on the training set after the epoch.
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl History {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Learning rate at a fractional position `epoch + progress` (progress in
/// `[0, 1)`).
pub fn learning_rate(tc: &TrainConfig, epoch: usize, progress: f64) -> f64 {
    let base = tc.base_learning_rate;
    match tc.schedule {
        ScheduleKind::Stepwise => base * 0.1f64.powi((epoch / tc.step_epochs) as i32),
        ScheduleKind::OneCycle => {
            let pos = ((epoch % tc.cycle_length) as f64 + progress) / tc.cycle_length as f64;
            let lo = base / ONE_CYCLE_START_DIV;
            let end = lo / ONE_CYCLE_FINAL_DIV;
            let cos_ramp = |from: f64, to: f64, frac: f64| to + (from - to) * 0.5 * (1.0 + (PI * frac).cos());
            if pos < tc.pct_start {
                cos_ramp(lo, base, pos / tc.pct_start)
            } else {
                let rest = (1.0 - tc.pct_start).max(f64::EPSILON);
                cos_ramp(base, end, ((pos - tc.pct_start) / rest).min(1.0))
            }
        }
    }
}

/// Optimiser moments, aligned with the trainable tensors of [`Params`].
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    momentum: f64,
    weight_decay: f64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    t: u64,
}

impl Optimizer {
    pub fn new(params: &Params, tc: &TrainConfig) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .into_iter()
            .filter(|(_, r, _)| *r != Role::Buffer)
            .map(|(_, _, t)| Tensor::zeros(t.shape()))
            .collect();
        Optimizer {
            kind: tc.optimizer,
            momentum: tc.momentum,
            weight_decay: tc.weight_decay,
            second: if tc.optimizer == OptimizerKind::Adam { zeros.clone() } else { Vec::new() },
            first: zeros,
            t: 0,
        }
    }

    /// One update. Weight decay is decoupled from the gradient and applies to
    /// weight matrices only.
    pub fn step(&mut self, params: &mut Params, grads: &Params, lr: f64) {
        self.t += 1;
        let t = self.t as i32;
        let trainable = params.tensors_mut().into_iter().filter(|(_, r, _)| *r != Role::Buffer);
        let gs = grads.tensors().into_iter().filter(|(_, r, _)| *r != Role::Buffer);
        for (k, ((_, role, p), (_, _, g))) in trainable.zip(gs).enumerate() {
            let decay = if role == Role::Weight { lr * self.weight_decay } else { 0.0 };
            let m = self.first[k].data_mut();
            match self.kind {
                OptimizerKind::Adam => {
                    let v = self.second[k].data_mut();
                    let b1 = self.momentum;
                    let c1 = 1.0 - b1.powi(t);
                    let c2 = 1.0 - ADAM_BETA2.powi(t);
                    for (((w, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mv = b1 * *mv + (1.0 - b1) * gv;
                        *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
                        let update = (*mv / c1) / ((*vv / c2).sqrt() + ADAM_EPSILON);
                        *w -= lr * update + decay * *w;
                    }
                }
                OptimizerKind::SgdMomentum => {
                    for ((w, &gv), mv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()) {
                        *mv = self.momentum * *mv + gv;
                        *w -= lr * *mv + decay * *w;
                    }
                }
            }
        }
    }
}

/// Inference-mode mean loss and accuracy.
pub fn evaluate(model: &Model, images: &[LabeledImage]) -> Result<(f64, f64)> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let xs: Vec<Tensor> = images.iter().map(|i| i.pixels.clone()).collect();
    let labels: Vec<usize> = images.iter().map(|i| i.occlusion.code()).collect();
    let probs = model.forward(&xs)?;
    let correct = probs.iter().zip(&labels).filter(|(p, &l)| p.argmax() == Some(l)).count();
    Ok((batch_loss(&probs, &labels)?, correct as f64 / labels.len() as f64))
}

fn params_finite(p: &Params) -> bool {
    p.tensors().iter().all(|(_, _, t)| t.is_finite())
}

/// Trains in place. Shuffling draws from the model's RNG, so the same model
/// and data always give the same history.
pub fn train(model: &mut Model, train: &[LabeledImage], validation: &[LabeledImage], tc: &TrainConfig) -> Result<History> {
    train_with(model, train, validation, tc, |_| {})
}

pub fn train_with(
    model: &mut Model,
    train: &[LabeledImage],
    validation: &[LabeledImage],
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History> {
    tc.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut opt = Optimizer::new(&model.params, tc);
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batches = train.len().div_ceil(tc.batch_size);
    for epoch in 0..tc.epochs {
        order.shuffle(&mut model.rng);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            let xs: Vec<Tensor> = chunk.iter().map(|&i| train[i].pixels.clone()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train[i].occlusion.code()).collect();
            let (probs, cache) = model.forward_train(&xs)?;
            let loss = batch_loss(&probs, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step: model.step });
            }
            let grads = model.backward(&cache, &labels)?;
            if !params_finite(&grads) {
                return Err(Error::NonFiniteLoss { step: model.step });
            }
            lr = learning_rate(tc, epoch, b as f64 / batches as f64);
            opt.step(&mut model.params, &grads, lr);
            model.update_running(&cache);
            model.step += 1;
            if !params_finite(&model.params) {
                return Err(Error::NonFiniteLoss { step: model.step });
            }
            loss_sum += loss;
        }
        let (_, train_accuracy) = evaluate(model, train)?;
        let (val_loss, val_accuracy) = if validation.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate(model, validation)?;
            (Some(l), Some(a))
        };
        let rec = EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss: loss_sum / batches as f64,
            train_accuracy,
            val_loss,
            val_accuracy,
        };
        info!(
            "epoch {epoch}: lr {lr:.3e} loss {:.4} acc {:.3}{}",
            rec.train_loss,
            rec.train_accuracy,
            rec.val_accuracy.map(|a| format!(" val {a:.3}")).unwrap_or_default()
        );
        on_epoch(&rec);
        history.epochs.push(rec);
        if tc.stop_at_accuracy.is_some_and(|t| train_accuracy >= t) {
            history.stopped_early = true;
            break;
        }
    }
    for (_, _, t) in model.params.tensors_mut() {
        t.round_to_f32();
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::fixture;
    use crate::model::config::{BlockSpec, NetworkConfig};
    use crate::model::network::build_network;

    fn tiny_cfg() -> NetworkConfig {
        let mut c = NetworkConfig::toy();
        c.input_size = 8;
        c.blocks = vec![BlockSpec::new(2, 16, 1, 2)];
        c.head_channels = 32;
        c.bridge_dim = 4;
        c.hidden_size = 4;
        c
    }

    fn tiny_data() -> Vec<LabeledImage> {
        fixture(&[0], 2, 0, 8)
    }

    #[test]
    fn stepwise_schedule() {
        let tc = TrainConfig::default();
        assert_eq!(learning_rate(&tc, 0, 0.5), 0.1);
        assert_eq!(learning_rate(&tc, 9, 0.9), 0.1);
        assert!((learning_rate(&tc, 10, 0.0) - 0.01).abs() < 1e-15);
        assert!((learning_rate(&tc, 25, 0.0) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn one_cycle_peaks_at_pct_start() {
        let tc = TrainConfig {
            schedule: ScheduleKind::OneCycle,
            ..TrainConfig::default()
        };
        let start = learning_rate(&tc, 0, 0.0);
        assert!((start - 0.1 / 25.0).abs() < 1e-15);
        assert!((learning_rate(&tc, 9, 0.0) - 0.1).abs() < 1e-12);
        let end = learning_rate(&tc, 9, 0.999_999);
        assert!(end < start);
        let mut prev = 0.0;
        for e in 0..9 {
            let lr = learning_rate(&tc, e, 0.0);
            assert!(lr > prev);
            prev = lr;
        }
        assert!((learning_rate(&tc, 10, 0.0) - start).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut m = build_network(&tiny_cfg(), 1).unwrap();
        let before = m.params.clone();
        let tc = TrainConfig {
            base_learning_rate: 0.0,
            epochs: 2,
            batch_size: 4,
            ..TrainConfig::default()
        };
        train(&mut m, &tiny_data(), &[], &tc).unwrap();
        for ((n, r, a), (_, _, b)) in m.params.tensors().into_iter().zip(before.tensors()) {
            if r != Role::Buffer {
                assert_eq!(a, b, "{n} moved");
            }
        }
        assert_eq!(m.step, 6);
    }

    #[test]
    fn same_seed_same_history() {
        let tc = TrainConfig {
            base_learning_rate: 0.01,
            epochs: 2,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = build_network(&tiny_cfg(), 9).unwrap();
            let h = train(&mut m, &tiny_data(), &tiny_data()[..3], &tc).unwrap();
            (h, m)
        };
        let (h1, m1) = run();
        let (h2, m2) = run();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
        assert_eq!(h1.epochs.len(), 2);
        assert!(h1.epochs[0].val_accuracy.is_some());
    }

    #[test]
    fn decay_alone_shrinks_weights() {
        let m = build_network(&tiny_cfg(), 2).unwrap();
        let mut p = m.params.clone();
        let zero = p.zeros_like();
        let tc = TrainConfig {
            weight_decay: 0.1,
            ..TrainConfig::default()
        };
        for kind in [OptimizerKind::Adam, OptimizerKind::SgdMomentum] {
            let mut opt = Optimizer::new(&p, &TrainConfig { optimizer: kind, ..tc.clone() });
            let before = p.clone();
            opt.step(&mut p, &zero, 0.5);
            for ((n, r, a), (_, _, b)) in p.tensors().into_iter().zip(before.tensors()) {
                if r == Role::Weight {
                    assert!(a.l2_norm() < b.l2_norm(), "{n}");
                } else {
                    assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn exploding_rate_is_reported() {
        let mut m = build_network(&tiny_cfg(), 1).unwrap();
        let tc = TrainConfig {
            base_learning_rate: 1e300,
            epochs: 3,
            batch_size: 2,
            optimizer: OptimizerKind::SgdMomentum,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&mut m, &tiny_data(), &[], &tc), Err(Error::NonFiniteLoss { .. })));
    }
}
