//! Per-channel batch normalization over a batch of `[H, W, C]` images.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
/// Weight kept by the running statistics on each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub scale: Tensor,
    pub shift: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

/// Batch statistics and normalized activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    normalized: Vec<Tensor>,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn identity(channels: usize) -> Self {
        BatchNorm {
            scale: Tensor::filled(&[channels], 1.0),
            shift: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        for t in [&self.shift, &self.running_mean, &self.running_var] {
            if t.shape() != [c] {
                return Err(Error::shape("batch_norm params", self.scale.shape(), t.shape()));
            }
        }
        if let Some(v) = self.running_var.data().iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "batch_norm: running variance {v} is not positive"
            )));
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().last() != Some(&self.channels()) {
            return Err(Error::shape("batch_norm", x.shape(), self.scale.shape()));
        }
        Ok(())
    }

    pub fn forward_infer(&self, x: &Tensor) -> Result<Tensor> {
        self.validate()?;
        self.check_input(x)?;
        let c = self.channels();
        let coef: Vec<(f64, f64)> = (0..c)
            .map(|ch| {
                let a = self.scale.data()[ch] / (self.running_var.data()[ch] + BN_EPSILON).sqrt();
                (a, self.shift.data()[ch] - a * self.running_mean.data()[ch])
            })
            .collect();
        let mut out = x.clone();
        for px in out.data_mut().chunks_exact_mut(c) {
            for (v, &(a, b)) in px.iter_mut().zip(&coef) {
                *v = a * *v + b;
            }
        }
        Ok(out)
    }

    /// Normalizes with the statistics of `xs` taken together.
    pub fn forward_train(&self, xs: &[Tensor]) -> Result<(Vec<Tensor>, BnCache)> {
        self.validate()?;
        if xs.is_empty() {
            return Err(Error::InvalidArgument("batch_norm: empty batch".into()));
        }
        for x in xs {
            self.check_input(x)?;
        }
        let c = self.channels();
        let mut mean = vec![0.0; c];
        let mut count = 0usize;
        for x in xs {
            for px in x.data().chunks_exact(c) {
                for (m, &v) in mean.iter_mut().zip(px) {
                    *m += v;
                }
                count += 1;
            }
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        let mut var = vec![0.0; c];
        for x in xs {
            for px in x.data().chunks_exact(c) {
                for ((s, &v), &m) in var.iter_mut().zip(px).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        for s in &mut var {
            *s /= count as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
        let mut normalized = Vec::with_capacity(xs.len());
        let mut outputs = Vec::with_capacity(xs.len());
        for x in xs {
            let mut n = x.clone();
            for px in n.data_mut().chunks_exact_mut(c) {
                for ch in 0..c {
                    px[ch] = (px[ch] - mean[ch]) * inv_std[ch];
                }
            }
            let mut y = n.clone();
            for px in y.data_mut().chunks_exact_mut(c) {
                for ch in 0..c {
                    px[ch] = self.scale.data()[ch] * px[ch] + self.shift.data()[ch];
                }
            }
            normalized.push(n);
            outputs.push(y);
        }
        Ok((
            outputs,
            BnCache {
                mean,
                var,
                normalized,
                inv_std,
            },
        ))
    }

    /// Folds batch statistics into the running estimates.
    pub fn update_running(&mut self, cache: &BnCache) {
        for ch in 0..self.channels() {
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = BN_MOMENTUM * *rm + (1.0 - BN_MOMENTUM) * cache.mean[ch];
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = BN_MOMENTUM * *rv + (1.0 - BN_MOMENTUM) * cache.var[ch];
        }
    }

    /// Returns `(∂L/∂inputs, ∂L/∂scale, ∂L/∂shift)` for a train-mode forward.
    pub fn backward(&self, cache: &BnCache, grad_out: &[Tensor]) -> Result<(Vec<Tensor>, Tensor, Tensor)> {
        let c = self.channels();
        if grad_out.len() != cache.normalized.len() {
            return Err(Error::InvalidArgument(format!(
                "batch_norm backward: {} gradients for {} inputs",
                grad_out.len(),
                cache.normalized.len()
            )));
        }
        let mut d_shift = vec![0.0; c];
        let mut d_scale = vec![0.0; c];
        let mut count = 0usize;
        for (g, n) in grad_out.iter().zip(&cache.normalized) {
            if g.shape() != n.shape() {
                return Err(Error::shape("batch_norm backward", g.shape(), n.shape()));
            }
            for (gp, np) in g.data().chunks_exact(c).zip(n.data().chunks_exact(c)) {
                for ch in 0..c {
                    d_shift[ch] += gp[ch];
                    d_scale[ch] += gp[ch] * np[ch];
                }
                count += 1;
            }
        }
        let m = count as f64;
        let mut grads = Vec::with_capacity(grad_out.len());
        for (g, n) in grad_out.iter().zip(&cache.normalized) {
            let mut dx = g.clone();
            for (dp, np) in dx.data_mut().chunks_exact_mut(c).zip(n.data().chunks_exact(c)) {
                for ch in 0..c {
                    let k = self.scale.data()[ch] * cache.inv_std[ch] / m;
                    dp[ch] = k * (m * dp[ch] - d_shift[ch] - np[ch] * d_scale[ch]);
                }
            }
            grads.push(dx);
        }
        Ok((grads, Tensor::vector(d_scale), Tensor::vector(d_shift)))
    }
}

/// Train mode normalizes with batch statistics and updates the running
/// estimates; infer mode uses the running estimates.
pub fn batch_norm(inputs: &[Tensor], bn: &mut BatchNorm, mode: Mode) -> Result<Vec<Tensor>> {
    match mode {
        Mode::Infer => inputs.iter().map(|x| bn.forward_infer(x)).collect(),
        Mode::Train => {
            let (out, cache) = bn.forward_train(inputs)?;
            bn.update_running(&cache);
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn standardized_input_passes_through() {
        // each channel takes ±1 over the batch: mean 0, variance 1
        let x = Tensor::new(vec![2, 1, 2], vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        let mut bn = BatchNorm::identity(2);
        let out = batch_norm(std::slice::from_ref(&x), &mut bn, Mode::Train).unwrap();
        let shrink = 1.0 / (1.0 + BN_EPSILON).sqrt();
        for (o, i) in out[0].data().iter().zip(x.data()) {
            assert!((o - i * shrink).abs() < 1e-12);
            assert!((o - i).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_scale_yields_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let xs: Vec<Tensor> = (0..3)
            .map(|_| Tensor::from_fn(&[2, 2, 3], |_| rng.gen_range(-3.0..3.0)))
            .collect();
        let mut bn = BatchNorm::identity(3);
        bn.scale = Tensor::zeros(&[3]);
        bn.shift = Tensor::vector(vec![0.5, -1.0, 2.0]);
        for mode in [Mode::Train, Mode::Infer] {
            for y in batch_norm(&xs, &mut bn.clone(), mode).unwrap() {
                for px in y.data().chunks_exact(3) {
                    assert_eq!(px, &[0.5, -1.0, 2.0]);
                }
            }
        }
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<Tensor> = (0..4)
            .map(|_| Tensor::from_fn(&[3, 3, 2], |i| rng.gen_range(-2.0..5.0) * (1 + i % 2) as f64))
            .collect();
        let mut bn = BatchNorm::identity(2);
        let ys = batch_norm(&xs, &mut bn, Mode::Train).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = ys
                .iter()
                .flat_map(|y| y.data().chunks_exact(2).map(move |p| p[ch]))
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-5);
        }
        // running stats moved 10% toward the batch
        assert!(bn.running_var.data().iter().all(|&v| v != 1.0));
    }

    #[test]
    fn non_positive_running_variance_rejected() {
        let mut bn = BatchNorm::identity(2);
        bn.running_var = Tensor::vector(vec![1.0, 0.0]);
        let x = Tensor::zeros(&[1, 1, 2]);
        assert!(batch_norm(std::slice::from_ref(&x), &mut bn, Mode::Infer).is_err());
        assert!(batch_norm(&[x], &mut bn, Mode::Train).is_err());
    }

    #[test]
    fn infer_matches_train_when_running_stats_equal_batch_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<Tensor> = (0..2)
            .map(|_| Tensor::from_fn(&[2, 2, 2], |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let mut bn = BatchNorm::identity(2);
        bn.scale = Tensor::vector(vec![1.5, 0.5]);
        let (train, cache) = bn.forward_train(&xs).unwrap();
        bn.running_mean = Tensor::vector(cache.mean.clone());
        bn.running_var = Tensor::vector(cache.var.clone());
        for (x, t) in xs.iter().zip(&train) {
            let i = bn.forward_infer(x).unwrap();
            for (a, b) in i.data().iter().zip(t.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<Tensor> = (0..2)
            .map(|_| Tensor::from_fn(&[2, 3, 2], |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let mut bn = BatchNorm::identity(2);
        bn.scale = Tensor::vector(vec![1.3, -0.7]);
        bn.shift = Tensor::vector(vec![0.2, 0.1]);
        let probes: Vec<Tensor> = xs
            .iter()
            .map(|x| Tensor::from_fn(x.shape(), |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let loss = |bn: &BatchNorm, xs: &[Tensor]| -> f64 {
            let (ys, _) = bn.forward_train(xs).unwrap();
            ys.iter().zip(&probes).map(|(y, p)| y.dot(p).unwrap()).sum()
        };
        let (_, cache) = bn.forward_train(&xs).unwrap();
        let (dxs, dscale, dshift) = bn.backward(&cache, &probes).unwrap();
        let h = 1e-6;
        for b in 0..xs.len() {
            for i in 0..xs[b].len() {
                let mut p = xs.to_vec();
                p[b].data_mut()[i] += h;
                let mut m = xs.to_vec();
                m[b].data_mut()[i] -= h;
                let fd = (loss(&bn, &p) - loss(&bn, &m)) / (2.0 * h);
                assert!((fd - dxs[b].data()[i]).abs() < 1e-7);
            }
        }
        for ch in 0..2 {
            let mut p = bn.clone();
            p.scale.data_mut()[ch] += h;
            let mut m = bn.clone();
            m.scale.data_mut()[ch] -= h;
            let fd = (loss(&p, &xs) - loss(&m, &xs)) / (2.0 * h);
            assert!((fd - dscale.data()[ch]).abs() < 1e-7);
            let mut p = bn.clone();
            p.shift.data_mut()[ch] += h;
            let mut m = bn.clone();
            m.shift.data_mut()[ch] -= h;
            let fd = (loss(&p, &xs) - loss(&m, &xs)) / (2.0 * h);
            assert!((fd - dshift.data()[ch]).abs() < 1e-7);
        }
    }
}
