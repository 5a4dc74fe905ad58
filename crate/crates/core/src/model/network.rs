//! The fused classifier: MobileNetV2 feature extractor, a per-position
//! fully-connected bridge, and a GRU reading the feature map as a sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::OcclusionClass;
use crate::error::{Error, Result};
use crate::gru::{cross_entropy, gru_backward, gru_forward, one_hot, GruCellParams, GruDims, GruTrace, Supervision};
use crate::model::config::NetworkConfig;
use crate::nn::block::{BlockCache, ConvBlockParams, ConvKind, ConvStage, StageCache, StageGrads};
use crate::nn::norm::BatchNorm;
use crate::tensor::{matvec, matvec_t, outer_accumulate, Tensor};

/// How the optimiser treats a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Trainable and subject to weight decay.
    Weight,
    /// Trainable, no decay (biases, batch-norm affine terms).
    Bias,
    /// Running statistics; not touched by the optimiser.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub stem: ConvStage,
    pub blocks: Vec<ConvBlockParams>,
    pub head: ConvStage,
    /// `[bridge_dim, head_channels]`
    pub bridge_w: Tensor,
    pub bridge_b: Tensor,
    pub gru: GruCellParams,
}

fn stage_refs<'a>(prefix: &str, s: &'a ConvStage, out: &mut Vec<(String, Role, &'a Tensor)>) {
    out.push((format!("{prefix}.weight"), Role::Weight, &s.weight));
    if let Some(bn) = &s.bn {
        out.push((format!("{prefix}.bn.scale"), Role::Bias, &bn.scale));
        out.push((format!("{prefix}.bn.shift"), Role::Bias, &bn.shift));
        out.push((format!("{prefix}.bn.running_mean"), Role::Buffer, &bn.running_mean));
        out.push((format!("{prefix}.bn.running_var"), Role::Buffer, &bn.running_var));
    }
}

fn stage_muts<'a>(prefix: &str, s: &'a mut ConvStage, out: &mut Vec<(String, Role, &'a mut Tensor)>) {
    out.push((format!("{prefix}.weight"), Role::Weight, &mut s.weight));
    if let Some(bn) = &mut s.bn {
        out.push((format!("{prefix}.bn.scale"), Role::Bias, &mut bn.scale));
        out.push((format!("{prefix}.bn.shift"), Role::Bias, &mut bn.shift));
        out.push((format!("{prefix}.bn.running_mean"), Role::Buffer, &mut bn.running_mean));
        out.push((format!("{prefix}.bn.running_var"), Role::Buffer, &mut bn.running_var));
    }
}

fn gru_role(name: &str) -> Role {
    if name.starts_with("b") {
        Role::Bias
    } else {
        Role::Weight
    }
}

impl Params {
    /// Every tensor with a stable dotted name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Role, &Tensor)> {
        let mut out = Vec::new();
        stage_refs("stem", &self.stem, &mut out);
        for (i, b) in self.blocks.iter().enumerate() {
            stage_refs(&format!("blocks.{i}.expand"), &b.expand, &mut out);
            stage_refs(&format!("blocks.{i}.depthwise"), &b.depthwise, &mut out);
            stage_refs(&format!("blocks.{i}.project"), &b.project, &mut out);
        }
        stage_refs("head", &self.head, &mut out);
        out.push(("bridge.weight".into(), Role::Weight, &self.bridge_w));
        out.push(("bridge.bias".into(), Role::Bias, &self.bridge_b));
        for (name, t) in GruCellParams::FIELD_NAMES.iter().zip(self.gru.fields()) {
            out.push((format!("gru.{name}"), gru_role(name), t));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, Role, &mut Tensor)> {
        let mut out = Vec::new();
        stage_muts("stem", &mut self.stem, &mut out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            stage_muts(&format!("blocks.{i}.expand"), &mut b.expand, &mut out);
            stage_muts(&format!("blocks.{i}.depthwise"), &mut b.depthwise, &mut out);
            stage_muts(&format!("blocks.{i}.project"), &mut b.project, &mut out);
        }
        stage_muts("head", &mut self.head, &mut out);
        out.push(("bridge.weight".into(), Role::Weight, &mut self.bridge_w));
        out.push(("bridge.bias".into(), Role::Bias, &mut self.bridge_b));
        for (name, t) in GruCellParams::FIELD_NAMES.iter().zip(self.gru.fields_mut()) {
            out.push((format!("gru.{name}"), gru_role(name), t));
        }
        out
    }

    /// Same structure, every tensor zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Params {
        let mut z = self.clone();
        for (_, _, t) in z.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        z
    }

    pub fn trainable_count(&self) -> usize {
        self.tensors().iter().filter(|(_, r, _)| *r != Role::Buffer).map(|(_, _, t)| t.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.stem.validate()?;
        for b in &self.blocks {
            b.validate()?;
        }
        self.head.validate()?;
        self.gru.validate()?;
        let d = self.head.out_channels();
        if self.bridge_w.rank() != 2 || self.bridge_w.shape()[1] != d || self.bridge_b.shape() != [self.bridge_w.shape()[0]] {
            return Err(Error::shape("bridge", self.bridge_w.shape(), self.bridge_b.shape()));
        }
        if self.gru.dims().n_x != self.bridge_w.shape()[0] {
            return Err(Error::shape("bridge/gru", self.bridge_w.shape(), self.gru.u_g.shape()));
        }
        Ok(())
    }
}

/// A network plus the state that makes training resumable.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: NetworkConfig,
    pub params: Params,
    /// Optimiser steps taken so far.
    pub step: u64,
    pub rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    /// Class probabilities from the final GRU state.
    pub probs: Tensor,
    /// Final hidden state `h_T`, unnormalised.
    pub hidden: Tensor,
}

impl Inference {
    pub fn class(&self) -> OcclusionClass {
        OcclusionClass::from_code(self.probs.argmax().unwrap_or(0)).unwrap_or(OcclusionClass::Face)
    }
}

/// Activations kept from a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct TrainCache {
    stem: StageCache,
    blocks: Vec<BlockCache>,
    head: StageCache,
    feats: Vec<Tensor>,
    /// Bridge pre-activations per sample and position.
    pre: Vec<Vec<Tensor>>,
    traces: Vec<GruTrace>,
}

fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound))
}

/// He-uniform bound for layers followed by a rectifier.
fn he(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// LeCun-uniform bound for linear layers.
fn lecun(fan_in: usize) -> f64 {
    (3.0 / fan_in as f64).sqrt()
}

/// Builds a freshly initialised network. All parameters are representable in
/// f32 so a checkpoint round trip is exact.
pub fn build_network(config: &NetworkConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bn = |c: usize| config.batch_norm.then(|| BatchNorm::identity(c));
    let c0 = config.scaled(config.stem_channels);
    let ci = config.input_channels;
    let stem = ConvStage {
        kind: ConvKind::Full {
            stride: config.stem_stride,
        },
        weight: uniform(&[3, 3, ci, c0], he(9 * ci), &mut rng),
        bn: bn(c0),
        relu6: true,
    };
    let mut blocks = Vec::with_capacity(config.depthwise_layer_count());
    let mut c_in = c0;
    for spec in &config.blocks {
        let c_out = config.scaled(spec.channels);
        for r in 0..spec.repeats {
            let stride = if r == 0 { spec.stride } else { 1 };
            let hidden = c_in * spec.expansion;
            let expand = uniform(&[c_in, hidden], he(c_in), &mut rng);
            let dw = uniform(&[3, 3, hidden], he(9), &mut rng);
            let project = uniform(&[hidden, c_out], lecun(hidden), &mut rng);
            blocks.push(ConvBlockParams::new(expand, dw, project, [bn(hidden), bn(hidden), bn(c_out)], stride)?);
            c_in = c_out;
        }
    }
    let ch = config.scaled(config.head_channels);
    let head = ConvStage {
        kind: ConvKind::Pointwise,
        weight: uniform(&[c_in, ch], he(c_in), &mut rng),
        bn: bn(ch),
        relu6: true,
    };
    let n_x = config.bridge_dim;
    let bridge_w = uniform(&[n_x, ch], he(ch), &mut rng);
    let bridge_b = Tensor::zeros(&[n_x]);
    let gru = GruCellParams::init(
        GruDims {
            n_x,
            n_h: config.hidden_size,
            n_y: config.classes,
        },
        &mut rng,
    );
    let mut params = Params {
        stem,
        blocks,
        head,
        bridge_w,
        bridge_b,
        gru,
    };
    for (_, _, t) in params.tensors_mut() {
        t.round_to_f32();
    }
    params.validate()?;
    Ok(Model {
        config: config.clone(),
        params,
        step: 0,
        rng,
    })
}

impl Model {
    fn check_image(&self, image: &Tensor) -> Result<()> {
        let s = self.config.input_size;
        let want = [s, s, self.config.input_channels];
        if image.shape() != want {
            return Err(Error::shape("network input", image.shape(), &want));
        }
        Ok(())
    }

    /// Final feature map `[h_f, w_f, C]`.
    pub fn features(&self, image: &Tensor) -> Result<Tensor> {
        self.check_image(image)?;
        let mut x = self.params.stem.forward_infer(image)?;
        for b in &self.params.blocks {
            x = b.forward_infer(&x)?;
        }
        self.params.head.forward_infer(&x)
    }

    /// Bridge pre-activations and ReLU outputs, one per spatial position.
    fn bridge(&self, feat: &Tensor) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        let c = feat.shape()[2];
        let mut pre = Vec::with_capacity(feat.len() / c);
        let mut seq = Vec::with_capacity(feat.len() / c);
        for pos in feat.data().chunks_exact(c) {
            let mut z = matvec(&self.params.bridge_w, &Tensor::vector(pos.to_vec()))?;
            for (v, b) in z.data_mut().iter_mut().zip(self.params.bridge_b.data()) {
                *v += b;
            }
            seq.push(z.map(|v| v.max(0.0)));
            pre.push(z);
        }
        Ok((pre, seq))
    }

    pub fn infer(&self, image: &Tensor) -> Result<Inference> {
        let feat = self.features(image)?;
        let (_, seq) = self.bridge(&feat)?;
        let h0 = Tensor::zeros(&[self.config.hidden_size]);
        let (trace, probs) = gru_forward(&self.params.gru, &h0, &seq)?;
        Ok(Inference {
            probs,
            hidden: trace.final_hidden().clone(),
        })
    }

    /// Inference-mode probabilities, one row per image.
    pub fn forward(&self, images: &[Tensor]) -> Result<Vec<Tensor>> {
        images.iter().map(|x| self.infer(x).map(|i| i.probs)).collect()
    }

    /// Unit-length `h_T`.
    pub fn embed(&self, image: &Tensor) -> Result<Tensor> {
        let h = self.infer(image)?.hidden;
        normalize(&h)
    }

    pub fn classify(&self, image: &Tensor) -> Result<OcclusionClass> {
        Ok(self.infer(image)?.class())
    }

    pub fn forward_train(&self, images: &[Tensor]) -> Result<(Vec<Tensor>, TrainCache)> {
        if images.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for x in images {
            self.check_image(x)?;
        }
        let (mut xs, stem) = self.params.stem.forward_train(images)?;
        let mut blocks = Vec::with_capacity(self.params.blocks.len());
        for b in &self.params.blocks {
            let (ys, cache) = b.forward_train(&xs)?;
            xs = ys;
            blocks.push(cache);
        }
        let (feats, head) = self.params.head.forward_train(&xs)?;
        let h0 = Tensor::zeros(&[self.config.hidden_size]);
        let mut pre = Vec::with_capacity(feats.len());
        let mut traces = Vec::with_capacity(feats.len());
        let mut probs = Vec::with_capacity(feats.len());
        for f in &feats {
            let (p, seq) = self.bridge(f)?;
            let (trace, y) = gru_forward(&self.params.gru, &h0, &seq)?;
            pre.push(p);
            traces.push(trace);
            probs.push(y);
        }
        Ok((
            probs,
            TrainCache {
                stem,
                blocks,
                head,
                feats,
                pre,
                traces,
            },
        ))
    }

    /// Gradients of the mean cross-entropy over the batch.
    pub fn backward(&self, cache: &TrainCache, labels: &[usize]) -> Result<Params> {
        if labels.len() != cache.traces.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels for a batch of {}",
                labels.len(),
                cache.traces.len()
            )));
        }
        let inv_n = 1.0 / labels.len() as f64;
        let mut grads = self.params.zeros_like();
        let mut d_feats = Vec::with_capacity(labels.len());
        for (i, &label) in labels.iter().enumerate() {
            let y = one_hot(label, self.config.classes);
            let gb = gru_backward(&self.params.gru, &cache.traces[i], Supervision::Final(&y), None)?;
            for (acc, g) in grads.gru.fields_mut().into_iter().zip(gb.grads.fields()) {
                for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += v * inv_n;
                }
            }
            let feat = &cache.feats[i];
            let c = feat.shape()[2];
            let mut d_feat = Tensor::zeros(feat.shape());
            for (t, (dz, pre)) in gb.d_inputs.iter().zip(&cache.pre[i]).enumerate() {
                let da: Vec<f64> = dz
                    .data()
                    .iter()
                    .zip(pre.data())
                    .map(|(&g, &z)| if z > 0.0 { g * inv_n } else { 0.0 })
                    .collect();
                let pos = &feat.data()[t * c..(t + 1) * c];
                outer_accumulate(&mut grads.bridge_w, &da, pos);
                for (b, d) in grads.bridge_b.data_mut().iter_mut().zip(&da) {
                    *b += d;
                }
                let back = matvec_t(&self.params.bridge_w, &Tensor::vector(da))?;
                d_feat.data_mut()[t * c..(t + 1) * c].copy_from_slice(back.data());
            }
            d_feats.push(d_feat);
        }
        let (mut dxs, g) = self.params.head.backward(&cache.head, d_feats)?;
        assign(&mut grads.head, g);
        for (k, b) in self.params.blocks.iter().enumerate().rev() {
            let (d, g) = b.backward(&cache.blocks[k], dxs)?;
            dxs = d;
            let gb = &mut grads.blocks[k];
            assign(&mut gb.expand, g.expand);
            assign(&mut gb.depthwise, g.depthwise);
            assign(&mut gb.project, g.project);
        }
        let (_, g) = self.params.stem.backward(&cache.stem, dxs)?;
        assign(&mut grads.stem, g);
        Ok(grads)
    }

    /// Folds the batch statistics of a training pass into the running ones.
    pub fn update_running(&mut self, cache: &TrainCache) {
        self.params.stem.update_running(&cache.stem);
        for (b, c) in self.params.blocks.iter_mut().zip(&cache.blocks) {
            b.update_running(c);
        }
        self.params.head.update_running(&cache.head);
    }
}

fn assign(stage: &mut ConvStage, g: StageGrads) {
    stage.weight = g.weight;
    if let (Some(bn), Some(s), Some(b)) = (&mut stage.bn, g.bn_scale, g.bn_shift) {
        bn.scale = s;
        bn.shift = b;
    }
}

pub fn normalize(v: &Tensor) -> Result<Tensor> {
    let n = v.l2_norm();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidArgument(format!("cannot normalise a vector of norm {n}")));
    }
    Ok(v.scale(1.0 / n))
}

/// Mean cross-entropy of probability rows against class indices.
pub fn batch_loss(probs: &[Tensor], labels: &[usize]) -> Result<f64> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::InvalidArgument(format!("{} rows for {} labels", probs.len(), labels.len())));
    }
    let mut total = 0.0;
    for (p, &l) in probs.iter().zip(labels) {
        if !p.is_finite() {
            return Ok(f64::NAN);
        }
        total += cross_entropy(p, &one_hot(l, p.len()))?;
    }
    Ok(total / probs.len() as f64)
}
