//! Convolution stages (conv → optional batch norm → optional ReLU6) and the
//! MobileNetV2 inverted-residual block built from three of them.

use crate::error::{Error, Result};
use crate::nn::conv::{self, Padding};
use crate::nn::norm::{BatchNorm, BnCache, Mode};
use crate::tensor::{relu6, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    /// Dense k×k, weights `[k, k, C_in, C_out]`.
    Full { stride: usize },
    /// Per-channel k×k, weights `[k, k, C]`.
    Depthwise { stride: usize },
    /// 1×1, weights `[C_in, C_out]`.
    Pointwise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvStage {
    pub kind: ConvKind,
    pub weight: Tensor,
    pub bn: Option<BatchNorm>,
    pub relu6: bool,
}

#[derive(Debug, Clone)]
pub struct StageCache {
    input: Vec<Tensor>,
    bn: Option<BnCache>,
    /// Activations entering the ReLU6, when there is one.
    pre_act: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageGrads {
    pub weight: Tensor,
    pub bn_scale: Option<Tensor>,
    pub bn_shift: Option<Tensor>,
}

impl ConvStage {
    pub fn in_channels(&self) -> usize {
        match self.kind {
            ConvKind::Full { .. } => self.weight.shape()[2],
            ConvKind::Depthwise { .. } => self.weight.shape()[2],
            ConvKind::Pointwise => self.weight.shape()[0],
        }
    }

    pub fn out_channels(&self) -> usize {
        match self.kind {
            ConvKind::Full { .. } => self.weight.shape()[3],
            ConvKind::Depthwise { .. } => self.weight.shape()[2],
            ConvKind::Pointwise => self.weight.shape()[1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match (self.kind, self.weight.shape()) {
            (ConvKind::Full { .. }, [a, b, _, _]) => a == b,
            (ConvKind::Depthwise { .. }, [a, b, _]) => a == b,
            (ConvKind::Pointwise, [_, _]) => true,
            _ => false,
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "{:?} stage has weight shape {:?}",
                self.kind,
                self.weight.shape()
            )));
        }
        if let Some(bn) = &self.bn {
            bn.validate()?;
            if bn.channels() != self.out_channels() {
                return Err(Error::shape("stage batch norm", bn.scale.shape(), &[self.out_channels()]));
            }
        }
        Ok(())
    }

    fn conv(&self, x: &Tensor) -> Result<Tensor> {
        match self.kind {
            ConvKind::Full { stride } => conv::conv2d(x, &self.weight, stride, Padding::Same),
            ConvKind::Depthwise { stride } => conv::depthwise_conv(x, &self.weight, stride, Padding::Same),
            ConvKind::Pointwise => conv::pointwise_conv(x, &self.weight),
        }
    }

    fn conv_backward(&self, x: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
        match self.kind {
            ConvKind::Full { stride } => conv::conv2d_backward(x, &self.weight, stride, Padding::Same, g),
            ConvKind::Depthwise { stride } => {
                conv::depthwise_conv_backward(x, &self.weight, stride, Padding::Same, g)
            }
            ConvKind::Pointwise => conv::pointwise_conv_backward(x, &self.weight, g),
        }
    }

    pub fn forward_infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = self.conv(x)?;
        if let Some(bn) = &self.bn {
            y = bn.forward_infer(&y)?;
        }
        if self.relu6 {
            y = y.map(relu6);
        }
        Ok(y)
    }

    pub fn forward_train(&self, xs: &[Tensor]) -> Result<(Vec<Tensor>, StageCache)> {
        let mut ys = xs.iter().map(|x| self.conv(x)).collect::<Result<Vec<_>>>()?;
        let mut bn_cache = None;
        if let Some(bn) = &self.bn {
            let (out, cache) = bn.forward_train(&ys)?;
            ys = out;
            bn_cache = Some(cache);
        }
        let mut pre_act = Vec::new();
        if self.relu6 {
            pre_act = ys.clone();
            for y in &mut ys {
                *y = y.map(relu6);
            }
        }
        Ok((
            ys,
            StageCache {
                input: xs.to_vec(),
                bn: bn_cache,
                pre_act,
            },
        ))
    }

    pub fn update_running(&mut self, cache: &StageCache) {
        if let (Some(bn), Some(c)) = (&mut self.bn, &cache.bn) {
            bn.update_running(c);
        }
    }

    pub fn backward(&self, cache: &StageCache, mut grads: Vec<Tensor>) -> Result<(Vec<Tensor>, StageGrads)> {
        if self.relu6 {
            for (g, z) in grads.iter_mut().zip(&cache.pre_act) {
                for (gv, &zv) in g.data_mut().iter_mut().zip(z.data()) {
                    if !(zv > 0.0 && zv < 6.0) {
                        *gv = 0.0;
                    }
                }
            }
        }
        let (mut bn_scale, mut bn_shift) = (None, None);
        if let (Some(bn), Some(c)) = (&self.bn, &cache.bn) {
            let (g, ds, db) = bn.backward(c, &grads)?;
            grads = g;
            bn_scale = Some(ds);
            bn_shift = Some(db);
        }
        let mut d_weight = Tensor::zeros(self.weight.shape());
        let mut d_inputs = Vec::with_capacity(grads.len());
        for (x, g) in cache.input.iter().zip(&grads) {
            let (dx, dw) = self.conv_backward(x, g)?;
            d_weight.add_assign(&dw)?;
            d_inputs.push(dx);
        }
        Ok((
            d_inputs,
            StageGrads {
                weight: d_weight,
                bn_scale,
                bn_shift,
            },
        ))
    }
}

/// One inverted-residual block: expand (1×1, ReLU6) → depthwise (3×3,
/// ReLU6) → linear projection (1×1), plus the skip connection when the
/// stride is 1 and the channel counts agree.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlockParams {
    pub expand: ConvStage,
    pub depthwise: ConvStage,
    pub project: ConvStage,
    pub stride: usize,
    pub expansion: usize,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    expand: StageCache,
    depthwise: StageCache,
    project: StageCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrads {
    pub expand: StageGrads,
    pub depthwise: StageGrads,
    pub project: StageGrads,
}

impl ConvBlockParams {
    /// Assembles a block from raw weights and optional per-stage batch norms.
    pub fn new(
        expand_weights: Tensor,
        depthwise_weights: Tensor,
        project_weights: Tensor,
        bns: [Option<BatchNorm>; 3],
        stride: usize,
    ) -> Result<Self> {
        let [b0, b1, b2] = bns;
        let d_in = expand_weights.shape().first().copied().unwrap_or(0);
        let hidden = expand_weights.shape().get(1).copied().unwrap_or(0);
        let block = ConvBlockParams {
            expand: ConvStage {
                kind: ConvKind::Pointwise,
                weight: expand_weights,
                bn: b0,
                relu6: true,
            },
            depthwise: ConvStage {
                kind: ConvKind::Depthwise { stride },
                weight: depthwise_weights,
                bn: b1,
                relu6: true,
            },
            project: ConvStage {
                kind: ConvKind::Pointwise,
                weight: project_weights,
                bn: b2,
                relu6: false,
            },
            stride,
            expansion: if d_in == 0 { 0 } else { hidden / d_in },
        };
        block.validate()?;
        Ok(block)
    }

    pub fn in_channels(&self) -> usize {
        self.expand.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.project.out_channels()
    }

    pub fn has_residual(&self) -> bool {
        self.stride == 1 && self.in_channels() == self.out_channels()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride != 1 && self.stride != 2 {
            return Err(Error::InvalidArgument(format!("block stride {} not in {{1, 2}}", self.stride)));
        }
        if self.expansion < 1 || self.expand.out_channels() != self.expansion * self.in_channels() {
            return Err(Error::InvalidArgument(format!(
                "expansion {} does not match expand weights {:?}",
                self.expansion,
                self.expand.weight.shape()
            )));
        }
        if !matches!(self.expand.kind, ConvKind::Pointwise)
            || !matches!(self.project.kind, ConvKind::Pointwise)
            || self.depthwise.kind != (ConvKind::Depthwise { stride: self.stride })
        {
            return Err(Error::InvalidArgument("block stage kinds out of order".into()));
        }
        for s in [&self.expand, &self.depthwise, &self.project] {
            s.validate()?;
        }
        let hidden = self.expand.out_channels();
        if self.depthwise.in_channels() != hidden || self.project.in_channels() != hidden {
            return Err(Error::InvalidArgument(format!(
                "channel chain broken: expand -> {hidden}, depthwise {:?}, project {:?}",
                self.depthwise.weight.shape(),
                self.project.weight.shape()
            )));
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 3 || x.shape()[2] != self.in_channels() {
            return Err(Error::shape("inverted_residual", x.shape(), &[self.in_channels()]));
        }
        Ok(())
    }

    pub fn forward_infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let e = self.expand.forward_infer(x)?;
        let d = self.depthwise.forward_infer(&e)?;
        let mut p = self.project.forward_infer(&d)?;
        if self.has_residual() {
            p.add_assign(x)?;
        }
        Ok(p)
    }

    pub fn forward_train(&self, xs: &[Tensor]) -> Result<(Vec<Tensor>, BlockCache)> {
        for x in xs {
            self.check_input(x)?;
        }
        let (e, expand) = self.expand.forward_train(xs)?;
        let (d, depthwise) = self.depthwise.forward_train(&e)?;
        let (mut p, project) = self.project.forward_train(&d)?;
        if self.has_residual() {
            for (y, x) in p.iter_mut().zip(xs) {
                y.add_assign(x)?;
            }
        }
        Ok((
            p,
            BlockCache {
                expand,
                depthwise,
                project,
            },
        ))
    }

    pub fn update_running(&mut self, cache: &BlockCache) {
        self.expand.update_running(&cache.expand);
        self.depthwise.update_running(&cache.depthwise);
        self.project.update_running(&cache.project);
    }

    pub fn backward(&self, cache: &BlockCache, grads: Vec<Tensor>) -> Result<(Vec<Tensor>, BlockGrads)> {
        let skip = self.has_residual().then(|| grads.clone());
        let (g, project) = self.project.backward(&cache.project, grads)?;
        let (g, depthwise) = self.depthwise.backward(&cache.depthwise, g)?;
        let (mut g, expand) = self.expand.backward(&cache.expand, g)?;
        if let Some(skip) = skip {
            for (a, b) in g.iter_mut().zip(&skip) {
                a.add_assign(b)?;
            }
        }
        Ok((
            g,
            BlockGrads {
                expand,
                depthwise,
                project,
            },
        ))
    }
}

/// Runs one block over a batch. Train mode uses batch statistics and
/// updates every stage's running statistics.
pub fn inverted_residual(inputs: &[Tensor], params: &mut ConvBlockParams, mode: Mode) -> Result<Vec<Tensor>> {
    params.validate()?;
    match mode {
        Mode::Infer => inputs.iter().map(|x| params.forward_infer(x)).collect(),
        Mode::Train => {
            let (out, cache) = params.forward_train(inputs)?;
            params.update_running(&cache);
            Ok(out)
        }
    }
}
