//! Network and training configuration, with their `key = value` text forms.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::data::OcclusionClass;
use crate::error::{Error, Result};

/// One row of the inverted-residual table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub expansion: usize,
    /// Output channels before the width multiplier.
    pub channels: usize,
    pub repeats: usize,
    /// Stride of the first repeat; later repeats use 1.
    pub stride: usize,
}

impl BlockSpec {
    pub const fn new(expansion: usize, channels: usize, repeats: usize, stride: usize) -> Self {
        BlockSpec {
            expansion,
            channels,
            repeats,
            stride,
        }
    }
}

impl fmt::Display for BlockSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.expansion, self.channels, self.repeats, self.stride)
    }
}

impl FromStr for BlockSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split('x')
            .map(|p| p.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("block spec {s:?} is not t x c x n x s")))?;
        match parts[..] {
            [t, c, n, st] => Ok(BlockSpec::new(t, c, n, st)),
            _ => Err(Error::Config(format!("block spec {s:?} needs four fields"))),
        }
    }
}

/// The standard MobileNetV2 table (17 inverted-residual blocks).
pub const MOBILENET_V2_BLOCKS: [BlockSpec; 7] = [
    BlockSpec::new(1, 16, 1, 1),
    BlockSpec::new(6, 24, 2, 2),
    BlockSpec::new(6, 32, 3, 2),
    BlockSpec::new(6, 64, 4, 2),
    BlockSpec::new(6, 96, 3, 1),
    BlockSpec::new(6, 160, 3, 2),
    BlockSpec::new(6, 320, 1, 1),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Full,
    Toy,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Full => "full",
            Profile::Toy => "toy",
        })
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Profile::Full),
            "toy" => Ok(Profile::Toy),
            _ => Err(Error::Config(format!("unknown profile {s:?} (full, toy)"))),
        }
    }
}

/// How the final feature map becomes a GRU input sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SequenceMode {
    /// Pixels in row-major order, one timestep each.
    SpatialRowMajor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub profile: Profile,
    pub input_size: usize,
    pub input_channels: usize,
    pub stem_channels: usize,
    pub stem_stride: usize,
    pub blocks: Vec<BlockSpec>,
    pub head_channels: usize,
    pub width_multiplier: f64,
    /// Width of the fully-connected bridge, i.e. the GRU input size.
    pub bridge_dim: usize,
    pub hidden_size: usize,
    pub classes: usize,
    pub sequence: SequenceMode,
    pub batch_norm: bool,
}

/// Channel rounding used by MobileNetV2: nearest multiple of 8, never more
/// than 10% below the requested width.
pub fn make_divisible(v: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let mut out = (((v + d / 2.0) / d).floor() * d).max(d);
    if out < 0.9 * v {
        out += d;
    }
    out as usize
}

impl NetworkConfig {
    pub fn full() -> Self {
        NetworkConfig {
            profile: Profile::Full,
            input_size: 224,
            input_channels: 3,
            stem_channels: 32,
            stem_stride: 2,
            blocks: MOBILENET_V2_BLOCKS.to_vec(),
            head_channels: 1280,
            width_multiplier: 1.0,
            bridge_dim: 128,
            hidden_size: 128,
            classes: OcclusionClass::COUNT,
            sequence: SequenceMode::SpatialRowMajor,
            batch_norm: true,
        }
    }

    /// 32×32 input, width 0.25, three stride-2 blocks, 16 hidden units.
    pub fn toy() -> Self {
        NetworkConfig {
            profile: Profile::Toy,
            input_size: 32,
            input_channels: 3,
            stem_channels: 32,
            stem_stride: 1,
            blocks: vec![BlockSpec::new(4, 32, 1, 2), BlockSpec::new(4, 64, 1, 2), BlockSpec::new(4, 96, 1, 2)],
            head_channels: 128,
            width_multiplier: 0.25,
            bridge_dim: 16,
            hidden_size: 16,
            classes: OcclusionClass::COUNT,
            sequence: SequenceMode::SpatialRowMajor,
            batch_norm: true,
        }
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Full => Self::full(),
            Profile::Toy => Self::toy(),
        }
    }

    pub fn scaled(&self, channels: usize) -> usize {
        make_divisible(channels as f64 * self.width_multiplier, 8)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.width_multiplier > 0.0 && self.width_multiplier <= 1.0) {
            return bad(format!("width multiplier {} not in (0, 1]", self.width_multiplier));
        }
        if self.classes != OcclusionClass::COUNT {
            return bad(format!("class count {} must be {}", self.classes, OcclusionClass::COUNT));
        }
        if self.blocks.is_empty() {
            return bad("empty block table".into());
        }
        for b in &self.blocks {
            if b.stride != 1 && b.stride != 2 {
                return bad(format!("block {b}: stride must be 1 or 2"));
            }
            if b.expansion == 0 || b.channels == 0 || b.repeats == 0 {
                return bad(format!("block {b}: zero field"));
            }
        }
        if self.stem_stride != 1 && self.stem_stride != 2 {
            return bad(format!("stem stride {} must be 1 or 2", self.stem_stride));
        }
        for (name, v) in [
            ("input_size", self.input_size),
            ("input_channels", self.input_channels),
            ("stem_channels", self.stem_channels),
            ("head_channels", self.head_channels),
            ("bridge_dim", self.bridge_dim),
            ("hidden_size", self.hidden_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    /// Spatial side of the final feature map (same padding halves with
    /// rounding up at each stride-2 stage).
    pub fn feature_size(&self) -> usize {
        let mut s = self.input_size.div_ceil(self.stem_stride);
        for b in &self.blocks {
            s = s.div_ceil(b.stride);
        }
        s
    }

    pub fn sequence_length(&self) -> usize {
        self.feature_size() * self.feature_size()
    }

    pub fn depthwise_layer_count(&self) -> usize {
        self.blocks.iter().map(|b| b.repeats).sum()
    }

    pub fn to_text(&self) -> String {
        let blocks: Vec<String> = self.blocks.iter().map(ToString::to_string).collect();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("profile", self.profile.to_string());
        kv("input_size", self.input_size.to_string());
        kv("input_channels", self.input_channels.to_string());
        kv("stem_channels", self.stem_channels.to_string());
        kv("stem_stride", self.stem_stride.to_string());
        kv("blocks", blocks.join(","));
        kv("head_channels", self.head_channels.to_string());
        kv("width_multiplier", format!("{:?}", self.width_multiplier));
        kv("bridge_dim", self.bridge_dim.to_string());
        kv("hidden_size", self.hidden_size.to_string());
        kv("classes", self.classes.to_string());
        kv("sequence", "spatial-row-major".into());
        kv("batch_norm", self.batch_norm.to_string());
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let map = parse_kv(text)?;
        let get = |k: &str| map.get(k).ok_or_else(|| Error::Config(format!("missing key {k}")));
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::Config(format!("{k}: not an integer"))) };
        if map.get("sequence").map(String::as_str) != Some("spatial-row-major") {
            return Err(Error::Config("sequence must be spatial-row-major".into()));
        }
        let cfg = NetworkConfig {
            profile: get("profile")?.parse()?,
            input_size: num("input_size")?,
            input_channels: num("input_channels")?,
            stem_channels: num("stem_channels")?,
            stem_stride: num("stem_stride")?,
            blocks: get("blocks")?.split(',').map(str::parse).collect::<Result<_>>()?,
            head_channels: num("head_channels")?,
            width_multiplier: get("width_multiplier")?
                .parse()
                .map_err(|_| Error::Config("width_multiplier: not a number".into()))?,
            bridge_dim: num("bridge_dim")?,
            hidden_size: num("hidden_size")?,
            classes: num("classes")?,
            sequence: SequenceMode::SpatialRowMajor,
            batch_norm: get("batch_norm")?
                .parse()
                .map_err(|_| Error::Config("batch_norm: expected true/false".into()))?,
        };
        let known = [
            "profile",
            "input_size",
            "input_channels",
            "stem_channels",
            "stem_stride",
            "blocks",
            "head_channels",
            "width_multiplier",
            "bridge_dim",
            "hidden_size",
            "classes",
            "sequence",
            "batch_norm",
        ];
        if let Some(k) = map.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown key {k}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `key = value` lines; `#` starts a comment. Duplicate keys are rejected.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let k = k.trim().to_string();
        if map.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {k}", n + 1)));
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    SgdMomentum,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd-momentum" | "sgd" => Ok(OptimizerKind::SgdMomentum),
            _ => Err(Error::Config(format!("unknown optimiser {s:?} (adam, sgd-momentum)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// Multiply by 0.1 every `step_epochs` epochs.
    Stepwise,
    /// Warm up for `pct_start` of each `cycle_length`-epoch cycle, then anneal.
    OneCycle,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stepwise" => Ok(ScheduleKind::Stepwise),
            "one-cycle" => Ok(ScheduleKind::OneCycle),
            _ => Err(Error::Config(format!("unknown schedule {s:?} (stepwise, one-cycle)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base_learning_rate: f64,
    pub schedule: ScheduleKind,
    pub step_epochs: usize,
    /// Adam β1, or the SGD momentum coefficient.
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub seed: u64,
    pub cycle_length: usize,
    pub pct_start: f64,
    /// Stop once training accuracy reaches this fraction.
    pub stop_at_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_learning_rate: 0.1,
            schedule: ScheduleKind::Stepwise,
            step_epochs: 10,
            momentum: 0.95,
            weight_decay: 1e-4,
            batch_size: 50,
            optimizer: OptimizerKind::Adam,
            epochs: 20,
            seed: 0,
            cycle_length: 10,
            pct_start: 0.9,
            stop_at_accuracy: None,
        }
    }
}

impl TrainConfig {
    /// Settings for the toy profile: a smaller step and batch, a flat
    /// schedule, and early stopping once the training set is fit.
    pub fn toy() -> Self {
        TrainConfig {
            base_learning_rate: 0.005,
            step_epochs: 100,
            batch_size: 10,
            epochs: 200,
            stop_at_accuracy: Some(0.99),
            ..TrainConfig::default()
        }
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Full => Self::default(),
            Profile::Toy => Self::toy(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_learning_rate >= 0.0 && self.base_learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.base_learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} not in [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be >= 0".into()));
        }
        if self.step_epochs == 0 || self.cycle_length == 0 {
            return Err(Error::Config("step_epochs and cycle_length must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.pct_start) {
            return Err(Error::Config(format!("pct_start {} not in [0, 1]", self.pct_start)));
        }
        Ok(())
    }

    /// Overlays `key = value` text onto the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::default().overlay(text)
    }

    /// Overlays `key = value` text onto `self`.
    pub fn overlay(self, text: &str) -> Result<Self> {
        let mut tc = self;
        for (k, v) in parse_kv(text)? {
            let bad = |what: &str| Error::Config(format!("{k}: {v:?} is not {what}"));
            match k.as_str() {
                "base_learning_rate" => tc.base_learning_rate = v.parse().map_err(|_| bad("a number"))?,
                "momentum" => tc.momentum = v.parse().map_err(|_| bad("a number"))?,
                "weight_decay" => tc.weight_decay = v.parse().map_err(|_| bad("a number"))?,
                "cycle_length" => tc.cycle_length = v.parse().map_err(|_| bad("an integer"))?,
                "pct_start" => tc.pct_start = v.parse().map_err(|_| bad("a number"))?,
                "batch_size" => tc.batch_size = v.parse().map_err(|_| bad("an integer"))?,
                "optimiser" | "optimizer" => tc.optimizer = v.parse()?,
                "epochs" => tc.epochs = v.parse().map_err(|_| bad("an integer"))?,
                "seed" => tc.seed = v.parse().map_err(|_| bad("an integer"))?,
                "schedule" => tc.schedule = v.parse()?,
                "step_epochs" => tc.step_epochs = v.parse().map_err(|_| bad("an integer"))?,
                "stop_at_accuracy" => tc.stop_at_accuracy = Some(v.parse().map_err(|_| bad("a number"))?),
                _ => return Err(Error::Config(format!("unknown key {k}"))),
            }
        }
        tc.validate()?;
        Ok(tc)
    }
}
