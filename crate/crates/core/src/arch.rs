//! Network hyperparameters, layer-count arithmetic and the planned
//! architecture table.
//!
//! A network is one 3×3 convolution, `blocks` dense blocks separated by
//! transitions, and a classifier head:
//!
//! ```text
//! conv 3×3 (pad 0) → [dense block → transition]* → dense block → BN-ReLU → global avg. pool → FC
//! ```
//!
//! Every dense-block layer is BN → ReLU → 3×3 conv (pad 1) producing `k`
//! maps; the BC variant prepends BN → ReLU → 1×1 conv producing `4k` maps.
//! Transitions are BN → ReLU → 1×1 conv to `⌊θc⌋` maps, then 2×2 average
//! pooling.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Which architectural options are enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// No compression (θ = 1), no bottleneck.
    Plain,
    /// Compression at transitions (θ < 1).
    C,
    /// Bottleneck 1×1 layers and compression.
    BC,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Plain => "DenseNet",
            Variant::C => "DenseNet-C",
            Variant::BC => "DenseNet-BC",
        }
    }

    /// Short key used in configuration files: `plain`, `c` or `bc`.
    pub fn key(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::C => "c",
            Variant::BC => "bc",
        }
    }

    pub fn has_bottleneck(self) -> bool {
        self == Variant::BC
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "plain" | "densenet" => Ok(Variant::Plain),
            "c" | "densenet-c" => Ok(Variant::C),
            "bc" | "densenet-bc" => Ok(Variant::BC),
            other => Err(Error::config("variant", format!("unknown variant `{other}`"))),
        }
    }
}

/// Width of each bottleneck 1×1 convolution as a multiple of the growth rate.
pub const BOTTLENECK_WIDTH: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetConfig {
    pub variant: Variant,
    /// Number of weight layers counted the usual way: the first convolution,
    /// every convolution inside dense blocks, one per transition, and the
    /// classifier.
    pub depth: usize,
    pub blocks: usize,
    /// `k`: maps added by every dense-block layer.
    pub growth_rate: usize,
    /// `θ` in (0, 1].
    pub compression: f64,
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub num_classes: usize,
    pub first_conv_channels: usize,
}

impl Default for DenseNetConfig {
    /// DenseNet-C, depth 22, 3 blocks, k = 12, θ = 0.5 on 3×11×40 input.
    fn default() -> Self {
        DenseNetConfig {
            variant: Variant::C,
            depth: 22,
            blocks: 3,
            growth_rate: 12,
            compression: 0.5,
            input_channels: 3,
            input_height: 11,
            input_width: 40,
            num_classes: 1500,
            first_conv_channels: 16,
        }
    }
}

impl DenseNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::config("blocks", "need at least one dense block"));
        }
        if self.depth <= self.blocks + 1 {
            return Err(Error::config(
                "depth",
                format!("depth {} must exceed blocks + 1 = {}", self.depth, self.blocks + 1),
            ));
        }
        if self.growth_rate == 0 {
            return Err(Error::config("growth_rate", "must be at least 1"));
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return Err(Error::config("compression", format!("{} is outside (0, 1]", self.compression)));
        }
        match self.variant {
            Variant::Plain if self.compression != 1.0 => {
                return Err(Error::config(
                    "compression",
                    format!("variant plain requires compression 1.0, got {}", self.compression),
                ))
            }
            Variant::C | Variant::BC if self.compression >= 1.0 => {
                return Err(Error::config(
                    "compression",
                    format!("variant {} requires compression < 1.0", self.variant.key()),
                ))
            }
            _ => {}
        }
        for (key, v) in [
            ("input_channels", self.input_channels),
            ("input_height", self.input_height),
            ("input_width", self.input_width),
            ("first_conv_channels", self.first_conv_channels),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", "need at least 2 classes"));
        }
        let layers = layers_per_block(self.depth, self.blocks)?;
        if self.variant == Variant::BC && layers % 2 != 0 {
            return Err(Error::config(
                "depth",
                format!("variant bc needs an even layer count per block, got {layers}"),
            ));
        }
        Ok(())
    }

    /// Dense-block layers in the sense of the connectivity pattern: one per
    /// 3×3 convolution (a bottleneck pair counts once).
    pub fn units_per_block(&self) -> Result<usize> {
        let layers = layers_per_block(self.depth, self.blocks)?;
        Ok(if self.variant.has_bottleneck() { layers / 2 } else { layers })
    }
}

/// Convolution layers per dense block: `⌊(depth − blocks − 1)/blocks⌋`.
///
/// The first convolution, the `blocks − 1` transitions and the classifier
/// account for the other `blocks + 1` depth units.
pub fn layers_per_block(depth: usize, blocks: usize) -> Result<usize> {
    if blocks == 0 {
        return Err(Error::config("blocks", "need at least one dense block"));
    }
    if depth <= blocks + 1 {
        return Err(Error::config(
            "depth",
            format!("depth {depth} must exceed blocks + 1 = {}", blocks + 1),
        ));
    }
    let layers = (depth - blocks - 1) / blocks;
    if layers == 0 {
        return Err(Error::config(
            "depth",
            format!("depth {depth} leaves no layers for {blocks} blocks"),
        ));
    }
    Ok(layers)
}

/// Bottleneck/3×3 pairs per dense block in the BC variant.
pub fn bottleneck_pairs_per_block(depth: usize, blocks: usize) -> Result<usize> {
    let layers = layers_per_block(depth, blocks)?;
    if layers % 2 != 0 {
        return Err(Error::config(
            "depth",
            format!("{layers} layers per block cannot form bottleneck pairs"),
        ));
    }
    Ok(layers / 2)
}

/// Maps consumed by the `n`-th layer (1-based) of a block whose input has
/// `k0` maps: `k·(n−1) + k0`.
///
/// # Panics
/// If `n == 0`.
pub fn block_input_channels(k0: usize, k: usize, n: usize) -> usize {
    assert!(n >= 1, "dense-block layers are numbered from 1");
    k * (n - 1) + k0
}

/// Output maps of a transition: `⌊θ·c⌋`.
pub fn transition_output_channels(c: usize, theta: f64) -> Result<usize> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::config("compression", format!("{theta} is outside (0, 1]")));
    }
    // The nudge keeps products like 0.7·10 from landing just below an integer.
    let out = (theta * c as f64 + 1e-9).floor() as usize;
    if out == 0 {
        return Err(Error::config(
            "compression",
            format!("θ = {theta} compresses {c} maps to zero"),
        ));
    }
    Ok(out)
}

/// Directed connections in an `L`-layer dense block, counting the block
/// input as a source: `L(L+1)/2`.
pub fn block_connection_count(layers: usize) -> usize {
    layers * (layers + 1) / 2
}

/// Parameter count of a batch normalization over `c` channels (γ and β).
pub fn batchnorm_params(c: usize) -> usize {
    2 * c
}

pub fn conv_params(cin: usize, cout: usize, kernel: usize) -> usize {
    cin * cout * kernel * kernel
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    InitialConv,
    DenseBlock,
    Transition,
    Classifier,
}

impl StageKind {
    pub fn key(self) -> &'static str {
        match self {
            StageKind::InitialConv => "conv",
            StageKind::DenseBlock => "block",
            StageKind::Transition => "transition",
            StageKind::Classifier => "classifier",
        }
    }
}

/// One row of a stage's layer list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv { kernel: usize },
    CompressConv,
    AvgPool,
    GlobalAvgPool { h: usize, w: usize },
    FullyConnectedSoftmax,
}

impl LayerSpec {
    fn write(&self, f: &mut dyn fmt::Write, times: &str) -> fmt::Result {
        match *self {
            LayerSpec::Conv { kernel } => write!(f, "{kernel}{times}{kernel} conv"),
            LayerSpec::CompressConv => write!(f, "1{times}1 conv, θc"),
            LayerSpec::AvgPool => write!(f, "2{times}2 avg. pool"),
            LayerSpec::GlobalAvgPool { h, w } => write!(f, "{h}{times}{w} global avg. pool"),
            LayerSpec::FullyConnectedSoftmax => write!(f, "fully-connected, softmax"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub kind: StageKind,
    /// 1-based index among stages of the same kind.
    pub index: usize,
    pub layers: Vec<LayerSpec>,
    /// How many times `layers` repeats (dense blocks only; 1 otherwise).
    pub repeat: usize,
    pub input_size: (usize, usize),
    /// Spatial size before pooling, for transitions.
    pub pre_pool_size: Option<(usize, usize)>,
    pub output_size: (usize, usize),
    pub input_channels: usize,
    pub output_channels: usize,
    pub params: usize,
}

impl StageRecord {
    pub fn title(&self) -> String {
        match self.kind {
            StageKind::InitialConv => "Convolution".into(),
            StageKind::DenseBlock => format!("Dense block ({})", self.index),
            StageKind::Transition => format!("Transition ({})", self.index),
            StageKind::Classifier => "Classification".into(),
        }
    }

    fn layer_text(&self, times: &str, sep: &str) -> String {
        let mut s = String::new();
        let grouped = self.repeat > 1 || self.kind == StageKind::DenseBlock;
        if grouped {
            s.push('{');
        }
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                s.push_str(sep);
            }
            let _ = l.write(&mut s, times);
        }
        if grouped {
            s.push_str(&format!("}}{times}{}", self.repeat));
        }
        s
    }

    /// Output-size cell as printed in the table, e.g. `9×38 / 4×19` for a transition.
    pub fn size_text(&self, times: &str) -> String {
        let (h, w) = self.output_size;
        match self.pre_pool_size {
            Some((ph, pw)) => format!("{ph}{times}{pw} / {h}{times}{w}"),
            None => format!("{h}{times}{w}"),
        }
    }
}

/// Planned per-stage layout of a network, computed from the configuration
/// alone.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureTable {
    pub config: DenseNetConfig,
    pub layers_per_block: usize,
    /// Composite layers per block (bottleneck pairs for BC).
    pub units_per_block: usize,
    /// Depth actually realized after flooring the per-block layer count.
    pub effective_depth: usize,
    pub stages: Vec<StageRecord>,
}

impl ArchitectureTable {
    pub fn total_params(&self) -> usize {
        self.stages.iter().map(|s| s.params).sum()
    }

    /// Output sizes in stage order; transitions report the pooled size.
    pub fn output_sizes(&self) -> Vec<(usize, usize)> {
        self.stages.iter().map(|s| s.output_size).collect()
    }

    pub fn stages_of(&self, kind: StageKind) -> impl Iterator<Item = &StageRecord> {
        self.stages.iter().filter(move |s| s.kind == kind)
    }

    /// Tab-separated rendering, one stage per line, preceded by a `#` header
    /// and followed by a `total` line.
    pub fn machine_readable(&self) -> String {
        let c = &self.config;
        let mut out = format!(
            "#variant={} depth={} effective_depth={} blocks={} growth_rate={} compression={} layers_per_block={} input={}x{}x{} classes={}\n",
            c.variant.key(),
            c.depth,
            self.effective_depth,
            c.blocks,
            c.growth_rate,
            c.compression,
            self.layers_per_block,
            c.input_channels,
            c.input_height,
            c.input_width,
            c.num_classes
        );
        out.push_str("#kind\tindex\tinput_size\toutput_size\tin_channels\tout_channels\tparams\tlayers\n");
        for s in &self.stages {
            let (ih, iw) = s.input_size;
            out.push_str(&format!(
                "{}\t{}\t{}x{}\t{}\t{}\t{}\t{}\t{}\n",
                s.kind.key(),
                s.index,
                ih,
                iw,
                s.size_text("x").replace(' ', ""),
                s.input_channels,
                s.output_channels,
                s.params,
                s.layer_text("x", ";")
            ));
        }
        out.push_str(&format!("total\t{}\n", self.total_params()));
        out
    }
}

impl fmt::Display for ArchitectureTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        writeln!(
            f,
            "{} depth={} (effective {}) blocks={} k={} θ={} input {}×{}×{} classes={}",
            c.variant,
            c.depth,
            self.effective_depth,
            c.blocks,
            c.growth_rate,
            c.compression,
            c.input_channels,
            c.input_height,
            c.input_width,
            c.num_classes
        )?;
        writeln!(f, "{:<16} {:<13} {:>13} {:>10}  Layers", "Stage", "Output size", "Channels", "Params")?;
        for s in &self.stages {
            writeln!(
                f,
                "{:<16} {:<13} {:>13} {:>10}  {}",
                s.title(),
                s.size_text("×"),
                format!("{} → {}", s.input_channels, s.output_channels),
                s.params,
                s.layer_text("×", " + ")
            )?;
        }
        write!(f, "Total parameters: {}", self.total_params())
    }
}

/// Computes the stage table: shapes, channel counts and analytic parameter
/// counts.
pub fn plan_architecture(config: &DenseNetConfig) -> Result<ArchitectureTable> {
    config.validate()?;
    let layers = layers_per_block(config.depth, config.blocks)?;
    let units = config.units_per_block()?;
    let k = config.growth_rate;
    let bc = config.variant.has_bottleneck();

    let (h0, w0) = (config.input_height, config.input_width);
    if h0 < 3 || w0 < 3 {
        return Err(Error::config(
            "input_height",
            format!("input {h0}x{w0} is smaller than the first 3x3 convolution"),
        ));
    }
    let mut size = (h0 - 2, w0 - 2);
    let mut channels = config.first_conv_channels;
    let mut stages = Vec::with_capacity(2 * config.blocks + 1);
    stages.push(StageRecord {
        kind: StageKind::InitialConv,
        index: 1,
        layers: alloc::vec![LayerSpec::Conv { kernel: 3 }],
        repeat: 1,
        input_size: (h0, w0),
        pre_pool_size: None,
        output_size: size,
        input_channels: config.input_channels,
        output_channels: channels,
        params: conv_params(config.input_channels, channels, 3),
    });

    for b in 1..=config.blocks {
        let k0 = channels;
        let mut params = 0;
        for n in 1..=units {
            let cin = block_input_channels(k0, k, n);
            params += if bc {
                let width = BOTTLENECK_WIDTH * k;
                batchnorm_params(cin) + conv_params(cin, width, 1) + batchnorm_params(width) + conv_params(width, k, 3)
            } else {
                batchnorm_params(cin) + conv_params(cin, k, 3)
            };
        }
        channels = k0 + units * k;
        stages.push(StageRecord {
            kind: StageKind::DenseBlock,
            index: b,
            layers: if bc {
                alloc::vec![LayerSpec::Conv { kernel: 1 }, LayerSpec::Conv { kernel: 3 }]
            } else {
                alloc::vec![LayerSpec::Conv { kernel: 3 }]
            },
            repeat: units,
            input_size: size,
            pre_pool_size: None,
            output_size: size,
            input_channels: k0,
            output_channels: channels,
            params,
        });

        if b < config.blocks {
            if size.0 < 2 || size.1 < 2 {
                return Err(Error::config(
                    "blocks",
                    format!(
                        "{} blocks need more input than {h0}x{w0}: extent {}x{} cannot be pooled after block {b}",
                        config.blocks, size.0, size.1
                    ),
                ));
            }
            let out = transition_output_channels(channels, config.compression)?;
            let pooled = (size.0 / 2, size.1 / 2);
            stages.push(StageRecord {
                kind: StageKind::Transition,
                index: b,
                layers: alloc::vec![LayerSpec::CompressConv, LayerSpec::AvgPool],
                repeat: 1,
                input_size: size,
                pre_pool_size: Some(size),
                output_size: pooled,
                input_channels: channels,
                output_channels: out,
                params: batchnorm_params(channels) + conv_params(channels, out, 1),
            });
            size = pooled;
            channels = out;
        }
    }

    stages.push(StageRecord {
        kind: StageKind::Classifier,
        index: 1,
        layers: alloc::vec![
            LayerSpec::GlobalAvgPool { h: size.0, w: size.1 },
            LayerSpec::FullyConnectedSoftmax
        ],
        repeat: 1,
        input_size: size,
        pre_pool_size: None,
        output_size: (1, 1),
        input_channels: channels,
        output_channels: config.num_classes,
        params: batchnorm_params(channels) + channels * config.num_classes + config.num_classes,
    });

    Ok(ArchitectureTable {
        config: config.clone(),
        layers_per_block: layers,
        units_per_block: units,
        effective_depth: config.blocks * layers + config.blocks + 1,
        stages,
    })
}
