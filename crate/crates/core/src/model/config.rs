use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Mel bands of the network input.
pub const N_MELS: usize = 40;
/// Frames of the network input.
pub const FRAMES: usize = 101;
/// Width of the attention projections and of the output embedding.
pub const EMBED_DIM: usize = 64;
/// Taps of the positional-encoding filter.
pub const RPE_KERNEL: usize = 16;
/// Zero padding before/after the sequence in the positional encoding.
pub const RPE_PADDING: (usize, usize) = (8, 7);
/// Temporal kernel inside residual blocks.
pub const BLOCK_TIME_KERNEL: usize = 3;
/// Frequency kernel of the frequency-depthwise branch.
pub const BLOCK_FREQ_KERNEL: usize = 3;
pub const STEM_KERNEL: usize = 5;
pub const HEAD_KERNEL: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// PCEN frontend, fused early blocks, positional encoding and attention head.
    EdgeSpot,
    /// Plain broadcasted-residual network with a pooled 64-d projection head.
    BcResNet,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::EdgeSpot => "edgespot",
            Variant::BcResNet => "bcresnet",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Variant::EdgeSpot => 0,
            Variant::BcResNet => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Variant::EdgeSpot),
            1 => Some(Variant::BcResNet),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "edgespot" => Ok(Variant::EdgeSpot),
            "bcresnet" | "bc-resnet" | "bcresnet-baseline" => Ok(Variant::BcResNet),
            other => Err(Error::Config(format!("unknown model variant {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Operator {
    Pcen,
    LogMel,
    Stem,
    FusedBcResBlock,
    BcResBlock,
    HeadDepthwise,
    HeadPointwise,
    PositionalEncoding,
    Attention,
    Aggregate,
    GlobalPool,
    Projection,
}

impl Operator {
    pub fn label(self) -> &'static str {
        match self {
            Operator::Pcen => "PCEN",
            Operator::LogMel => "log-mel",
            Operator::Stem => "conv2d(5x5)-BN-ReLU",
            Operator::FusedBcResBlock => "Fused BC-ResBlock",
            Operator::BcResBlock => "BC-ResBlock",
            Operator::HeadDepthwise => "DW conv2d(5x5)",
            Operator::HeadPointwise => "conv2d(1x1)-BN-ReLU",
            Operator::PositionalEncoding => "DW conv1d(16) Pos. E.",
            Operator::Attention => "SDPA-PReLU",
            Operator::Aggregate => "conv1d(1)",
            Operator::GlobalPool => "global avg pool",
            Operator::Projection => "conv1d(1) proj",
        }
    }
}

/// One row of the layer table: operator, repeat count `n`, base width `c`,
/// stride `s` and dilation `d` as `(freq, time)` pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub op: Operator,
    pub repeat: usize,
    pub channels: Option<usize>,
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
}

impl LayerSpec {
    const fn new(op: Operator, repeat: usize, channels: Option<usize>) -> Self {
        LayerSpec {
            op,
            repeat,
            channels,
            stride: (1, 1),
            dilation: (1, 1),
        }
    }

    const fn strided(mut self, stride: (usize, usize), dilation: (usize, usize)) -> Self {
        self.stride = stride;
        self.dilation = dilation;
        self
    }
}

/// Variant, width multiplier and layer table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub tau: usize,
    pub table: Vec<LayerSpec>,
}

fn backbone(fused_early: bool) -> [LayerSpec; 5] {
    use Operator::*;
    let early = if fused_early {
        FusedBcResBlock
    } else {
        BcResBlock
    };
    [
        LayerSpec::new(Stem, 1, Some(16)).strided((2, 1), (1, 1)),
        LayerSpec::new(early, 2, Some(8)),
        LayerSpec::new(early, 2, Some(12)).strided((2, 1), (1, 2)),
        LayerSpec::new(BcResBlock, 4, Some(16)).strided((2, 1), (1, 4)),
        LayerSpec::new(BcResBlock, 4, Some(20)).strided((1, 1), (1, 8)),
    ]
}

impl ModelConfig {
    pub fn new(variant: Variant, tau: usize) -> Result<Self> {
        use Operator::*;
        if tau == 0 {
            return Err(Error::Config("width multiplier must be >= 1".into()));
        }
        let mut table = Vec::with_capacity(11);
        match variant {
            Variant::EdgeSpot => {
                table.push(LayerSpec::new(Pcen, 1, None));
                table.extend(backbone(true));
                table.extend([
                    LayerSpec::new(HeadDepthwise, 1, Some(20)),
                    LayerSpec::new(HeadPointwise, 1, Some(32)),
                    LayerSpec::new(PositionalEncoding, 1, Some(32)),
                    LayerSpec::new(Attention, 1, None),
                    LayerSpec::new(Aggregate, 1, Some(1)),
                ]);
            }
            Variant::BcResNet => {
                table.push(LayerSpec::new(LogMel, 1, None));
                table.extend(backbone(false));
                table.extend([
                    LayerSpec::new(HeadDepthwise, 1, Some(20)),
                    LayerSpec::new(HeadPointwise, 1, Some(32)),
                    LayerSpec::new(GlobalPool, 1, None),
                    LayerSpec::new(Projection, 1, Some(EMBED_DIM)),
                ]);
            }
        }
        Ok(ModelConfig {
            variant,
            tau,
            table,
        })
    }

    pub fn edgespot(tau: usize) -> Self {
        Self::new(Variant::EdgeSpot, tau).expect("tau >= 1")
    }

    pub fn bcresnet(tau: usize) -> Self {
        Self::new(Variant::BcResNet, tau).expect("tau >= 1")
    }

    /// Short identifier such as `edgespot-4`.
    pub fn name(&self) -> String {
        format!("{}-{}", self.variant, self.tau)
    }

    /// Output channels of a table row after width scaling. The aggregation
    /// row and the fixed-width projection are not scaled.
    pub fn width(&self, row: usize) -> Option<usize> {
        let spec = &self.table[row];
        match spec.op {
            Operator::Aggregate | Operator::Projection => spec.channels,
            _ => spec.channels.map(|c| c * self.tau),
        }
    }

    fn row_of(&self, op: Operator) -> usize {
        self.table
            .iter()
            .position(|s| s.op == op)
            .unwrap_or_else(|| panic!("{op:?} missing from layer table"))
    }

    /// Concrete per-layer geometry.
    pub fn plan(&self) -> NetworkPlan {
        let stem_row = self.row_of(Operator::Stem);
        let stem_channels = self.width(stem_row).expect("stem width");
        let mut blocks = Vec::new();
        let mut channels = stem_channels;
        let mut freq = N_MELS / self.table[stem_row].stride.0;
        for (row, spec) in self.table.iter().enumerate() {
            let fused = match spec.op {
                Operator::FusedBcResBlock => true,
                Operator::BcResBlock => false,
                _ => continue,
            };
            let out = self.width(row).expect("block width");
            for i in 0..spec.repeat {
                let freq_stride = if i == 0 { spec.stride.0 } else { 1 };
                blocks.push(BlockPlan {
                    name: format!("stages.{}.{}", blocks_stage(&self.table, row), i),
                    row,
                    in_channels: channels,
                    out_channels: out,
                    in_freq: freq,
                    freq_stride,
                    dilation: spec.dilation.1,
                    fused,
                });
                channels = out;
                freq = (freq - 1) / freq_stride + 1;
            }
        }
        NetworkPlan {
            stem_channels,
            blocks,
            head_channels: self.width(self.row_of(Operator::HeadDepthwise)).expect("head"),
            head_freq: freq,
            embed_channels: self.width(self.row_of(Operator::HeadPointwise)).expect("pw"),
        }
    }
}

fn blocks_stage(table: &[LayerSpec], row: usize) -> usize {
    table[..row]
        .iter()
        .filter(|s| matches!(s.op, Operator::FusedBcResBlock | Operator::BcResBlock))
        .count()
}

/// Geometry of one residual block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockPlan {
    pub name: String,
    /// Table row the block belongs to.
    pub row: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_freq: usize,
    pub freq_stride: usize,
    pub dilation: usize,
    pub fused: bool,
}

impl BlockPlan {
    /// A channel change needs a 1x1 projection at the block entry.
    pub fn has_projection(&self) -> bool {
        self.in_channels != self.out_channels
    }

    /// Only shape-preserving blocks keep the identity shortcut.
    pub fn has_shortcut(&self) -> bool {
        !self.has_projection() && self.freq_stride == 1
    }

    pub fn out_freq(&self) -> usize {
        (self.in_freq - 1) / self.freq_stride + 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkPlan {
    pub stem_channels: usize,
    pub blocks: Vec<BlockPlan>,
    pub head_channels: usize,
    /// Frequency extent entering the head's depthwise 5x5 convolution.
    pub head_freq: usize,
    /// Channels of the temporal sequence fed to the embedding head.
    pub embed_channels: usize,
}
