//! Closed-form parameter and multiply-accumulate counts.
//!
//! Counting convention:
//! - convolution MACs = output elements × (input channels / groups) × kernel area;
//! - attention MACs = Q/K/V projections (3·T·C·d) + QKᵀ (T²·d) + A·V (T²·d);
//! - biases, activations, softmax, pooling and PCEN cost no MACs;
//! - norms fold into a per-slot affine map; their 2 ops per element are
//!   reported in `norm_ops` and kept out of the MAC total;
//! - parameters are weights, biases, norm scale and shift, the four PCEN
//!   parameters and the PReLU slope. Running statistics are not parameters.

use std::fmt::Write as _;

use crate::model::config::{
    ModelConfig, Operator, Variant, BLOCK_FREQ_KERNEL, BLOCK_TIME_KERNEL, EMBED_DIM, FRAMES,
    HEAD_KERNEL, N_MELS, RPE_KERNEL, STEM_KERNEL,
};
use crate::tensor::{shape_string, SSN_SUB_BANDS};

/// Cost of one named layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    /// Layer-table row the layer belongs to.
    pub row: usize,
    pub params: usize,
    pub macs: usize,
    pub norm_ops: usize,
}

/// Cost and shapes of one layer-table row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowCost {
    pub op: Operator,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    pub params: usize,
    pub macs: usize,
    pub norm_ops: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Footprint {
    pub config: ModelConfig,
    pub layers: Vec<LayerCost>,
    pub rows: Vec<RowCost>,
}

impl Footprint {
    pub fn total_params(&self) -> usize {
        self.layers.iter().map(|l| l.params).sum()
    }

    pub fn total_macs(&self) -> usize {
        self.layers.iter().map(|l| l.macs).sum()
    }

    pub fn total_norm_ops(&self) -> usize {
        self.layers.iter().map(|l| l.norm_ops).sum()
    }

    /// One line per table row: `layer-name in-shape -> out-shape params macs`.
    pub fn shape_trace(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{} {} -> {} {} {}",
                r.op.label(),
                shape_string(&r.input),
                shape_string(&r.output),
                r.params,
                r.macs
            );
        }
        s
    }

    /// Tab-separated `name params macs norm_ops` with a header and a total row.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("name\tparams\tmacs\tnorm_ops\n");
        for l in &self.layers {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", l.name, l.params, l.macs, l.norm_ops);
        }
        let _ = writeln!(
            s,
            "total\t{}\t{}\t{}",
            self.total_params(),
            self.total_macs(),
            self.total_norm_ops()
        );
        s
    }
}

struct Builder {
    layers: Vec<LayerCost>,
    row: usize,
}

impl Builder {
    fn add(&mut self, name: impl Into<String>, params: usize, macs: usize, norm_ops: usize) {
        self.layers.push(LayerCost {
            name: name.into(),
            row: self.row,
            params,
            macs,
            norm_ops,
        });
    }

    /// Norm over `elements` outputs with `slots` affine slots.
    fn norm(&mut self, name: impl Into<String>, slots: usize, elements: usize) {
        self.add(name, 2 * slots, 0, 2 * elements);
    }
}

pub fn footprint(cfg: &ModelConfig) -> Footprint {
    let plan = cfg.plan();
    let t = FRAMES;
    let mut b = Builder {
        layers: Vec::new(),
        row: 0,
    };
    let mut rows = Vec::with_capacity(cfg.table.len());
    let input = vec![1, N_MELS, FRAMES];

    for (row, spec) in cfg.table.iter().enumerate() {
        b.row = row;
        let (row_in, row_out) = match spec.op {
            Operator::Pcen => {
                b.add("pcen", 4, 0, 0);
                (input.clone(), input.clone())
            }
            Operator::LogMel => {
                b.add("log_mel", 0, 0, 0);
                (input.clone(), input.clone())
            }
            Operator::Stem => {
                let c = plan.stem_channels;
                let f = N_MELS / spec.stride.0;
                b.add("stem.conv", c * STEM_KERNEL * STEM_KERNEL, c * f * t * STEM_KERNEL * STEM_KERNEL, 0);
                b.norm("stem.bn", c, c * f * t);
                (input.clone(), vec![c, f, t])
            }
            Operator::FusedBcResBlock | Operator::BcResBlock => {
                let blocks: Vec<_> = plan.blocks.iter().filter(|k| k.row == row).collect();
                let first = blocks[0];
                let last = blocks[blocks.len() - 1];
                for k in &blocks {
                    let (ci, c, n) = (k.in_channels, k.out_channels, &k.name);
                    let (fi, fo) = (k.in_freq, k.out_freq());
                    if k.has_projection() {
                        b.add(format!("{n}.projection.conv"), ci * c, ci * c * fi * t, 0);
                        b.norm(format!("{n}.projection.bn"), c, c * fi * t);
                    }
                    b.add(format!("{n}.freq.conv"), BLOCK_FREQ_KERNEL * c, BLOCK_FREQ_KERNEL * c * fo * t, 0);
                    b.norm(format!("{n}.freq.ssn"), c * SSN_SUB_BANDS, c * fo * t);
                    if k.fused {
                        let w = c * c * BLOCK_TIME_KERNEL;
                        b.add(format!("{n}.temporal.conv"), w, w * t, 0);
                        b.norm(format!("{n}.temporal.bn"), c, c * t);
                    } else {
                        b.add(format!("{n}.temporal.dw"), c * BLOCK_TIME_KERNEL, c * BLOCK_TIME_KERNEL * t, 0);
                        b.norm(format!("{n}.temporal.bn"), c, c * t);
                        b.add(format!("{n}.temporal.pw"), c * c, c * c * t, 0);
                    }
                }
                (
                    vec![first.in_channels, first.in_freq, t],
                    vec![last.out_channels, last.out_freq(), t],
                )
            }
            Operator::HeadDepthwise => {
                let c = plan.head_channels;
                let k = HEAD_KERNEL * HEAD_KERNEL;
                let f_out = plan.head_freq + 1 - HEAD_KERNEL;
                b.add("head.dw", c * k, c * f_out * t * k, 0);
                (vec![c, plan.head_freq, t], vec![c, f_out, t])
            }
            Operator::HeadPointwise => {
                let (c, e) = (plan.head_channels, plan.embed_channels);
                b.add("head.pw", c * e, c * e * t, 0);
                b.norm("head.bn", e, e * t);
                (vec![c, 1, t], vec![e, t])
            }
            Operator::PositionalEncoding => {
                let e = plan.embed_channels;
                b.add("rpe", e * RPE_KERNEL + e, e * RPE_KERNEL * t, 0);
                (vec![e, t], vec![t, e])
            }
            Operator::Attention => {
                let (e, d) = (plan.embed_channels, EMBED_DIM);
                b.add("attention.qkv", 3 * (e * d + d), 3 * t * e * d, 0);
                b.add("attention.scores", 0, t * t * d, 0);
                b.add("attention.context", 0, t * t * d, 0);
                b.add("attention.prelu", 1, 0, 0);
                (vec![t, e], vec![t, d])
            }
            Operator::Aggregate => {
                b.add("aggregate", t + 1, t * EMBED_DIM, 0);
                (vec![t, EMBED_DIM], vec![EMBED_DIM])
            }
            Operator::GlobalPool => {
                let e = plan.embed_channels;
                b.add("pool", 0, 0, 0);
                (vec![e, t], vec![e])
            }
            Operator::Projection => {
                let e = plan.embed_channels;
                b.add("proj", e * EMBED_DIM + EMBED_DIM, e * EMBED_DIM, 0);
                (vec![e], vec![EMBED_DIM])
            }
        };
        let in_row = b.layers.iter().filter(|l| l.row == row);
        let (params, macs, norm_ops) = in_row.fold((0, 0, 0), |(p, m, n), l| {
            (p + l.params, m + l.macs, n + l.norm_ops)
        });
        rows.push(RowCost {
            op: spec.op,
            input: row_in,
            output: row_out,
            params,
            macs,
            norm_ops,
        });
    }
    Footprint {
        config: cfg.clone(),
        layers: b.layers,
        rows,
    }
}

pub fn count_params(cfg: &ModelConfig) -> usize {
    footprint(cfg).total_params()
}

pub fn count_macs(cfg: &ModelConfig) -> usize {
    footprint(cfg).total_macs()
}

/// Published `(params, MACs)` for the eight reference configurations.
pub fn reference_footprint(variant: Variant, tau: usize) -> Option<(f64, f64)> {
    let (params, macs) = match variant {
        Variant::EdgeSpot => ([16.6e3, 43.3e3, 80.6e3, 128.3e3], [4.5e6, 10.3e6, 18.6e6, 29.4e6]),
        Variant::BcResNet => ([10.9e3, 30.6e3, 59.2e3, 96.6e3], [2.5e6, 7.3e6, 14.5e6, 24.1e6]),
    };
    let i = tau.checked_sub(1).filter(|&i| i < 4)?;
    Some((params[i], macs[i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stem_cost() {
        let fp = footprint(&ModelConfig::edgespot(1));
        let stem = fp.layers.iter().find(|l| l.name == "stem.conv").unwrap();
        assert_eq!((stem.params, stem.macs), (400, 808_000));
    }

    #[test]
    fn rows_sum_to_totals() {
        for cfg in [ModelConfig::edgespot(3), ModelConfig::bcresnet(2)] {
            let fp = footprint(&cfg);
            assert_eq!(fp.rows.iter().map(|r| r.params).sum::<usize>(), fp.total_params());
            assert_eq!(fp.rows.iter().map(|r| r.macs).sum::<usize>(), fp.total_macs());
            assert_eq!(fp.rows.len(), cfg.table.len());
        }
    }

    #[test]
    fn row_shapes_chain() {
        let fp = footprint(&ModelConfig::edgespot(2));
        for pair in fp.rows.windows(2) {
            assert_eq!(pair[0].output, pair[1].input, "{:?}", pair[1].op);
        }
    }

    #[test]
    fn tsv_has_header_and_total() {
        let tsv = footprint(&ModelConfig::bcresnet(1)).to_tsv();
        assert!(tsv.starts_with("name\tparams\tmacs\tnorm_ops\n"));
        assert!(tsv.trim_end().lines().last().unwrap().starts_with("total\t"));
    }
}
