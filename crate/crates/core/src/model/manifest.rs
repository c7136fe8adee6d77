use crate::model::config::{
    ModelConfig, Variant, BLOCK_FREQ_KERNEL, BLOCK_TIME_KERNEL, EMBED_DIM, FRAMES, HEAD_KERNEL,
    RPE_KERNEL, STEM_KERNEL,
};
use crate::tensor::SSN_SUB_BANDS;

/// How a record's values are interpreted (and initialized by the random
/// generator).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordKind {
    /// Convolution or projection weights.
    Weight,
    Bias,
    /// `[4, slots]`: scale, shift, running mean, running variance.
    Norm,
    /// Activation slope.
    Slope,
}

/// Name and extents of one learned tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: RecordKind,
}

impl RecordSpec {
    fn new(name: impl Into<String>, shape: &[usize], kind: RecordKind) -> Self {
        RecordSpec {
            name: name.into(),
            shape: shape.to_vec(),
            kind,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable parameters held by the record; running statistics excluded.
    pub fn trainable(&self) -> usize {
        match self.kind {
            RecordKind::Norm => self.len() / 2,
            _ => self.len(),
        }
    }
}

/// Every learned tensor of the network in canonical order.
pub fn manifest(cfg: &ModelConfig) -> Vec<RecordSpec> {
    use RecordKind::*;
    let plan = cfg.plan();
    let mut out = Vec::new();
    let c = plan.stem_channels;
    out.push(RecordSpec::new("stem.conv", &[c, 1, STEM_KERNEL, STEM_KERNEL], Weight));
    out.push(RecordSpec::new("stem.bn", &[4, c], Norm));

    for b in &plan.blocks {
        let (ci, c) = (b.in_channels, b.out_channels);
        let n = &b.name;
        if b.has_projection() {
            out.push(RecordSpec::new(format!("{n}.projection.conv"), &[c, ci, 1, 1], Weight));
            out.push(RecordSpec::new(format!("{n}.projection.bn"), &[4, c], Norm));
        }
        out.push(RecordSpec::new(format!("{n}.freq.conv"), &[c, 1, BLOCK_FREQ_KERNEL, 1], Weight));
        out.push(RecordSpec::new(format!("{n}.freq.ssn"), &[4, c * SSN_SUB_BANDS], Norm));
        if b.fused {
            out.push(RecordSpec::new(
                format!("{n}.temporal.conv"),
                &[c, c, 1, BLOCK_TIME_KERNEL],
                Weight,
            ));
            out.push(RecordSpec::new(format!("{n}.temporal.bn"), &[4, c], Norm));
        } else {
            out.push(RecordSpec::new(
                format!("{n}.temporal.dw"),
                &[c, 1, 1, BLOCK_TIME_KERNEL],
                Weight,
            ));
            out.push(RecordSpec::new(format!("{n}.temporal.bn"), &[4, c], Norm));
            out.push(RecordSpec::new(format!("{n}.temporal.pw"), &[c, c, 1, 1], Weight));
        }
    }

    let h = plan.head_channels;
    let e = plan.embed_channels;
    out.push(RecordSpec::new("head.dw", &[h, 1, HEAD_KERNEL, HEAD_KERNEL], Weight));
    out.push(RecordSpec::new("head.pw", &[e, h, 1, 1], Weight));
    out.push(RecordSpec::new("head.bn", &[4, e], Norm));

    match cfg.variant {
        Variant::EdgeSpot => {
            out.push(RecordSpec::new("rpe.filters", &[e, RPE_KERNEL], Weight));
            out.push(RecordSpec::new("rpe.bias", &[e], Bias));
            for m in ["q", "k", "v"] {
                out.push(RecordSpec::new(format!("attention.w_{m}"), &[e, EMBED_DIM], Weight));
                out.push(RecordSpec::new(format!("attention.b_{m}"), &[EMBED_DIM], Bias));
            }
            out.push(RecordSpec::new("attention.prelu", &[1], Slope));
            out.push(RecordSpec::new("aggregate.weight", &[FRAMES], Weight));
            out.push(RecordSpec::new("aggregate.bias", &[1], Bias));
        }
        Variant::BcResNet => {
            out.push(RecordSpec::new("proj.weight", &[EMBED_DIM, e], Weight));
            out.push(RecordSpec::new("proj.bias", &[EMBED_DIM], Bias));
        }
    }
    out
}
