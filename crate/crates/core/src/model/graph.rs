use crate::dsp::{pcen, MelSpectrogram, PcenParams};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::model::attention::{rpe, sdpa, AggregationHead, AttentionParams, RpeParams};
use crate::model::block::{bc_resblock, BlockParams, TemporalBranch};
use crate::model::config::{
    ModelConfig, Operator, Variant, EMBED_DIM, FRAMES, HEAD_KERNEL, N_MELS, RPE_PADDING,
    STEM_KERNEL,
};
use crate::tensor::{
    activate_in_place, conv2d, normalize, Activation, ConvSpec, NormParams, Padding, Tensor,
    SSN_SUB_BANDS,
};
use crate::weights::{Record, WeightBundle};

/// Offset added to mel energies before the logarithm in the baseline frontend.
pub const LOG_MEL_EPS: f32 = 1e-6;

/// Shapes entering and leaving one layer-table row during a forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceStep {
    pub op: Operator,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
}

#[derive(Clone, Debug)]
enum Head {
    Attention {
        rpe: RpeParams,
        attention: AttentionParams,
        aggregate: AggregationHead,
    },
    Pooled {
        /// `[64, C]`
        weight: Tensor,
        bias: Vec<f32>,
    },
}

/// A loaded, immutable network ready for inference.
#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    pcen: Option<PcenParams>,
    stem: (Tensor, NormParams),
    blocks: Vec<BlockParams>,
    head_dw: Tensor,
    head_pw: Tensor,
    head_bn: NormParams,
    head: Head,
}

struct Records<'a>(&'a WeightBundle);

impl Records<'_> {
    fn get(&self, name: &str) -> Result<&Record> {
        self.0.get(name).ok_or_else(|| Error::layer(name, "missing"))
    }

    fn tensor(&self, name: &str) -> Result<Tensor> {
        let r = self.get(name)?;
        Tensor::new(&r.shape, r.data.clone()).map_err(|e| Error::layer(name, e.to_string()))
    }

    fn vec(&self, name: &str) -> Result<Vec<f32>> {
        Ok(self.get(name)?.data.clone())
    }

    fn norm(&self, name: &str, sub_bands: usize) -> Result<NormParams> {
        let r = self.get(name)?;
        let slots = r.data.len() / 4;
        let mut rows = r.data.chunks_exact(slots.max(1)).map(<[f32]>::to_vec);
        let mut next = || rows.next().unwrap_or_default();
        let p = NormParams {
            gamma: next(),
            beta: next(),
            mean: next(),
            var: next(),
            eps: crate::tensor::BN_EPS,
            sub_bands,
        };
        p.validate().map_err(|e| Error::layer(name, e.to_string()))?;
        Ok(p)
    }
}

impl Model {
    /// Validates `bundle` against its own configuration and unpacks it.
    pub fn from_bundle(bundle: &WeightBundle) -> Result<Self> {
        let cfg = bundle.config()?;
        bundle.validate(&cfg)?;
        let r = Records(bundle);
        let plan = cfg.plan();

        let stem = (r.tensor("stem.conv")?, r.norm("stem.bn", 1)?);
        let mut blocks = Vec::with_capacity(plan.blocks.len());
        for b in &plan.blocks {
            let n = &b.name;
            let projection = if b.has_projection() {
                Some((
                    r.tensor(&format!("{n}.projection.conv"))?,
                    r.norm(&format!("{n}.projection.bn"), 1)?,
                ))
            } else {
                None
            };
            let temporal = if b.fused {
                TemporalBranch::Fused {
                    conv: r.tensor(&format!("{n}.temporal.conv"))?,
                    norm: r.norm(&format!("{n}.temporal.bn"), 1)?,
                }
            } else {
                TemporalBranch::Separable {
                    depthwise: r.tensor(&format!("{n}.temporal.dw"))?,
                    norm: r.norm(&format!("{n}.temporal.bn"), 1)?,
                    pointwise: r.tensor(&format!("{n}.temporal.pw"))?,
                }
            };
            blocks.push(BlockParams {
                in_channels: b.in_channels,
                out_channels: b.out_channels,
                freq_stride: b.freq_stride,
                dilation: b.dilation,
                projection,
                freq_conv: r.tensor(&format!("{n}.freq.conv"))?,
                freq_norm: r.norm(&format!("{n}.freq.ssn"), SSN_SUB_BANDS)?,
                temporal,
            });
        }

        let head = match cfg.variant {
            Variant::EdgeSpot => {
                let e = plan.embed_channels;
                let qkv = |m: &str| -> Result<(Tensor, Vec<f32>)> {
                    Ok((
                        r.tensor(&format!("attention.w_{m}"))?,
                        r.vec(&format!("attention.b_{m}"))?,
                    ))
                };
                let (w_q, b_q) = qkv("q")?;
                let (w_k, b_k) = qkv("k")?;
                let (w_v, b_v) = qkv("v")?;
                Head::Attention {
                    rpe: RpeParams {
                        filters: r.tensor("rpe.filters")?,
                        bias: r.vec("rpe.bias")?,
                        pad_left: RPE_PADDING.0,
                        pad_right: RPE_PADDING.1,
                    },
                    attention: AttentionParams {
                        w_q,
                        b_q,
                        w_k,
                        b_k,
                        w_v,
                        b_v,
                        prelu: r.vec("attention.prelu")?,
                    },
                    aggregate: AggregationHead {
                        weights: r.vec("aggregate.weight")?,
                        bias: r.vec("aggregate.bias")?[0],
                    },
                }
                .checked(e)?
            }
            Variant::BcResNet => Head::Pooled {
                weight: r.tensor("proj.weight")?,
                bias: r.vec("proj.bias")?,
            },
        };

        Ok(Model {
            pcen: bundle.pcen,
            stem,
            blocks,
            head_dw: r.tensor("head.dw")?,
            head_pw: r.tensor("head.pw")?,
            head_bn: r.norm("head.bn", 1)?,
            head,
            cfg,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn embed(&self, mel: &MelSpectrogram) -> Result<Embedding> {
        self.forward(mel, None)
    }

    /// Like [`Model::embed`], also recording the shapes seen at every
    /// layer-table row.
    pub fn embed_traced(&self, mel: &MelSpectrogram) -> Result<(Embedding, Vec<TraceStep>)> {
        let mut trace = Vec::with_capacity(self.cfg.table.len());
        let e = self.forward(mel, Some(&mut trace))?;
        Ok((e, trace))
    }

    fn forward(&self, mel: &MelSpectrogram, mut trace: Option<&mut Vec<TraceStep>>) -> Result<Embedding> {
        if mel.n_mels() != N_MELS {
            return Err(Error::dim("mel bands", N_MELS, mel.n_mels()));
        }
        if mel.frames() != FRAMES {
            return Err(Error::dim("frames", FRAMES, mel.frames()));
        }
        let mut record = |op: Operator, input: &[usize], output: &[usize]| {
            if let Some(t) = trace.as_deref_mut() {
                t.push(TraceStep {
                    op,
                    input: input.to_vec(),
                    output: output.to_vec(),
                });
            }
        };
        let input_shape = [1, N_MELS, FRAMES];

        // frontend
        let x = match &self.pcen {
            Some(p) => {
                let y = pcen(mel, p)?;
                record(Operator::Pcen, &input_shape, &input_shape);
                y.reshape(&input_shape)?
            }
            None => {
                let data = mel.data().iter().map(|e| (e + LOG_MEL_EPS).ln()).collect();
                record(Operator::LogMel, &input_shape, &input_shape);
                Tensor::new(&input_shape, data)?
            }
        };

        // stem
        let stem_spec = ConvSpec::new(1, self.stem.0.shape()[0], (STEM_KERNEL, STEM_KERNEL))
            .stride(2, 1);
        let mut h = normalize(&conv2d(&x, &stem_spec, &self.stem.0, None)?, &self.stem.1)?;
        activate_in_place(&mut h, &Activation::Relu);
        record(Operator::Stem, x.shape(), h.shape());

        // residual stages, one trace step per table row
        let plan = self.cfg.plan();
        let mut row_input: Option<(usize, Vec<usize>)> = None;
        for (block, geometry) in self.blocks.iter().zip(&plan.blocks) {
            match &row_input {
                Some((row, _)) if *row == geometry.row => {}
                _ => row_input = Some((geometry.row, h.shape().to_vec())),
            }
            h = bc_resblock(&h, block)?;
            let last_in_row = plan
                .blocks
                .iter()
                .rev()
                .find(|b| b.row == geometry.row)
                .is_some_and(|b| b.name == geometry.name);
            if last_in_row {
                let (row, input) = row_input.take().expect("row started");
                record(self.cfg.table[row].op, &input, h.shape());
            }
        }

        // head: frequency-collapsing depthwise conv, then pointwise
        let (c, _, _) = h.dims3()?;
        let dw_spec = ConvSpec::depthwise(c, (HEAD_KERNEL, HEAD_KERNEL))
            .padding(Padding::Valid, Padding::Same);
        let collapsed = conv2d(&h, &dw_spec, &self.head_dw, None)?;
        record(Operator::HeadDepthwise, h.shape(), collapsed.shape());
        let (_, f, t) = collapsed.dims3()?;
        if f != 1 {
            return Err(Error::dim("frequency after head convolution", 1, f));
        }
        let e = self.head_pw.shape()[0];
        let mut seq = normalize(
            &conv2d(&collapsed, &ConvSpec::new(c, e, (1, 1)), &self.head_pw, None)?,
            &self.head_bn,
        )?;
        activate_in_place(&mut seq, &Activation::Relu);
        let seq = seq.reshape(&[e, t])?;
        record(Operator::HeadPointwise, collapsed.shape(), seq.shape());

        let out = match &self.head {
            Head::Attention {
                rpe: rp,
                attention,
                aggregate,
            } => {
                let encoded = rpe(&seq, rp)?.transpose()?;
                record(Operator::PositionalEncoding, seq.shape(), encoded.shape());
                let z = sdpa(&encoded, attention)?;
                record(Operator::Attention, encoded.shape(), z.shape());
                let pooled = aggregate.apply(&z)?;
                record(Operator::Aggregate, z.shape(), &[EMBED_DIM]);
                pooled.into_data()
            }
            Head::Pooled { weight, bias } => {
                let pooled: Vec<f32> = seq
                    .data()
                    .chunks_exact(t)
                    .map(|row| row.iter().sum::<f32>() / t as f32)
                    .collect();
                record(Operator::GlobalPool, seq.shape(), &[e]);
                let mut out = bias.clone();
                for (o, wrow) in out.iter_mut().zip(weight.data().chunks_exact(e)) {
                    *o += wrow.iter().zip(&pooled).map(|(w, p)| w * p).sum::<f32>();
                }
                record(Operator::Projection, &[e], &[EMBED_DIM]);
                out
            }
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding".into()));
        }
        Embedding::new(out)
    }
}

impl Head {
    fn checked(self, channels: usize) -> Result<Self> {
        if let Head::Attention { attention, .. } = &self {
            if attention.input_dim() != channels || attention.dim() != EMBED_DIM {
                return Err(Error::layer("attention.w_q", "projection geometry mismatch"));
            }
        }
        Ok(self)
    }
}

/// One-shot inference: unpacks `weights` (which must match `cfg`) and embeds.
pub fn embed(mel: &MelSpectrogram, cfg: &ModelConfig, weights: &WeightBundle) -> Result<Embedding> {
    weights.validate(cfg)?;
    Model::from_bundle(weights)?.embed(mel)
}
