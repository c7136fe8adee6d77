//! Broadcasted residual blocks.
//!
//! A block splits its input into a 2-D frequency branch and a 1-D temporal
//! branch:
//!
//! ```text
//! f2 = SSN(freq_dw_conv(x))              [C, F, T]
//! f1 = temporal(mean_over_F(f2))         [C, 1, T]
//! y  = ReLU(x + f2 + broadcast_F(f1))    (x omitted in transition blocks)
//! ```
//!
//! The standard temporal branch is a dilated depthwise temporal convolution,
//! norm, swish and a 1x1 pointwise convolution. The fused variant replaces
//! the depthwise/pointwise pair with one regular temporal convolution.

use crate::error::{Error, Result};
use crate::model::config::{BLOCK_FREQ_KERNEL, BLOCK_TIME_KERNEL};
use crate::tensor::{activate_in_place, conv2d, normalize, Activation, ConvSpec, NormParams, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub enum TemporalBranch {
    Separable {
        /// `[C, 1, 1, k]`
        depthwise: Tensor,
        norm: NormParams,
        /// `[C, C, 1, 1]`
        pointwise: Tensor,
    },
    Fused {
        /// `[C, C, 1, k]`
        conv: Tensor,
        norm: NormParams,
    },
}

impl TemporalBranch {
    pub fn is_fused(&self) -> bool {
        matches!(self, TemporalBranch::Fused { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub freq_stride: usize,
    pub dilation: usize,
    /// 1x1 convolution `[out, in, 1, 1]` with BN and ReLU, present when the
    /// channel count changes.
    pub projection: Option<(Tensor, NormParams)>,
    /// Frequency-depthwise kernel `[out, 1, 3, 1]`.
    pub freq_conv: Tensor,
    /// SubSpectral norm after the frequency convolution.
    pub freq_norm: NormParams,
    pub temporal: TemporalBranch,
}

impl BlockParams {
    pub fn is_transition(&self) -> bool {
        self.in_channels != self.out_channels || self.freq_stride != 1
    }

    pub fn freq_spec(&self) -> ConvSpec {
        ConvSpec::depthwise(self.out_channels, (BLOCK_FREQ_KERNEL, 1)).stride(self.freq_stride, 1)
    }

    pub fn temporal_spec(&self) -> ConvSpec {
        let c = self.out_channels;
        let spec = match self.temporal {
            TemporalBranch::Separable { .. } => ConvSpec::depthwise(c, (1, BLOCK_TIME_KERNEL)),
            TemporalBranch::Fused { .. } => ConvSpec::temporal(c, c, BLOCK_TIME_KERNEL),
        };
        spec.dilation(1, self.dilation)
    }
}

/// Mean over the frequency axis of a `[C, F, T]` tensor, kept as `[C, 1, T]`.
pub fn average_frequency(x: &Tensor) -> Result<Tensor> {
    let (c, f, t) = x.dims3()?;
    let mut out = vec![0.0f32; c * t];
    for (ch, plane) in x.data().chunks_exact(f * t).enumerate() {
        let acc = &mut out[ch * t..(ch + 1) * t];
        for row in plane.chunks_exact(t) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= f as f32);
    }
    Tensor::new(&[c, 1, t], out)
}

pub fn bc_resblock(x: &Tensor, p: &BlockParams) -> Result<Tensor> {
    let (c_in, _, _) = x.dims3()?;
    if c_in != p.in_channels {
        return Err(Error::dim("block input channels", p.in_channels, c_in));
    }
    let c = p.out_channels;

    let projected;
    let entry = match &p.projection {
        Some((w, norm)) => {
            let spec = ConvSpec::new(p.in_channels, c, (1, 1));
            let mut h = normalize(&conv2d(x, &spec, w, None)?, norm)?;
            activate_in_place(&mut h, &Activation::Relu);
            projected = h;
            &projected
        }
        None if p.in_channels != c => {
            return Err(Error::Config(format!(
                "block changes channels {}->{c} without a projection",
                p.in_channels
            )))
        }
        None => x,
    };

    let f2 = normalize(&conv2d(entry, &p.freq_spec(), &p.freq_conv, None)?, &p.freq_norm)?;
    let pooled = average_frequency(&f2)?;

    let spec = p.temporal_spec();
    let f1 = match &p.temporal {
        TemporalBranch::Separable {
            depthwise,
            norm,
            pointwise,
        } => {
            let mut h = normalize(&conv2d(&pooled, &spec, depthwise, None)?, norm)?;
            activate_in_place(&mut h, &Activation::Swish);
            conv2d(&h, &ConvSpec::new(c, c, (1, 1)), pointwise, None)?
        }
        TemporalBranch::Fused { conv, norm } => {
            let mut h = normalize(&conv2d(&pooled, &spec, conv, None)?, norm)?;
            activate_in_place(&mut h, &Activation::Swish);
            h
        }
    };

    let (_, f, t) = f2.dims3()?;
    let mut out = f2;
    let temporal = f1.data();
    for (ch, plane) in out.data_mut().chunks_exact_mut(f * t).enumerate() {
        let row_add = &temporal[ch * t..(ch + 1) * t];
        for row in plane.chunks_exact_mut(t) {
            for (o, v) in row.iter_mut().zip(row_add) {
                *o += v;
            }
        }
    }

    if !p.is_transition() {
        if x.shape() != out.shape() {
            return Err(Error::Config(format!(
                "residual shape {:?} does not match branch sum {:?}",
                x.shape(),
                out.shape()
            )));
        }
        for (o, v) in out.data_mut().iter_mut().zip(x.data()) {
            *o += v;
        }
    }
    activate_in_place(&mut out, &Activation::Relu);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_block(c_in: usize, c: usize, stride: usize, fused: bool) -> BlockParams {
        let temporal = if fused {
            TemporalBranch::Fused {
                conv: Tensor::zeros(&[c, c, 1, 3]),
                norm: NormParams::identity(c, 1),
            }
        } else {
            TemporalBranch::Separable {
                depthwise: Tensor::zeros(&[c, 1, 1, 3]),
                norm: NormParams::identity(c, 1),
                pointwise: Tensor::zeros(&[c, c, 1, 1]),
            }
        };
        BlockParams {
            in_channels: c_in,
            out_channels: c,
            freq_stride: stride,
            dilation: 2,
            projection: (c_in != c)
                .then(|| (Tensor::zeros(&[c, c_in, 1, 1]), NormParams::identity(c, 1))),
            freq_conv: Tensor::zeros(&[c, 1, 3, 1]),
            freq_norm: NormParams::identity(c, 5),
            temporal,
        }
    }

    #[test]
    fn zero_branches_pass_residual_through_relu() {
        let x = Tensor::from_fn(&[3, 10, 7], |i| (i as f32 * 0.37).sin());
        for fused in [false, true] {
            let p = zero_block(3, 3, 1, fused);
            let y = bc_resblock(&x, &p).unwrap();
            let want = crate::tensor::activate(&x, &Activation::Relu);
            assert!(y.max_abs_diff(&want) < 1e-6);
        }
    }

    #[test]
    fn transition_shapes() {
        let x = Tensor::full(&[8, 20, 101], 0.5);
        let p = zero_block(8, 12, 2, true);
        let y = bc_resblock(&x, &p).unwrap();
        assert_eq!(y.shape(), &[12, 10, 101]);
        // no shortcut: zero weights give an all-zero output
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let x = Tensor::zeros(&[4, 10, 5]);
        let p = zero_block(3, 3, 1, false);
        assert!(matches!(bc_resblock(&x, &p), Err(Error::Dimension { .. })));
    }

    #[test]
    fn frequency_average() {
        let x = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        assert_eq!(average_frequency(&x).unwrap().data(), &[2.0, 4.0]);
    }
}
