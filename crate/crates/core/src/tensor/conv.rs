use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Padding rule along one spatial axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Total padding `d·(k−1)` split as evenly as possible, extra on the right.
    /// With stride 1 the extent is preserved.
    Same,
    /// No padding.
    Valid,
    /// Explicit `(left, right)` zero padding.
    Explicit(usize, usize),
}

impl Padding {
    fn resolve(self, kernel: usize, dilation: usize) -> (usize, usize) {
        match self {
            Padding::Same => {
                let total = dilation * (kernel - 1);
                (total / 2, total - total / 2)
            }
            Padding::Valid => (0, 0),
            Padding::Explicit(l, r) => (l, r),
        }
    }
}

/// Geometry of a 2-D (frequency × time) convolution.
///
/// 1-D convolutions use the same type with a frequency kernel extent of 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `(freq, time)` kernel extents.
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    /// 1 for a regular convolution, `in_channels` for depthwise.
    pub groups: usize,
    /// `(freq, time)` padding rules.
    pub padding: (Padding, Padding),
    pub bias: bool,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: (usize, usize)) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride: (1, 1),
            dilation: (1, 1),
            groups: 1,
            padding: (Padding::Same, Padding::Same),
            bias: false,
        }
    }

    /// One filter per channel, `channels` in and out.
    pub fn depthwise(channels: usize, kernel: (usize, usize)) -> Self {
        ConvSpec {
            groups: channels,
            ..Self::new(channels, channels, kernel)
        }
    }

    /// A convolution along time only.
    pub fn temporal(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self::new(in_channels, out_channels, (1, kernel))
    }

    pub fn stride(mut self, freq: usize, time: usize) -> Self {
        self.stride = (freq, time);
        self
    }

    pub fn dilation(mut self, freq: usize, time: usize) -> Self {
        self.dilation = (freq, time);
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn padding(mut self, freq: Padding, time: Padding) -> Self {
        self.padding = (freq, time);
        self
    }

    pub fn with_bias(mut self) -> Self {
        self.bias = true;
        self
    }

    /// Weight tensor extents `(out, in/groups, kf, kt)`.
    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups.max(1),
            self.kernel.0,
            self.kernel.1,
        ]
    }

    pub fn weight_count(&self) -> usize {
        self.weight_shape().iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + if self.bias { self.out_channels } else { 0 }
    }

    /// Multiply-accumulates needed to produce an output of `out_extent` elements
    /// per channel.
    pub fn macs(&self, out_extent: usize) -> usize {
        let [out, per_group, kf, kt] = self.weight_shape();
        out * out_extent * per_group * kf * kt
    }

    pub fn validate(&self) -> Result<()> {
        let ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            dilation,
            groups,
            ..
        } = *self;
        if in_channels == 0 || out_channels == 0 || kernel.0 == 0 || kernel.1 == 0 {
            return Err(Error::Config(format!("degenerate convolution {self:?}")));
        }
        if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::Config(format!(
                "channels {in_channels}->{out_channels} not divisible by groups {groups}"
            )));
        }
        if stride.0 == 0 || stride.1 == 0 || dilation.0 == 0 || dilation.1 == 0 {
            return Err(Error::Config("stride and dilation must be >= 1".into()));
        }
        Ok(())
    }

    /// Output `(freq, time)` extents for an input of `(freq, time)` extents.
    pub fn output_extent(&self, freq: usize, time: usize) -> Result<(usize, usize)> {
        let f = axis_extent(
            "frequency",
            freq,
            self.kernel.0,
            self.stride.0,
            self.dilation.0,
            self.padding.0,
        )?;
        let t = axis_extent(
            "time",
            time,
            self.kernel.1,
            self.stride.1,
            self.dilation.1,
            self.padding.1,
        )?;
        Ok((f, t))
    }
}

fn axis_extent(
    axis: &str,
    input: usize,
    kernel: usize,
    stride: usize,
    dilation: usize,
    padding: Padding,
) -> Result<usize> {
    let (l, r) = padding.resolve(kernel, dilation);
    let span = dilation * (kernel - 1) + 1;
    let padded = input + l + r;
    if padded < span {
        return Err(Error::dim(format!("{axis} extent after padding"), span, padded));
    }
    Ok((padded - span) / stride + 1)
}

/// 2-D convolution over a `[C, F, T]` tensor.
///
/// `weights` has shape `(out, in/groups, kf, kt)`; `bias`, when the spec
/// carries one, has one entry per output channel.
pub fn conv2d(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &Tensor,
    bias: Option<&Tensor>,
) -> Result<Tensor> {
    spec.validate()?;
    let (c, f, t) = input.dims3()?;
    if c != spec.in_channels {
        return Err(Error::dim("input channels", spec.in_channels, c));
    }
    check_weights(spec, weights)?;
    let bias = check_bias(spec, bias)?;

    let (fo, to) = spec.output_extent(f, t)?;
    let (kf, kt) = spec.kernel;
    let (sf, st) = spec.stride;
    let (df, dt) = spec.dilation;
    let (pf, _) = spec.padding.0.resolve(kf, df);
    let (pt, _) = spec.padding.1.resolve(kt, dt);
    let in_per_group = spec.in_channels / spec.groups;
    let out_per_group = spec.out_channels / spec.groups;

    let x = input.data();
    let w = weights.data();
    let mut out = vec![0.0f32; spec.out_channels * fo * to];

    for (oc, plane) in out.chunks_exact_mut(fo * to).enumerate() {
        if let Some(b) = bias {
            plane.fill(b[oc]);
        }
        let group = oc / out_per_group;
        for icg in 0..in_per_group {
            let ic = group * in_per_group + icg;
            let x_plane = &x[ic * f * t..(ic + 1) * f * t];
            for i in 0..kf {
                for j in 0..kt {
                    let wv = w[((oc * in_per_group + icg) * kf + i) * kt + j];
                    let t_off = (j * dt) as isize - pt as isize;
                    let (lo, hi) = valid_range(t_off, st, t, to);
                    if lo >= hi {
                        continue;
                    }
                    for o_f in 0..fo {
                        let fi = (o_f * sf + i * df) as isize - pf as isize;
                        if fi < 0 || fi >= f as isize {
                            continue;
                        }
                        let row = &x_plane[fi as usize * t..(fi as usize + 1) * t];
                        let out_row = &mut plane[o_f * to..(o_f + 1) * to];
                        if st == 1 {
                            let start = (lo as isize + t_off) as usize;
                            let src = &row[start..start + (hi - lo)];
                            for (o, &v) in out_row[lo..hi].iter_mut().zip(src) {
                                *o += wv * v;
                            }
                        } else {
                            for (o_t, o) in out_row.iter_mut().enumerate().take(hi).skip(lo) {
                                let ti = (o_t * st) as isize + t_off;
                                *o += wv * row[ti as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[spec.out_channels, fo, to], out)
}

/// Output positions `[lo, hi)` whose input index `o·stride + offset` is in range.
fn valid_range(offset: isize, stride: usize, input: usize, output: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset) + s - 1) / s
    };
    let last = input as isize - 1 - offset;
    let hi = if last < 0 { 0 } else { last / s + 1 };
    (lo as usize, (hi as usize).min(output))
}

/// 1-D convolution over a `[C, L]` tensor. The spec's frequency kernel extent
/// must be 1; `weights` may be `(out, in/groups, k)` or `(out, in/groups, 1, k)`.
pub fn conv1d(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &Tensor,
    bias: Option<&Tensor>,
) -> Result<Tensor> {
    if spec.kernel.0 != 1 {
        return Err(Error::dim("conv1d frequency kernel", 1, spec.kernel.0));
    }
    let (c, l) = input.dims2()?;
    let x = input.clone().reshape(&[c, 1, l])?;
    let w = match weights.shape() {
        &[o, i, k] => weights.clone().reshape(&[o, i, 1, k])?,
        _ => weights.clone(),
    };
    let mut spec = *spec;
    spec.padding.0 = Padding::Valid;
    let y = conv2d(&x, &spec, &w, bias)?;
    let (oc, _, ol) = y.dims3()?;
    y.reshape(&[oc, ol])
}

fn check_weights(spec: &ConvSpec, weights: &Tensor) -> Result<()> {
    let expected = spec.weight_shape();
    if weights.rank() != 4 {
        return Err(Error::dim("weight rank", 4, weights.rank()));
    }
    let names = [
        "weight out-channels",
        "weight in-channels per group",
        "weight frequency kernel",
        "weight time kernel",
    ];
    for ((name, &e), &a) in names.iter().zip(&expected).zip(weights.shape()) {
        if e != a {
            return Err(Error::dim(*name, e, a));
        }
    }
    Ok(())
}

fn check_bias<'a>(spec: &ConvSpec, bias: Option<&'a Tensor>) -> Result<Option<&'a [f32]>> {
    match (spec.bias, bias) {
        (true, Some(b)) if b.len() == spec.out_channels => Ok(Some(b.data())),
        (true, Some(b)) => Err(Error::dim("bias length", spec.out_channels, b.len())),
        (true, None) => Err(Error::Config("convolution expects a bias tensor".into())),
        (false, Some(_)) => Err(Error::Config("convolution configured without bias".into())),
        (false, None) => Ok(None),
    }
}
