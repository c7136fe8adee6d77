//! Temporal positional encoding, single-head self-attention and the
//! embedding aggregation head.

use crate::error::{Error, Result};
use crate::model::config::{RPE_KERNEL, RPE_PADDING};
use crate::tensor::{activate_in_place, conv1d, Activation, ConvSpec, Padding, Tensor};

/// Per-channel filters of the residual positional encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct RpeParams {
    /// `[C, κ]`; tap `j` reads offset `j − pad_left`.
    pub filters: Tensor,
    pub bias: Vec<f32>,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl RpeParams {
    /// Zero filters with the standard 16-tap geometry.
    pub fn zeros(channels: usize) -> Self {
        RpeParams {
            filters: Tensor::zeros(&[channels, RPE_KERNEL]),
            bias: vec![0.0; channels],
            pad_left: RPE_PADDING.0,
            pad_right: RPE_PADDING.1,
        }
    }

    fn spec(&self) -> Result<ConvSpec> {
        let (c, k) = self.filters.dims2()?;
        if self.pad_left + self.pad_right + 1 != k {
            return Err(Error::Config(format!(
                "padding {}+{} does not preserve length for kernel {k}",
                self.pad_left, self.pad_right
            )));
        }
        Ok(ConvSpec::depthwise(c, (1, k))
            .padding(Padding::Valid, Padding::Explicit(self.pad_left, self.pad_right))
            .with_bias())
    }
}

/// `x + φ(x)` where `φ` is a zero-padded depthwise temporal convolution.
/// Input and output are `[C, T]`.
pub fn rpe(x: &Tensor, p: &RpeParams) -> Result<Tensor> {
    let spec = p.spec()?;
    let (c, k) = p.filters.dims2()?;
    let weights = p.filters.clone().reshape(&[c, 1, k])?;
    let bias = Tensor::new(&[p.bias.len()], p.bias.clone())?;
    let phi = conv1d(x, &spec, &weights, Some(&bias))?;
    x.add(&phi)
}

/// Query/key/value projections into a fixed 64-d space plus the PReLU slope.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// `[C, d]`
    pub w_q: Tensor,
    pub b_q: Vec<f32>,
    pub w_k: Tensor,
    pub b_k: Vec<f32>,
    pub w_v: Tensor,
    pub b_v: Vec<f32>,
    /// One shared slope or one per output feature.
    pub prelu: Vec<f32>,
}

impl AttentionParams {
    pub fn input_dim(&self) -> usize {
        self.w_q.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.w_q.shape()[1]
    }

    fn validate(&self, c: usize) -> Result<()> {
        let d = self.w_q.shape().get(1).copied().unwrap_or(0);
        for (name, w, b) in [
            ("w_q", &self.w_q, &self.b_q),
            ("w_k", &self.w_k, &self.b_k),
            ("w_v", &self.w_v, &self.b_v),
        ] {
            let (rows, cols) = w.dims2()?;
            if rows != c {
                return Err(Error::dim(format!("attention {name} rows"), c, rows));
            }
            if cols != d {
                return Err(Error::dim(format!("attention {name} columns"), d, cols));
            }
            if b.len() != d {
                return Err(Error::dim(format!("attention bias for {name}"), d, b.len()));
            }
        }
        if self.prelu.len() != 1 && self.prelu.len() != d {
            return Err(Error::dim("prelu slope length", d, self.prelu.len()));
        }
        Ok(())
    }
}

/// `X·W + 1·bᵀ` for `X: [T, C]`, `W: [C, d]`.
fn project(x: &[f32], t: usize, c: usize, w: &Tensor, b: &[f32]) -> Vec<f32> {
    let d = b.len();
    let wd = w.data();
    let mut out = Vec::with_capacity(t * d);
    for row in x.chunks_exact(c).take(t) {
        let mut acc = b.to_vec();
        for (xi, wrow) in row.iter().zip(wd.chunks_exact(d)) {
            for (a, wv) in acc.iter_mut().zip(wrow) {
                *a += xi * wv;
            }
        }
        out.extend_from_slice(&acc);
    }
    out
}

/// Attention matrix `A = softmax(QKᵀ/√d)` (`[T, T]`, rows sum to one) and the
/// context `Z = A·V` (`[T, d]`) before the nonlinearity.
pub fn attend(x: &Tensor, p: &AttentionParams) -> Result<(Tensor, Tensor)> {
    let (t, c) = x.dims2()?;
    p.validate(c)?;
    let d = p.dim();
    let q = project(x.data(), t, c, &p.w_q, &p.b_q);
    let k = project(x.data(), t, c, &p.w_k, &p.b_k);
    let v = project(x.data(), t, c, &p.w_v, &p.b_v);
    let scale = 1.0 / (d as f32).sqrt();

    let mut a = vec![0.0f32; t * t];
    for (i, row) in a.chunks_exact_mut(t).enumerate() {
        let qi = &q[i * d..(i + 1) * d];
        for (j, logit) in row.iter_mut().enumerate() {
            let kj = &k[j * d..(j + 1) * d];
            *logit = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f32>() * scale;
        }
        if row.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite(format!("attention logits of step {i}")));
        }
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f64;
        for l in row.iter_mut() {
            *l = (*l - max).exp();
            sum += *l as f64;
        }
        for l in row.iter_mut() {
            *l = (*l as f64 / sum) as f32;
        }
    }

    let mut z = vec![0.0f32; t * d];
    for (i, zrow) in z.chunks_exact_mut(d).enumerate() {
        for (j, &w) in a[i * t..(i + 1) * t].iter().enumerate() {
            for (zv, vv) in zrow.iter_mut().zip(&v[j * d..(j + 1) * d]) {
                *zv += w * vv;
            }
        }
    }
    Ok((Tensor::new(&[t, t], a)?, Tensor::new(&[t, d], z)?))
}

/// Single-head scaled dot-product self-attention over time followed by PReLU.
/// `x` is time-major `[T, C]`; the result is `[T, d]`.
pub fn sdpa(x: &Tensor, p: &AttentionParams) -> Result<Tensor> {
    let (_, mut z) = attend(x, p)?;
    activate_in_place(&mut z, &Activation::Prelu(p.prelu.clone()));
    Ok(z)
}

/// Convolution over the time axis with kernel 1 and one output channel: a
/// learned weighted sum of the `T` attention outputs plus a bias.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregationHead {
    /// One weight per time step.
    pub weights: Vec<f32>,
    pub bias: f32,
}

impl AggregationHead {
    /// `[T, d]` → `[1, d]`.
    pub fn apply(&self, z: &Tensor) -> Result<Tensor> {
        let (t, _) = z.dims2()?;
        if self.weights.len() != t {
            return Err(Error::dim("aggregation steps", self.weights.len(), t));
        }
        let spec = ConvSpec::temporal(t, 1, 1).with_bias();
        let w = Tensor::new(&[1, t, 1], self.weights.clone())?;
        let b = Tensor::new(&[1], vec![self.bias])?;
        conv1d(z, &spec, &w, Some(&b))
    }
}
