use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Variance stabilizer used by every normalization layer.
pub const BN_EPS: f32 = 1e-5;

/// Frequency sub-bands used by SubSpectral Normalization.
pub const SSN_SUB_BANDS: usize = 5;

/// Inference-time statistics of a batch-norm or SubSpectral-norm layer.
///
/// With `sub_bands == S > 1` every vector holds `C·S` entries indexed
/// `channel·S + band`, and each of the `S` contiguous frequency bands of a
/// channel gets its own affine transform.
#[derive(Clone, Debug, PartialEq)]
pub struct NormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub eps: f32,
    pub sub_bands: usize,
}

impl NormParams {
    /// Unit scale, zero shift, zero mean, unit variance.
    pub fn identity(channels: usize, sub_bands: usize) -> Self {
        let n = channels * sub_bands;
        NormParams {
            gamma: vec![1.0; n],
            beta: vec![0.0; n],
            mean: vec![0.0; n],
            var: vec![1.0; n],
            eps: BN_EPS,
            sub_bands,
        }
    }

    /// Number of `(channel, band)` parameter slots.
    pub fn slots(&self) -> usize {
        self.gamma.len()
    }

    /// Trainable parameter count (scale and shift).
    pub fn param_count(&self) -> usize {
        2 * self.slots()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.gamma.len();
        if self.sub_bands == 0 {
            return Err(Error::Config("sub-band count must be >= 1".into()));
        }
        for (name, v) in [("beta", &self.beta), ("mean", &self.mean), ("var", &self.var)] {
            if v.len() != n {
                return Err(Error::dim(format!("norm {name} length"), n, v.len()));
            }
        }
        if let Some(v) = self.var.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Parameter(format!("norm variance {v} is negative")));
        }
        Ok(())
    }

    /// Per-slot `(scale, shift)` such that `y = scale·x + shift`.
    pub fn folded(&self) -> Vec<(f32, f32)> {
        (0..self.slots())
            .map(|i| {
                let scale = self.gamma[i] / (self.var[i] + self.eps).sqrt();
                (scale, self.beta[i] - scale * self.mean[i])
            })
            .collect()
    }
}

/// Applies batch normalization (or SubSpectral Normalization when
/// `sub_bands > 1`) to a `[C, F, T]` tensor using running statistics.
pub fn normalize(input: &Tensor, params: &NormParams) -> Result<Tensor> {
    params.validate()?;
    let (c, f, t) = input.dims3()?;
    let s = params.sub_bands;
    if f % s != 0 {
        return Err(Error::Config(format!(
            "{s} sub-bands do not divide frequency extent {f}"
        )));
    }
    if params.slots() != c * s {
        return Err(Error::dim("norm parameter slots", c * s, params.slots()));
    }
    let band_rows = f / s;
    let folded = params.folded();
    let mut out = input.clone();
    for (row_idx, row) in out.data_mut().chunks_exact_mut(t).enumerate() {
        let ch = row_idx / f;
        let band = (row_idx % f) / band_rows;
        let (scale, shift) = folded[ch * s + band];
        for v in row {
            *v = *v * scale + shift;
        }
    }
    Ok(out)
}
