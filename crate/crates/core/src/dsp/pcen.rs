//! Per-channel energy normalization.
//!
//! A first-order IIR smoother tracks the energy of every mel band over time,
//!
//! ```text
//! M(t, f) = (1 − s)·M(t−1, f) + s·E(t, f),     M(0, f) = E(0, f)
//! ```
//!
//! and each energy is divided by a power of its smoothed value before a
//! stabilized root compression:
//!
//! ```text
//! PCEN(t, f) = (E / (ε + M)^α + δ)^r − δ^r
//! ```
//!
//! All four learned quantities are scalars shared across bands; ε is fixed.

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fixed floor added to the smoothed energy.
pub const PCEN_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PcenParams {
    /// Gain-control strength, `[0, 1]`.
    pub alpha: f32,
    /// Root exponent, `(0, 1]`.
    pub r: f32,
    /// Compression offset, `> 0`.
    pub delta: f32,
    /// Smoother coefficient, `(0, 1)`.
    pub s: f32,
}

impl Default for PcenParams {
    fn default() -> Self {
        PcenParams {
            alpha: 0.98,
            r: 0.5,
            delta: 2.0,
            s: 0.025,
        }
    }
}

impl PcenParams {
    pub fn new(alpha: f32, r: f32, delta: f32, s: f32) -> Result<Self> {
        let p = PcenParams { alpha, r, delta, s };
        p.validate()?;
        Ok(p)
    }

    /// Out-of-domain values are rejected, never clamped.
    pub fn validate(&self) -> Result<()> {
        let PcenParams { alpha, r, delta, s } = *self;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Parameter(format!("pcen alpha {alpha} not in [0, 1]")));
        }
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::Parameter(format!("pcen r {r} not in (0, 1]")));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Parameter(format!("pcen delta {delta} not > 0")));
        }
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::Parameter(format!("pcen s {s} not in (0, 1)")));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f32; 4] {
        [self.alpha, self.r, self.delta, self.s]
    }

    pub fn from_array(v: [f32; 4]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

fn check_smoothing(s: f32) -> Result<()> {
    // s = 1 is accepted here: the smoother degenerates to a pass-through
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::Parameter(format!("smoothing coefficient {s} not in (0, 1]")));
    }
    Ok(())
}

/// Runs the causal smoother along time for every band.
pub fn pcen_smooth(e: &MelSpectrogram, s: f32) -> Result<Tensor> {
    check_smoothing(s)?;
    let s = s as f64;
    let frames = e.frames();
    let mut out = Vec::with_capacity(e.data().len());
    for band in 0..e.n_mels() {
        let row = e.band(band);
        let mut m = row[0] as f64;
        out.push(m as f32);
        for &v in &row[1..] {
            m = (1.0 - s) * m + s * v as f64;
            out.push(m as f32);
        }
    }
    Tensor::new(&[e.n_mels(), frames], out)
}

/// PCEN of a single energy given its smoothed value.
pub fn pcen_point(e: f64, m: f64, p: &PcenParams) -> f64 {
    let (alpha, r, delta) = (p.alpha as f64, p.r as f64, p.delta as f64);
    (e / (PCEN_EPS + m).powf(alpha) + delta).powf(r) - delta.powf(r)
}

/// Normalizes a mel spectrogram, returning a `[n_mels, frames]` tensor.
pub fn pcen(e: &MelSpectrogram, p: &PcenParams) -> Result<Tensor> {
    p.validate()?;
    let smooth = pcen_smooth(e, p.s)?;
    let data: Vec<f32> = e
        .data()
        .iter()
        .zip(smooth.data())
        .map(|(&v, &m)| pcen_point(v as f64, m as f64, p) as f32)
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("pcen output element {i}")));
    }
    Tensor::new(&[e.n_mels(), e.frames()], data)
}
