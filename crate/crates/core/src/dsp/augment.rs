use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::Tensor;

/// SpecAugment settings: one time-stretch, one frequency mask and one time
/// mask per call.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentSpec {
    /// Maximum frequency-mask width in bands.
    pub freq_mask: usize,
    /// Maximum time-mask width in frames.
    pub time_mask: usize,
    /// Uniform range of the time-stretch factor.
    pub stretch: (f32, f32),
}

impl AugmentSpec {
    pub fn disabled() -> Self {
        AugmentSpec {
            freq_mask: 0,
            time_mask: 0,
            stretch: (1.0, 1.0),
        }
    }

    /// Training-time settings tied to the width multiplier: the narrowest
    /// model trains without augmentation.
    pub fn for_width(tau: usize) -> Self {
        if tau <= 1 {
            Self::disabled()
        } else {
            AugmentSpec {
                freq_mask: 6,
                time_mask: 8,
                stretch: (0.9, 1.1),
            }
        }
    }
}

/// Resamples along time by `factor` (>1 slows down) with linear interpolation,
/// keeping the original number of frames: the tail is cropped or zero-filled.
pub fn time_stretch(x: &Tensor, factor: f32) -> Result<Tensor> {
    let (bands, frames) = x.dims2()?;
    if factor == 1.0 {
        return Ok(x.clone());
    }
    let mut out = Tensor::zeros(&[bands, frames]);
    let src = x.data();
    for t in 0..frames {
        let pos = t as f32 / factor;
        let i = pos.floor() as usize;
        if i >= frames {
            continue;
        }
        let frac = pos - i as f32;
        for b in 0..bands {
            let a = src[b * frames + i];
            let v = if i + 1 < frames {
                a + frac * (src[b * frames + i + 1] - a)
            } else if frac == 0.0 {
                a
            } else {
                0.0
            };
            out.data_mut()[b * frames + t] = v;
        }
    }
    Ok(out)
}

/// Zeroes bands `start..start + width` (clipped to the tensor).
pub fn mask_frequency(x: &mut Tensor, start: usize, width: usize) -> Result<()> {
    let (bands, frames) = x.dims2()?;
    let end = (start + width).min(bands);
    if start < end {
        x.data_mut()[start * frames..end * frames].fill(0.0);
    }
    Ok(())
}

/// Zeroes frames `start..start + width` in every band.
pub fn mask_time(x: &mut Tensor, start: usize, width: usize) -> Result<()> {
    let (_, frames) = x.dims2()?;
    let end = (start + width).min(frames);
    if start < end {
        for row in x.data_mut().chunks_exact_mut(frames) {
            row[start..end].fill(0.0);
        }
    }
    Ok(())
}

/// Stretch, then one frequency mask and one time mask. Widths are uniform in
/// `[0, max]`; everything is drawn from a generator seeded with `seed`.
pub fn spec_augment(x: &Tensor, spec: &AugmentSpec, seed: u64) -> Result<Tensor> {
    let (bands, frames) = x.dims2()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = spec.stretch;
    let factor = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let mut out = time_stretch(x, factor)?;

    let width = rng.random_range(0..=spec.freq_mask.min(bands));
    let start = rng.random_range(0..=bands - width);
    mask_frequency(&mut out, start, width)?;

    let width = rng.random_range(0..=spec.time_mask.min(frames));
    let start = rng.random_range(0..=frames - width);
    mask_time(&mut out, start, width)?;
    Ok(out)
}
