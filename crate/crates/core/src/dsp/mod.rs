//! Audio frontend: WAV decoding, mel spectrogram, PCEN and spectrogram
//! augmentation.

mod augment;
mod mel;
mod pcen;
mod wav;

pub use augment::{mask_frequency, mask_time, spec_augment, time_stretch, AugmentSpec};
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz, melspec, MelConfig, MelFrontend, MelSpectrogram};
pub use pcen::{pcen, pcen_point, pcen_smooth, PcenParams, PCEN_EPS};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};

/// Sample rate every clip must have.
pub const SAMPLE_RATE: u32 = 16_000;

/// Samples in one clip after padding or trimming.
pub const CLIP_SAMPLES: usize = 16_000;

/// Mono audio samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, rate: u32) -> Self {
        Waveform { samples, rate }
    }

    /// Checks the rate and length, then zero-pads or trims to one clip.
    pub fn fit_clip(&self) -> Result<Vec<f32>> {
        if self.rate != SAMPLE_RATE {
            return Err(Error::SampleRate(self.rate));
        }
        if self.samples.is_empty() {
            return Err(Error::Empty("waveform has no samples".into()));
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i}")));
        }
        let mut out = self.samples.clone();
        out.resize(CLIP_SAMPLES, 0.0);
        Ok(out)
    }
}
