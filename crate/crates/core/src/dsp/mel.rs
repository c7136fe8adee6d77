use std::f32::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// STFT and filterbank settings.
///
/// The defaults (25 ms Hann window, 10 ms hop, 512-point FFT, 40 HTK mel bands
/// over 0–8 kHz) give exactly 101 centered frames for a one-second clip.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MelConfig {
    pub window_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub n_mels: usize,
    pub f_min: f32,
    pub f_max: f32,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            window_len: 400,
            hop: 160,
            fft_size: 512,
            n_mels: 40,
            f_min: 0.0,
            f_max: 8000.0,
        }
    }
}

impl MelConfig {
    /// Frames produced for a signal of `samples` samples.
    pub fn frames(&self, samples: usize) -> usize {
        let padded = samples + 2 * (self.window_len / 2);
        1 + (padded - self.window_len) / self.hop
    }
}

/// Mel-band energies, `n_mels × frames`, band-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    n_mels: usize,
    frames: usize,
    data: Vec<f32>,
}

impl MelSpectrogram {
    pub fn new(n_mels: usize, frames: usize, data: Vec<f32>) -> Result<Self> {
        if n_mels == 0 || frames == 0 {
            return Err(Error::Empty("mel spectrogram".into()));
        }
        if data.len() != n_mels * frames {
            return Err(Error::dim("mel data length", n_mels * frames, data.len()));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("mel energy {v}")));
        }
        if let Some(v) = data.iter().find(|v| **v < 0.0) {
            return Err(Error::Parameter(format!("mel energy {v} is negative")));
        }
        Ok(MelSpectrogram {
            n_mels,
            frames,
            data,
        })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (m, f) = t.dims2()?;
        Self::new(m, f, t.data().to_vec())
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, band: usize, frame: usize) -> f32 {
        self.data[band * self.frames + frame]
    }

    /// The band's energies over time.
    pub fn band(&self, band: usize) -> &[f32] {
        &self.data[band * self.frames..(band + 1) * self.frames]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.n_mels, self.frames], self.data.clone()).expect("validated extents")
    }
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f32) -> f32 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f32) -> f32 {
    700.0 * (10f32.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with unit peak, one row of `fft_size/2 + 1` bin weights
/// per band.
pub fn mel_filterbank(cfg: &MelConfig, sample_rate: u32) -> Vec<Vec<f32>> {
    let bins = cfg.fft_size / 2 + 1;
    let lo = hz_to_mel(cfg.f_min);
    let hi = hz_to_mel(cfg.f_max);
    let edges: Vec<f32> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f32 / (cfg.n_mels + 1) as f32))
        .collect();
    let bin_hz = sample_rate as f32 / cfg.fft_size as f32;
    (0..cfg.n_mels)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f32 * bin_hz;
                    let up = (f - left) / (center - left);
                    let down = (right - f) / (right - center);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Reusable STFT plan, window and filterbank.
pub struct MelFrontend {
    cfg: MelConfig,
    window: Vec<f32>,
    filters: Vec<Vec<f32>>,
    fft: Arc<dyn Fft<f32>>,
}

impl MelFrontend {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        if cfg.window_len == 0 || cfg.hop == 0 || cfg.n_mels == 0 {
            return Err(Error::Config(format!("degenerate mel settings {cfg:?}")));
        }
        if cfg.fft_size < cfg.window_len {
            return Err(Error::Config(format!(
                "fft size {} shorter than window {}",
                cfg.fft_size, cfg.window_len
            )));
        }
        // periodic Hann
        let window = (0..cfg.window_len)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f32 / cfg.window_len as f32).cos())
            .collect();
        let filters = mel_filterbank(&cfg, SAMPLE_RATE);
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(MelFrontend {
            cfg,
            window,
            filters,
            fft,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    /// Power spectrum of every centered frame, `frames × (fft_size/2 + 1)`.
    pub fn power_frames(&self, samples: &[f32]) -> Vec<Vec<f32>> {
        let cfg = &self.cfg;
        let pad = cfg.window_len / 2;
        let padded = reflect_pad(samples, pad);
        let frames = cfg.frames(samples.len());
        let bins = cfg.fft_size / 2 + 1;
        let mut buf = vec![Complex::new(0.0f32, 0.0); cfg.fft_size];
        let mut scratch = vec![Complex::new(0.0f32, 0.0); self.fft.get_inplace_scratch_len()];
        (0..frames)
            .map(|i| {
                let start = i * cfg.hop;
                buf.fill(Complex::new(0.0, 0.0));
                for (n, (b, w)) in buf.iter_mut().zip(&self.window).enumerate() {
                    b.re = padded[start + n] * w;
                }
                self.fft.process_with_scratch(&mut buf, &mut scratch);
                buf[..bins].iter().map(|c| c.norm_sqr()).collect()
            })
            .collect()
    }

    pub fn compute(&self, wave: &Waveform) -> Result<MelSpectrogram> {
        let samples = wave.fit_clip()?;
        let power = self.power_frames(&samples);
        let frames = power.len();
        let mut data = vec![0.0f32; self.cfg.n_mels * frames];
        for (m, filter) in self.filters.iter().enumerate() {
            for (t, spectrum) in power.iter().enumerate() {
                data[m * frames + t] = filter.iter().zip(spectrum).map(|(w, p)| w * p).sum();
            }
        }
        MelSpectrogram::new(self.cfg.n_mels, frames, data)
    }
}

/// Mel spectrogram of a one-second clip with the given settings.
pub fn melspec(wave: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram> {
    MelFrontend::new(*cfg)?.compute(wave)
}

fn reflect_pad(x: &[f32], pad: usize) -> Vec<f32> {
    let n = x.len() as isize;
    (-(pad as isize)..n + pad as isize)
        .map(|i| {
            let mut j = i;
            // reflect without repeating the edge sample
            while j < 0 || j >= n {
                j = if j < 0 { -j } else { 2 * (n - 1) - j };
            }
            x[j as usize]
        })
        .collect()
}
