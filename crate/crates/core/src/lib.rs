//! Few-shot keyword spotting runtime.
//!
//! The pipeline turns a one-second 16 kHz clip into a 40×101 mel
//! spectrogram ([`dsp`]), maps it to a 64-dimensional embedding with a
//! compact convolutional network ([`model`]), and compares embeddings with
//! per-keyword prototypes enrolled from a handful of examples ([`proto`]).
//! [`eval`] provides the open-set metrics and episode sampling used to
//! measure it, and [`weights`] the on-disk formats.
//!
//! ```
//! use edgespot::dsp::{melspec, MelConfig, Waveform};
//! use edgespot::model::{Model, ModelConfig};
//! use edgespot::proto::PrototypeStore;
//! use edgespot::weights::spectral_bundle;
//!
//! let model = Model::from_bundle(&spectral_bundle(&ModelConfig::edgespot(1)))?;
//! let tone = |hz: f32| {
//!     let s = (0..16_000)
//!         .map(|i| 0.3 * (std::f32::consts::TAU * hz * i as f32 / 16_000.0).sin())
//!         .collect();
//!     Waveform::new(s, 16_000)
//! };
//! let embed = |hz| model.embed(&melspec(&tone(hz), &MelConfig::default())?);
//!
//! let mut store = PrototypeStore::new(0.9)?;
//! store.enroll("low", &[embed(300.0)?])?;
//! store.enroll("high", &[embed(3000.0)?])?;
//! let hit = store.detect(&embed(300.0)?)?;
//! assert_eq!(hit.label, "low");
//! assert!(hit.accepted);
//! # Ok::<(), edgespot::Error>(())
//! ```

pub mod dsp;
mod embedding;
mod error;
pub mod eval;
pub mod model;
pub mod proto;
pub mod tensor;
pub mod weights;

pub use embedding::Embedding;
pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/frontend.md")]
    pub struct Frontend;
    #[doc = include_str!("../../../book/src/network.md")]
    pub struct Network;
    #[doc = include_str!("../../../book/src/attention.md")]
    pub struct Attention;
    #[doc = include_str!("../../../book/src/prototypes.md")]
    pub struct Prototypes;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub struct Evaluation;
    #[doc = include_str!("../../../book/src/weights.md")]
    pub struct Weights;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
