//! Simulation toolkit for RIS-aided spectrum sensing.
//!
//! The pipeline runs end to end on synthetic data:
//!
//! 1. [`waveform`] builds LTE-like and NR-like CP-OFDM baseband frames with
//!    exact time-frequency ground truth.
//! 2. [`channel`] passes them through the cascaded RIS channel
//!    `r[k] = (gᴴΘh + p)·x[k] + n[k]`, and optimizes the binary RIS phases
//!    one element at a time.
//! 3. [`spectrogram`] turns received frames into dB spectrograms and
//!    256×256 images, and maps physical boxes into pixel space.
//! 4. [`dataset`] generates labelled train/test corpora and exports them in
//!    COCO and YOLO layouts.
//! 5. [`detector`] is a classical threshold + connected-component baseline
//!    with cyclic-prefix numerology classification.
//! 6. [`eval`] scores detections with IoU matching and COCO-style AP.

pub mod channel;
pub mod dataset;
pub mod detector;
pub mod eval;
pub mod iq;
pub mod seed;
pub mod spectrogram;
pub mod waveform;

pub use channel::{ChannelRealization, RisConfig};
pub use spectrogram::{PixelBox, SpectrogramMatrix};
pub use waveform::{BoxClass, GroundTruthBox, IqFrame};
