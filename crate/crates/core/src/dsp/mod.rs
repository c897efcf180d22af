//! EMG signal conditioning: bandpass, power-line notch bank, sliding RMS and
//! MVC normalization.
//!
//! Filters are cascades of second-order sections with per-channel state;
//! everything here is a single-owner streaming state machine.

mod filter;
mod rms;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::FeatureVector;

pub use filter::{design_bandpass, design_notch_bank, Biquad, FilterChain};
pub use rms::{rms, RmsFeatures, RmsWindow};

/// Flexor and extensor.
pub const CHANNELS: usize = 2;

/// Upper clip for normalized RMS and force. Leaves room for supra-MVC
/// excursions without letting artifacts blow up the estimators.
pub const NORMALIZED_MAX: f64 = 1.5;

/// One multichannel EMG sample. Channel 0 is the flexor, channel 1 the
/// extensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmgFrame {
    pub t: f64,
    pub channels: [f64; CHANNELS],
}

/// Per-channel MVC maxima used to normalize features and force.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationScale {
    pub max_rms: [f64; CHANNELS],
    pub max_force: f64,
}

impl NormalizationScale {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !self.max_rms.iter().all(|&v| ok(v)) {
            return Err(Error::InvalidScale(format!("max RMS {:?}", self.max_rms)));
        }
        if !ok(self.max_force) {
            return Err(Error::InvalidScale(format!("max force {}", self.max_force)));
        }
        Ok(())
    }

    pub fn normalize_force(&self, force: f64) -> f64 {
        (force / self.max_force).clamp(0.0, NORMALIZED_MAX)
    }
}

/// Divides each channel by its MVC maximum and clips to `[0, 1.5]`.
pub fn normalize(features: &RmsFeatures, scale: &NormalizationScale) -> Result<FeatureVector> {
    scale.validate()?;
    let n = |ch: usize| (features.rms[ch] / scale.max_rms[ch]).clamp(0.0, NORMALIZED_MAX);
    Ok(FeatureVector {
        t: features.t,
        flexor: n(0),
        extensor: n(1),
    })
}

/// Filter and window settings for one processing chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalConfig {
    pub sample_rate: f64,
    pub band_low: f64,
    pub band_high: f64,
    pub band_order: usize,
    pub notch_base: f64,
    pub notch_quality: f64,
    pub window_s: f64,
    pub hop_s: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        SignalConfig {
            sample_rate: 2000.0,
            band_low: 20.0,
            band_high: 200.0,
            band_order: 4,
            notch_base: 50.0,
            notch_quality: 30.0,
            window_s: 0.5,
            hop_s: 0.05,
        }
    }
}

impl SignalConfig {
    /// 200 ms window, one feature per 20 ms control tick.
    pub fn online() -> Self {
        SignalConfig {
            window_s: 0.2,
            hop_s: 0.02,
            ..Default::default()
        }
    }

    pub fn filter(&self) -> Result<FilterChain> {
        design_bandpass(self.sample_rate, self.band_low, self.band_high, self.band_order)?
            .then(design_notch_bank(self.sample_rate, self.notch_base, self.notch_quality)?)
    }
}

/// Bandpass + notch bank + sliding RMS as one streaming stage.
#[derive(Debug, Clone)]
pub struct EmgProcessor {
    filter: FilterChain,
    window: RmsWindow,
}

impl EmgProcessor {
    pub fn new(config: &SignalConfig) -> Result<Self> {
        Ok(EmgProcessor {
            filter: config.filter()?,
            window: RmsWindow::new(config.sample_rate, config.window_s, config.hop_s)?,
        })
    }

    pub fn push(&mut self, frame: &EmgFrame) -> Result<Option<RmsFeatures>> {
        let filtered = self.filter.filter_frame(frame)?;
        Ok(self.window.update(&filtered))
    }

    /// Runs a whole recording, returning every emitted feature.
    pub fn run(&mut self, frames: &[EmgFrame]) -> Result<Vec<RmsFeatures>> {
        let mut out = Vec::with_capacity(frames.len() / self.window.hop() + 1);
        for f in frames {
            if let Some(r) = self.push(f)? {
                out.push(r);
            }
        }
        Ok(out)
    }
}

/// Reads `t,flexor,extensor` CSV. Timestamps must be strictly increasing.
pub fn read_emg_csv<R: Read>(reader: R) -> Result<Vec<EmgFrame>> {
    #[derive(Deserialize)]
    struct Row {
        t: f64,
        flexor: f64,
        extensor: f64,
    }
    let mut rdr = csv::Reader::from_reader(reader);
    let mut frames: Vec<EmgFrame> = Vec::new();
    for row in rdr.deserialize() {
        let row: Row = row?;
        if let Some(prev) = frames.last() {
            if row.t <= prev.t {
                return Err(Error::NonMonotonicTime(row.t));
            }
        }
        frames.push(EmgFrame {
            t: row.t,
            channels: [row.flexor, row.extensor],
        });
    }
    Ok(frames)
}

pub fn write_emg_csv<W: Write>(writer: W, frames: &[EmgFrame]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(["t", "flexor", "extensor"])?;
    for f in frames {
        w.write_record(&[
            f.t.to_string(),
            f.channels[0].to_string(),
            f.channels[1].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
