use std::f64::consts::PI;

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::dsp::EmgFrame;
use crate::error::{Error, Result};

/// One second-order section, `a0` normalized to 1.
///
/// `H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Both poles strictly inside the unit circle (stability triangle).
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }

    pub fn response(&self, omega: f64) -> Complex<f64> {
        let z1 = Complex::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        (z1 * self.b1 + z2 * self.b2 + self.b0) / (z1 * self.a1 + z2 * self.a2 + 1.0)
    }

    fn from_poles(p1: Complex<f64>, p2: Complex<f64>, b: [f64; 3]) -> Self {
        // (1 - p1 z^-1)(1 - p2 z^-1); p1, p2 are a conjugate or a real pair.
        Biquad {
            b0: b[0],
            b1: b[1],
            b2: b[2],
            a1: -(p1 + p2).re,
            a2: (p1 * p2).re,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FilterDoc {
    sample_rate: f64,
    sections: Vec<Biquad>,
}

/// A cascade of biquads with independent per-channel state.
///
/// Serializes to `{"sample_rate": .., "sections": [{b0,b1,b2,a1,a2}, ..]}`;
/// state is not serialized and starts at zero after loading.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "FilterDoc", into = "FilterDoc")]
pub struct FilterChain {
    sample_rate: f64,
    sections: Vec<Biquad>,
    channels: usize,
    // Transposed direct form II, [s1, s2] per (channel, section).
    state: Vec<[f64; 2]>,
}

impl From<FilterDoc> for FilterChain {
    fn from(doc: FilterDoc) -> Self {
        FilterChain::from_sections(doc.sample_rate, doc.sections)
    }
}

impl From<FilterChain> for FilterDoc {
    fn from(chain: FilterChain) -> Self {
        FilterDoc {
            sample_rate: chain.sample_rate,
            sections: chain.sections,
        }
    }
}

impl FilterChain {
    /// Two-channel chain from explicit sections.
    pub fn from_sections(sample_rate: f64, sections: Vec<Biquad>) -> Self {
        let mut chain = FilterChain {
            sample_rate,
            sections,
            channels: crate::dsp::CHANNELS,
            state: Vec::new(),
        };
        chain.reset();
        chain
    }

    /// Re-sizes the state for `channels` independent streams and zeroes it.
    pub fn with_channels(mut self, channels: usize) -> Self {
        self.channels = channels;
        self.reset();
        self
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(Biquad::is_stable)
    }

    pub fn reset(&mut self) {
        self.state = vec![[0.0; 2]; self.channels * self.sections.len()];
    }

    /// Appends the sections of `other`; state is reset.
    pub fn then(mut self, other: FilterChain) -> Result<Self> {
        if (self.sample_rate - other.sample_rate).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "cannot cascade filters at {} Hz and {} Hz",
                self.sample_rate, other.sample_rate
            )));
        }
        self.sections.extend(other.sections);
        self.reset();
        Ok(self)
    }

    /// Complex response of the whole cascade at `freq` Hz.
    pub fn response(&self, freq: f64) -> Complex<f64> {
        let omega = 2.0 * PI * freq / self.sample_rate;
        self.sections
            .iter()
            .fold(Complex::new(1.0, 0.0), |acc, s| acc * s.response(omega))
    }

    pub fn gain_db(&self, freq: f64) -> f64 {
        20.0 * self.response(freq).norm().log10()
    }

    /// Filters one sample of one channel through every section in order.
    #[inline]
    pub fn filter_sample(&mut self, channel: usize, x: f64) -> f64 {
        let n = self.sections.len();
        let state = &mut self.state[channel * n..(channel + 1) * n];
        let mut v = x;
        for (s, st) in self.sections.iter().zip(state.iter_mut()) {
            let y = s.b0 * v + st[0];
            st[0] = s.b1 * v - s.a1 * y + st[1];
            st[1] = s.b2 * v - s.a2 * y;
            v = y;
        }
        v
    }

    /// Filters one multichannel sample in place.
    pub fn process(&mut self, samples: &mut [f64]) -> Result<()> {
        if samples.len() != self.channels {
            return Err(Error::ChannelMismatch {
                expected: self.channels,
                got: samples.len(),
            });
        }
        for (ch, x) in samples.iter_mut().enumerate() {
            *x = self.filter_sample(ch, *x);
        }
        Ok(())
    }

    /// Streaming filter step for one EMG frame.
    pub fn filter_frame(&mut self, frame: &EmgFrame) -> Result<EmgFrame> {
        let mut channels = frame.channels;
        self.process(&mut channels)?;
        Ok(EmgFrame {
            t: frame.t,
            channels,
        })
    }
}

fn nyquist_check(sample_rate: f64, low: f64, high: f64) -> Result<()> {
    if !(sample_rate > 0.0) || !sample_rate.is_finite() {
        return Err(Error::InvalidBand(format!("sample rate {sample_rate} Hz")));
    }
    if !(low > 0.0) {
        return Err(Error::InvalidBand(format!("low edge {low} Hz must be > 0")));
    }
    if !(high < sample_rate / 2.0) {
        return Err(Error::InvalidBand(format!(
            "high edge {high} Hz must be below Nyquist ({} Hz)",
            sample_rate / 2.0
        )));
    }
    if !(low < high) {
        return Err(Error::InvalidBand(format!("low {low} Hz >= high {high} Hz")));
    }
    Ok(())
}

/// Butterworth bandpass of overall order `order` as `order / 2` biquads.
///
/// The analog lowpass prototype of order `order / 2` is mapped to a
/// bandpass around the prewarped edges and discretized with the bilinear
/// transform. Gain is normalized to unity at the center frequency.
pub fn design_bandpass(sample_rate: f64, low: f64, high: f64, order: usize) -> Result<FilterChain> {
    if order == 0 || order % 2 != 0 {
        return Err(Error::OddOrder(order));
    }
    nyquist_check(sample_rate, low, high)?;

    let n = order / 2;
    let fs2 = 2.0 * sample_rate;
    let w_lo = fs2 * (PI * low / sample_rate).tan();
    let w_hi = fs2 * (PI * high / sample_rate).tan();
    let bw = w_hi - w_lo;
    let w0_sq = w_lo * w_hi;
    let bilinear = |s: Complex<f64>| (Complex::new(fs2, 0.0) + s) / (Complex::new(fs2, 0.0) - s);
    let numerator = [1.0, 0.0, -1.0];

    let mut sections = Vec::with_capacity(n);
    for k in 0..n {
        let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
        let p = Complex::from_polar(1.0, theta);
        if p.im < -1e-12 {
            // Covered by the conjugate of an earlier pole.
            continue;
        }
        let half = p * (bw / 2.0);
        let disc = (half * half - w0_sq).sqrt();
        let s1 = half + disc;
        let s2 = half - disc;
        if p.im > 1e-12 {
            // s1 and s2 lie in opposite half-planes; each pairs with its conjugate.
            for s in [s1, s2] {
                let z = bilinear(s);
                sections.push(Biquad::from_poles(z, z.conj(), numerator));
            }
        } else {
            sections.push(Biquad::from_poles(bilinear(s1), bilinear(s2), numerator));
        }
    }
    debug_assert_eq!(sections.len(), n);

    let w0 = 2.0 * (w0_sq.sqrt() / fs2).atan();
    let gain = sections
        .iter()
        .fold(Complex::new(1.0, 0.0), |acc, s| acc * s.response(w0))
        .norm();
    let per_section = gain.powf(-1.0 / n as f64);
    for s in &mut sections {
        s.b0 *= per_section;
        s.b1 *= per_section;
        s.b2 *= per_section;
    }
    Ok(FilterChain::from_sections(sample_rate, sections))
}

/// One biquad notch per multiple of `base` strictly below Nyquist.
pub fn design_notch_bank(sample_rate: f64, base: f64, quality: f64) -> Result<FilterChain> {
    if !(base > 0.0) || !base.is_finite() || base >= sample_rate / 2.0 {
        return Err(Error::InvalidBase(base));
    }
    if !(quality > 0.0) {
        return Err(Error::Config(format!("notch quality must be > 0, got {quality}")));
    }
    let nyquist = sample_rate / 2.0;
    let mut sections = Vec::new();
    let mut k = 1;
    loop {
        let f0 = base * k as f64;
        if f0 >= nyquist {
            break;
        }
        let w0 = 2.0 * PI * f0 / sample_rate;
        let alpha = w0.sin() / (2.0 * quality);
        let a0 = 1.0 + alpha;
        let c = -2.0 * w0.cos();
        sections.push(Biquad {
            b0: 1.0 / a0,
            b1: c / a0,
            b2: 1.0 / a0,
            a1: c / a0,
            a2: (1.0 - alpha) / a0,
        });
        k += 1;
    }
    Ok(FilterChain::from_sections(sample_rate, sections))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(x: f64) -> EmgFrame {
        EmgFrame { t: 0.0, channels: [x, x] }
    }

    #[test]
    fn bandpass_has_order_over_two_sections() {
        for order in [2, 4, 6, 8] {
            let chain = design_bandpass(2000.0, 20.0, 200.0, order).unwrap();
            assert_eq!(chain.sections().len(), order / 2);
            assert!(chain.is_stable());
        }
    }

    #[test]
    fn bandpass_unity_at_center() {
        let chain = design_bandpass(2000.0, 20.0, 200.0, 4).unwrap();
        // Center of the prewarped band, expressed back in Hz.
        let fs = 2000.0;
        let w = |f: f64| 2.0 * fs * (PI * f / fs).tan();
        let w0 = (w(20.0) * w(200.0)).sqrt();
        let f0 = fs / PI * (w0 / (2.0 * fs)).atan();
        assert!(chain.gain_db(f0).abs() < 1e-9);
        // Geometric mean of the nominal edges is within 1 dB as well.
        assert!(chain.gain_db((20.0f64 * 200.0).sqrt()).abs() < 1.0);
    }

    #[test]
    fn bandpass_rejects_bad_bands() {
        assert!(matches!(
            design_bandpass(2000.0, 20.0, 1200.0, 4),
            Err(Error::InvalidBand(_))
        ));
        assert!(matches!(
            design_bandpass(2000.0, 0.0, 200.0, 4),
            Err(Error::InvalidBand(_))
        ));
        assert!(matches!(
            design_bandpass(2000.0, 300.0, 200.0, 4),
            Err(Error::InvalidBand(_))
        ));
        assert!(matches!(design_bandpass(2000.0, 20.0, 200.0, 3), Err(Error::OddOrder(3))));
    }

    #[test]
    fn bandpass_kills_dc() {
        let mut chain = design_bandpass(2000.0, 20.0, 200.0, 4).unwrap();
        let mut last = 1.0;
        for _ in 0..10_000 {
            last = chain.filter_frame(&frame(1.0)).unwrap().channels[0];
        }
        assert!(last.abs() < 1e-9, "{last}");
    }

    #[test]
    fn notch_bank_counts_harmonics_below_nyquist() {
        let chain = design_notch_bank(2000.0, 50.0, 30.0).unwrap();
        assert_eq!(chain.sections().len(), 19);
        assert!(chain.is_stable());
        // 1000 Hz is exactly Nyquist and must not get a section.
        let chain = design_notch_bank(2100.0, 50.0, 30.0).unwrap();
        assert_eq!(chain.sections().len(), 20);
        assert!(matches!(
            design_notch_bank(2000.0, 0.0, 30.0),
            Err(Error::InvalidBase(_))
        ));
        assert!(matches!(
            design_notch_bank(2000.0, -50.0, 30.0),
            Err(Error::InvalidBase(_))
        ));
    }

    #[test]
    fn notch_gains() {
        let chain = design_notch_bank(2000.0, 50.0, 30.0).unwrap();
        for k in 1..20 {
            let f = 50.0 * k as f64;
            assert!(chain.gain_db(f) <= -30.0, "{f} Hz: {}", chain.gain_db(f));
            if k < 19 {
                let mid = f + 25.0;
                assert!(chain.gain_db(mid) >= -3.0, "{mid} Hz: {}", chain.gain_db(mid));
            }
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let mut chain = design_bandpass(2000.0, 20.0, 200.0, 4).unwrap();
        for _ in 0..100 {
            assert_eq!(chain.filter_frame(&frame(0.0)).unwrap().channels, [0.0, 0.0]);
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let mut chain = design_bandpass(2000.0, 20.0, 200.0, 4).unwrap();
        let mut three = [0.0; 3];
        assert!(matches!(
            chain.process(&mut three),
            Err(Error::ChannelMismatch { expected: 2, got: 3 })
        ));
        let mut mono = design_notch_bank(2000.0, 50.0, 30.0).unwrap().with_channels(1);
        assert!(mono.process(&mut [1.0]).is_ok());
    }

    #[test]
    fn cascade_requires_same_rate() {
        let a = design_bandpass(2000.0, 20.0, 200.0, 4).unwrap();
        let b = design_notch_bank(1000.0, 50.0, 30.0).unwrap();
        assert!(a.clone().then(b).is_err());
        let c = design_notch_bank(2000.0, 50.0, 30.0).unwrap();
        assert_eq!(a.then(c).unwrap().sections().len(), 21);
    }

    #[test]
    fn json_round_trip_drops_state() {
        let mut chain = design_bandpass(2000.0, 20.0, 200.0, 4).unwrap();
        chain.filter_frame(&frame(1.0)).unwrap();
        let json = serde_json::to_string(&chain).unwrap();
        assert!(json.contains("\"sample_rate\":2000.0"));
        let mut back: FilterChain = serde_json::from_str(&json).unwrap();
        assert_eq!(back.sections(), chain.sections());
        let mut fresh = design_bandpass(2000.0, 20.0, 200.0, 4).unwrap();
        assert_eq!(
            back.filter_frame(&frame(1.0)).unwrap().channels,
            fresh.filter_frame(&frame(1.0)).unwrap().channels
        );
    }
}
