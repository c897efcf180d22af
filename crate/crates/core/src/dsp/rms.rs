use crate::dsp::{EmgFrame, CHANNELS};
use crate::error::{Error, Result};

/// Root of the mean of squares, `sqrt(sum(x^2) / n)`. Zero for an empty slice.
pub fn rms(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64).sqrt()
}

/// Per-channel RMS over the trailing window, stamped with the time of the
/// newest sample in the window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsFeatures {
    pub t: f64,
    pub rms: [f64; CHANNELS],
}

/// Sliding RMS with a fixed length and hop, both in samples.
///
/// Emits nothing until one full window has been seen, then once every `hop`
/// samples. The sum at each emission runs oldest to newest, so the result is
/// bit-identical to [`rms`] over the same samples.
#[derive(Debug, Clone)]
pub struct RmsWindow {
    length: usize,
    hop: usize,
    buffer: Vec<[f64; CHANNELS]>,
    seen: u64,
}

impl RmsWindow {
    pub fn from_samples(length: usize, hop: usize) -> Result<Self> {
        if length == 0 || hop == 0 {
            return Err(Error::Config(format!(
                "RMS window length and hop must be >= 1 sample (got {length}, {hop})"
            )));
        }
        Ok(RmsWindow {
            length,
            hop,
            buffer: vec![[0.0; CHANNELS]; length],
            seen: 0,
        })
    }

    /// Window and hop given in seconds, rounded to whole samples.
    pub fn new(sample_rate: f64, length_s: f64, hop_s: f64) -> Result<Self> {
        Self::from_samples(
            (length_s * sample_rate).round() as usize,
            (hop_s * sample_rate).round() as usize,
        )
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn is_warm(&self) -> bool {
        self.seen >= self.length as u64
    }

    pub fn reset(&mut self) {
        self.seen = 0;
        self.buffer.iter_mut().for_each(|b| *b = [0.0; CHANNELS]);
    }

    pub fn update(&mut self, frame: &EmgFrame) -> Option<RmsFeatures> {
        let slot = (self.seen % self.length as u64) as usize;
        self.buffer[slot] = frame.channels;
        self.seen += 1;
        if self.seen < self.length as u64 || (self.seen - self.length as u64) % self.hop as u64 != 0
        {
            return None;
        }
        let oldest = (self.seen % self.length as u64) as usize;
        let mut sums = [0.0; CHANNELS];
        for i in 0..self.length {
            let s = &self.buffer[(oldest + i) % self.length];
            for ch in 0..CHANNELS {
                sums[ch] += s[ch] * s[ch];
            }
        }
        let n = self.length as f64;
        Some(RmsFeatures {
            t: frame.t,
            rms: sums.map(|s| (s / n).sqrt()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feed(w: &mut RmsWindow, xs: &[f64]) -> Vec<RmsFeatures> {
        xs.iter()
            .enumerate()
            .filter_map(|(i, &x)| {
                w.update(&EmgFrame {
                    t: i as f64,
                    channels: [x, -x],
                })
            })
            .collect()
    }

    #[test]
    fn constant_window() {
        let mut w = RmsWindow::from_samples(10, 10).unwrap();
        let out = feed(&mut w, &[0.5; 10]);
        assert_eq!(out.len(), 1);
        assert!((out[0].rms[0] - 0.5).abs() < 1e-15);
        assert!((out[0].rms[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn three_four() {
        let mut w = RmsWindow::from_samples(2, 1).unwrap();
        let out = feed(&mut w, &[3.0, 4.0]);
        assert_eq!(out.len(), 1);
        assert!((out[0].rms[0] - 3.5355339059327378).abs() < 1e-12);
    }

    #[test]
    fn zeros() {
        let mut w = RmsWindow::from_samples(4, 2).unwrap();
        let out = feed(&mut w, &[0.0; 8]);
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|f| f.rms == [0.0, 0.0]));
    }

    #[test]
    fn warm_up_then_every_hop() {
        let mut w = RmsWindow::from_samples(5, 2).unwrap();
        let out = feed(&mut w, &[1.0; 12]);
        // Emissions after samples 5, 7, 9, 11 (1-based).
        let ts: Vec<f64> = out.iter().map(|f| f.t).collect();
        assert_eq!(ts, vec![4.0, 6.0, 8.0, 10.0]);
        assert!(w.is_warm());
        w.reset();
        assert!(!w.is_warm());
    }

    #[test]
    fn seconds_constructor() {
        let w = RmsWindow::new(2000.0, 0.2, 0.02).unwrap();
        assert_eq!((w.length(), w.hop()), (400, 40));
        assert!(RmsWindow::new(2000.0, 0.0, 0.02).is_err());
    }

    #[test]
    fn batch_helper() {
        assert_eq!(rms(&[]), 0.0);
        assert!((rms(&[3.0, 4.0]) - 12.5f64.sqrt()).abs() < 1e-15);
    }
}
