use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::{design_bandpass, EmgFrame, FilterChain};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubjectConfig {
    /// Curvature of the activation-to-force law.
    pub gamma: f64,
    /// Force at full activation, N.
    pub max_force: f64,
    /// Extensor amplitude relative to flexor.
    pub cocontraction: f64,
    /// EMG amplitude at rest, V.
    pub emg_floor: f64,
    /// EMG amplitude added at full activation, V.
    pub emg_scale: f64,
    pub emg_exponent: f64,
    /// Amplitude of the power-line tone on both channels, V.
    pub interference: f64,
    pub interference_freq: f64,
    /// EMG noise band, Hz.
    pub band: [f64; 2],
    /// First-order lag between activation and fingertip force, s.
    pub force_lag: f64,
    /// Force sensor noise as a fraction of `max_force`.
    pub force_noise: f64,
}

impl Default for SubjectConfig {
    fn default() -> Self {
        SubjectConfig {
            gamma: 1.8,
            max_force: 10.0,
            cocontraction: 0.35,
            emg_floor: 0.02,
            emg_scale: 1.0,
            emg_exponent: 0.9,
            interference: 0.05,
            interference_freq: 50.0,
            band: [20.0, 200.0],
            force_lag: 0.15,
            force_noise: 0.005,
        }
    }
}

/// Activation to EMG and fingertip force.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSubject {
    pub config: SubjectConfig,
}

fn check_activation(a: f64) -> Result<()> {
    if (0.0..=1.0).contains(&a) {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            value: a,
            low: 0.0,
            high: 1.0,
        })
    }
}

impl SyntheticSubject {
    pub fn new(config: SubjectConfig) -> Self {
        SyntheticSubject { config }
    }

    /// A subject with seeded individual curvature, co-contraction and
    /// strength.
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SyntheticSubject::new(SubjectConfig {
            gamma: rng.random_range(2.2..3.2),
            cocontraction: rng.random_range(0.25..0.45),
            max_force: rng.random_range(8.0..16.0),
            ..SubjectConfig::default()
        })
    }

    /// `F_max (exp(γa) - 1) / (exp(γ) - 1)`.
    pub fn subject_force(&self, a: f64) -> Result<f64> {
        check_activation(a)?;
        Ok(self.config.max_force * self.force_fraction(a))
    }

    fn force_fraction(&self, a: f64) -> f64 {
        let g = self.config.gamma;
        if g == 0.0 {
            a
        } else {
            (g * a).exp_m1() / g.exp_m1()
        }
    }

    /// Activation producing `fraction` of the maximum force.
    pub fn activation_for(&self, fraction: f64) -> Result<f64> {
        check_activation(fraction)?;
        let g = self.config.gamma;
        Ok(if g == 0.0 {
            fraction
        } else {
            (fraction * g.exp_m1()).ln_1p() / g
        })
    }

    /// EMG envelope amplitude of the flexor at activation `a`.
    pub fn emg_amplitude(&self, a: f64) -> f64 {
        self.config.emg_floor + self.config.emg_scale * a.powf(self.config.emg_exponent)
    }
}

/// Streaming EMG source: unit-RMS band-limited Gaussian noise per channel
/// scaled by the activation envelope, plus a mains tone.
#[derive(Debug, Clone)]
pub struct EmgGenerator {
    subject: SyntheticSubject,
    sample_rate: f64,
    shaping: FilterChain,
    noise_gain: f64,
    phase: f64,
    rng: ChaCha8Rng,
    n: u64,
}

impl EmgGenerator {
    pub fn new(subject: &SyntheticSubject, sample_rate: f64, seed: u64) -> Result<Self> {
        let [low, high] = subject.config.band;
        let shaping = design_bandpass(sample_rate, low, high, 8)?;
        // RMS of filtered unit white noise is the impulse-response energy.
        let mut probe = shaping.clone().with_channels(1);
        let mut energy = 0.0;
        for i in 0..(20.0 * sample_rate) as usize {
            let h = probe.filter_sample(0, if i == 0 { 1.0 } else { 0.0 });
            energy += h * h;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        Ok(EmgGenerator {
            subject: *subject,
            sample_rate,
            shaping,
            noise_gain: 1.0 / energy.sqrt(),
            phase,
            rng,
            n: 0,
        })
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Next frame at activation `a`.
    pub fn next_frame(&mut self, a: f64) -> Result<EmgFrame> {
        check_activation(a)?;
        let t = self.n as f64 / self.sample_rate;
        self.n += 1;
        let cfg = &self.subject.config;
        let amp = self.subject.emg_amplitude(a);
        let hum = cfg.interference
            * (std::f64::consts::TAU * cfg.interference_freq * t + self.phase).sin();
        let mut channels = [0.0; 2];
        for (ch, scale) in [(0, 1.0), (1, cfg.cocontraction)] {
            let w: f64 = StandardNormal.sample(&mut self.rng);
            let band = self.shaping.filter_sample(ch, w) * self.noise_gain;
            channels[ch] = scale * amp * band + hum;
        }
        Ok(EmgFrame { t, channels })
    }
}

/// Batch form of [`EmgGenerator`]: one frame per activation sample.
pub fn emg_generate(
    subject: &SyntheticSubject,
    activation: &[f64],
    sample_rate: f64,
    seed: u64,
) -> Result<Vec<EmgFrame>> {
    let mut gen = EmgGenerator::new(subject, sample_rate, seed)?;
    activation.iter().map(|&a| gen.next_frame(a)).collect()
}

/// Fingertip force of the subject: the force law followed by a first-order
/// lag, read through a noisy force sensor.
#[derive(Debug, Clone)]
pub struct ForceResponse {
    subject: SyntheticSubject,
    alpha: f64,
    state: f64,
    rng: ChaCha8Rng,
}

impl ForceResponse {
    pub fn new(subject: &SyntheticSubject, sample_rate: f64, seed: u64) -> Self {
        let lag = subject.config.force_lag;
        let alpha = if lag > 0.0 {
            -(-1.0 / (lag * sample_rate)).exp_m1()
        } else {
            1.0
        };
        ForceResponse {
            subject: *subject,
            alpha,
            state: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Returns `(true force, measured force)` in N.
    pub fn next(&mut self, a: f64) -> Result<(f64, f64)> {
        let target = self.subject.subject_force(a)?;
        self.state += self.alpha * (target - self.state);
        let sigma = self.subject.config.force_noise * self.subject.config.max_force;
        let noise: f64 = StandardNormal.sample(&mut self.rng);
        Ok((self.state, (self.state + sigma * noise).max(0.0)))
    }
}
