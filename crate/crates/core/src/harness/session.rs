//! Synthetic recording sessions: the scripted operator, the MVC stage and
//! pattern trials, and their conversion into training datasets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dsp::{normalize, EmgFrame, EmgProcessor, NormalizationScale, SignalConfig, NORMALIZED_MAX};
use crate::error::{Error, Result};
use crate::estimators::Dataset;
use crate::harness::config::{ExperimentConfig, HumanConfig};
use crate::plant::{pattern_generate, EmgGenerator, ForcePattern, ForceResponse, SyntheticSubject};

/// Independent, reproducible seed for one random stream of one subject.
pub fn derive_seed(base: u64, subject: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over a mix of the three inputs.
    let mut z = base
        .wrapping_add(subject.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(stream.wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Random-stream identifiers used with [`derive_seed`].
pub mod stream {
    pub const SUBJECT: u64 = 0;
    pub const MVC: u64 = 1;
    pub const TRIAL: u64 = 10;
    pub const PATTERN: u64 = 0;
    pub const EMG: u64 = 1;
    pub const FORCE: u64 = 2;
    pub const HUMAN: u64 = 3;
    pub const MODEL: u64 = 100;
    pub const CONTROL: u64 = 200;
    pub const PLANT: u64 = 300;
    pub const CALIBRATION: u64 = 400;
}

pub fn subject_for(cfg: &ExperimentConfig, id: u64) -> SyntheticSubject {
    SyntheticSubject::sample(derive_seed(cfg.seed, id, stream::SUBJECT))
}

/// Operator tracking a force target: the activation needed for the target
/// followed by a first-order lag, plus slowly varying jitter.
#[derive(Debug, Clone)]
pub struct ScriptedHuman {
    subject: SyntheticSubject,
    lag_alpha: f64,
    ou_decay: f64,
    ou_kick: f64,
    lagged: f64,
    jitter: f64,
    rng: ChaCha8Rng,
}

impl ScriptedHuman {
    pub fn new(subject: &SyntheticSubject, cfg: &HumanConfig, dt: f64, seed: u64) -> Self {
        let lag_alpha = if cfg.tau > 0.0 { -(-dt / cfg.tau).exp_m1() } else { 1.0 };
        let ou_decay = (-dt / cfg.jitter_tau).exp();
        ScriptedHuman {
            subject: *subject,
            lag_alpha,
            ou_decay,
            ou_kick: cfg.jitter * (1.0 - ou_decay * ou_decay).sqrt(),
            lagged: 0.0,
            jitter: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Activation for one step towards `target_fraction` of maximum force.
    pub fn step(&mut self, target_fraction: f64) -> Result<f64> {
        let wanted = self.subject.activation_for(target_fraction.clamp(0.0, 1.0))?;
        self.lagged += self.lag_alpha * (wanted - self.lagged);
        let w: f64 = StandardNormal.sample(&mut self.rng);
        self.jitter = self.ou_decay * self.jitter + self.ou_kick * w;
        Ok((self.lagged + self.jitter).clamp(0.0, 1.0))
    }
}

/// Raw EMG and fingertip force of one stage, sampled together.
#[derive(Debug, Clone)]
pub struct Recording {
    pub frames: Vec<EmgFrame>,
    /// Force-sensor reading, N.
    pub force: Vec<f64>,
    pub activation: Vec<f64>,
}

/// Drives the subject with the operator tracking `target(t)` (fraction of
/// maximum force) for `duration` seconds.
pub fn record_stage(
    cfg: &ExperimentConfig,
    subject: &SyntheticSubject,
    target: impl Fn(f64) -> f64,
    duration: f64,
    seed_of: impl Fn(u64) -> u64,
) -> Result<Recording> {
    let fs = cfg.offline_signal.sample_rate;
    let n = (duration * fs).round() as usize;
    let mut human = ScriptedHuman::new(subject, &cfg.human, 1.0 / fs, seed_of(stream::HUMAN));
    let mut emg = EmgGenerator::new(subject, fs, seed_of(stream::EMG))?;
    let mut force = ForceResponse::new(subject, fs, seed_of(stream::FORCE));
    let mut rec = Recording {
        frames: Vec::with_capacity(n),
        force: Vec::with_capacity(n),
        activation: Vec::with_capacity(n),
    };
    for i in 0..n {
        let a = human.step(target(i as f64 / fs))?;
        rec.frames.push(emg.next_frame(a)?);
        rec.force.push(force.next(a)?.1);
        rec.activation.push(a);
    }
    Ok(rec)
}

/// Three 5 s maximal contractions separated by rest, scaled to the stage
/// length.
pub fn mvc_target(duration: f64) -> impl Fn(f64) -> f64 {
    move |t| {
        let phase = (t / duration * 6.0).floor() as i64;
        if phase % 2 == 1 {
            1.0
        } else {
            0.0
        }
    }
}

/// Pattern levels as a fraction of maximum force, after a rest lead-in.
pub fn pattern_target(pattern: &ForcePattern, lead_in: f64) -> impl Fn(f64) -> f64 + '_ {
    move |t| if t < lead_in { 0.0 } else { pattern.value_at(t - lead_in) }
}

/// Normalization maxima from an MVC recording processed with `signal`.
pub fn mvc_scale(recording: &Recording, signal: &SignalConfig) -> Result<NormalizationScale> {
    let features = EmgProcessor::new(signal)?.run(&recording.frames)?;
    let mut max_rms = [0.0f64; 2];
    for f in &features {
        max_rms[0] = max_rms[0].max(f.rms[0]);
        max_rms[1] = max_rms[1].max(f.rms[1]);
    }
    let max_force = recording.force.iter().copied().fold(0.0, f64::max);
    let scale = NormalizationScale { max_rms, max_force };
    scale.validate()?;
    Ok(scale)
}

/// Features of a recording paired with the normalized force at each
/// window's trailing edge.
pub fn to_dataset(
    recording: &Recording,
    signal: &SignalConfig,
    scale: &NormalizationScale,
    subject: u64,
    trial: &str,
) -> Result<Dataset> {
    let mut proc = EmgProcessor::new(signal)?;
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for (i, frame) in recording.frames.iter().enumerate() {
        if let Some(r) = proc.push(frame)? {
            features.push(normalize(&r, scale)?);
            targets.push((recording.force[i] / scale.max_force).clamp(0.0, NORMALIZED_MAX));
        }
    }
    Dataset::new(subject, trial, features, targets)
}

/// MVC scale plus train and test datasets for one subject.
#[derive(Debug, Clone)]
pub struct SubjectData {
    pub id: u64,
    pub subject: SyntheticSubject,
    pub scale: NormalizationScale,
    pub train: Dataset,
    pub test: Option<Dataset>,
}

/// Runs the MVC stage and `trials` pattern trials for subject `id`.
pub fn subject_data(cfg: &ExperimentConfig, id: u64, signal: &SignalConfig, trials: usize) -> Result<SubjectData> {
    if trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    let subject = subject_for(cfg, id);
    let p = &cfg.protocol;
    let mvc_seed = |s: u64| derive_seed(cfg.seed, id, stream::MVC * 16 + s);
    let mvc = record_stage(cfg, &subject, mvc_target(p.mvc_duration), p.mvc_duration, mvc_seed)?;
    let scale = mvc_scale(&mvc, signal)?;
    let mut sets = Vec::with_capacity(trials);
    for k in 0..trials as u64 {
        let seed = |s: u64| derive_seed(cfg.seed, id, (stream::TRIAL + k) * 16 + s);
        let pattern = pattern_generate(1.0, p.pattern_duration, p.hold, seed(stream::PATTERN))?;
        let rec = record_stage(
            cfg,
            &subject,
            pattern_target(&pattern, p.lead_in),
            p.lead_in + p.pattern_duration,
            seed,
        )?;
        let name = if k == 0 { "train".to_string() } else { format!("test{k}") };
        sets.push(to_dataset(&rec, signal, &scale, id, &name)?);
    }
    let mut sets = sets.into_iter();
    let train = sets.next().expect("one trial");
    Ok(SubjectData {
        id,
        subject,
        scale,
        train,
        test: sets.next(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::SubjectConfig;

    #[test]
    fn seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for s in 0..20 {
            for k in 0..50 {
                assert!(seen.insert(derive_seed(1, s, k)));
            }
        }
        assert_ne!(derive_seed(1, 0, 0), derive_seed(2, 0, 0));
    }

    #[test]
    fn human_reaches_target_with_lag() {
        let subject = SyntheticSubject::new(SubjectConfig::default());
        let cfg = HumanConfig {
            jitter: 0.0,
            ..HumanConfig::default()
        };
        let mut h = ScriptedHuman::new(&subject, &cfg, 0.01, 0);
        let goal = subject.activation_for(0.5).unwrap();
        let a30: Vec<f64> = (0..30).map(|_| h.step(0.5).unwrap()).collect();
        assert!((a30[29] / goal - (1.0 - (-1.0f64).exp())).abs() < 1e-9);
        for _ in 0..1000 {
            h.step(0.5).unwrap();
        }
        assert!((h.step(0.5).unwrap() - goal).abs() < 1e-9);
    }

    #[test]
    fn mvc_shape() {
        let f = mvc_target(30.0);
        assert_eq!([f(0.0), f(4.9), f(5.0), f(9.9), f(10.0), f(27.0)], [0.0, 0.0, 1.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn short_session_builds_datasets() {
        let mut cfg = ExperimentConfig::default();
        cfg.protocol.mvc_duration = 6.0;
        cfg.protocol.pattern_duration = 12.0;
        cfg.protocol.hold = 3.0;
        cfg.protocol.lead_in = 1.0;
        let d = subject_data(&cfg, 0, &cfg.offline_signal.clone(), 2).unwrap();
        // 13 s at a 0.08 s hop after one 0.5 s window.
        assert_eq!(d.train.len(), ((13.0 - 0.5) / 0.08) as usize + 1);
        assert!(d.test.is_some());
        assert!(d.train.targets.iter().any(|&y| y > 0.2));
        assert!(d.train.features.iter().all(|f| f.flexor <= NORMALIZED_MAX));
        let again = subject_data(&cfg, 0, &cfg.offline_signal.clone(), 2).unwrap();
        assert_eq!(again.train, d.train);
    }
}
