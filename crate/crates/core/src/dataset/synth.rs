//! Synthetic frame logs shaped like the in-home study.
//!
//! Labels come from an alternating renewal process: disengaged stretches are
//! log-normal around `ds_duration_median_s`, and engaged stretches fill the
//! rest of each session so that the session's engaged fraction equals its
//! target rate exactly. Target rates drift linearly across sessions
//! (`trend_slope`) and carry a zero-mean per-participant offset.
//!
//! Features are drawn from state-conditioned distributions (wider noise while
//! disengaged) on top of per-participant shifts and per-session drift, with
//! AR(1) frame noise so that one-second medians do not wash the noise out.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    FeatureSchema, FrameRecord, FrameTable, KeyFeature, Modality, SessionFrames, SessionKey,
};
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseScales {
    pub visual: f64,
    pub audio: f64,
    pub game: f64,
}

impl Default for NoiseScales {
    fn default() -> Self {
        NoiseScales {
            visual: 1.0,
            audio: 1.0,
            game: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub participants: usize,
    pub sessions_per_participant: usize,
    pub session_length_s: f64,
    pub frame_rate_hz: f64,
    /// Mean engaged fraction over all sessions.
    pub engagement_rate: f64,
    pub ds_duration_median_s: f64,
    /// Log-scale spread of stretch durations.
    pub duration_sigma: f64,
    /// Change in target engagement rate per session.
    pub trend_slope: f64,
    /// Spread of per-participant engagement offsets (centred to zero mean).
    pub participant_rate_sd: f64,
    pub noise: NoiseScales,
    /// Separation between engaged and disengaged feature means, in noise units.
    pub signal: f64,
    /// Noise multiplier while disengaged.
    pub disengaged_noise_ratio: f64,
    pub participant_shift: f64,
    pub session_drift: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            participants: 7,
            sessions_per_participant: 4,
            session_length_s: 600.0,
            frame_rate_hz: 30.0,
            engagement_rate: 0.65,
            ds_duration_median_s: 4.0,
            duration_sigma: 0.9,
            trend_slope: -0.06,
            participant_rate_sd: 0.08,
            noise: NoiseScales::default(),
            signal: 0.9,
            disengaged_noise_ratio: 1.05,
            participant_shift: 0.8,
            session_drift: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.participants == 0 || self.sessions_per_participant == 0 {
            return bad("need at least one participant and one session");
        }
        if !(self.engagement_rate > 0.0 && self.engagement_rate < 1.0) {
            return bad("engagement_rate must lie in (0, 1)");
        }
        if !(self.session_length_s > 0.0
            && self.ds_duration_median_s > 0.0
            && self.frame_rate_hz > 0.0
            && self.duration_sigma > 0.0)
        {
            return bad("durations, frame rate and sigma must be positive");
        }
        if !(self.participant_rate_sd >= 0.0
            && self.signal >= 0.0
            && self.disengaged_noise_ratio > 0.0
            && self.participant_shift >= 0.0
            && self.session_drift >= 0.0)
        {
            return bad("scales must be non-negative");
        }
        Ok(())
    }

    /// Target engaged fraction for every (participant, session).
    pub fn session_rates(&self) -> Vec<Vec<f64>> {
        let mut rng = substream(self.seed, "synth/participant-rate", 0);
        let offsets: Vec<f64> = (0..self.participants)
            .map(|_| self.participant_rate_sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mean = offsets.iter().sum::<f64>() / offsets.len() as f64;
        let centre = (self.sessions_per_participant as f64 - 1.0) / 2.0;
        offsets
            .iter()
            .map(|o| {
                (0..self.sessions_per_participant)
                    .map(|s| {
                        let r = self.engagement_rate
                            + (o - mean)
                            + self.trend_slope * (s as f64 - centre);
                        r.clamp(0.05, 0.95)
                    })
                    .collect()
            })
            .collect()
    }
}

/// Generates a table over [`FeatureSchema::study_default`]. Bit-identical for
/// identical configs.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<FrameTable> {
    cfg.validate()?;
    let schema = FeatureSchema::study_default();
    let plan = ColumnPlan::new(&schema, cfg);
    let rates = cfg.session_rates();

    let mut sessions = Vec::with_capacity(cfg.participants * cfg.sessions_per_participant);
    for (p, participant_rates) in rates.iter().enumerate() {
        let mut prng = substream(cfg.seed, "synth/participant", p as u64);
        let shifts: Vec<f64> = (0..plan.width())
            .map(|_| cfg.participant_shift * prng.sample::<f64, _>(StandardNormal))
            .collect();
        for (s, &rate) in participant_rates.iter().enumerate() {
            let stream = (p * cfg.sessions_per_participant + s) as u64;
            let mut rng = substream(cfg.seed, "synth/session", stream);
            let labels = label_stream(cfg, rate, &mut rng);
            let frames = plan.render(cfg, &labels, &shifts, &mut rng);
            sessions.push(SessionFrames {
                key: SessionKey::new(format!("P{}", p + 1), format!("S{:02}", s + 1)),
                session_index: s,
                frames,
            });
        }
    }
    FrameTable::new(schema, sessions)
}

fn n_frames(cfg: &SynthConfig) -> usize {
    (cfg.session_length_s * cfg.frame_rate_hz).round() as usize
}

/// Per-frame labels whose engaged fraction is `rate` up to frame rounding.
fn label_stream(cfg: &SynthConfig, rate: f64, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let len = cfg.session_length_s;
    let ds_dist =
        LogNormal::new(cfg.ds_duration_median_s.ln(), cfg.duration_sigma).expect("validated sigma");
    let es_weight = LogNormal::new(0.0, cfg.duration_sigma).expect("validated sigma");

    let ds_total = (1.0 - rate) * len;
    let mut ds = Vec::new();
    let mut acc = 0.0;
    while acc < ds_total {
        let d: f64 = ds_dist.sample(rng);
        let d = d.min(ds_total - acc);
        ds.push(d);
        acc += d;
    }
    let weights: Vec<f64> = (0..=ds.len()).map(|_| es_weight.sample(rng)).collect();
    let wsum: f64 = weights.iter().sum();

    // ES, DS, ES, ..., DS, ES boundaries.
    let mut bounds = Vec::with_capacity(2 * ds.len() + 1);
    let mut t = 0.0;
    for (i, w) in weights.iter().enumerate() {
        t += rate * len * w / wsum;
        bounds.push((t, 1u8));
        if let Some(d) = ds.get(i) {
            t += d;
            bounds.push((t, 0u8));
        }
    }

    let n = n_frames(cfg);
    let mut labels = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let tk = k as f64 / cfg.frame_rate_hz;
        while seg + 1 < bounds.len() && tk >= bounds[seg].0 {
            seg += 1;
        }
        labels.push(bounds[seg].1);
    }
    labels
}

#[derive(Debug, Clone, Copy)]
enum Generator {
    Latent { signal: f64, noise: f64 },
    FaceConfidence,
    FaceSuccess,
    FaceLost,
    People,
    SessionElapsed,
    GameElapsed,
    GamesPlayed,
    GameType,
    Challenge,
    IncorrectGame,
    IncorrectSession,
    RobotSpeech,
}

struct ColumnPlan {
    gens: Vec<Generator>,
}

impl ColumnPlan {
    fn new(schema: &FeatureSchema, cfg: &SynthConfig) -> Self {
        let gens = schema
            .feature_columns()
            .map(|c| match c.name.as_str() {
                "face_confidence" => Generator::FaceConfidence,
                "face_success" => Generator::FaceSuccess,
                "face_lost_elapsed_s" => Generator::FaceLost,
                "people_count" => Generator::People,
                "session_elapsed_s" => Generator::SessionElapsed,
                "game_elapsed_s" => Generator::GameElapsed,
                "games_played" => Generator::GamesPlayed,
                "game_type" => Generator::GameType,
                "challenge_level" => Generator::Challenge,
                "incorrect_game" => Generator::IncorrectGame,
                "incorrect_session" => Generator::IncorrectSession,
                "robot_spoke_elapsed_s" => Generator::RobotSpeech,
                _ => {
                    let (signal, noise) = match (c.modality, c.key) {
                        (Modality::Visual, Some(KeyFeature::GazeDirection))
                        | (Modality::Visual, Some(KeyFeature::CameraDistance)) => {
                            (1.0, cfg.noise.visual)
                        }
                        (Modality::Visual, _) => (0.35, cfg.noise.visual),
                        (Modality::Audio, _) => (0.15, cfg.noise.audio),
                        _ => (0.1, cfg.noise.game),
                    };
                    Generator::Latent {
                        signal: signal * cfg.signal,
                        noise,
                    }
                }
            })
            .collect();
        ColumnPlan { gens }
    }

    fn width(&self) -> usize {
        self.gens.len()
    }

    fn render(
        &self,
        cfg: &SynthConfig,
        labels: &[u8],
        shifts: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Vec<FrameRecord> {
        let fr = cfg.frame_rate_hz;
        let dt = 1.0 / fr;
        let width = self.width();
        let drift: Vec<f64> = (0..width)
            .map(|_| cfg.session_drift * rng.sample::<f64, _>(StandardNormal))
            .collect();

        // AR(1) with a two-second correlation time.
        let phi = (-dt / 2.0f64).exp();
        let innov = (1.0 - phi * phi).sqrt();
        // One extra channel drives face confidence.
        let mut ar: Vec<f64> = (0..=width).map(|_| rng.sample(StandardNormal)).collect();

        let speech_gap = rand_distr::Exp::new(1.0_f64 / 40.0).expect("positive rate");
        let game_len = rand_distr::Uniform::new(60.0_f64, 180.0).expect("valid range");
        let mut next_speech = rng.random_range(0.0..30.0);
        let mut last_speech = -rng.random_range(0.0..30.0);
        let mut game_start = 0.0;
        let mut game_end: f64 = game_len.sample(rng);
        let mut game_idx = 0usize;
        let mut people = 1.0;
        let mut incorrect_game = 0.0;
        let mut incorrect_session = 0.0;
        let mut last_face = 0.0;
        let conf_noise = Normal::new(0.0, 0.03).expect("positive sd");

        let mut frames = Vec::with_capacity(labels.len());
        for (k, &y) in labels.iter().enumerate() {
            let t = k as f64 * dt;
            let engaged = y == 1;
            for z in ar.iter_mut() {
                *z = phi * *z + innov * rng.sample::<f64, _>(StandardNormal);
            }

            while t >= next_speech {
                last_speech = next_speech;
                next_speech += speech_gap.sample(rng).max(1.0);
            }
            if t >= game_end {
                game_idx += 1;
                game_start = game_end;
                game_end += game_len.sample(rng);
                incorrect_game = 0.0;
            }
            // People entering or leaving the room, more often during disengagement.
            if rng.random::<f64>() < 0.05 * dt {
                let p_alone = if engaged { 0.8 } else { 0.45 };
                people = if rng.random::<f64>() < p_alone {
                    1.0
                } else if rng.random::<f64>() < 0.7 {
                    2.0
                } else {
                    3.0
                };
            }
            let err_rate = if engaged { 0.01 } else { 0.04 };
            if rng.random::<f64>() < err_rate * dt {
                incorrect_game += 1.0;
                incorrect_session += 1.0;
            }
            let noise_mul = if engaged {
                1.0
            } else {
                cfg.disengaged_noise_ratio
            };
            let conf_mean = if engaged {
                0.82
            } else {
                0.82 - 0.12 * cfg.signal
            };
            let conf = (conf_mean + 0.1 * noise_mul * ar[width] + conf_noise.sample(rng)
                - if rng.random::<f64>() < 0.02 { 0.5 } else { 0.0 })
            .clamp(0.0, 1.0);
            if conf >= 0.5 {
                last_face = t;
            }

            let features = self
                .gens
                .iter()
                .enumerate()
                .map(|(j, g)| match *g {
                    Generator::Latent { signal, noise } => {
                        let mean = if engaged { 0.5 * signal } else { -0.5 * signal };
                        shifts[j] + drift[j] + mean + noise * noise_mul * ar[j]
                    }
                    Generator::FaceConfidence => conf,
                    Generator::FaceSuccess => f64::from(u8::from(conf >= 0.5)),
                    Generator::FaceLost => t - last_face,
                    Generator::People => people,
                    Generator::SessionElapsed => t,
                    Generator::GameElapsed => t - game_start,
                    Generator::GamesPlayed => (game_idx + 1) as f64,
                    Generator::GameType => (game_idx % 4) as f64,
                    Generator::Challenge => (1 + (game_idx / 2).min(4)) as f64,
                    Generator::IncorrectGame => incorrect_game,
                    Generator::IncorrectSession => incorrect_session,
                    Generator::RobotSpeech => t - last_speech,
                })
                .collect();
            frames.push(FrameRecord {
                timestamp_s: t,
                features,
                engaged: y,
            });
        }
        frames
    }
}
