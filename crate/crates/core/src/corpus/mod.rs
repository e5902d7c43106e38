//! Deterministic synthetic corpus of severity-grouped speakers producing
//! isolated-word utterances, plus its line-delimited JSON manifest.

mod manifest;
pub mod synth;

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::logmel::frame_count;
use crate::frontend::Waveform;
use crate::io::derive_seed;

pub use manifest::{load_manifest, Alignment, Header, Manifest, Split, UtteranceRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// Group names, most severe first.
    pub groups: Vec<String>,
    pub speakers_per_group: usize,
    /// Speakers per group that contribute test data only.
    pub unseen_per_group: usize,
    pub train_utts_per_speaker: usize,
    pub test_utts_per_seen_speaker: usize,
    pub test_utts_per_unseen_speaker: usize,
    pub tokens: usize,
    pub mean_duration_secs: f64,
    pub sample_rate: u32,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            groups: ["VL", "L", "M", "H"].map(String::from).to_vec(),
            speakers_per_group: 4,
            unseen_per_group: 2,
            train_utts_per_speaker: 30,
            test_utts_per_seen_speaker: 10,
            test_utts_per_unseen_speaker: 12,
            tokens: 30,
            mean_duration_secs: 1.2,
            sample_rate: 16000,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if self.groups.len() < 2 {
            p.push("corpus needs at least two groups".to_string());
        }
        let mut seen = std::collections::BTreeSet::new();
        for g in &self.groups {
            if g.is_empty() || !g.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
                p.push(format!("group name {g:?} must be non-empty ASCII alphanumeric"));
            }
            if !seen.insert(g) {
                p.push(format!("group {g} listed twice"));
            }
        }
        if self.speakers_per_group < 2 {
            p.push("each group needs at least two speakers".into());
        }
        if self.unseen_per_group >= self.speakers_per_group {
            p.push("every group needs at least one training speaker".into());
        }
        if self.train_utts_per_speaker == 0 {
            p.push("train_utts_per_speaker must be positive".into());
        }
        if self.tokens < 2 {
            p.push("vocabulary needs at least two tokens".into());
        }
        if !(self.mean_duration_secs >= 0.3 && self.mean_duration_secs <= 10.0) {
            p.push("mean_duration_secs must lie in [0.3, 10]".into());
        }
        if !crate::frontend::wav::SUPPORTED_RATES.contains(&self.sample_rate) {
            p.push(format!("unsupported sample rate {}", self.sample_rate));
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub id: String,
    pub group: String,
    /// 0 for the most severe group.
    pub group_index: usize,
    /// In (0, 1); larger is more severe. Groups occupy disjoint intervals.
    pub severity: f64,
    pub tilt_db_per_octave: f64,
    pub formant_shift: f64,
    pub jitter: f64,
    pub tempo: f64,
    pub f0_hz: f64,
    pub resonance_hz: f64,
    pub resonance_gain: f64,
    pub seen: bool,
}

impl SpeakerProfile {
    /// Size of the formant displacement, `|ln shift|`.
    pub fn distortion(&self) -> f64 {
        self.formant_shift.ln().abs()
    }
}

/// A word: two or three steady vowel targets `[F1, F2, F3]` in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenTemplate {
    pub id: usize,
    pub formants: Vec<[f64; 3]>,
}

const F1_RANGE: (f64, f64) = (300.0, 850.0);
const F2_RANGE: (f64, f64) = (900.0, 2400.0);
const MIN_VOWEL_DISTANCE: f64 = 0.08;

/// Vocabulary whose vowel targets are pairwise separated in log-formant space.
pub fn make_vocabulary(tokens: usize, seed: u64) -> Vec<TokenTemplate> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "vocabulary"));
    let mut placed: Vec<(f64, f64)> = Vec::new();
    let mut out = Vec::with_capacity(tokens);
    for id in 0..tokens {
        let n = if rng.gen_bool(0.5) { 2 } else { 3 };
        let mut formants = Vec::with_capacity(n);
        for _ in 0..n {
            let mut best = (0.0, 0.0);
            let mut best_gap = f64::NEG_INFINITY;
            for _ in 0..200 {
                let c = (
                    rng.gen_range(F1_RANGE.0.ln()..F1_RANGE.1.ln()),
                    rng.gen_range(F2_RANGE.0.ln()..F2_RANGE.1.ln()),
                );
                let gap = placed
                    .iter()
                    .map(|p| ((p.0 - c.0).powi(2) + (p.1 - c.1).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min);
                if gap > best_gap {
                    best = c;
                    best_gap = gap;
                }
                if gap >= MIN_VOWEL_DISTANCE {
                    break;
                }
            }
            placed.push(best);
            formants.push([best.0.exp(), best.1.exp(), rng.gen_range(2500.0..2900.0)]);
        }
        out.push(TokenTemplate { id, formants });
    }
    out
}

/// Speaker profiles for every group. Distortion, jitter and spectral tilt
/// grow and tempo falls with severity.
pub fn make_profiles(cfg: &CorpusConfig, seed: u64) -> Result<Vec<SpeakerProfile>> {
    cfg.validate()?;
    let g = cfg.groups.len();
    let mut out = Vec::new();
    for (gi, name) in cfg.groups.iter().enumerate() {
        let sev_rank = (g - 1 - gi) as f64;
        for si in 0..cfg.speakers_per_group {
            let id = format!("{name}{si:02}");
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("speaker/{id}")));
            let severity = (sev_rank + 0.3 + 0.4 * rng.gen::<f64>()) / g as f64;
            let direction = if si % 2 == 0 { 1.0 } else { -1.0 };
            let formant_shift = (direction * (0.05 + 0.22 * severity)).exp();
            out.push(SpeakerProfile {
                group: name.clone(),
                group_index: gi,
                severity,
                tilt_db_per_octave: -(5.0 + 7.0 * severity),
                formant_shift,
                jitter: 0.005 + 0.05 * severity,
                tempo: 1.15 - 0.5 * severity,
                f0_hz: 150.0 * formant_shift.powf(1.5) * (1.0 + 0.08 * rng.gen_range(-1.0..1.0)),
                resonance_hz: 3300.0 * formant_shift,
                resonance_gain: 2.0,
                seen: si < cfg.speakers_per_group - cfg.unseen_per_group,
                id,
            });
        }
    }
    Ok(out)
}

/// Planned utterance before synthesis.
#[derive(Debug, Clone)]
struct UttPlan {
    id: String,
    speaker: usize,
    token: usize,
    split: Split,
}

fn plan_utterances(cfg: &CorpusConfig, profiles: &[SpeakerProfile]) -> Vec<UttPlan> {
    let mut out = Vec::new();
    for (pi, p) in profiles.iter().enumerate() {
        let offset = pi * 7;
        let (train, test) = if p.seen {
            (cfg.train_utts_per_speaker, cfg.test_utts_per_seen_speaker)
        } else {
            (0, cfg.test_utts_per_unseen_speaker)
        };
        for i in 0..train + test {
            let split = if i < train { Split::Train } else { Split::Test };
            out.push(UttPlan {
                id: format!("{}_{:03}", p.id, i),
                speaker: pi,
                token: (i + offset) % cfg.tokens,
                split,
            });
        }
    }
    out
}

/// Generated corpus kept in memory.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: Manifest,
    pub audio: Vec<Waveform>,
    pub vocabulary: Vec<TokenTemplate>,
}

/// Synthesizes the whole corpus. Byte-identical for identical inputs.
pub fn generate_corpus(cfg: &CorpusConfig, frame_len_ms: f64, frame_shift_ms: f64, seed: u64) -> Result<Corpus> {
    let profiles = make_profiles(cfg, seed)?;
    let vocab = make_vocabulary(cfg.tokens, seed);
    let mean_inv_tempo = profiles.iter().map(|p| 1.0 / p.tempo).sum::<f64>() / profiles.len() as f64;
    let mean_segments = vocab.iter().map(|t| t.formants.len() as f64).sum::<f64>() / vocab.len() as f64;
    let segment_secs = cfg.mean_duration_secs / (mean_segments * mean_inv_tempo);
    let sr = cfg.sample_rate as f64;
    let flen = (frame_len_ms * sr / 1000.0).round() as usize;
    let fshift = (frame_shift_ms * sr / 1000.0).round() as usize;
    let mut utterances = Vec::new();
    let mut audio = Vec::new();
    for u in plan_utterances(cfg, &profiles) {
        let p = &profiles[u.speaker];
        let samples = synth::render(
            &vocab[u.token],
            p,
            segment_secs,
            cfg.sample_rate,
            derive_seed(seed, &u.id),
        );
        let w = Waveform::new(samples, cfg.sample_rate)?;
        // Round-trip through 16-bit so in-memory audio equals what is written.
        let w = Waveform::from_wav_bytes(&w.to_wav_bytes()?)?;
        let frames = frame_count(w.samples().len(), flen, fshift).ok_or(Error::ShortInput {
            needed: flen,
            got: w.samples().len(),
        })?;
        utterances.push(UtteranceRecord {
            wav: PathBuf::from("wav").join(&p.id).join(format!("{}.wav", u.id)),
            speaker: p.id.clone(),
            samples: w.samples().len(),
            frames,
            alignment: vec![Alignment {
                token: u.token,
                start: 0,
                end: frames,
            }],
            split: u.split,
            id: u.id,
        });
        audio.push(w);
    }
    let manifest = Manifest {
        header: Header {
            sample_rate: cfg.sample_rate,
            frame_len_ms,
            frame_shift_ms,
            groups: cfg.groups.clone(),
            tokens: cfg.tokens,
        },
        speakers: profiles,
        utterances,
    };
    manifest.validate(None)?;
    Ok(Corpus {
        manifest,
        audio,
        vocabulary: vocab,
    })
}

impl Corpus {
    /// Writes audio files and `manifest.jsonl` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        for (u, w) in self.manifest.utterances.iter().zip(&self.audio) {
            w.write(&dir.join(&u.wav))?;
        }
        let path = dir.join("manifest.jsonl");
        self.manifest.save(&path)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusConfig {
        CorpusConfig {
            groups: vec!["A".into(), "B".into()],
            speakers_per_group: 2,
            unseen_per_group: 1,
            train_utts_per_speaker: 2,
            test_utts_per_seen_speaker: 1,
            test_utts_per_unseen_speaker: 1,
            tokens: 3,
            mean_duration_secs: 0.4,
            sample_rate: 16000,
        }
    }

    #[test]
    fn profiles_are_monotone_in_severity() {
        let p = make_profiles(&CorpusConfig::default(), 3).unwrap();
        for a in &p {
            for b in &p {
                if a.group_index < b.group_index {
                    assert!(a.severity > b.severity);
                    assert!(a.distortion() > b.distortion());
                    assert!(a.jitter > b.jitter);
                    assert!(a.tempo < b.tempo);
                    assert!(a.tilt_db_per_octave < b.tilt_db_per_octave);
                }
            }
        }
    }

    #[test]
    fn invalid_groups_rejected() {
        let mut c = small();
        c.groups = vec!["A".into()];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = small();
        c.unseen_per_group = 2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn split_and_alignment() {
        let c = generate_corpus(&small(), 25.0, 10.0, 9).unwrap();
        let m = &c.manifest;
        assert_eq!(m.split(Split::Train).count(), 4);
        assert_eq!(m.split(Split::Test).count(), 4);
        for u in &m.utterances {
            let covered: usize = u.alignment.iter().map(|a| a.end - a.start).sum();
            assert_eq!(covered, u.frames);
        }
        let unseen: Vec<_> = m.speakers.iter().filter(|s| !s.seen).collect();
        assert_eq!(unseen.len(), 2);
        for s in unseen {
            assert!(m
                .utterances
                .iter()
                .filter(|u| u.speaker == s.id)
                .all(|u| u.split == Split::Test));
        }
    }

    #[test]
    fn vocabulary_is_deterministic() {
        assert_eq!(make_vocabulary(10, 4), make_vocabulary(10, 4));
        assert_ne!(make_vocabulary(10, 4), make_vocabulary(10, 5));
    }
}
