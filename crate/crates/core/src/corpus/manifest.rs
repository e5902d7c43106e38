use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SpeakerProfile;
use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub sample_rate: u32,
    pub frame_len_ms: f64,
    pub frame_shift_ms: f64,
    pub groups: Vec<String>,
    pub tokens: usize,
}

/// Frames `[start, end)` labeled with `token`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    pub token: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub speaker: String,
    /// Relative to the manifest's directory.
    pub wav: PathBuf,
    pub samples: usize,
    pub frames: usize,
    pub alignment: Vec<Alignment>,
    pub split: Split,
}

impl UtteranceRecord {
    /// One label per frame.
    pub fn frame_labels(&self) -> Vec<usize> {
        let mut out = vec![0; self.frames];
        for a in &self.alignment {
            out[a.start..a.end].iter_mut().for_each(|l| *l = a.token);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Line {
    Header(Header),
    Speaker(SpeakerProfile),
    Utterance(UtteranceRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: Header,
    pub speakers: Vec<SpeakerProfile>,
    pub utterances: Vec<UtteranceRecord>,
}

impl Manifest {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        out.push_str(&serde_json::to_string(&Line::Header(self.header.clone()))?);
        out.push('\n');
        for s in &self.speakers {
            out.push_str(&serde_json::to_string(&Line::Speaker(s.clone()))?);
            out.push('\n');
        }
        for u in &self.utterances {
            out.push_str(&serde_json::to_string(&Line::Utterance(u.clone()))?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl()?.as_bytes())
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut header = None;
        let mut speakers = Vec::new();
        let mut utterances = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line =
                serde_json::from_str(line).map_err(|e| Error::format(origin, format!("line {}: {e}", n + 1)))?;
            match parsed {
                Line::Header(h) => {
                    if header.replace(h).is_some() {
                        return Err(Error::format(origin, format!("line {}: second header", n + 1)));
                    }
                }
                Line::Speaker(s) => speakers.push(s),
                Line::Utterance(u) => utterances.push(u),
            }
        }
        let header = header.ok_or_else(|| Error::format(origin, "missing header record"))?;
        Ok(Self {
            header,
            speakers,
            utterances,
        })
    }

    /// Checks referential integrity and alignment coverage. When `base` is
    /// given, referenced audio files must exist under it. All problems are
    /// reported together.
    pub fn validate(&self, base: Option<&Path>) -> Result<()> {
        let mut problems = Vec::new();
        let mut speaker_ids = BTreeSet::new();
        for s in &self.speakers {
            if !speaker_ids.insert(s.id.as_str()) {
                problems.push(format!("duplicate speaker id {}", s.id));
            }
            if !self.header.groups.contains(&s.group) {
                problems.push(format!("speaker {} has unknown group {}", s.id, s.group));
            }
        }
        let mut utt_ids = BTreeSet::new();
        for u in &self.utterances {
            if !utt_ids.insert(u.id.as_str()) {
                problems.push(format!("duplicate utterance id {}", u.id));
            }
            if !speaker_ids.contains(u.speaker.as_str()) {
                problems.push(format!("utterance {} references unknown speaker {}", u.id, u.speaker));
            }
            let mut cursor = 0;
            for a in &u.alignment {
                if a.start != cursor || a.end <= a.start {
                    problems.push(format!(
                        "utterance {} alignment has a gap or overlap at frame {cursor}",
                        u.id
                    ));
                    break;
                }
                if a.token >= self.header.tokens {
                    problems.push(format!("utterance {} uses token {} outside vocabulary", u.id, a.token));
                }
                cursor = a.end;
            }
            if cursor != u.frames {
                problems.push(format!(
                    "utterance {} alignment covers {cursor} of {} frames",
                    u.id, u.frames
                ));
            }
            if let Some(b) = base {
                if !b.join(&u.wav).is_file() {
                    problems.push(format!("utterance {} audio {} not found", u.id, u.wav.display()));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    pub fn speaker(&self, id: &str) -> Option<&SpeakerProfile> {
        self.speakers.iter().find(|s| s.id == id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &UtteranceRecord> {
        self.utterances.iter().filter(move |u| u.split == split)
    }

    /// Utterances grouped by speaker, each list in manifest order.
    pub fn by_speaker(&self, split: Split) -> BTreeMap<&str, Vec<&UtteranceRecord>> {
        let mut out: BTreeMap<&str, Vec<&UtteranceRecord>> = BTreeMap::new();
        for u in self.split(split) {
            out.entry(u.speaker.as_str()).or_default().push(u);
        }
        out
    }
}

/// Reads and validates a manifest, resolving audio paths next to it.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path)?;
    let m = Manifest::parse(&text, path)?;
    m.validate(path.parent())?;
    Ok(m)
}
