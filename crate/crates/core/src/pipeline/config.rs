//! Versioned TOML experiment configuration.
//!
//! Every section rejects unknown keys. Relative paths resolve against the
//! directory that holds the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::am::AmConfig;
use crate::corpus::CorpusConfig;
use crate::error::{Error, Result};
use crate::frontend::{CmvnScope, FrontendConfig, WindowSpec};
use crate::lhuc::{OfflineConfig, SatConfig};
use crate::svr::MtlWeights;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub seed: u64,
    pub work_dir: PathBuf,
    pub corpus: CorpusConfig,
    pub frontend: FrontendSection,
    pub embedding: EmbeddingSection,
    pub mtl: MtlWeights,
    pub am: AmSection,
    pub sat: SatConfig,
    pub offline: OfflineConfig,
    pub flhuc: FlhucSection,
    pub evaluate: EvaluateSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontendSection {
    pub n_mels: usize,
    pub frame_len_ms: f64,
    pub frame_shift_ms: f64,
    pub cmvn: CmvnScope,
}

impl FrontendSection {
    pub fn logmel(&self) -> FrontendConfig {
        FrontendConfig {
            n_mels: self.n_mels,
            frame_len_ms: self.frame_len_ms,
            frame_shift_ms: self.frame_shift_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSection {
    /// Number of spectral bases per window.
    pub bases: usize,
    pub hidden: usize,
    pub shared: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Train a speaker-id head on the upper classifier.
    pub speaker_head: bool,
    /// Random sub-utterance windows per training utterance and window size.
    pub windows_per_size: usize,
    pub train_windows: Vec<WindowSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmSection {
    pub hidden_layers: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub splice: Vec<i32>,
    /// Keep every n-th training frame.
    pub frame_subsample: usize,
    /// SVR window sizes the auxiliary-feature model is trained on. Each
    /// training utterance draws one of them.
    pub aux_windows: Vec<WindowSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegressionInputs {
    FbkSvr,
    Fbk,
}

impl RegressionInputs {
    pub fn name(self) -> &'static str {
        match self {
            RegressionInputs::FbkSvr => "fbk-svr",
            RegressionInputs::Fbk => "fbk",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlhucSection {
    pub pca_k: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub alpha: f64,
    /// Regression input variants to train; the first is the primary system.
    pub inputs: Vec<RegressionInputs>,
    /// Training utterances streamed per speaker (0 = all).
    pub utts_per_speaker: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    /// Sliding windows used for on-the-fly SVR at test time.
    pub windows: Vec<WindowSpec>,
    pub lambda: f64,
    /// SVR window of the auxiliary-feature system entering the combination.
    pub combine_window: WindowSpec,
    /// Windows timed by `bench-rtf`.
    pub rtf_windows: Vec<WindowSpec>,
    /// Test utterances timed per window size (0 = all).
    pub rtf_utterances: usize,
}

impl PipelineConfig {
    /// Parses TOML text and validates it. `base` anchors relative paths.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        if cfg.work_dir.is_relative() {
            cfg.work_dir = base.join(&cfg.work_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Hash of everything that influences results. The output location is
    /// excluded so identical experiments in different directories agree.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.work_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        crate::io::sha256_hex(&json)[..16].to_string()
    }

    pub fn validate(&self) -> Result<()> {
        let mut p: Vec<String> = Vec::new();
        fn check(p: &mut Vec<String>, ok: bool, path: &str, msg: &str) {
            if !ok {
                p.push(format!("{path}: {msg}"));
            }
        }
        check(
            &mut p,
            self.version == CONFIG_VERSION,
            "version",
            "unsupported config version (expected 1)",
        );
        if let Err(e) = self.corpus.validate() {
            p.push(format!("corpus: {e}"));
        }
        let f = &self.frontend;
        check(&mut p, f.n_mels >= 2, "frontend.n_mels", "must be at least 2");
        check(
            &mut p,
            f.frame_len_ms > 0.0,
            "frontend.frame_len_ms",
            "must be positive",
        );
        check(
            &mut p,
            f.frame_shift_ms > 0.0 && f.frame_shift_ms <= f.frame_len_ms,
            "frontend.frame_shift_ms",
            "must be positive and at most frame_len_ms",
        );
        let e = &self.embedding;
        check(&mut p, e.bases >= 1, "embedding.bases", "must be at least 1");
        check(
            &mut p,
            e.hidden >= 1 && e.shared >= 1,
            "embedding.hidden",
            "layer widths must be positive",
        );
        check(&mut p, e.batch_size >= 1, "embedding.batch_size", "must be positive");
        check(&mut p, e.lr > 0.0, "embedding.lr", "must be positive");
        check(
            &mut p,
            !e.train_windows.is_empty(),
            "embedding.train_windows",
            "must not be empty",
        );
        if let Err(err) = self.mtl.validate() {
            p.push(format!("mtl: {err}"));
        }
        if self.mtl.w_ce_id > 0.0 && !self.embedding.speaker_head {
            p.push("mtl.w_ce_id: requires embedding.speaker_head = true".into());
        }
        let a = &self.am;
        check(
            &mut p,
            a.hidden_layers >= 1 && a.hidden_dim >= 1,
            "am",
            "needs at least one hidden layer",
        );
        check(&mut p, a.batch_size >= 1, "am.batch_size", "must be positive");
        check(&mut p, a.lr > 0.0, "am.lr", "must be positive");
        check(
            &mut p,
            a.frame_subsample >= 1,
            "am.frame_subsample",
            "must be at least 1",
        );
        check(
            &mut p,
            !a.splice.is_empty() && a.splice.windows(2).all(|w| w[0] < w[1]),
            "am.splice",
            "offsets must be non-empty and strictly increasing",
        );
        check(&mut p, self.sat.batch_size >= 1, "sat.batch_size", "must be positive");
        check(&mut p, self.offline.lr > 0.0, "offline.lr", "must be positive");
        let fl = &self.flhuc;
        check(&mut p, fl.pca_k >= 1, "flhuc.pca_k", "must be at least 1");
        check(
            &mut p,
            (0.0..=1.0).contains(&fl.alpha),
            "flhuc.alpha",
            "must lie in [0, 1]",
        );
        check(
            &mut p,
            !fl.inputs.is_empty(),
            "flhuc.inputs",
            "must name at least one variant",
        );
        let ev = &self.evaluate;
        check(&mut p, !ev.windows.is_empty(), "evaluate.windows", "must not be empty");
        check(
            &mut p,
            (0.0..=1.0).contains(&ev.lambda),
            "evaluate.lambda",
            "must lie in [0, 1]",
        );
        check(
            &mut p,
            !ev.rtf_windows.is_empty(),
            "evaluate.rtf_windows",
            "must not be empty",
        );
        check(
            &mut p,
            ev.windows.contains(&ev.combine_window),
            "evaluate.combine_window",
            "must be one of evaluate.windows",
        );
        check(&mut p, !a.aux_windows.is_empty(), "am.aux_windows", "must not be empty");
        for w in self
            .embedding
            .train_windows
            .iter()
            .chain(&ev.windows)
            .chain(&ev.rtf_windows)
            .chain(&a.aux_windows)
        {
            if let WindowSpec::Millis(ms) = w {
                check(
                    &mut p,
                    *ms as f64 >= f.frame_shift_ms,
                    "windows",
                    &format!("{w} is shorter than one frame shift"),
                );
            }
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(p))
        }
    }

    /// Every window size some stage extracts SVR features for, sorted.
    pub fn svr_windows(&self) -> Vec<WindowSpec> {
        let mut w: Vec<WindowSpec> = self
            .evaluate
            .windows
            .iter()
            .chain(&self.am.aux_windows)
            .copied()
            .chain(std::iter::once(WindowSpec::Utterance))
            .collect();
        w.sort();
        w.dedup();
        w
    }

    pub fn am_config(&self, aux_dim: usize) -> AmConfig {
        AmConfig {
            base_dim: 2 * self.frontend.n_mels * self.am.splice.len(),
            aux_dim,
            hidden_layers: self.am.hidden_layers,
            hidden_dim: self.am.hidden_dim,
            classes: self.corpus.tokens,
            epochs: self.am.epochs,
            batch_size: self.am.batch_size,
            lr: self.am.lr,
        }
    }

    pub fn embedding_config(&self) -> crate::svr::EmbeddingConfig {
        crate::svr::EmbeddingConfig {
            hidden: self.embedding.hidden,
            shared: self.embedding.shared,
            epochs: self.embedding.epochs,
            batch_size: self.embedding.batch_size,
            lr: self.embedding.lr,
        }
    }

    pub fn regression_config(&self) -> crate::flhuc::RegressionConfig {
        crate::flhuc::RegressionConfig {
            hidden: self.flhuc.hidden,
            epochs: self.flhuc.epochs,
            lr: self.flhuc.lr,
            alpha: self.flhuc.alpha,
        }
    }
}
