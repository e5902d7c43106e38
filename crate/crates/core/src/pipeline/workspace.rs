//! Artifact layout, completion stamps and typed artifact I/O.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::config::PipelineConfig;
use super::Stage;
use crate::corpus::{load_manifest, Manifest};
use crate::error::{Error, Result};
use crate::frontend::archive::{read_archive_map, ArchiveWriter};
use crate::frontend::WindowSpec;
use crate::io::write_atomic;
use crate::nn::{Checkpoint, Matrix, Network};
use crate::svr::{EmbeddingNetwork, Provenance};

/// Written when a stage completes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
    pub hash: String,
    pub seed: u64,
}

impl Workspace {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Self {
            root: cfg.work_dir.clone(),
            hash: cfg.hash(),
            seed: cfg.seed,
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.path("corpus")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.corpus_dir().join("manifest.jsonl")
    }

    pub fn stamp_path(&self, stage: Stage) -> PathBuf {
        self.path(&format!("stamps/{}.json", stage.name()))
    }

    pub fn read_stamp(&self, stage: Stage) -> Option<Stamp> {
        let text = std::fs::read_to_string(self.stamp_path(stage)).ok()?;
        serde_json::from_str(&text).ok()
    }

    /// True when `stage` finished under the current configuration.
    pub fn is_current(&self, stage: Stage) -> bool {
        self.read_stamp(stage).is_some_and(|s| s.config_hash == self.hash)
    }

    /// Fails with a dependency error naming the first stale prerequisite.
    pub fn require(&self, stage: Stage) -> Result<()> {
        self.require_stages(stage.deps(), stage.name())
    }

    /// Checks that every stage in `needed` completed under this config.
    pub fn require_stages(&self, needed: &[Stage], consumer: &str) -> Result<()> {
        for dep in needed {
            match self.read_stamp(*dep) {
                None => {
                    return Err(Error::Dependency {
                        stage: dep.name().into(),
                        detail: format!("`{consumer}` needs its outputs in {}", self.root.display()),
                    })
                }
                Some(s) if s.config_hash != self.hash => {
                    return Err(Error::Dependency {
                        stage: dep.name().into(),
                        detail: format!(
                            "its outputs were produced by config {} but the current config is {}",
                            s.config_hash, self.hash
                        ),
                    })
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn write_stamp(&self, stage: Stage, outputs: Vec<String>) -> Result<()> {
        let stamp = Stamp {
            stage: stage.name().into(),
            config_hash: self.hash.clone(),
            seed: self.seed,
            outputs,
        };
        write_atomic(
            &self.stamp_path(stage),
            serde_json::to_string_pretty(&stamp)?.as_bytes(),
        )
    }

    /// Removes stamps of `stage` and everything downstream of it.
    pub fn invalidate_from(&self, stage: Stage) -> Result<()> {
        for s in Stage::ALL {
            if s.depends_on(stage) || s == stage {
                let p = self.stamp_path(s);
                if p.exists() {
                    std::fs::remove_file(p)?;
                }
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> Result<Manifest> {
        load_manifest(&self.manifest_path())
    }

    pub fn features(&self, name: &str) -> Result<BTreeMap<String, Matrix>> {
        let ark = self.path(&format!("{name}.ark"));
        let idx = self.path(&format!("{name}.idx"));
        Ok(read_archive_map(&ark, &idx)?
            .into_iter()
            .map(|(k, r)| (k, r.frames))
            .collect())
    }

    pub fn write_features(&self, name: &str, items: &[(String, Matrix)], frame_shift_ms: f64) -> Result<Vec<String>> {
        let mut w = ArchiveWriter::new();
        for (id, m) in items {
            w.push(id, m, frame_shift_ms)?;
        }
        w.finish(&self.path(&format!("{name}.ark")), &self.path(&format!("{name}.idx")))?;
        Ok(vec![format!("{name}.ark"), format!("{name}.idx")])
    }

    pub fn svr_archive(window: WindowSpec) -> String {
        format!("svr/{window}")
    }

    pub fn save_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<String> {
        write_atomic(&self.path(rel), serde_json::to_string_pretty(value)?.as_bytes())?;
        Ok(rel.to_owned())
    }

    pub fn load_json<T: DeserializeOwned>(&self, rel: &str) -> Result<T> {
        let p = self.path(rel);
        let text = std::fs::read_to_string(&p)?;
        serde_json::from_str(&text).map_err(|e| Error::format(p, e.to_string()))
    }

    pub fn save_network(&self, rel: &str, net: &Network, what: &str) -> Result<String> {
        let meta = format!("{what}; config {}", self.hash);
        Checkpoint::from_network(net.clone(), meta).save(&self.path(rel))?;
        Ok(rel.to_owned())
    }

    pub fn load_network(&self, rel: &str) -> Result<Network> {
        let p = self.path(rel);
        Checkpoint::load(&p)?
            .network
            .ok_or_else(|| Error::format(p, "checkpoint holds no network"))
    }

    /// One checkpoint per sub-network under `<prefix>_<part>.otfa`.
    pub fn save_embedding(&self, prefix: &str, net: &EmbeddingNetwork) -> Result<Vec<String>> {
        let kind = match net.provenance {
            Provenance::Sbe => "sbe",
            Provenance::Svr => "svr",
        };
        let mut out = vec![
            self.save_network(&format!("{prefix}_trunk.otfa"), &net.trunk, &format!("{kind} trunk"))?,
            self.save_network(&format!("{prefix}_shared.otfa"), &net.shared, &format!("{kind} shared"))?,
            self.save_network(
                &format!("{prefix}_group.otfa"),
                &net.group_head,
                &format!("{kind} group head"),
            )?,
        ];
        if let Some(h) = &net.id_head {
            out.push(self.save_network(&format!("{prefix}_id.otfa"), h, &format!("{kind} speaker head"))?);
        }
        Ok(out)
    }

    pub fn load_embedding(&self, prefix: &str, provenance: Provenance) -> Result<EmbeddingNetwork> {
        let id_path = format!("{prefix}_id.otfa");
        let id_head = if self.path(&id_path).exists() {
            Some(self.load_network(&id_path)?)
        } else {
            None
        };
        Ok(EmbeddingNetwork {
            trunk: self.load_network(&format!("{prefix}_trunk.otfa"))?,
            shared: self.load_network(&format!("{prefix}_shared.otfa"))?,
            group_head: self.load_network(&format!("{prefix}_group.otfa"))?,
            id_head,
            provenance,
        })
    }

    /// Saves a network together with per-speaker transforms.
    pub fn save_transforms(
        &self,
        rel: &str,
        net: Option<&Network>,
        transforms: &BTreeMap<String, crate::lhuc::LhucTransform>,
        what: &str,
    ) -> Result<String> {
        let ck = Checkpoint {
            metadata: format!("{what}; config {}", self.hash),
            network: net.cloned(),
            transforms: transforms.iter().map(|(k, t)| (k.clone(), t.xi.clone())).collect(),
        };
        ck.save(&self.path(rel))?;
        Ok(rel.to_owned())
    }

    pub fn load_transforms(
        &self,
        rel: &str,
    ) -> Result<(Option<Network>, BTreeMap<String, crate::lhuc::LhucTransform>)> {
        let ck = Checkpoint::load(&self.path(rel))?;
        let transforms = ck
            .transforms
            .into_iter()
            .map(|(k, xi)| {
                let t = crate::lhuc::LhucTransform { speaker: k.clone(), xi };
                (k, t)
            })
            .collect();
        Ok((ck.network, transforms))
    }
}

pub fn relative(root: &Path, p: &Path) -> String {
    p.strip_prefix(root).unwrap_or(p).display().to_string()
}
