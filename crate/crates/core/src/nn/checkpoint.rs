//! Versioned binary checkpoint.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "OTFA"                magic
//! u32                   format version (1)
//! u32 + bytes           metadata string (UTF-8)
//! u64                   network seed
//! u32                   layer count (0 = no network)
//!   per layer: u8 kind, u32 in_dim, u32 out_dim, u32 n_offsets, i32 offsets...
//! u64                   parameter count
//!   f64 parameters
//! u32                   speaker transform count
//!   per speaker: u32 + bytes id, u32 layer count, per layer u32 len + f64 values
//! u32                   CRC32 of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::nn::{LayerSpec, Network};

pub const MAGIC: &[u8; 4] = b"OTFA";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub metadata: String,
    pub network: Option<Network>,
    /// speaker id -> one xi vector per LHUC layer
    pub transforms: BTreeMap<String, Vec<Vec<f64>>>,
}

impl Checkpoint {
    pub fn from_network(network: Network, metadata: impl Into<String>) -> Self {
        Self {
            metadata: metadata.into(),
            network: Some(network),
            transforms: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut b, &self.metadata);
        match &self.network {
            Some(net) => {
                b.extend_from_slice(&net.seed().to_le_bytes());
                b.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
                for l in net.layers() {
                    let (kind, offsets): (u8, &[i32]) = match l {
                        LayerSpec::Affine { .. } => (0, &[]),
                        LayerSpec::Sigmoid { .. } => (1, &[]),
                        LayerSpec::Relu { .. } => (2, &[]),
                        LayerSpec::SoftmaxCeHead { .. } => (3, &[]),
                        LayerSpec::MseHead { .. } => (4, &[]),
                        LayerSpec::LhucScale { .. } => (5, &[]),
                        LayerSpec::ContextSplice { offsets, .. } => (6, offsets),
                        LayerSpec::OnlineAverage { .. } => (7, &[]),
                    };
                    b.push(kind);
                    b.extend_from_slice(&(l.in_dim() as u32).to_le_bytes());
                    b.extend_from_slice(&(l.out_dim() as u32).to_le_bytes());
                    b.extend_from_slice(&(offsets.len() as u32).to_le_bytes());
                    for o in offsets {
                        b.extend_from_slice(&o.to_le_bytes());
                    }
                }
                b.extend_from_slice(&(net.param_count() as u64).to_le_bytes());
                for p in net.params() {
                    b.extend_from_slice(&p.to_le_bytes());
                }
            }
            None => {
                b.extend_from_slice(&0u64.to_le_bytes());
                b.extend_from_slice(&0u32.to_le_bytes());
                b.extend_from_slice(&0u64.to_le_bytes());
            }
        }
        b.extend_from_slice(&(self.transforms.len() as u32).to_le_bytes());
        for (id, layers) in &self.transforms {
            put_str(&mut b, id);
            b.extend_from_slice(&(layers.len() as u32).to_le_bytes());
            for xi in layers {
                b.extend_from_slice(&(xi.len() as u32).to_le_bytes());
                for v in xi {
                    b.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let crc = crc32fast::hash(&b);
        b.extend_from_slice(&crc.to_le_bytes());
        b
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::format(origin, reason);
        if bytes.len() < 12 {
            return Err(bad("file too short"));
        }
        let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(bad("CRC32 mismatch"));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4).ok_or_else(|| bad("truncated header"))? != MAGIC {
            return Err(bad("bad magic, expected OTFA"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated header"))?;
        if version != VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let truncated = || bad("truncated body");
        let metadata = r.string().ok_or_else(truncated)?;
        let seed = r.u64().ok_or_else(truncated)?;
        let n_layers = r.u32().ok_or_else(truncated)? as usize;
        let mut layers = Vec::with_capacity(n_layers.min(1024));
        for _ in 0..n_layers {
            let kind = r.take(1).ok_or_else(truncated)?[0];
            let in_dim = r.u32().ok_or_else(truncated)? as usize;
            let out_dim = r.u32().ok_or_else(truncated)? as usize;
            let n_off = r.u32().ok_or_else(truncated)? as usize;
            let mut offsets = Vec::with_capacity(n_off.min(64));
            for _ in 0..n_off {
                offsets.push(r.u32().ok_or_else(truncated)? as i32);
            }
            let layer = match kind {
                0 => LayerSpec::Affine { in_dim, out_dim },
                1 => LayerSpec::Sigmoid { dim: in_dim },
                2 => LayerSpec::Relu { dim: in_dim },
                3 => LayerSpec::SoftmaxCeHead { dim: in_dim },
                4 => LayerSpec::MseHead { dim: in_dim },
                5 => LayerSpec::LhucScale { dim: in_dim },
                6 => LayerSpec::ContextSplice { in_dim, offsets },
                7 => LayerSpec::OnlineAverage { dim: in_dim },
                k => return Err(bad(&format!("unknown layer kind {k}"))),
            };
            if layer.out_dim() != out_dim {
                return Err(bad("layer table has inconsistent dimensions"));
            }
            layers.push(layer);
        }
        let n_params = r.u64().ok_or_else(truncated)? as usize;
        let mut params = Vec::with_capacity(n_params.min(1 << 24));
        for _ in 0..n_params {
            params.push(r.f64().ok_or_else(truncated)?);
        }
        let network = if layers.is_empty() {
            None
        } else {
            Some(Network::from_parts(layers, params, seed).map_err(|e| bad(&format!("invalid network: {e}")))?)
        };
        let n_spk = r.u32().ok_or_else(truncated)? as usize;
        let mut transforms = BTreeMap::new();
        for _ in 0..n_spk {
            let id = r.string().ok_or_else(truncated)?;
            let n = r.u32().ok_or_else(truncated)? as usize;
            let mut xs = Vec::with_capacity(n.min(64));
            for _ in 0..n {
                let len = r.u32().ok_or_else(truncated)? as usize;
                let mut xi = Vec::with_capacity(len.min(1 << 16));
                for _ in 0..len {
                    xi.push(r.f64().ok_or_else(truncated)?);
                }
                xs.push(xi);
            }
            transforms.insert(id, xs);
        }
        if r.pos != body.len() {
            return Err(bad("trailing bytes before CRC"));
        }
        Ok(Self {
            metadata,
            network,
            transforms,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, path)
    }
}

fn put_str(b: &mut Vec<u8>, s: &str) {
    b.extend_from_slice(&(s.len() as u32).to_le_bytes());
    b.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn string(&mut self) -> Option<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).ok()
    }
}
