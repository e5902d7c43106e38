//! Streaming real-time-factor benchmark for on-the-fly SVR extraction.
//!
//! Each test utterance is replayed window by window. A window can only be
//! processed once all of its audio has arrived, so the wait is the window
//! length (capped at the utterance length). The compute cost is the mean
//! wall time to extract the window's embedding and score its frames with the
//! auxiliary-feature model. Timing runs on the calling thread only.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::stages::csv_err;
use super::workspace::Workspace;
use super::Stage;
use crate::am::{assemble_input, score_frames, AdaptationMode};
use crate::corpus::Split;
use crate::error::{Error, Result};
use crate::frontend::{segment_windows, WindowSpec};
use crate::io::write_atomic;
use crate::nn::Matrix;
use crate::spectral::window_basis_input;
use crate::svr::Provenance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtfRow {
    pub window: WindowSpec,
    pub utterances: usize,
    /// Mean seconds waited for a window's audio.
    pub wait_secs: f64,
    /// Mean seconds of compute per window.
    pub compute_secs: f64,
    /// Mean utterance duration in seconds.
    pub audio_secs: f64,
    /// Mean over utterances of `(wait + compute) / duration`.
    pub rtf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtfReport {
    pub config_hash: String,
    /// In the order requested.
    pub rows: Vec<RtfRow>,
}

impl RtfReport {
    /// True when RTF strictly increases along the rows.
    pub fn strictly_increasing(&self) -> bool {
        self.rows.windows(2).all(|p| p[0].rtf < p[1].rtf)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["window", "utterances", "wait_s", "compute_s", "audio_s", "RTF"])
            .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.window.to_string(),
                r.utterances.to_string(),
                format!("{:.6}", r.wait_secs),
                format!("{:.6}", r.compute_secs),
                format!("{:.6}", r.audio_secs),
                format!("{:.4}", r.rtf),
            ])
            .map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::Data(format!("csv: {e}")))
    }
}

/// Replays test utterances for every window size in `windows` and writes
/// `rtf/rtf.csv` and `rtf/rtf.json` under the work directory.
pub fn bench_rtf(cfg: &PipelineConfig, windows: &[WindowSpec]) -> Result<RtfReport> {
    let ws = Workspace::new(cfg);
    ws.require_stages(&[Stage::ExtractSvr, Stage::TrainAm], "bench-rtf")?;
    if windows.is_empty() {
        return Err(Error::config("bench-rtf needs at least one window size"));
    }
    let manifest = ws.manifest()?;
    let logmel = ws.features("features/logmel")?;
    let fbk = ws.features("features/fbk")?;
    let svr = ws.load_embedding("embed/svr", Provenance::Svr)?;
    let am = ws.load_network("am/aux.otfa")?;
    let shift = cfg.frontend.frame_shift_ms;
    let d = cfg.embedding.bases;
    let mut utts: Vec<_> = manifest.split(Split::Test).collect();
    if cfg.evaluate.rtf_utterances > 0 {
        utts.truncate(cfg.evaluate.rtf_utterances);
    }
    let mut prepared = Vec::with_capacity(utts.len());
    for u in &utts {
        let lm = logmel
            .get(&u.id)
            .ok_or_else(|| Error::data(format!("log-Mel features missing for {}", u.id)))?;
        let f = fbk
            .get(&u.id)
            .ok_or_else(|| Error::data(format!("filterbank features missing for {}", u.id)))?;
        let base = assemble_input(f, &cfg.am.splice, None)?;
        prepared.push((lm, base, u.samples as f64 / cfg.corpus.sample_rate as f64));
    }

    let process = |lm: &Matrix, base: &Matrix, r: std::ops::Range<usize>| -> Result<()> {
        let v = window_basis_input(lm, r.clone(), d)?;
        let e = svr.embed(&Matrix::row_vector(&v))?;
        let frames = base.slice_rows(r.start, r.end);
        let aux = Matrix::from_vec(
            frames.rows(),
            e.cols(),
            e.row(0)
                .iter()
                .copied()
                .cycle()
                .take(frames.rows() * e.cols())
                .collect(),
        )?;
        let x = frames.hstack(&aux)?;
        std::hint::black_box(score_frames(&am, &x, AdaptationMode::AuxFeature, None)?);
        Ok(())
    };

    // Warm caches and allocator before timing.
    if let Some((lm, base, _)) = prepared.first() {
        process(lm, base, 0..lm.rows())?;
    }

    let mut rows = Vec::with_capacity(windows.len());
    for &w in windows {
        let (mut wait, mut compute, mut audio, mut rtf) = (0.0, 0.0, 0.0, 0.0);
        for (lm, base, secs) in &prepared {
            let ranges = segment_windows(lm.rows(), shift, w)?;
            let n = ranges.len();
            let t0 = Instant::now();
            for r in ranges {
                process(lm, base, r)?;
            }
            let per_window = t0.elapsed().as_secs_f64() / n as f64;
            let wt = w.wait_secs(*secs);
            wait += wt;
            compute += per_window;
            audio += secs;
            rtf += (wt + per_window) / secs;
        }
        let n = prepared.len().max(1) as f64;
        rows.push(RtfRow {
            window: w,
            utterances: prepared.len(),
            wait_secs: wait / n,
            compute_secs: compute / n,
            audio_secs: audio / n,
            rtf: rtf / n,
        });
    }
    let report = RtfReport {
        config_hash: ws.hash.clone(),
        rows,
    };
    write_atomic(&ws.path("rtf/rtf.csv"), &report.to_csv()?)?;
    ws.save_json("rtf/rtf.json", &report)?;
    if !report.strictly_increasing() {
        log::warn!("RTF is not strictly increasing with window size");
    }
    Ok(report)
}
