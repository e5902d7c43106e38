use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, RegressionInputs};
use super::workspace::Workspace;
use super::{eval_threads, Stage};
use crate::am::{assemble_input, majority_vote, score_frames, train_am, AdaptationMode};
use crate::corpus::{generate_corpus, Manifest, Split, UtteranceRecord};
use crate::error::{Error, Result};
use crate::flhuc::{
    fit_affine, pca_fit, stream_predictions, train_regression, AffineMap, OnTheFlyGenerator, PcaModel,
    RegressionStream, RegressionTdnn,
};
use crate::frontend::{append_deltas, apply_cmvn, segment_windows, LogMelExtractor, WindowSpec};
use crate::io::{derive_seed, write_atomic};
use crate::lhuc::{adapt_offline, sat_train, SatPhase, SpeakerData};
use crate::nn::Matrix;
use crate::spectral::window_basis_input;
use crate::svr::{
    broadcast_windows, extract_svr, intra_speaker_variance, speaker_average, train_lower, train_upper, EmbeddingData,
    Provenance, EMBEDDING_DIM,
};

pub(super) fn run(cfg: &PipelineConfig, ws: &Workspace, stage: Stage) -> Result<Vec<String>> {
    match stage {
        Stage::Prep => prep(cfg, ws),
        Stage::TrainEmbed => train_embed(cfg, ws),
        Stage::ExtractSvr => extract(cfg, ws),
        Stage::TrainAm => train_ams(cfg, ws),
        Stage::Sat => sat(cfg, ws),
        Stage::TrainFlhuc => train_flhuc(cfg, ws),
        Stage::Adapt => adapt(cfg, ws),
        Stage::Evaluate => super::eval::evaluate(cfg, ws),
    }
}

/// Order-preserving parallel map capped by `OTF_ADAPT_THREADS`.
pub(super) fn par_map<T, R, F>(items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(eval_threads())
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect())
}

fn prep(cfg: &PipelineConfig, ws: &Workspace) -> Result<Vec<String>> {
    let fe = &cfg.frontend;
    let corpus = generate_corpus(&cfg.corpus, fe.frame_len_ms, fe.frame_shift_ms, cfg.seed)?;
    corpus.write(&ws.corpus_dir())?;
    let extractor = LogMelExtractor::new(fe.logmel(), cfg.corpus.sample_rate)?;
    let utts = &corpus.manifest.utterances;
    let logmel: Vec<Matrix> = utts
        .iter()
        .zip(&corpus.audio)
        .map(|(u, w)| {
            let s = extractor.compute(w)?;
            if s.num_frames() != u.frames {
                return Err(Error::data(format!(
                    "utterance {} has {} feature frames but {} aligned frames",
                    u.id,
                    s.num_frames(),
                    u.frames
                )));
            }
            Ok(s.frames)
        })
        .collect::<Result<_>>()?;
    let fbk: Vec<Matrix> = logmel.iter().map(append_deltas).collect();
    let speakers: Vec<&str> = utts.iter().map(|u| u.speaker.as_str()).collect();
    let normed = apply_cmvn(&fbk, &speakers, fe.cmvn);
    let ids = utts.iter().map(|u| u.id.clone());
    let logmel_items: Vec<(String, Matrix)> = ids.clone().zip(logmel).collect();
    let fbk_items: Vec<(String, Matrix)> = ids.zip(normed.into_iter().map(|(m, _)| m)).collect();
    let mut out = vec!["corpus/manifest.jsonl".to_string()];
    out.extend(ws.write_features("features/logmel", &logmel_items, fe.frame_shift_ms)?);
    out.extend(ws.write_features("features/fbk", &fbk_items, fe.frame_shift_ms)?);
    log::info!(
        "prep: {} speakers, {} utterances",
        corpus.manifest.speakers.len(),
        utts.len()
    );
    Ok(out)
}

fn group_index(m: &Manifest, speaker: &str) -> Result<usize> {
    m.speaker(speaker)
        .map(|p| p.group_index)
        .ok_or_else(|| Error::data(format!("unknown speaker {speaker}")))
}

fn get<'a>(map: &'a BTreeMap<String, Matrix>, id: &str, what: &str) -> Result<&'a Matrix> {
    map.get(id)
        .ok_or_else(|| Error::data(format!("{what} features missing for utterance {id}")))
}

fn embedding_data(
    cfg: &PipelineConfig,
    manifest: &Manifest,
    logmel: &BTreeMap<String, Matrix>,
) -> Result<EmbeddingData> {
    let train: Vec<&UtteranceRecord> = manifest.split(Split::Train).collect();
    let mut names: Vec<String> = train.iter().map(|u| u.speaker.clone()).collect();
    names.sort();
    names.dedup();
    let d = cfg.embedding.bases;
    let shift = cfg.frontend.frame_shift_ms;
    let mut rows = Vec::new();
    let mut groups = Vec::new();
    let mut speakers = Vec::new();
    for u in &train {
        let lm = get(logmel, &u.id, "log-Mel")?;
        let g = group_index(manifest, &u.speaker)?;
        let s = names.binary_search(&u.speaker).expect("speaker listed");
        for &spec in &cfg.embedding.train_windows {
            let mut windows = segment_windows(lm.rows(), shift, spec)?;
            if spec != WindowSpec::Utterance && windows.len() > cfg.embedding.windows_per_size {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("embed/{}/{spec}", u.id)));
                windows.shuffle(&mut rng);
                windows.truncate(cfg.embedding.windows_per_size);
                windows.sort_by_key(|r| r.start);
            }
            for r in windows {
                rows.push(window_basis_input(lm, r, d)?);
                groups.push(g);
                speakers.push(s);
            }
        }
    }
    EmbeddingData::new(
        Matrix::from_rows(&rows)?,
        groups,
        speakers,
        names,
        cfg.corpus.groups.len(),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbedTrace {
    windows: usize,
    upper: Vec<f64>,
    lower: Vec<f64>,
}

fn train_embed(cfg: &PipelineConfig, ws: &Workspace) -> Result<Vec<String>> {
    let manifest = ws.manifest()?;
    let logmel = ws.features("features/logmel")?;
    let data = embedding_data(cfg, &manifest, &logmel)?;
    log::info!(
        "train-embed: {} windows of width {}",
        data.inputs.rows(),
        data.inputs.cols()
    );
    let ecfg = cfg.embedding_config();
    let (upper, upper_trace) = train_upper(
        &data,
        cfg.embedding.speaker_head,
        &ecfg,
        derive_seed(cfg.seed, "embed/upper"),
    )?;
    // Speaker targets: mean utterance-level embedding over training speech.
    let mut utt_embeddings: Vec<(String, Vec<f64>)> = Vec::new();
    for u in manifest.split(Split::Train) {
        let lm = get(&logmel, &u.id, "log-Mel")?;
        let e = extract_svr(&upper, lm, std::slice::from_ref(&(0..lm.rows())), cfg.embedding.bases)?;
        utt_embeddings.push((u.speaker.clone(), e.into_vec()));
    }
    let table = speaker_average(utt_embeddings.iter().map(|(s, e)| (s.as_str(), e.as_slice())))?;
    let (lower, lower_trace) = train_lower(&data, &table, &cfg.mtl, &ecfg, derive_seed(cfg.seed, "embed/lower"))?;
    for stale in ["embed/sbe_id.otfa", "embed/svr_id.otfa"] {
        let p = ws.path(stale);
        if p.exists() {
            std::fs::remove_file(p)?;
        }
    }
    let mut out = ws.save_embedding("embed/sbe", &upper)?;
    out.extend(ws.save_embedding("embed/svr", &lower)?);
    out.push(ws.save_json("embed/speaker_table.json", &table)?);
    out.push(ws.save_json(
        "embed/trace.json",
        &EmbedTrace {
            windows: data.inputs.rows(),
            upper: upper_trace,
            lower: lower_trace,
        },
    )?);
    Ok(out)
}

/// Intra-speaker variance of both embeddings at one window size, over the
/// test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceEntry {
    pub window: WindowSpec,
    pub sbe: f64,
    pub svr: f64,
}

fn extract(cfg: &PipelineConfig, ws: &Workspace) -> Result<Vec<String>> {
    let manifest = ws.manifest()?;
    let logmel = ws.features("features/logmel")?;
    let sbe = ws.load_embedding("embed/sbe", Provenance::Sbe)?;
    let svr = ws.load_embedding("embed/svr", Provenance::Svr)?;
    let d = cfg.embedding.bases;
    let shift = cfg.frontend.frame_shift_ms;
    let mut out = Vec::new();
    let mut variance = Vec::new();
    for spec in cfg.svr_windows() {
        let per_utt: Vec<(Matrix, Option<Matrix>)> = par_map(&manifest.utterances, |u| {
            let lm = get(&logmel, &u.id, "log-Mel")?;
            let windows = segment_windows(lm.rows(), shift, spec)?;
            let v = extract_svr(&svr, lm, &windows, d)?;
            let b = if u.split == Split::Test {
                Some(extract_svr(&sbe, lm, &windows, d)?)
            } else {
                None
            };
            Ok((v, b))
        })?;
        let mut by_spk_svr: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
        let mut by_spk_sbe: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
        let mut items = Vec::with_capacity(per_utt.len());
        for (u, (v, b)) in manifest.utterances.iter().zip(per_utt) {
            if let Some(b) = b {
                by_spk_svr
                    .entry(u.speaker.clone())
                    .or_default()
                    .extend(v.iter_rows().map(<[f64]>::to_vec));
                by_spk_sbe
                    .entry(u.speaker.clone())
                    .or_default()
                    .extend(b.iter_rows().map(<[f64]>::to_vec));
            }
            items.push((u.id.clone(), v));
        }
        let entry = VarianceEntry {
            window: spec,
            sbe: intra_speaker_variance(&by_spk_sbe)?,
            svr: intra_speaker_variance(&by_spk_svr)?,
        };
        log::info!(
            "extract-svr {spec}: intra-speaker variance sbe {:.4e} svr {:.4e}",
            entry.sbe,
            entry.svr
        );
        variance.push(entry);
        out.extend(ws.write_features(&Workspace::svr_archive(spec), &items, shift)?);
    }
    out.push(ws.save_json("svr/variance.json", &variance)?);
    Ok(out)
}

/// Everything an evaluation or training stage reads about utterances.
pub(super) struct Features {
    pub manifest: Manifest,
    pub fbk: BTreeMap<String, Matrix>,
    svr: BTreeMap<WindowSpec, BTreeMap<String, Matrix>>,
    shift: f64,
}

impl Features {
    pub fn load(cfg: &PipelineConfig, ws: &Workspace, windows: &[WindowSpec]) -> Result<Self> {
        let mut svr = BTreeMap::new();
        for &w in windows {
            svr.insert(w, ws.features(&Workspace::svr_archive(w))?);
        }
        Ok(Self {
            manifest: ws.manifest()?,
            fbk: ws.features("features/fbk")?,
            svr,
            shift: cfg.frontend.frame_shift_ms,
        })
    }

    pub fn fbk(&self, id: &str) -> Result<&Matrix> {
        get(&self.fbk, id, "filterbank")
    }

    /// Per-frame SVR features at window size `w`.
    pub fn aux(&self, id: &str, w: WindowSpec) -> Result<Matrix> {
        let per_window = self
            .svr
            .get(&w)
            .ok_or_else(|| Error::config(format!("no SVR archive loaded for window {w}")))?;
        let rows = get(per_window, id, "SVR")?;
        let frames = self.fbk(id)?.rows();
        broadcast_windows(rows, &segment_windows(frames, self.shift, w)?, frames)
    }

    /// Unspliced per-frame regression input.
    pub fn regression_input(&self, id: &str, inputs: RegressionInputs) -> Result<Matrix> {
        let fbk = self.fbk(id)?;
        match inputs {
            RegressionInputs::Fbk => Ok(fbk.clone()),
            RegressionInputs::FbkSvr => fbk.hstack(&self.aux(id, WindowSpec::Utterance)?),
        }
    }
}

fn subsample(m: &Matrix, labels: &[usize], every: usize) -> (Matrix, Vec<usize>) {
    let keep: Vec<usize> = (0..m.rows()).step_by(every).collect();
    let l = keep.iter().map(|&i| labels[i]).collect();
    (m.select_rows(&keep), l)
}

fn stack(parts: Vec<(Matrix, Vec<usize>)>) -> Result<(Matrix, Vec<usize>)> {
    let (ms, ls): (Vec<Matrix>, Vec<Vec<usize>>) = parts.into_iter().unzip();
    Ok((Matrix::vstack(&ms)?, ls.concat()))
}

pub(super) fn aux_window_for(cfg: &PipelineConfig, utt: &str) -> WindowSpec {
    let w = &cfg.am.aux_windows;
    w[(derive_seed(cfg.seed, &format!("aux-window/{utt}")) % w.len() as u64) as usize]
}

fn train_ams(cfg: &PipelineConfig, ws: &Workspace) -> Result<Vec<String>> {
    let feats = Features::load(cfg, ws, &cfg.am.aux_windows)?;
    let splice = &cfg.am.splice;
    let every = cfg.am.frame_subsample;
    let train: Vec<&UtteranceRecord> = feats.manifest.split(Split::Train).collect();
    let mut base = Vec::new();
    let mut with_aux = Vec::new();
    for u in &train {
        let fbk = feats.fbk(&u.id)?;
        let labels = u.frame_labels();
        base.push(subsample(&assemble_input(fbk, splice, None)?, &labels, every));
        let aux = feats.aux(&u.id, aux_window_for(cfg, &u.id))?;
        with_aux.push(subsample(&assemble_input(fbk, splice, Some(&aux))?, &labels, every));
    }
    let (x, y) = stack(base)?;
    log::info!("train-am: {} frames of width {}", x.rows(), x.cols());
    let (si, si_trace) = train_am(&cfg.am_config(0), x, y, derive_seed(cfg.seed, "am/si"))?;
    let (x, y) = stack(with_aux)?;
    let (aux, aux_trace) = train_am(&cfg.am_config(EMBEDDING_DIM), x, y, derive_seed(cfg.seed, "am/aux"))?;
    let mut trace = BTreeMap::new();
    trace.insert("si", si_trace);
    trace.insert("aux", aux_trace);
    Ok(vec![
        ws.save_network("am/si.otfa", &si, "speaker-independent acoustic model")?,
        ws.save_network("am/aux.otfa", &aux, "acoustic model with SVR input")?,
        ws.save_json("am/trace.json", &trace)?,
    ])
}

fn speaker_frames(
    cfg: &PipelineConfig,
    feats: &Features,
    utts: &[&UtteranceRecord],
    labels: Option<&[Vec<usize>]>,
) -> Result<(Matrix, Vec<usize>)> {
    let mut parts = Vec::with_capacity(utts.len());
    for (i, u) in utts.iter().enumerate() {
        let x = assemble_input(feats.fbk(&u.id)?, &cfg.am.splice, None)?;
        let l = match labels {
            Some(l) => l[i].clone(),
            None => u.frame_labels(),
        };
        parts.push(subsample(&x, &l, cfg.am.frame_subsample));
    }
    stack(parts)
}

fn sat(cfg: &PipelineConfig, ws: &Workspace) -> Result<Vec<String>> {
    let feats = Features::load(cfg, ws, &[])?;
    let si = ws.load_network("am/si.otfa")?;
    let mut speakers = Vec::new();
    for (spk, utts) in feats.manifest.by_speaker(Split::Train) {
        let (inputs, labels) = speaker_frames(cfg, &feats, &utts, None)?;
        speakers.push(SpeakerData {
            speaker: spk.to_owned(),
            inputs,
            labels,
        });
    }
    let state = sat_train(si, &speakers, &cfg.sat, derive_seed(cfg.seed, "sat"))?;
    let trace: Vec<(SatPhase, f64)> = state.trace.clone();
    Ok(vec![
        ws.save_transforms(
            "am/sat.otfa",
            Some(&state.net),
            &state.transforms,
            "speaker adaptive training",
        )?,
        ws.save_json("am/sat_trace.json", &trace)?,
    ])
}

#[derive(Debug, Serialize, Deserialize)]
struct FlhucTrace {
    variant: String,
    losses: Vec<f64>,
    affine_ridge: bool,
}

/// Per-speaker regression streams over training utterances.
fn regression_streams(
    cfg: &PipelineConfig,
    feats: &Features,
    inputs: RegressionInputs,
    targets: &BTreeMap<String, Vec<f64>>,
) -> Result<Vec<RegressionStream>> {
    let mut streams = Vec::new();
    for (spk, utts) in feats.manifest.by_speaker(Split::Train) {
        let target = targets
            .get(spk)
            .ok_or_else(|| Error::data(format!("no SAT transform for training speaker {spk}")))?;
        let limit = match cfg.flhuc.utts_per_speaker {
            0 => utts.len(),
            n => n.min(utts.len()),
        };
        let segments = utts[..limit]
            .iter()
            .map(|u| feats.regression_input(&u.id, inputs))
            .collect::<Result<_>>()?;
        streams.push(RegressionStream {
            speaker: spk.to_owned(),
            segments,
            target: target.clone(),
        });
    }
    Ok(streams)
}

fn train_flhuc(cfg: &PipelineConfig, ws: &Workspace) -> Result<Vec<String>> {
    let feats = Features::load(cfg, ws, &[WindowSpec::Utterance])?;
    let (_, transforms) = ws.load_transforms("am/sat.otfa")?;
    let speakers: Vec<&String> = transforms.keys().collect();
    let flat: Vec<Vec<f64>> = transforms.values().map(|t| t.flatten()).collect();
    let pca = pca_fit(&flat, cfg.flhuc.pca_k)?;
    log::info!(
        "train-flhuc: PCA keeps {} of {} dimensions over {} speakers",
        pca.k(),
        flat[0].len(),
        flat.len()
    );
    let compressed: BTreeMap<String, Vec<f64>> = speakers
        .iter()
        .zip(&flat)
        .map(|(s, f)| ((*s).clone(), pca.project(f)))
        .collect();
    let full: BTreeMap<String, Vec<f64>> = speakers
        .iter()
        .map(|s| ((*s).clone(), transforms[*s].flatten()))
        .collect();
    let mut out = vec![ws.save_json("flhuc/pca.json", &pca)?];
    let mut traces = Vec::new();
    for &variant in &cfg.flhuc.inputs {
        let streams = regression_streams(cfg, &feats, variant, &compressed)?;
        let (tdnn, losses) = train_regression(
            &streams,
            &cfg.regression_config(),
            derive_seed(cfg.seed, &format!("flhuc/{}", variant.name())),
        )?;
        let preds = stream_predictions(&tdnn, &streams)?;
        let xs: Vec<Vec<f64>> = preds.values().cloned().collect();
        let ys: Vec<Vec<f64>> = preds.keys().map(|s| full[s].clone()).collect();
        let affine = fit_affine(&xs, &ys)?;
        out.push(ws.save_network(
            &format!("flhuc/{}.otfa", variant.name()),
            &tdnn.net,
            &format!("f-LHUC regression ({})", variant.name()),
        )?);
        out.push(ws.save_json(&format!("flhuc/{}_affine.json", variant.name()), &affine)?);
        traces.push(FlhucTrace {
            variant: variant.name().into(),
            losses,
            affine_ridge: affine.ridge_used,
        });
    }
    out.push(ws.save_json("flhuc/trace.json", &traces)?);
    Ok(out)
}

pub(super) struct FlhucModel {
    pub variant: RegressionInputs,
    pub tdnn: RegressionTdnn,
    pub affine: AffineMap,
}

pub(super) fn load_flhuc(cfg: &PipelineConfig, ws: &Workspace) -> Result<(PcaModel, Vec<FlhucModel>)> {
    let pca: PcaModel = ws.load_json("flhuc/pca.json")?;
    let mut models = Vec::new();
    for &variant in &cfg.flhuc.inputs {
        let net = ws.load_network(&format!("flhuc/{}.otfa", variant.name()))?;
        models.push(FlhucModel {
            variant,
            tdnn: RegressionTdnn::new(net, cfg.flhuc.alpha)?,
            affine: ws.load_json(&format!("flhuc/{}_affine.json", variant.name()))?,
        });
    }
    Ok((pca, models))
}

/// First-pass token hypothesis of the speaker-independent model, spread
/// over every frame of the utterance.
pub(super) fn first_pass_labels(cfg: &PipelineConfig, si: &crate::nn::Network, x: &Matrix) -> Result<Vec<usize>> {
    let lp = score_frames(si, x, AdaptationMode::None, None)?;
    let hyp: Vec<usize> = (0..lp.rows()).map(|t| lp.argmax_row(t)).collect();
    let token = majority_vote(&hyp, cfg.corpus.tokens);
    Ok(vec![token; x.rows()])
}

fn adapt(cfg: &PipelineConfig, ws: &Workspace) -> Result<Vec<String>> {
    let feats = Features::load(cfg, ws, &[])?;
    let si = ws.load_network("am/si.otfa")?;
    let (sat_net, _) = ws.load_transforms("am/sat.otfa")?;
    let sat_net = sat_net.ok_or_else(|| Error::format(ws.path("am/sat.otfa"), "checkpoint holds no network"))?;
    let by_speaker: Vec<(String, Vec<&UtteranceRecord>)> = feats
        .manifest
        .by_speaker(Split::Test)
        .into_iter()
        .map(|(s, u)| (s.to_owned(), u))
        .collect();
    let transforms = par_map(&by_speaker, |(spk, utts)| {
        let labels = utts
            .iter()
            .map(|u| first_pass_labels(cfg, &si, &assemble_input(feats.fbk(&u.id)?, &cfg.am.splice, None)?))
            .collect::<Result<Vec<_>>>()?;
        let (x, y) = speaker_frames(cfg, &feats, utts, Some(&labels))?;
        let t = adapt_offline(&sat_net, spk, &x, &y, &cfg.offline)?;
        Ok((spk.clone(), t))
    })?;
    let transforms: BTreeMap<_, _> = transforms.into_iter().collect();
    Ok(vec![ws.save_transforms(
        "adapt/offline.otfa",
        None,
        &transforms,
        "offline LHUC transforms",
    )?])
}

/// Writes the online-average summary vector produced for every test
/// utterance by the first regression variant, as CSV. Returns the row count.
pub fn dump_m(cfg: &PipelineConfig, out: &Path) -> Result<usize> {
    let ws = Workspace::new(cfg);
    ws.require_stages(&[Stage::TrainFlhuc], "dump-m")?;
    let feats = Features::load(cfg, &ws, &[WindowSpec::Utterance])?;
    let (_, models) = load_flhuc(cfg, &ws)?;
    let model = &models[0];
    let (sat_net, _) = ws.load_transforms("am/sat.otfa")?;
    let dims = sat_net
        .ok_or_else(|| Error::format(ws.path("am/sat.otfa"), "checkpoint holds no network"))?
        .lhuc_dims();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["speaker".to_string(), "utterance".into(), "segment".into()];
    header.extend((0..model.tdnn.hidden()).map(|i| format!("m{i}")));
    w.write_record(&header).map_err(csv_err)?;
    let mut rows = 0;
    for (spk, utts) in feats.manifest.by_speaker(Split::Test) {
        let mut g = OnTheFlyGenerator::new(&model.tdnn, &model.affine, spk, &dims)?;
        for (i, u) in utts.iter().enumerate() {
            let x = feats.regression_input(&u.id, model.variant)?;
            if let Some(step) = g.push_segment(&x)? {
                let mut rec = vec![spk.to_string(), u.id.clone(), i.to_string()];
                rec.extend(step.m.iter().map(|v| format!("{v:.9e}")));
                w.write_record(&rec).map_err(csv_err)?;
                rows += 1;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    write_atomic(out, &bytes)?;
    Ok(rows)
}

pub(super) fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv: {e}"))
}
