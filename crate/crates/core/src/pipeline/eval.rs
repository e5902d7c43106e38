//! The `evaluate` stage: scores every test utterance under every system and
//! writes the grouped error table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::stages::{csv_err, load_flhuc, par_map, Features, VarianceEntry};
use super::workspace::Workspace;
use crate::am::{
    assemble_input, combine_scores, decode, evaluate as score_errors, score_frames, AdaptationMode, ErrorReport,
    LabeledSegment,
};
use crate::corpus::{Split, UtteranceRecord};
use crate::error::{Error, Result};
use crate::flhuc::OnTheFlyGenerator;
use crate::frontend::WindowSpec;
use crate::io::write_atomic;
use crate::lhuc::LhucTransform;
use crate::nn::Matrix;

pub const EVAL_CSV: &str = "eval/eval.csv";
pub const EVAL_SUMMARY: &str = "eval/summary.json";

/// One row of the evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemResult {
    pub system: String,
    pub group: String,
    pub fer: f64,
    pub ter: f64,
    /// Mean data-wait fraction of the utterance; `None` for systems that
    /// need the speaker's complete test data.
    pub rtf: Option<f64>,
    pub frames: usize,
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub config_hash: String,
    pub seed: u64,
    /// System names in table order.
    pub systems: Vec<String>,
    /// Rows of `eval.csv`: one per group, then the pooled `seen`, `unseen`
    /// and `all` rows.
    pub results: Vec<SystemResult>,
    pub variance: Vec<VarianceEntry>,
    /// Zero-valued LHUC transforms reproduced the unadapted scores exactly
    /// on every test frame.
    pub lhuc_identity_exact: bool,
    pub pca_components: usize,
}

impl EvalSummary {
    pub fn overall(&self, system: &str) -> Option<&SystemResult> {
        self.results.iter().find(|r| r.system == system && r.group == "all")
    }

    pub fn ter(&self, system: &str) -> Option<f64> {
        self.overall(system).map(|r| r.ter)
    }

    pub fn variance_at(&self, window: WindowSpec) -> Option<&VarianceEntry> {
        self.variance.iter().find(|v| v.window == window)
    }

    pub fn load(ws: &Workspace) -> Result<Self> {
        ws.load_json(EVAL_SUMMARY)
    }
}

pub fn aux_system(w: WindowSpec) -> String {
    format!("aux-svr-{w}")
}

pub fn flhuc_system(variant: &str) -> String {
    format!("flhuc-{variant}")
}

pub const SI_SYSTEM: &str = "si";
pub const OFFLINE_SYSTEM: &str = "lhuc-offline";

pub fn fixed_system(variant: &str) -> String {
    format!("flhuc-{variant}-fixed")
}

pub fn combo_system(w: WindowSpec, variant: &str) -> String {
    format!("{}+{}", aux_system(w), flhuc_system(variant))
}

/// System names in table order.
pub fn system_names(cfg: &PipelineConfig) -> Vec<String> {
    let primary = cfg.flhuc.inputs[0].name();
    let mut names = vec![SI_SYSTEM.to_string()];
    names.extend(cfg.evaluate.windows.iter().map(|&w| aux_system(w)));
    names.push(OFFLINE_SYSTEM.into());
    names.extend(cfg.flhuc.inputs.iter().map(|v| flhuc_system(v.name())));
    names.push(fixed_system(primary));
    names.push(combo_system(cfg.evaluate.combine_window, primary));
    names
}

struct UttOutcome {
    group: usize,
    seen: bool,
    /// Per system, in [`system_names`] order.
    reports: Vec<(ErrorReport, Option<f64>)>,
    identity_exact: bool,
}

fn errors(logpost: Matrix, u: &UtteranceRecord) -> Result<ErrorReport> {
    let segments: Vec<LabeledSegment> = u
        .alignment
        .iter()
        .map(|a| LabeledSegment {
            frames: a.start..a.end,
            token: a.token,
        })
        .collect();
    let hyp = decode(logpost, &segments)?;
    score_errors(&hyp, &u.frame_labels(), &segments)
}

pub(super) fn evaluate(cfg: &PipelineConfig, ws: &Workspace) -> Result<Vec<String>> {
    let mut windows = cfg.evaluate.windows.clone();
    if !windows.contains(&WindowSpec::Utterance) {
        windows.push(WindowSpec::Utterance);
    }
    let feats = Features::load(cfg, ws, &windows)?;
    let si = ws.load_network("am/si.otfa")?;
    let aux_net = ws.load_network("am/aux.otfa")?;
    let (sat_net, _) = ws.load_transforms("am/sat.otfa")?;
    let sat_net = sat_net.ok_or_else(|| Error::format(ws.path("am/sat.otfa"), "checkpoint holds no network"))?;
    let (_, offline) = ws.load_transforms("adapt/offline.otfa")?;
    let (pca, models) = load_flhuc(cfg, ws)?;
    let dims = sat_net.lhuc_dims();
    let names = system_names(cfg);
    let splice = &cfg.am.splice;
    let combine_idx = cfg
        .evaluate
        .windows
        .iter()
        .position(|&w| w == cfg.evaluate.combine_window)
        .expect("validated");

    let by_speaker: Vec<(String, Vec<&UtteranceRecord>)> = feats
        .manifest
        .by_speaker(Split::Test)
        .into_iter()
        .map(|(s, u)| (s.to_owned(), u))
        .collect();

    let per_speaker: Vec<Vec<UttOutcome>> = par_map(&by_speaker, |(spk, utts)| {
        let profile = feats
            .manifest
            .speaker(spk)
            .ok_or_else(|| Error::data(format!("unknown speaker {spk}")))?;
        let (group, seen) = (profile.group_index, profile.seen);
        let offline_t = offline.get(spk).ok_or_else(|| Error::Dependency {
            stage: "adapt".into(),
            detail: format!("no offline transform for test speaker {spk}"),
        })?;
        let mut gens = models
            .iter()
            .map(|m| OnTheFlyGenerator::new(&m.tdnn, &m.affine, spk, &dims))
            .collect::<Result<Vec<_>>>()?;
        let identity = LhucTransform::identity(spk, &dims);
        let mut fixed: Option<LhucTransform> = None;
        let mut outcomes = Vec::with_capacity(utts.len());
        for u in utts {
            let fbk = feats.fbk(&u.id)?;
            let secs = u.samples as f64 / cfg.corpus.sample_rate as f64;
            let base = assemble_input(fbk, splice, None)?;
            let mut reports = Vec::with_capacity(names.len());
            reports.push((
                errors(score_frames(&si, &base, AdaptationMode::None, None)?, u)?,
                Some(0.0),
            ));
            let mut combine_src = None;
            for (i, &w) in cfg.evaluate.windows.iter().enumerate() {
                let x = assemble_input(fbk, splice, Some(&feats.aux(&u.id, w)?))?;
                let lp = score_frames(&aux_net, &x, AdaptationMode::AuxFeature, None)?;
                if i == combine_idx {
                    combine_src = Some(lp.clone());
                }
                reports.push((errors(lp, u)?, Some(w.wait_secs(secs) / secs)));
            }
            let sat_plain = score_frames(&sat_net, &base, AdaptationMode::None, None)?;
            let sat_zero = score_frames(&sat_net, &base, AdaptationMode::LhucOffline, Some(&identity))?;
            let identity_exact = sat_plain
                .data()
                .iter()
                .zip(sat_zero.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            let lp = score_frames(&sat_net, &base, AdaptationMode::LhucOffline, Some(offline_t))?;
            reports.push((errors(lp, u)?, None));
            let mut primary = None;
            for (gi, (g, m)) in gens.iter_mut().zip(&models).enumerate() {
                let x = feats.regression_input(&u.id, m.variant)?;
                let step = g
                    .push_segment(&x)?
                    .ok_or_else(|| Error::data(format!("utterance {} has no frames", u.id)))?;
                let lp = score_frames(&sat_net, &base, AdaptationMode::FLhuc, Some(&step.transform))?;
                if gi == 0 {
                    fixed.get_or_insert_with(|| step.transform.clone());
                    primary = Some(lp.clone());
                }
                reports.push((errors(lp, u)?, Some(1.0)));
            }
            let lp = score_frames(&sat_net, &base, AdaptationMode::FLhuc, fixed.as_ref())?;
            reports.push((errors(lp, u)?, Some(1.0)));
            let a = combine_src.expect("combination window is evaluated");
            let b = primary.expect("at least one regression variant");
            let combo_rtf = reports[1 + combine_idx].1.map(|r| r.max(1.0));
            reports.push((errors(combine_scores(&a, &b, cfg.evaluate.lambda)?, u)?, combo_rtf));
            debug_assert_eq!(reports.len(), names.len());
            outcomes.push(UttOutcome {
                group,
                seen,
                reports,
                identity_exact,
            });
        }
        Ok(outcomes)
    })?;

    // Buckets: every group, then seen and unseen speakers, then everyone.
    let mut buckets: Vec<String> = cfg.corpus.groups.clone();
    buckets.extend(["seen", "unseen", "all"].map(String::from));
    let n_groups = cfg.corpus.groups.len();
    let mut acc: BTreeMap<(usize, usize), (ErrorReport, f64, usize)> = BTreeMap::new();
    let mut identity_exact = true;
    for o in per_speaker.iter().flatten() {
        identity_exact &= o.identity_exact;
        let regime = if o.seen { n_groups } else { n_groups + 1 };
        for (si, (rep, rtf)) in o.reports.iter().enumerate() {
            for b in [o.group, regime, n_groups + 2] {
                let e = acc.entry((si, b)).or_default();
                e.0.merge(rep);
                e.1 += rtf.unwrap_or(f64::NAN);
                e.2 += 1;
            }
        }
    }
    let mut results = Vec::new();
    for (si, name) in names.iter().enumerate() {
        for (b, bucket) in buckets.iter().enumerate() {
            if let Some((rep, rtf_sum, n)) = acc.get(&(si, b)) {
                let rtf = rtf_sum / *n as f64;
                results.push(SystemResult {
                    system: name.clone(),
                    group: bucket.clone(),
                    fer: rep.fer(),
                    ter: rep.ter(),
                    rtf: rtf.is_finite().then_some(rtf),
                    frames: rep.frames,
                    tokens: rep.tokens,
                });
            }
        }
    }
    for r in results.iter().filter(|r| r.group == "all") {
        log::info!("evaluate {:<40} FER {:.4} TER {:.4}", r.system, r.fer, r.ter);
    }
    write_atomic(&ws.path(EVAL_CSV), &eval_csv(&results)?)?;
    let summary = EvalSummary {
        config_hash: ws.hash.clone(),
        seed: cfg.seed,
        systems: names,
        results,
        variance: ws.load_json("svr/variance.json")?,
        lhuc_identity_exact: identity_exact,
        pca_components: pca.k(),
    };
    ws.save_json(EVAL_SUMMARY, &summary)?;
    Ok(vec![EVAL_CSV.into(), EVAL_SUMMARY.into()])
}

/// `system,group,FER,TER,RTF` with fixed precision, so identical results
/// give identical bytes.
pub fn eval_csv(results: &[SystemResult]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["system", "group", "FER", "TER", "RTF"])
        .map_err(csv_err)?;
    for r in results {
        let rtf = r.rtf.map(|v| format!("{v:.4}")).unwrap_or_default();
        w.write_record([
            r.system.as_str(),
            r.group.as_str(),
            &format!("{:.6}", r.fer),
            &format!("{:.6}", r.ter),
            &rtf,
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Data(format!("csv: {e}")))
}
