//! Harmonic vowel synthesis filtered by a speaker profile.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{SpeakerProfile, TokenTemplate};

const BLOCK: usize = 80;
const NOISE_REL_DB: f64 = -30.0;
const TARGET_RMS: f64 = 0.08;
const TRANSITION_SECS: f64 = 0.04;
const RAMP_SECS: f64 = 0.015;

pub(crate) fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Magnitude of a second-order resonance at `f`, unity at DC.
fn resonance(f: f64, centre: f64, bandwidth: f64) -> f64 {
    let c2 = centre * centre;
    c2 / ((c2 - f * f).powi(2) + (bandwidth * f).powi(2)).sqrt()
}

/// Spectral envelope of the speaker and the current formants.
fn envelope(f: f64, formants: &[f64; 3], p: &SpeakerProfile) -> f64 {
    let tilt = 10f64.powf(p.tilt_db_per_octave / 20.0 * (f.max(50.0) / 100.0).log2());
    let mut a = tilt;
    for &fc in formants {
        let bw = (60.0 + 0.06 * fc) * (1.0 + p.severity);
        a *= resonance(f, fc, bw);
    }
    let z = (f - p.resonance_hz) / 250.0;
    a * (1.0 + p.resonance_gain * (-0.5 * z * z).exp())
}

/// Per-segment durations and formant targets for one rendition.
struct Plan {
    bounds: Vec<f64>,
    targets: Vec<[f64; 3]>,
}

fn plan(template: &TokenTemplate, p: &SpeakerProfile, segment_secs: f64, rng: &mut ChaCha8Rng) -> Plan {
    let mut bounds = vec![0.0];
    let mut targets = Vec::with_capacity(template.formants.len());
    for f in &template.formants {
        let d = segment_secs / p.tempo * (1.0 + 0.15 * rng.gen_range(-1.0..1.0));
        bounds.push(bounds.last().unwrap() + d);
        let imprecision = 1.0 + 0.08 * p.severity * gaussian(rng);
        targets.push([
            f[0] * p.formant_shift * imprecision,
            f[1] * p.formant_shift * imprecision,
            f[2] * p.formant_shift,
        ]);
    }
    Plan { bounds, targets }
}

fn formants_at(plan: &Plan, t: f64) -> [f64; 3] {
    let n = plan.targets.len();
    let seg = plan.bounds[1..].iter().position(|&b| t < b).unwrap_or(n - 1);
    let cur = plan.targets[seg];
    // Log-linear glide across each internal boundary.
    let half = TRANSITION_SECS / 2.0;
    let blend = |a: [f64; 3], b: [f64; 3], w: f64| {
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = (a[i].ln() * (1.0 - w) + b[i].ln() * w).exp();
        }
        out
    };
    if seg + 1 < n && t > plan.bounds[seg + 1] - half {
        let w = 0.5 * (t - (plan.bounds[seg + 1] - half)) / half;
        return blend(cur, plan.targets[seg + 1], w);
    }
    if seg > 0 && t < plan.bounds[seg] + half {
        let w = 0.5 + 0.5 * (t - plan.bounds[seg]) / half;
        return blend(plan.targets[seg - 1], cur, w);
    }
    cur
}

/// Renders one token for one speaker. Deterministic given `seed`.
pub fn render(
    template: &TokenTemplate,
    profile: &SpeakerProfile,
    segment_secs: f64,
    sample_rate: u32,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate as f64;
    let nyquist_margin = 0.47 * sr;
    let plan = plan(template, profile, segment_secs, &mut rng);
    let total_secs = *plan.bounds.last().unwrap();
    let n = (total_secs * sr).round() as usize;
    let max_harmonics = (nyquist_margin / (profile.f0_hz * 0.5)) as usize + 1;
    let mut phase = vec![0.0f64; max_harmonics];
    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let end = (start + BLOCK).min(n);
        let t = (start + end) as f64 / 2.0 / sr;
        let progress = t / total_secs;
        let f0 = profile.f0_hz * (1.0 - 0.1 * progress) * (1.0 + profile.jitter * gaussian(&mut rng)).max(0.5);
        let formants = formants_at(&plan, t);
        let harmonics = ((nyquist_margin / f0) as usize).min(max_harmonics);
        for (h, ph) in phase.iter_mut().enumerate().take(harmonics) {
            let f = f0 * (h + 1) as f64;
            let amp = envelope(f, &formants, profile);
            let step = 2.0 * PI * f / sr;
            let (mut s, mut c) = ph.sin_cos();
            let (ss, cs) = step.sin_cos();
            for v in &mut out[start..end] {
                *v += amp * s;
                let ns = s * cs + c * ss;
                c = c * cs - s * ss;
                s = ns;
            }
            *ph = (*ph + step * (end - start) as f64) % (2.0 * PI);
        }
        start = end;
    }
    let ramp = (RAMP_SECS * sr) as usize;
    for i in 0..ramp.min(n / 2) {
        let g = 0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos();
        out[i] *= g;
        out[n - 1 - i] *= g;
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
    let gain = if rms > 0.0 { TARGET_RMS / rms } else { 0.0 };
    let noise_sd = TARGET_RMS * 10f64.powf(NOISE_REL_DB / 20.0);
    for v in &mut out {
        *v = (*v * gain + noise_sd * gaussian(&mut rng)).clamp(-1.0, 1.0);
    }
    out
}
