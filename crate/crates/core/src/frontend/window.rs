use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Window sizes available for on-the-fly extraction, in milliseconds.
pub const WINDOW_SIZES_MS: [u32; 5] = [10, 50, 100, 200, 300];

/// Non-overlapping analysis window: a fixed duration or the whole utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum WindowSpec {
    Millis(u32),
    Utterance,
}

impl WindowSpec {
    pub fn millis(ms: u32) -> Result<Self> {
        if WINDOW_SIZES_MS.contains(&ms) {
            Ok(WindowSpec::Millis(ms))
        } else {
            Err(Error::config(format!(
                "window {ms} ms not supported; choose one of {WINDOW_SIZES_MS:?} or \"utterance\""
            )))
        }
    }

    /// Every supported window, shortest first, utterance last.
    pub fn all() -> Vec<WindowSpec> {
        WINDOW_SIZES_MS
            .iter()
            .map(|&ms| WindowSpec::Millis(ms))
            .chain(std::iter::once(WindowSpec::Utterance))
            .collect()
    }

    /// Seconds of audio a streaming consumer must wait for before the window
    /// is complete.
    pub fn wait_secs(&self, utterance_secs: f64) -> f64 {
        match *self {
            WindowSpec::Millis(ms) => (ms as f64 / 1000.0).min(utterance_secs),
            WindowSpec::Utterance => utterance_secs,
        }
    }
}

impl fmt::Display for WindowSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindowSpec::Millis(ms) => write!(f, "{ms}ms"),
            WindowSpec::Utterance => f.write_str("utterance"),
        }
    }
}

impl FromStr for WindowSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("utterance") || s.eq_ignore_ascii_case("utt") {
            return Ok(WindowSpec::Utterance);
        }
        let digits = s.strip_suffix("ms").unwrap_or(s);
        let ms: u32 = digits
            .parse()
            .map_err(|_| Error::config(format!("cannot parse window spec {s:?}")))?;
        WindowSpec::millis(ms)
    }
}

impl TryFrom<String> for WindowSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<WindowSpec> for String {
    fn from(w: WindowSpec) -> String {
        w.to_string()
    }
}

/// Partitions `[0, frames)` into consecutive windows. The final window keeps
/// any shorter remainder.
pub fn segment_windows(frames: usize, frame_shift_ms: f64, spec: WindowSpec) -> Result<Vec<Range<usize>>> {
    if frames == 0 {
        return Err(Error::data("cannot segment an empty utterance"));
    }
    let len = match spec {
        WindowSpec::Utterance => return Ok(std::iter::once(0..frames).collect()),
        WindowSpec::Millis(ms) => {
            if frame_shift_ms.is_nan() || frame_shift_ms <= 0.0 || (ms as f64) < frame_shift_ms {
                return Err(Error::config(format!(
                    "window of {ms} ms is shorter than one {frame_shift_ms} ms frame"
                )));
            }
            ((ms as f64 / frame_shift_ms) + 1e-9).floor() as usize
        }
    };
    Ok((0..frames).step_by(len).map(|s| s..(s + len).min(frames)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_hundred_ms_windows() {
        let w = segment_windows(100, 10.0, WindowSpec::Millis(300)).unwrap();
        assert_eq!(w, vec![0..30, 30..60, 60..90, 90..100]);
    }

    #[test]
    fn utterance_window() {
        assert_eq!(segment_windows(118, 10.0, WindowSpec::Utterance).unwrap(), vec![0..118]);
    }

    #[test]
    fn ten_ms_singletons() {
        let w = segment_windows(100, 10.0, WindowSpec::Millis(10)).unwrap();
        assert_eq!(w.len(), 100);
        assert!(w.iter().all(|r| r.len() == 1));
    }

    #[test]
    fn sub_frame_window_rejected() {
        assert!(segment_windows(10, 20.0, WindowSpec::Millis(10)).is_err());
    }

    #[test]
    fn parse_and_display() {
        assert_eq!("100ms".parse::<WindowSpec>().unwrap(), WindowSpec::Millis(100));
        assert_eq!("utterance".parse::<WindowSpec>().unwrap(), WindowSpec::Utterance);
        assert!("70ms".parse::<WindowSpec>().is_err());
        assert_eq!(WindowSpec::Millis(50).to_string(), "50ms");
    }
}
