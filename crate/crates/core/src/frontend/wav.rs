use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const SUPPORTED_RATES: [u32; 2] = [8000, 16000];

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if !SUPPORTED_RATES.contains(&sample_rate) {
            return Err(Error::config(format!(
                "unsupported sample rate {sample_rate} Hz (expected 8000 or 16000)"
            )));
        }
        if samples.is_empty() {
            return Err(Error::data("waveform has no samples"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// 16-bit PCM mono WAV bytes.
    pub fn to_wav_bytes(&self) -> Result<Vec<u8>> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut cursor = Cursor::new(Vec::new());
        {
            let mut w = hound::WavWriter::new(&mut cursor, spec)?;
            for &s in &self.samples {
                w.write_sample(quantize(s))?;
            }
            w.finalize()?;
        }
        Ok(cursor.into_inner())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_wav_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let reader = hound::WavReader::open(path)?;
        Self::from_reader(reader, path)
    }

    pub fn from_wav_bytes(bytes: &[u8]) -> Result<Self> {
        let reader = hound::WavReader::new(Cursor::new(bytes))?;
        Self::from_reader(reader, Path::new("<memory>"))
    }

    fn from_reader<R: std::io::Read>(reader: hound::WavReader<R>, path: &Path) -> Result<Self> {
        let spec = reader.spec();
        if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
            return Err(Error::format(path, "expected 16-bit PCM mono"));
        }
        let samples = reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(samples, spec.sample_rate)
    }
}

fn quantize(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_rate_and_empty() {
        assert!(Waveform::new(vec![0.0], 44100).is_err());
        assert!(Waveform::new(vec![], 16000).is_err());
    }

    #[test]
    fn pcm_round_trip_is_within_quantization() {
        let w = Waveform::new(vec![0.0, 0.5, -0.25, 0.999], 16000).unwrap();
        let back = Waveform::from_wav_bytes(&w.to_wav_bytes().unwrap()).unwrap();
        for (a, b) in w.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
        assert_eq!(back.sample_rate(), 16000);
    }
}
