use std::fmt;
use std::io::Cursor;
use std::str::FromStr;

use eduction_core::codec::{Decoder, Encoder};

use crate::error::PipelineError;

/// Rate assumed for headerless raw streams unless the caller says otherwise.
pub const DEFAULT_RAW_RATE: u32 = 8000;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sample_id: String,
    pub values: Vec<f64>,
    pub rate: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    /// Headerless big-endian f64 amplitudes.
    RawF64 { rate: u32 },
    /// Mono 16-bit PCM WAV.
    WavPcm16,
}

impl SampleFormat {
    pub fn name(&self) -> &'static str {
        match self {
            SampleFormat::RawF64 { .. } => "raw-f64",
            SampleFormat::WavPcm16 => "wav-pcm16",
        }
    }
}

impl fmt::Display for SampleFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SampleFormat {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw-f64" => Ok(SampleFormat::RawF64 {
                rate: DEFAULT_RAW_RATE,
            }),
            "wav-pcm16" => Ok(SampleFormat::WavPcm16),
            other => Err(PipelineError::UnsupportedFormat(other.to_owned())),
        }
    }
}

pub fn load_sample(sample_id: &str, source: &[u8], format: SampleFormat) -> Result<Sample, PipelineError> {
    let (values, rate) = match format {
        SampleFormat::RawF64 { rate } => (decode_raw(source)?, rate),
        SampleFormat::WavPcm16 => decode_wav(source)?,
    };
    if rate == 0 {
        return Err(PipelineError::UnableToLoad("sample rate is zero".into()));
    }
    if values.is_empty() {
        return Err(PipelineError::UnableToLoad("document has no samples".into()));
    }
    Ok(Sample {
        sample_id: sample_id.to_owned(),
        values,
        rate,
    })
}

fn decode_raw(source: &[u8]) -> Result<Vec<f64>, PipelineError> {
    if source.len() % 8 != 0 {
        return Err(PipelineError::UnableToLoad(format!(
            "raw stream of {} bytes is not a whole number of f64 values",
            source.len()
        )));
    }
    source
        .chunks_exact(8)
        .map(|c| {
            let v = f64::from_be_bytes(c.try_into().unwrap());
            if v.is_finite() {
                Ok(v)
            } else {
                Err(PipelineError::UnableToLoad("non-finite amplitude".into()))
            }
        })
        .collect()
}

fn decode_wav(source: &[u8]) -> Result<(Vec<f64>, u32), PipelineError> {
    let unable = |e: hound::Error| PipelineError::UnableToLoad(e.to_string());
    let reader = hound::WavReader::new(Cursor::new(source)).map_err(unable)?;
    let spec = reader.spec();
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(PipelineError::UnsupportedFormat(format!(
            "wav with {}-bit {:?} samples",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    if spec.channels != 1 {
        return Err(PipelineError::UnsupportedFormat(format!(
            "wav with {} channels",
            spec.channels
        )));
    }
    let values = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(unable)?;
    Ok((values, spec.sample_rate))
}

pub fn to_raw_f64(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_be_bytes()).collect()
}

/// Encodes amplitudes in [-1, 1] as mono 16-bit PCM WAV.
pub fn to_wav_pcm16(values: &[f64], rate: u32) -> Result<Vec<u8>, PipelineError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let io = |e: hound::Error| PipelineError::Io(e.to_string());
    let mut out = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut out, spec).map_err(io)?;
        for v in values {
            let s = (v.clamp(-1.0, 1.0) * 32767.0).round() as i16;
            w.write_sample(s).map_err(io)?;
        }
        w.finalize().map_err(io)?;
    }
    Ok(out.into_inner())
}

impl Sample {
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::with_capacity(16 + self.values.len() * 8);
        enc.u8(1).str(&self.sample_id).u32(self.rate).u32(self.values.len() as u32);
        for v in &self.values {
            enc.f64(*v);
        }
        enc.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Sample, PipelineError> {
        let mut dec = Decoder::new(buf);
        dec.expect_version(1)?;
        let sample_id = dec.str()?.to_owned();
        let rate = dec.u32()?;
        let n = dec.u32()? as usize;
        let values = (0..n).map(|_| dec.f64()).collect::<Result<Vec<_>, _>>()?;
        dec.finish()?;
        Ok(Sample {
            sample_id,
            values,
            rate,
        })
    }
}
