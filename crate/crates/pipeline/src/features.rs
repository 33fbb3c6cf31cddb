use std::thread;

use eduction_core::codec::{Decoder, Encoder};

use crate::error::PipelineError;
use crate::sample::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extractor {
    /// Sum of squares per frame.
    Energy { frames: usize },
    /// Sign changes per frame.
    ZeroCrossings { frames: usize },
    MinMax,
}

impl Extractor {
    pub fn name(&self) -> &'static str {
        match self {
            Extractor::Energy { .. } => "energy",
            Extractor::ZeroCrossings { .. } => "zero_crossings",
            Extractor::MinMax => "min_max",
        }
    }

    pub fn extract(&self, values: &[f64]) -> Result<Vec<f64>, PipelineError> {
        match *self {
            Extractor::Energy { frames } => {
                Ok(split(values, frames)?.map(|f| f.iter().map(|v| v * v).sum()).collect())
            }
            Extractor::ZeroCrossings { frames } => Ok(split(values, frames)?
                .map(|f| f.windows(2).filter(|w| (w[0] < 0.0) != (w[1] < 0.0)).count() as f64)
                .collect()),
            Extractor::MinMax => {
                if values.is_empty() {
                    return Err(PipelineError::BadFrameCount { frames: 1, len: 0 });
                }
                let min = values.iter().copied().fold(f64::INFINITY, f64::min);
                let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Ok(vec![min, max])
            }
        }
    }
}

/// `frames` contiguous frames; frame j covers `[j*n/frames, (j+1)*n/frames)`.
fn split(values: &[f64], frames: usize) -> Result<impl Iterator<Item = &[f64]>, PipelineError> {
    let n = values.len();
    if frames == 0 || frames > n {
        return Err(PipelineError::BadFrameCount { frames, len: n });
    }
    Ok((0..frames).map(move |j| &values[j * n / frames..(j + 1) * n / frames]))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Span {
    pub extractor: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub components: Vec<f64>,
    pub provenance: Vec<Span>,
}

impl FeatureVector {
    pub fn new(components: Vec<f64>) -> Self {
        let len = components.len();
        Self {
            components,
            provenance: vec![Span {
                extractor: "given".into(),
                start: 0,
                len,
            }],
        }
    }

    pub fn dimension(&self) -> usize {
        self.components.len()
    }

    /// The components produced by one extractor.
    pub fn span_of(&self, extractor: &str) -> Option<&[f64]> {
        self.provenance
            .iter()
            .find(|s| s.extractor == extractor)
            .map(|s| &self.components[s.start..s.start + s.len])
    }

    fn assemble(parts: Vec<(&'static str, Vec<f64>)>) -> Self {
        let mut components = Vec::new();
        let mut provenance = Vec::new();
        for (name, part) in parts {
            provenance.push(Span {
                extractor: name.to_owned(),
                start: components.len(),
                len: part.len(),
            });
            components.extend(part);
        }
        Self {
            components,
            provenance,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u8(1).u32(self.provenance.len() as u32);
        for s in &self.provenance {
            enc.str(&s.extractor).u32(s.start as u32).u32(s.len as u32);
        }
        enc.u32(self.components.len() as u32);
        for v in &self.components {
            enc.f64(*v);
        }
        enc.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, PipelineError> {
        let mut dec = Decoder::new(buf);
        dec.expect_version(1)?;
        let spans = dec.u32()?;
        let provenance = (0..spans)
            .map(|_| {
                Ok(Span {
                    extractor: dec.str()?.to_owned(),
                    start: dec.u32()? as usize,
                    len: dec.u32()? as usize,
                })
            })
            .collect::<Result<Vec<_>, eduction_core::codec::DecodeError>>()?;
        let n = dec.u32()?;
        let components = (0..n).map(|_| dec.f64()).collect::<Result<Vec<_>, _>>()?;
        dec.finish()?;
        Ok(Self {
            components,
            provenance,
        })
    }
}

/// Runs each extractor on its own thread with its own copy of the sample
/// and concatenates the results in declared order.
pub fn extract_features(sample: &Sample, extractors: &[Extractor]) -> Result<FeatureVector, PipelineError> {
    if extractors.is_empty() {
        return Err(PipelineError::NoExtractors);
    }
    let results: Vec<Result<Vec<f64>, PipelineError>> = thread::scope(|scope| {
        let handles: Vec<_> = extractors
            .iter()
            .map(|ex| {
                let copy = sample.values.clone();
                scope.spawn(move || ex.extract(&copy))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("extractor thread panicked"))
            .collect()
    });
    let mut parts = Vec::with_capacity(extractors.len());
    for (ex, r) in extractors.iter().zip(results) {
        parts.push((ex.name(), r?));
    }
    Ok(FeatureVector::assemble(parts))
}

/// Same result as [`extract_features`], computed on the calling thread.
pub fn extract_features_sequential(
    sample: &Sample,
    extractors: &[Extractor],
) -> Result<FeatureVector, PipelineError> {
    if extractors.is_empty() {
        return Err(PipelineError::NoExtractors);
    }
    let parts = extractors
        .iter()
        .map(|ex| Ok((ex.name(), ex.extract(&sample.values)?)))
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(FeatureVector::assemble(parts))
}
