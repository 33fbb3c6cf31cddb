use std::collections::BTreeMap;

use eduction_core::codec::{Decoder, Encoder};
use sha2::{Digest, Sha256};

use crate::error::PipelineError;
use crate::features::FeatureVector;

pub type ClassId = i64;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub mean: Vec<f64>,
    pub count: u64,
}

/// Per-class running means. `dimension` is fixed by the first training vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingSet {
    pub dimension: Option<usize>,
    pub classes: BTreeMap<ClassId, ClassStats>,
}

impl TrainingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    fn check_dimension(&self, got: usize) -> Result<(), PipelineError> {
        match self.dimension {
            Some(expected) if expected != got => Err(PipelineError::DimensionMismatch { expected, got }),
            _ => Ok(()),
        }
    }

    /// mean' = (mean * n + fv) / (n + 1)
    pub fn train(&mut self, class_id: ClassId, fv: &FeatureVector) -> Result<(), PipelineError> {
        let x = &fv.components;
        if x.is_empty() {
            return Err(PipelineError::DimensionMismatch {
                expected: self.dimension.unwrap_or(1),
                got: 0,
            });
        }
        self.check_dimension(x.len())?;
        self.dimension = Some(x.len());
        let stats = self.classes.entry(class_id).or_insert_with(|| ClassStats {
            mean: vec![0.0; x.len()],
            count: 0,
        });
        let n = stats.count as f64;
        for (m, v) in stats.mean.iter_mut().zip(x) {
            *m = (*m * n + v) / (n + 1.0);
        }
        stats.count += 1;
        Ok(())
    }

    /// SHA-256 of the binary dump; equal sets have equal digests.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(crate::storage::encode_binary(self)).into()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultSet {
    /// (class, score), ascending by score.
    pub ranked: Vec<(ClassId, f64)>,
    pub tie_flag: bool,
}

impl ResultSet {
    pub fn best(&self) -> Option<ClassId> {
        self.ranked.first().map(|(c, _)| *c)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u8(1).u8(self.tie_flag as u8).u32(self.ranked.len() as u32);
        for (c, s) in &self.ranked {
            enc.i64(*c).f64(*s);
        }
        enc.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, PipelineError> {
        let mut dec = Decoder::new(buf);
        dec.expect_version(1)?;
        let tie_flag = dec.u8()? != 0;
        let n = dec.u32()?;
        let ranked = (0..n)
            .map(|_| Ok((dec.i64()?, dec.f64()?)))
            .collect::<Result<Vec<_>, eduction_core::codec::DecodeError>>()?;
        dec.finish()?;
        Ok(Self { ranked, tie_flag })
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Nearest class mean by Euclidean distance. An exact tie on the minimum
/// sets `tie_flag` and goes to the lowest class id.
pub fn classify_distance(fv: &FeatureVector, ts: &TrainingSet) -> Result<ResultSet, PipelineError> {
    if ts.is_empty() {
        return Err(PipelineError::EmptyTrainingSet);
    }
    ts.check_dimension(fv.dimension())?;
    let mut ranked: Vec<(ClassId, f64)> = ts
        .classes
        .iter()
        .map(|(c, s)| (*c, euclidean(&fv.components, &s.mean)))
        .collect();
    // Stable sort keeps ascending class id among equal scores.
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
    let tie_flag = ranked.len() > 1 && ranked[0].1 == ranked[1].1;
    Ok(ResultSet { ranked, tie_flag })
}
