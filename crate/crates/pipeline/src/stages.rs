//! The four recognition stages and an in-process run of all of them.

use crate::error::PipelineError;
use crate::features::{extract_features, Extractor, FeatureVector};
use crate::network::{classify_network, NetworkConfig};
use crate::preprocess::{preprocess, PreprocessOp};
use crate::sample::{load_sample, Sample, SampleFormat};
use crate::training::{classify_distance, ResultSet, TrainingSet};

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Distance,
    Network(NetworkConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub format: SampleFormat,
    pub preprocessing: Vec<PreprocessOp>,
    pub extractors: Vec<Extractor>,
    pub classifier: Classifier,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            format: SampleFormat::WavPcm16,
            preprocessing: vec![PreprocessOp::Normalize, PreprocessOp::RemoveNoise { window: 3 }],
            extractors: vec![
                Extractor::Energy { frames: 4 },
                Extractor::ZeroCrossings { frames: 4 },
                Extractor::MinMax,
            ],
            classifier: Classifier::Distance,
        }
    }
}

impl PipelineConfig {
    pub fn load(&self, doc_id: &str, source: &[u8]) -> Result<Sample, PipelineError> {
        load_sample(doc_id, source, self.format)
    }

    pub fn preprocess(&self, sample: &Sample) -> Result<Sample, PipelineError> {
        preprocess(sample, &self.preprocessing)
    }

    pub fn features(&self, sample: &Sample) -> Result<FeatureVector, PipelineError> {
        extract_features(sample, &self.extractors)
    }

    pub fn classify(&self, fv: &FeatureVector, ts: &TrainingSet) -> Result<ResultSet, PipelineError> {
        match &self.classifier {
            Classifier::Distance => classify_distance(fv, ts),
            Classifier::Network(net) => Ok(ResultSet {
                ranked: vec![(classify_network(&fv.components, net)?, 0.0)],
                tie_flag: false,
            }),
        }
    }

    /// Feature vector of a document, for training.
    pub fn featurize(&self, doc_id: &str, source: &[u8]) -> Result<FeatureVector, PipelineError> {
        self.features(&self.preprocess(&self.load(doc_id, source)?)?)
    }

    /// All four stages on the calling thread.
    pub fn run_local(&self, doc_id: &str, source: &[u8], ts: &TrainingSet) -> Result<ResultSet, PipelineError> {
        self.classify(&self.featurize(doc_id, source)?, ts)
    }
}
