//! Recognition pipeline: sample loading, preprocessing, feature extraction,
//! training and classification, and training-set storage.

pub mod error;
pub mod features;
pub mod network;
pub mod preprocess;
pub mod sample;
pub mod stages;
pub mod storage;
pub mod training;

pub use error::PipelineError;
pub use features::{extract_features, Extractor, FeatureVector, Span};
pub use network::{classify_network, parse_network, validate_network, NetworkConfig};
pub use preprocess::{preprocess, PreprocessOp};
pub use sample::{load_sample, Sample, SampleFormat};
pub use stages::{Classifier, PipelineConfig};
pub use storage::{dump, restore, DumpMode};
pub use training::{classify_distance, ClassId, ResultSet, TrainingSet};
