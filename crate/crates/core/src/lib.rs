//! Closed-loop P300 brain–computer interface: stimulus scheduling, a
//! synthetic EEG subject, a framed acquisition protocol, band-pass and ICA
//! preprocessing, shrinkage LDA and trial voting.

// `!(x > 0.0)` deliberately rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod dsp;
pub mod error;
pub mod features;
pub mod ica;
pub mod lda;
pub mod record;
pub mod scheduler;
pub mod session;
pub mod synth;

pub use error::{Error, Result};
pub use features::{EpochWindow, LabeledDataset, PipelineConfig, Preprocessor};
pub use lda::LdaModel;
pub use record::{ChannelSet, EegRecord, StimulusEvent, DEFAULT_CHANNELS, DEFAULT_RATE, N_IMAGES};
pub use scheduler::{ScenarioSchedule, TimingConfig};
pub use session::{EvaluationConfig, EvaluationReport, ObjectCatalog, SelectionResult, TrainedModel};
pub use synth::SubjectParams;
