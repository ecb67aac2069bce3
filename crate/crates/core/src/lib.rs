//! Convolutional-recurrent classifiers for short speech utterances.
//!
//! The pipeline turns 16 kHz waveforms into spliced log-Mel or MFCC blocks,
//! optionally augments them with additive noise, trains LDNN and X-CLDNN
//! models (X one of S, T, ST, FST), and probes what each module has learned
//! with linear classifiers, cluster inertia and LDA projections.
//!
//! Start with [`dsp::FeatureExtractor`] for features, [`model::Model`] for
//! the networks, [`train::train`] for optimisation and
//! [`experiment::run_experiment`] for the full flow driven by a [`Config`].

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod experiment;
pub mod model;
pub mod probe;
pub mod recurrent;
pub mod synth;
pub mod train;

pub use config::Config;
pub use error::{Error, Result};
pub use model::{Model, ModelConfig, Variant};
