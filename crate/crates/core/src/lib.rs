//! Classification of nitrogen-stress severity from dated canopy image
//! sequences.
//!
//! Two pipelines share one data path:
//!
//! * **spatio-temporal**: a frozen per-frame feature extractor applied with
//!   shared weights to every frame of a fixed-length window, an LSTM over the
//!   resulting feature sequence, and a small regularized dense head;
//! * **spatial**: the same extractor (partially fine-tuned) on single
//!   augmented frames with a dense head.
//!
//! Around them sit ingestion of class-labelled, date-stamped image folders
//! ([`ingest`]), sliding-window sequencing and stratified folds
//! ([`sequencer`]), a seeded synthetic dataset whose classes differ only in
//! their temporal progression ([`synthgen`]), k-fold training
//! ([`trainer`]) and reporting ([`report`]).

pub mod backbone;
pub mod error;
pub mod ingest;
pub mod models;
pub mod nn;
pub mod report;
pub mod sequencer;
pub mod synthgen;
pub mod temporal;
pub mod trainer;

pub use error::{Error, Result};
