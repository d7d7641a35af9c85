//! Valence prediction pipeline for auditory-verbal hallucination reports.
//!
//! Mobile-sensing windows, diary audio and diary transcripts are turned into
//! fixed-width feature blocks, and four dense models (auditory-textual,
//! sensing, hybrid and overall) are trained per EMA question.

pub mod archive;
pub mod cohort;
pub mod embedder;
pub mod error;
pub mod harness;
pub mod mobility;
pub mod nn;
pub mod rocket;
pub mod seed;
pub mod sonify;
pub mod text;
pub mod time;

pub use archive::{Tensor, TensorArchive};
pub use cohort::{Cohort, EmaResponse, Ordinal, Participant, ParticipantId, Question, SensingEvent, SensingPayload};
pub use error::{Error, Result};
pub use mobility::{MobilityConfig, SensingWindow};
pub use seed::Seed;
pub use sonify::{LogMelPatchSet, NormalizedSeries, TransformConfig, Waveform};
pub use time::Timestamp;
