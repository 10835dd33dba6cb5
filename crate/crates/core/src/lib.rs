//! Pose-token language modeling at desk scale.
//!
//! A small decoder-only transformer answers chat prompts; when it emits the
//! reserved pose token, the hidden state that predicted it is projected to 24
//! joint rotations. Around the model sit a kinematic body model, a synthetic
//! data pipeline with a rule-based captioner, exact reverse-mode training and
//! the evaluation metrics.

pub mod body;
pub mod data;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod rotmath;
pub mod tok;
pub mod train;

pub use body::{forward_kinematics, JointSet, KinematicTree};
pub use data::{ChatRecord, ObservationSeq, RecordKind};
pub use error::{Error, Result};
pub use metrics::MetricReport;
pub use model::{ModelConfig, ModelWeights};
pub use rotmath::{AxisAngle, PoseParams, Rot6D, RotMat, NUM_JOINTS};
pub use tok::Vocab;
