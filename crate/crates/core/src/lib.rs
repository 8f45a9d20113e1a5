//! Identify XR users from head and hand motion.
//!
//! The pipeline runs from raw tracking data to evaluated classifiers:
//!
//! * [`bvh`] parses motion-capture files and extracts head and wrist poses
//!   into [`Take`]s, which [`io`] reads and writes.
//! * [`encoding`] turns takes into scene-relative, body-relative or
//!   body-relative velocity features.
//! * [`sampling`] cuts feature sequences into binned statistic vectors or
//!   resampled windows and standardizes them.
//! * [`dataset`] filters takes and splits them per subject; [`synth`]
//!   generates seeded synthetic subjects.
//! * [`models`] holds the random forest, MLP and recurrent classifiers with
//!   their training loop.
//! * [`eval`] scores models per subject, runs majority voting over longer
//!   sequences and the scene-offset probe.
//! * [`hpo`] runs the two-stage hyperparameter search.

pub mod bvh;
pub mod dataset;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod hpo;
pub mod io;
pub mod models;
pub mod pipeline;
pub mod sampling;
pub mod seed;
pub mod synth;

pub use encoding::{EncodingKind, FeatureSequence};
pub use error::{Error, Result};
pub use geometry::{MotionFrame, Pose, Take, UnitQuaternion, Vec3};
pub use models::{Family, TrainedModel};
pub use sampling::{DataParams, SampleSet, Scaler};
