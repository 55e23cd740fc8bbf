//! Event-camera detection pipeline: codecs, representations, still-object labelling, tracking and evaluation.
//!
//! * [`events`]: event streams, the EVS1 codec and constant-time windowing
//! * [`repr`]: histogram, timestamp, time-surface and event-volume tensors, occupancy masks
//! * [`autolabel`]: still/moving visibility labelling and cleaning of box labels
//! * [`tracker`]: head-map decoding and permanence-aware tracking
//! * [`consistency`]: displacement/visibility consistency loss and its gradient
//! * [`eval`]: AP, mAP and fine-grained match counts
//! * [`synth`]: synthetic scenes with analytic ground truth

pub mod autolabel;
pub mod consistency;
pub mod eval;
pub mod events;
pub mod labels;
pub mod repr;
pub mod synth;
pub mod tensor;
pub mod tracker;

pub use autolabel::{AutoLabelParams, AutoLabeler, AutolabelError, AutolabelSummary};
pub use consistency::CenterSample;
pub use eval::{EvalError, MatchReport};
pub use events::{CodecError, Event, EventStream, EventWindow};
pub use labels::{LabelError, LabelTable, LabeledBox, PixelRect};
pub use repr::{BitGrid, OccupancyMask, ReprError, Representation};
pub use synth::{SceneOutput, SceneSpec, SynthError};
pub use tensor::{FrameTensor, TensorError};
pub use tracker::{Detection, HeadMaps, TrackError, Tracker, TrackerParams};
