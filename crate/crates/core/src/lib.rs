//! Self-supervised fragment-ordering toolkit: audio front end, from-scratch
//! neural network stack, pair-ranking models, exact ordering solvers, and a
//! synthetic corpus generator for end-to-end testing.

pub mod audio;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod medley;
pub mod models;
pub mod solver;
pub mod synth;
pub mod tensor;

pub use audio::{AudioClip, CorpusStats, MelSpectrogram};
pub use corpus::{Fragment, FragmentPair, NegativeClasses, PairClass};
pub use error::{Error, Result};
pub use models::{Model, SenModel, SnModel, TrainConfig};
pub use tensor::{ParamPair, Scalar, Tensor};
