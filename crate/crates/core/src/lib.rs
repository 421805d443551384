//! Memory-recurrent MLP-Mixer engine for scoring long multimodal sequences.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is pure
//! computation: a small dense tensor type with a reverse-mode tape, the
//! Mixer block, the memory recurrent unit, the full bidirectional scoring
//! model with its ablation variants, metrics, Adam training, and the
//! synthetic planted-signal generator. File formats and the command line
//! live in the `skmix` companion crate.
//!
//! A typical forward pass:
//!
//! ```
//! use skmix_core::{ModelConfig, SkatingMixer, ParamStore, Precision, ClipFeatures, Tensor};
//!
//! let config = ModelConfig::toy(8, 2, 2, 4, 2);
//! let mut store = ParamStore::new(Precision::F64);
//! let model = SkatingMixer::build(&config, &mut store, 42).unwrap();
//! let clip = ClipFeatures::new(Tensor::zeros(&[2, 8]), Tensor::zeros(&[2, 8])).unwrap();
//! let scores = model.score(&store, &[clip.clone(), clip]).unwrap();
//! assert_eq!(scores.len(), 2);
//! ```

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod error;
pub mod flops;
pub mod gradcheck;
pub mod init;
pub mod metrics;
pub mod mixer;
pub mod model;
pub mod mru;
pub mod param;
pub mod segment;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use flops::count_macs;
pub use gradcheck::{grad_check, GradCheckReport, ParamCheck};
pub use metrics::{mse, ranking_report, spearman, EvalReport, RankEntry, RankingReport};
pub use mixer::{MixerBlock, MixerStack};
pub use model::{
    FusionVariant, ForwardHooks, ModelConfig, MixerDepths, ScoreVector, ScoringTokenMode,
    SkatingMixer,
};
pub use mru::{Bottleneck, ClipFeatures, Mru, MruState};
pub use param::{Gradients, ParamId, ParamStore, Parameter};
pub use segment::{segment_stream, ClipSpec};
pub use synth::{synth_generate, Category, SynthConfig, SynthVideo};
pub use tape::{Tape, Var};
pub use tensor::{Precision, Tensor};
pub use train::{
    adam_step, multi_head_mse, train_loop, AdamState, HeadLoss, LossReport, Sample, TrainConfig,
};
