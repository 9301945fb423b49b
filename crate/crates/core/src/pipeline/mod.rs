//! End-to-end orchestration: resampling, sample preparation, right-view
//! generation, toy training, dataset building and batch evaluation.

pub mod config;
pub mod dataset;
pub mod eval;
pub mod generate;
pub mod plan;
pub mod sample;
pub mod scene;
pub mod train;

pub use config::{GammaSpec, GenConfig, LrSchedule, PipelineConfig};
pub use dataset::{build_dataset, load_dataset, Dataset, DatasetSpec, StereoSample};
pub use eval::{eval_generation, eval_stereo, EvalReport};
pub use generate::{generate_right_view, scale_disparity, Checkpoint, Generated};
pub use plan::{resample_plan, SamplePlan};
pub use sample::prepare_sample;
pub use scene::{Scene, StereoPair};
pub use train::{train_toy, TrainLog, TrainOutcome};
