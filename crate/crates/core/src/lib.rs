//! Stacked Gaussian-process forecasting for panels of short time series.
//!
//! Stage 1 fits a seasonal GP to every series on its own. Its posterior
//! mean and variance, together with lagged loads, weather, demographics and
//! calendar features, become the inputs of a stage-2 GP shared by all
//! series, whose product kernel compares households feature group by
//! feature group.

pub mod baselines;
pub mod data;
pub mod error;
pub mod gp;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod stacking;
pub mod task;

pub use data::{Month, PanelDataset, TaskSeries};
pub use error::{Error, ErrorCategory, Result};
pub use gp::{fit, GpHyperparams, GpModel, OptConfig, PredictiveDist};
pub use kernels::{Covariance, FeatureGroup, FeatureGroupKernel, KernelSpec, ParamKind};
pub use metrics::EvalReport;
pub use stacking::{StackedModel, StackedRow};
pub use task::{PosteriorSummary, StackingGate};
