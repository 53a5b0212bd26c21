//! Quantized direct and Winograd F(2x2,3x3) convolution with operation-level soft-error
//! injection, vulnerability analysis, fine-grained TMR planning and constrained
//! activations.

pub mod analyze;
pub mod conv;
pub mod data;
pub mod error;
pub mod inject;
pub mod io;
pub mod mitigation;
pub mod model;
pub mod qtensor;
mod rng;
pub mod tmr;

pub use conv::{ConvSpec, Engine, Exposure, NoFaults, OpHook, OpRecord, OpType, Stage, WinogradConfig};
pub use data::Dataset;
pub use error::{Error, Result};
pub use inject::{FaultHook, FaultTrace, Flip, FlipTarget, Granularity, InjectionConfig, OpRanges, Scope};
pub use mitigation::{ClampMode, RangeProfile};
pub use model::{enumerate_ops, ExecConfig, Executor, Layer, ModelDef, OpStreamSummary};
pub use qtensor::{BitWidth, QTensor, QuantParams};

/// Library version, recorded in result metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
