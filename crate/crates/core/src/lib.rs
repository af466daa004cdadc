//! Verifiable rewards, trace processing, GRPO math and evaluation tooling for
//! embodied pointing tasks.
//!
//! Modules, bottom-up:
//! - [`geometry`]: points, image dimensions and verification masks.
//! - [`parser`]: the `<think>`/`<answer>`/`<point>` response grammar.
//! - [`trace`]: trajectory metrics, spline smoothing and resampling.
//! - [`spatial`]: pinhole back-projection, depth maps and 3D relation checks.
//! - [`reward`]: reward primitives, per-task specs and composition.
//! - [`grpo`]: group advantages, the clipped surrogate and a toy trainer.
//! - [`eval`]: dataset loading, batch scoring and reports.
//! - [`api`]: JSON entry points for foreign bindings.

pub mod api;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod grpo;
pub mod par;
pub mod parser;
pub mod reward;
pub mod spatial;
pub mod trace;

pub use error::{Error, Result};
pub use geometry::{ImageMeta, Mask, Point2D};
pub use par::{Executor, Parallelism};
pub use parser::{parse, parse_with, ParseMode, ParseOptions, ParsedResponse, TaskKind};
pub use reward::{compose, PresetTable, RewardBreakdown, RewardSpec, Verification};
pub use trace::Trajectory2D;
