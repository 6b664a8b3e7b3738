//! Refinement steps: replace the map by its tangent on many tiny balls and
//! implant rescaled flip homeomorphisms there, enlarging the set on which the
//! map reverses orientation.

mod bounds;
mod domain;
mod packing;
mod patch;
mod state;

pub use bounds::{choose_rho, derivative_bounds, second_derivative_norm, Bounds, DerivativeBounds, RhoChoice, RhoError, SAFETY};
pub use domain::{choose_domain, Domain, ImageCheck};
pub use packing::{cell_of, pack_balls, unit_ball_volume, Coverage, Packing, Template, TemplateBall, RESOLVED_LEVEL, SHRINK};
pub use patch::{radius_limit, tangent_at, PatchError, TangentPatch, BLEND_INNER, BLEND_OUTER, DIFF_STEP, INVERSE_TOL};

pub use state::{
    budget_factor, estimate_bounds, local_ratio_scan, negative_measure, refinement_step, CantorPart, ChartPoint, Constants,
    NegativeMeasure, RefineConfig, RefinementState, Step, PSI_TERMS, STATE_VERSION,
};

use crate::flipmap::FlipError;
use crate::map::MapError;
use crate::sequences::SequenceError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Flip(#[from] FlipError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Rho(#[from] RhoError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error("domain: {0}")]
    Domain(String),
    #[error("packing: {0}")]
    Packing(String),
    #[error("step {k} is not supported: {reason}")]
    Unsupported { k: usize, reason: String },
    #[error("state document: {0}")]
    Document(String),
}
