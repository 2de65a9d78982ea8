//! Software mitigations expressed as gadget rewrites.
//!
//! Each mitigation takes a built gadget and returns a rebuilt one with
//! the countermeasure applied: a speculation barrier in front of the
//! check block or the test access, or padding that pushes the check
//! block out of the charge window (shrinkage family) or splits the
//! store/load pair across dispatch groups (forward-gating family).
//! Rewrites only apply to shapes they are meaningful for; anything else
//! is rejected rather than silently ignored.

use super::{build_v1, build_v2, Gadget, GadgetKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A software countermeasure applied by rebuilding the gadget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mitigation {
    /// Speculation barrier immediately before the test access.
    SbBeforeTest,
    /// Speculation barrier immediately before the check block (the
    /// tagged access(es) under the mispredicted branch).
    SbBeforeCheck,
    /// Extra filler between branch and check block, pushing the faults
    /// past the charge window.
    PadWindow(usize),
    /// Extra instructions between the store and its forwarded load,
    /// splitting them across dispatch groups.
    PadStlfGap(usize),
}

impl Mitigation {
    pub fn label(self) -> &'static str {
        match self {
            Mitigation::SbBeforeTest => "sb_before_test",
            Mitigation::SbBeforeCheck => "sb_before_check",
            Mitigation::PadWindow(_) => "pad_window",
            Mitigation::PadStlfGap(_) => "pad_stlf_gap",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MitigationError {
    #[error("mitigation does not apply to this gadget shape")]
    UnrecognizedShape,
}

/// Rebuild `gadget` with `mitigation` applied.
pub fn apply_mitigation(gadget: &Gadget, mitigation: Mitigation) -> Result<Gadget, MitigationError> {
    match (gadget.kind, mitigation) {
        (GadgetKind::V1(mut params), Mitigation::SbBeforeTest) => {
            params.sb_before_test = true;
            build_v1(params, gadget.secret_tag).map_err(|_| MitigationError::UnrecognizedShape)
        }
        (GadgetKind::V1(mut params), Mitigation::SbBeforeCheck) => {
            params.sb_before_check = true;
            build_v1(params, gadget.secret_tag).map_err(|_| MitigationError::UnrecognizedShape)
        }
        (GadgetKind::V1(mut params), Mitigation::PadWindow(extra)) => {
            params.window += extra;
            build_v1(params, gadget.secret_tag).map_err(|_| MitigationError::UnrecognizedShape)
        }
        (GadgetKind::V2(mut params), Mitigation::SbBeforeTest) => {
            params.sb_before_test = true;
            build_v2(params, gadget.secret_tag).map_err(|_| MitigationError::UnrecognizedShape)
        }
        (GadgetKind::V2(mut params), Mitigation::SbBeforeCheck) => {
            params.sb_before_check = true;
            build_v2(params, gadget.secret_tag).map_err(|_| MitigationError::UnrecognizedShape)
        }
        (GadgetKind::V2(mut params), Mitigation::PadStlfGap(extra)) => {
            params.gap += extra;
            build_v2(params, gadget.secret_tag).map_err(|_| MitigationError::UnrecognizedShape)
        }
        _ => Err(MitigationError::UnrecognizedShape),
    }
}
