//! Winner-guided student loss for stage 2.
//!
//! A non-winner student optimizes three terms on one tape: the labeled
//! loss, the pseudo-label loss against its *own* teacher's labels, and a
//! guidance loss against the *winner* teacher's labels, weighted by
//! `lambda_u` and `beta` respectively. The winner's own student trains
//! with the ordinary two-term objective instead.

use std::collections::BTreeMap;

use crate::detector::config::DetectorConfig;
use crate::detector::loss::supervised_loss;
use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::ssod::{unlabeled_loss, PseudoLabels, UnlabeledViews};
use crate::synthdata::types::Sample;

/// The three scalar components of one stage-2 loss, recorded before the
/// backward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage2Parts {
    pub labeled: f64,
    pub unlabeled: f64,
    pub dpc: f64,
}

/// Builds the guided loss `L_l + lambda_u * L_u(own) + beta * L_dpc(winner)`
/// for one non-winner student on one tape. `own_pseudo` must come from the
/// student's own teacher and `winner_pseudo` from a different pair's
/// teacher: guiding a pair by itself is an error because the guidance term
/// would collapse into the ordinary pseudo-label term.
#[allow(clippy::too_many_arguments)]
pub fn stage2_student_loss<'t>(
    cfg: &DetectorConfig,
    tape: &'t Tape,
    vars: &BTreeMap<String, Var<'t>>,
    labeled_views: &[Sample],
    views: &UnlabeledViews,
    own_pseudo: &PseudoLabels,
    winner_pseudo: &PseudoLabels,
    lambda_u: f64,
    beta: f64,
) -> Result<(Var<'t>, Stage2Parts)> {
    if own_pseudo.generator_pair == winner_pseudo.generator_pair {
        return Err(Error::Domain {
            op: "stage2_student_loss",
            detail: format!(
                "winner pair {} cannot guide itself",
                winner_pseudo.generator_pair
            ),
        });
    }
    if !lambda_u.is_finite() || lambda_u < 0.0 {
        return Err(Error::Domain {
            op: "stage2_student_loss",
            detail: format!("lambda_u must be finite and non-negative, got {lambda_u}"),
        });
    }
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::Domain {
            op: "stage2_student_loss",
            detail: format!("beta must be finite and non-negative, got {beta}"),
        });
    }
    let labeled_refs: Vec<&Sample> = labeled_views.iter().collect();
    let l_l = supervised_loss(cfg, tape, vars, &labeled_refs)?;
    let l_u = unlabeled_loss(cfg, tape, vars, &views.strong, &views.strong_geoms, own_pseudo)?;
    let l_dpc =
        unlabeled_loss(cfg, tape, vars, &views.strong, &views.strong_geoms, winner_pseudo)?;
    let parts = Stage2Parts {
        labeled: l_l.value().item()?,
        unlabeled: l_u.value().item()?,
        dpc: l_dpc.value().item()?,
    };
    let total = l_l.add(l_u.mul_scalar(lambda_u)?)?.add(l_dpc.mul_scalar(beta)?)?;
    Ok((total, parts))
}
