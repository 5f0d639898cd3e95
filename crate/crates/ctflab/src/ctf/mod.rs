//! Collaborative training of several teacher–student detector pairs.
//!
//! Training alternates between two kinds of fixed-length windows. In a
//! stage-1 window every pair trains independently with the mean-teacher
//! recipe while a ledger accumulates each pair's labeled-loss total —
//! scoring only, no parameter updates flow from it. When the window
//! closes, the pair with the smallest total is selected as the winner.
//! In the following stage-2 window the winner's teacher pseudo-labels
//! the unlabeled views for everyone else: each non-winner student adds a
//! guidance term on the winner's pseudo-labels to its usual two-term
//! loss, while the winner itself keeps training as before. Stage-2
//! windows replay the unlabeled batches of the stage-1 window that
//! elected the winner, so guidance is judged on the very data that
//! produced it.

pub mod config;
pub mod ledger;
pub mod run;
pub mod schedule;
pub mod stage2;

pub use config::{CtfConfig, Representative, ResetPolicy};
pub use ledger::DpcoLedger;
pub use run::{
    best_teacher_for_inference, run_ctf, run_ctf_until, run_mean_teacher, CtfRunOutput, CtfState,
    EvalPoint, MetricsRecord, MtRunOutput, WinnerDecision,
};
pub use schedule::{closes_stage1_window, opens_stage1_window, phase_of, Phase};
pub use stage2::{stage2_student_loss, Stage2Parts};
