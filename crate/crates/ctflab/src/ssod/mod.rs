//! Mean Teacher machinery for one teacher–student pair.
//!
//! A pair holds two copies of the detector: a student trained by gradient
//! descent and a teacher that trails it as an exponential moving average.
//! Training starts with a supervised burn-in of the teacher (copied into
//! the student), then alternates per iteration: the teacher pseudo-labels
//! weakly augmented unlabeled images, the student learns from strongly
//! augmented versions of the same images against those pseudo-labels plus
//! the labeled batch, and the teacher EMA-follows the updated student.
//! Unlabeled ground truth is never read anywhere in this loop — an access
//! guard on the dataset verifies that.

pub mod loss;
pub mod pair;
pub mod pseudo;
pub mod step;
pub mod views;

pub use loss::{pseudo_annotations, total_loss, unlabeled_loss};
pub use pair::{burn_in, ema_update, supervised_step, PairState};
pub use pseudo::{generate_pseudo_labels, PseudoLabels};
pub use step::{apply_student_update, mean_teacher_step, MtHyper, StepOutcome};
pub use views::{
    build_labeled_views, build_unlabeled_views, labeled_batch_indices, unlabeled_batch_indices,
    BurnInSampler, UnlabeledViews,
};
