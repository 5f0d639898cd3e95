//! The two-stage alternation: windows of independent training followed by
//! windows of winner-guided training.

/// Which stage an iteration belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Pairs train independently while their labeled losses accumulate.
    Stage1,
    /// The selected winner guides every other pair's student.
    Stage2,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Stage1 => "stage1",
            Phase::Stage2 => "stage2",
        }
    }
}

/// Stage of 1-based iteration `iter` under window length `stage_length`:
/// iterations 1..=S are stage 1, S+1..=2S stage 2, and so on.
pub fn phase_of(iter: u64, stage_length: u64) -> Phase {
    debug_assert!(iter >= 1 && stage_length >= 1);
    if ((iter - 1) / stage_length) % 2 == 0 {
        Phase::Stage1
    } else {
        Phase::Stage2
    }
}

/// True when `iter` closes a stage-1 window, i.e. a winner is selected
/// after this iteration completes.
pub fn closes_stage1_window(iter: u64, stage_length: u64) -> bool {
    phase_of(iter, stage_length) == Phase::Stage1 && iter % stage_length == 0
}

/// True when `iter` opens a fresh stage-1 window (iteration 1, 2S+1,
/// 4S+1, …), which is where a previous winner stops applying.
pub fn opens_stage1_window(iter: u64, stage_length: u64) -> bool {
    (iter - 1) % (2 * stage_length) == 0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_hundred_iterations_at_window_one_hundred() {
        let s = 100;
        for iter in 1..=400u64 {
            let want = match iter {
                1..=100 | 201..=300 => Phase::Stage1,
                _ => Phase::Stage2,
            };
            assert_eq!(phase_of(iter, s), want, "iteration {iter}");
        }
        let decisions: Vec<u64> = (1..=400).filter(|&i| closes_stage1_window(i, s)).collect();
        assert_eq!(decisions, vec![100, 300]);
        let openings: Vec<u64> = (1..=400).filter(|&i| opens_stage1_window(i, s)).collect();
        assert_eq!(openings, vec![1, 201]);
    }

    #[test]
    fn window_length_one_alternates_every_iteration() {
        let phases: Vec<Phase> = (1..=6).map(|i| phase_of(i, 1)).collect();
        assert_eq!(
            phases,
            vec![
                Phase::Stage1,
                Phase::Stage2,
                Phase::Stage1,
                Phase::Stage2,
                Phase::Stage1,
                Phase::Stage2
            ]
        );
        assert!(closes_stage1_window(1, 1));
        assert!(!closes_stage1_window(2, 1));
        assert!(closes_stage1_window(3, 1));
    }

    #[test]
    fn stage_boundaries_partition_the_run() {
        // every iteration is in exactly one phase and each window has
        // exactly stage_length members
        for s in [1u64, 3, 25, 100] {
            let mut run = vec![0u64; 2];
            for iter in 1..=4 * s {
                match phase_of(iter, s) {
                    Phase::Stage1 => run[0] += 1,
                    Phase::Stage2 => run[1] += 1,
                }
            }
            assert_eq!(run[0], 2 * s);
            assert_eq!(run[1], 2 * s);
        }
    }
}
