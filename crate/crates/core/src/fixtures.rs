//! Small hand-checkable MDPs.

use crate::mdp::Mdp;

/// Two states, two actions, γ = 0.5, all transitions deterministic.
///
/// | state | action 0            | action 1            |
/// |-------|---------------------|---------------------|
/// | 0     | r = 0, stay in 0    | r = 0, go to 1      |
/// | 1     | r = 1, stay in 1    | r = 0, go to 0      |
///
/// `v* = (1, 2)` and `π* = (1, 0)`.
pub fn tiny2() -> Mdp {
    Mdp::new(
        vec![vec![0.0, 0.0], vec![1.0, 0.0]],
        vec![
            vec![vec![(0, 1.0)], vec![(1, 1.0)]],
            vec![vec![(1, 1.0)], vec![(0, 1.0)]],
        ],
        0.5,
        false,
    )
    .expect("tiny2 is well formed")
}
