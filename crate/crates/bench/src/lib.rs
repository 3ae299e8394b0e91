//! Benchmark fixtures.

use lqdst::random::{random_model, random_stable_policy, rng, ModelShape};
use lqdst::{Policy, TeamModel};

/// A mid-sized random team with a stable policy on it.
pub fn medium_team(seed: u64) -> (TeamModel, Policy) {
    let mut r = rng(seed);
    let shape = ModelShape {
        subs: 3,
        max_f: 3,
        max_n: 20,
        max_dx: 3,
        max_du: 2,
        weakly_coupled: false,
    };
    let m = random_model(&mut r, &shape);
    let p = random_stable_policy(&mut r, &m, 0.9, 1.0);
    (m, p)
}
