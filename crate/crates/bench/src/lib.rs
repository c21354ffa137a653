//! Fixtures shared by the benchmarks.

use critlab_core::{PotentialField, ProblemParams, SphereModel};

/// `n = 5` on the unit sphere with a coercive potential.
pub fn coercive_problem() -> (SphereModel, PotentialField, ProblemParams) {
    let model = SphereModel::new(5, 1.0).expect("valid model");
    let h0 = 0.5 * critlab_core::constants::hardy_critical_lambda(5);
    let potential = PotentialField::new(h0, -1.0, 4.0).expect("valid potential");
    (model, potential, ProblemParams::new(5, h0).expect("valid params"))
}
