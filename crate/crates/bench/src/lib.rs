//! Fixtures shared by the benchmarks.

use manyiv_core::montecarlo::{ControlsDesign, FirstStage, GroupDesign, SimDesign};
use manyiv_core::{Dataset, ProjectionBundle, ZeroDiagA};

/// One draw of the balanced-group design with `groups` cells of five.
pub fn group_draw(groups: usize) -> (Dataset, ProjectionBundle) {
    let mut d = SimDesign::groups(FirstStage::Dense);
    d.n = 5 * groups;
    d.k_z = groups;
    let g = GroupDesign::new(&d).expect("valid group design");
    (g.dataset(0).expect("dataset"), g.bundle().clone())
}

/// One draw of a reduced many-controls design.
pub fn controls_draw(n: usize) -> (Dataset, ProjectionBundle, ZeroDiagA) {
    let mut d = SimDesign::many_controls();
    d.n = n;
    d.k_z = 12;
    d.k_w = 12;
    d.categorical_levels = vec![3, 4];
    d.strength = 20.0;
    let c = ControlsDesign::new(&d).expect("valid controls design");
    (
        c.dataset(0).expect("dataset"),
        c.bundle().clone(),
        c.zero_diag().clone(),
    )
}
