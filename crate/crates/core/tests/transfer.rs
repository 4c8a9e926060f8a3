use std::sync::Arc;

use nlflow_core::flow::{run_flow, stable_dt, FlowProblem, Sampling};
use nlflow_core::grid::{Field, Grid};
use nlflow_core::kernels::{make_kernel, Kernel, KernelSpec};
use nlflow_core::oscillation::{transfer_refinement, verify_linearization};
use nlflow_core::potentials::{Potential, PotentialSpec};

fn setup(huber: bool) -> (Arc<dyn Potential>, Arc<dyn Kernel>, Field) {
    let pot: Arc<dyn Potential> = if huber {
        Arc::new(PotentialSpec::smoothed_huber(4.0).unwrap())
    } else {
        Arc::new(PotentialSpec::quadratic(4.0).unwrap())
    };
    let base: Arc<dyn Kernel> = make_kernel(&KernelSpec::power_law(1, 1.0, 4.0, 1.0)).unwrap();
    let g = Grid::new(1, 16.0, 128).unwrap();
    let init = Field::from_fn(g, |x| (x[0] - 8.0).tanh() + 0.3 * (0.4 * x[0]).sin());
    (pot, base, init)
}

#[test]
fn huber_defect_converges_at_first_order() {
    let (pot, base, init) = setup(true);
    let dt0 = stable_dt(base.as_ref(), init.grid(), Some(pot.as_ref())).unwrap();
    let r = transfer_refinement(pot, base, &init, 0.25, dt0, 4, 0, init.grid().spacing(), 2).unwrap();
    println!("{r:?}");
    assert!(r.min_order() >= 0.9, "{r:?}");
}

#[test]
fn quadratic_defect_is_at_rounding_level() {
    let (pot, base, init) = setup(false);
    let traj = run_flow(
        &FlowProblem::nonlinear(pot.clone(), base.clone(), init, 0.0, 0.25).without_energy(),
        Sampling::EverySteps(1),
    )
    .unwrap();
    let r = verify_linearization(&traj, pot, base, 0, traj.grid().spacing(), 1).unwrap();
    println!("{r:?}");
    assert!(r.max_defect < 1e-12);
}
