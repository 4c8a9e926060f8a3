//! Explicit schemes against the exact matrix exponential of the assembled operator.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use nlflow_core::flow::{run_flow, FlowProblem, Sampling, Stepper};
use nlflow_core::grid::{Field, Grid};
use nlflow_core::kernels::{make_kernel, Kernel, KernelSpec};
use nlflow_core::operator::{DiscreteOperator, Strategy};

fn dense_matrix(op: &DiscreteOperator, grid: &Grid) -> DMatrix<f64> {
    let n = grid.len();
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = op.apply(&Field::new(*grid, e).unwrap()).unwrap();
        for i in 0..n {
            a[(i, j)] = col.values()[i];
        }
    }
    a
}

fn expm_apply(a: &DMatrix<f64>, t: f64, u: &[f64]) -> Vec<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let q = &eig.eigenvectors;
    let coeffs = q.transpose() * DVector::from_column_slice(u);
    let scaled = DVector::from_iterator(
        coeffs.len(),
        coeffs.iter().zip(eig.eigenvalues.iter()).map(|(c, l)| c * (l * t).exp()),
    );
    (q * scaled).iter().copied().collect()
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn setup() -> (Grid, Arc<dyn Kernel>, Field) {
    let grid = Grid::new(1, 16.0, 64).unwrap();
    let kernel: Arc<dyn Kernel> = make_kernel(&KernelSpec::rough_static(1, 1.0, 4.0, 7)).unwrap();
    let init = Field::from_fn(grid, |x| (-(x[0] - 8.0).powi(2)).exp() + 0.3 * (2.0 * PI * x[0] / 16.0).sin());
    (grid, kernel, init)
}

fn errors(stepper: Stepper) -> Vec<f64> {
    let (grid, kernel, init) = setup();
    let op = DiscreteOperator::assemble(kernel.as_ref(), &grid, 0.0, Strategy::Dense).unwrap();
    let a = dense_matrix(&op, &grid);
    let t_end = 0.5;
    let exact = expm_apply(&a, t_end, init.values());
    let dt0 = 0.9 / op.max_row_sum() / 2.0;
    (0..4)
        .map(|j| {
            let dt = dt0 / (1 << j) as f64;
            let p = FlowProblem::linear(kernel.clone(), init.clone(), 0.0, t_end)
                .with_dt(dt)
                .with_stepper(stepper)
                .without_energy();
            let traj = run_flow(&p, Sampling::EverySteps(usize::MAX)).unwrap();
            sup_diff(traj.last().values(), &exact)
        })
        .collect()
}

#[test]
fn euler_converges_at_first_order() {
    let e = errors(Stepper::Euler);
    for p in e.windows(2) {
        let order = (p[0] / p[1]).log2();
        assert!(order > 0.9 && order < 1.2, "{e:?}");
    }
}

#[test]
fn heun_converges_at_second_order() {
    let e = errors(Stepper::Heun);
    for p in e.windows(2) {
        let order = (p[0] / p[1]).log2();
        assert!(order > 1.8 && order < 2.3, "{e:?}");
    }
}

#[test]
fn fourier_mode_decays_at_its_symbol() {
    let grid = Grid::new(1, 16.0, 128).unwrap();
    let kernel: Arc<dyn Kernel> = make_kernel(&KernelSpec::power_law(1, 1.0, 4.0, 1.0)).unwrap();
    let spec = DiscreteOperator::assemble(kernel.as_ref(), &grid, 0.0, Strategy::Spectral).unwrap();
    let k = 3;
    let mode = Field::from_fn(grid, |x| (2.0 * PI * k as f64 * x[0] / 16.0).cos());
    let lw = spec.apply(&mode).unwrap();
    // the mode is an eigenvector; read its eigenvalue off the action
    let eig = lw.values()[0] / mode.values()[0];
    for (a, b) in lw.values().iter().zip(mode.values()) {
        assert!((a - eig * b).abs() < 1e-10);
    }
    let symbol = spec.symbol().unwrap();
    assert!((symbol[k].abs() - eig.abs()).abs() < 1e-10 * eig.abs(), "{} {eig}", symbol[k]);

    let (t_end, dt) = (0.25, 1.0 / 4096.0);
    let p = FlowProblem::linear(kernel, mode.clone(), 0.0, t_end)
        .with_dt(dt)
        .with_stepper(Stepper::Heun)
        .without_energy();
    let traj = run_flow(&p, Sampling::EverySteps(usize::MAX)).unwrap();
    let expected = (eig * t_end).exp();
    for (a, b) in traj.last().values().iter().zip(mode.values()) {
        assert!((a - expected * b).abs() < 1e-7, "{a} {}", expected * b);
    }
}
