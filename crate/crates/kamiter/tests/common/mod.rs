//! Shared oracles for the integration suites: a numerically integrated flow
//! map for generators (independent of the series composition path), its
//! finite-difference Jacobian, and the cached reference run.
#![allow(dead_code)] // each suite uses its own subset

use std::sync::OnceLock;

use kamiter::kam::driver::{run_kam, RunArtifacts, RunSettings, ScheduleMode};
use kamiter::models::{build_model, ModelParams};
use kamiter::series::FourierTaylorSeries;

/// Precomputed gradient of a generator, the Hamiltonian vector field
/// dy/dt = -dF/dx, dx/dt = +dF/dy.
pub struct FlowField {
    fx: Vec<FourierTaylorSeries>,
    fy: Vec<FourierTaylorSeries>,
}

impl FlowField {
    pub fn new(f: &FourierTaylorSeries) -> Self {
        let dim = f.dim();
        FlowField {
            fx: (0..dim).map(|i| f.partial_x(i)).collect(),
            fy: (0..dim).map(|i| f.partial_y(i)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.fx.len()
    }

    pub fn eval(&self, y: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let dy = self.fx.iter().map(|s| -s.evaluate_real(y, x).re).collect();
        let dx = self.fy.iter().map(|s| s.evaluate_real(y, x).re).collect();
        (dy, dx)
    }
}

fn rk4_flow_fixed(field: &FlowField, y0: &[f64], x0: &[f64], t: f64, steps: usize) -> (Vec<f64>, Vec<f64>) {
    let dim = field.dim();
    let h = t / steps as f64;
    let mut y = y0.to_vec();
    let mut x = x0.to_vec();
    let add = |a: &[f64], b: &[f64], s: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(u, v)| u + s * v).collect()
    };
    for _ in 0..steps {
        let (k1y, k1x) = field.eval(&y, &x);
        let (k2y, k2x) = field.eval(&add(&y, &k1y, h / 2.0), &add(&x, &k1x, h / 2.0));
        let (k3y, k3x) = field.eval(&add(&y, &k2y, h / 2.0), &add(&x, &k2x, h / 2.0));
        let (k4y, k4x) = field.eval(&add(&y, &k3y, h), &add(&x, &k3x, h));
        for i in 0..dim {
            y[i] += h / 6.0 * (k1y[i] + 2.0 * k2y[i] + 2.0 * k3y[i] + k4y[i]);
            x[i] += h / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]);
        }
    }
    (y, x)
}

/// Time-t flow of the generator with step-halving control: integrates at N
/// and 2N steps and demands agreement, an adaptive accuracy control
/// independent of the Lie-series path.
pub fn flow_map(
    field: &FlowField,
    y0: &[f64],
    x0: &[f64],
    t: f64,
    tol: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut steps = 64usize;
    let mut last = rk4_flow_fixed(field, y0, x0, t, steps);
    loop {
        steps *= 2;
        let next = rk4_flow_fixed(field, y0, x0, t, steps);
        let err: f64 = last
            .0
            .iter()
            .chain(last.1.iter())
            .zip(next.0.iter().chain(next.1.iter()))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if err < tol || steps >= 4096 {
            return next;
        }
        last = next;
    }
}

/// Finite-difference Jacobian of the time-1 flow map (z = (y, x) packed).
pub fn flow_jacobian(field: &FlowField, y0: &[f64], x0: &[f64], fd: f64) -> Vec<Vec<f64>> {
    let dim = field.dim();
    let n2 = 2 * dim;
    let pack = |y: &[f64], x: &[f64]| -> Vec<f64> { y.iter().chain(x.iter()).copied().collect() };
    let mut jac = vec![vec![0.0; n2]; n2];
    for col in 0..n2 {
        let mut zp = pack(y0, x0);
        let mut zm = zp.clone();
        zp[col] += fd;
        zm[col] -= fd;
        let fp = flow_map(field, &zp[..dim], &zp[dim..], 1.0, 1e-13);
        let fm = flow_map(field, &zm[..dim], &zm[dim..], 1.0, 1e-13);
        let fp = pack(&fp.0, &fp.1);
        let fm = pack(&fm.0, &fm.1);
        for (row, j) in jac.iter_mut().enumerate() {
            j[col] = (fp[row] - fm[row]) / (2.0 * fd);
        }
    }
    jac
}

/// max |Phi^T J Phi - J| entrywise, the symplecticity defect.
pub fn symplectic_defect(jac: &[Vec<f64>]) -> f64 {
    let n2 = jac.len();
    let dim = n2 / 2;
    let j_mat = {
        let mut j = vec![vec![0.0; n2]; n2];
        for i in 0..dim {
            j[i][i + dim] = -1.0;
            j[i + dim][i] = 1.0;
        }
        j
    };
    let mut defect = 0.0f64;
    for a in 0..n2 {
        for b in 0..n2 {
            let mut acc = 0.0;
            for r in 0..n2 {
                for s in 0..n2 {
                    acc += jac[r][a] * j_mat[r][s] * jac[s][b];
                }
            }
            defect = defect.max((acc - j_mat[a][b]).abs());
        }
    }
    defect
}

/// Settings of the reference contraction run (acceptance criteria 3, 4, 10).
pub fn reference_run_settings() -> RunSettings {
    RunSettings {
        eps: 1e-6,
        m: 5,
        tau: 2.0,
        mode: ScheduleMode::Practical,
        stop_tol: 1e-100,
        prune_tol: 1e-120,
        max_steps: 6,
        ..Default::default()
    }
}

static REFERENCE_RUN: OnceLock<RunArtifacts> = OnceLock::new();

/// The pro2 contraction run, computed once and shared by the suites.
pub fn reference_run() -> &'static RunArtifacts {
    REFERENCE_RUN.get_or_init(|| {
        let model = build_model("pro2", &ModelParams::default()).expect("pro2 registered");
        run_kam(model, reference_run_settings()).expect("reference run succeeds")
    })
}
