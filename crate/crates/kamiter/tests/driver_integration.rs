//! Driver-level integration tests: both translation routes end to end,
//! paper-mode gates, and step atomicity.

mod common;

use kamiter::error::KamError;
use kamiter::kam::driver::{run_kam, Driver, RunOutcome, RunSettings, ScheduleMode};
use kamiter::models::{build_model, make_pro1, ModelParams};
use kamiter::series::Domain;

fn practical(eps: f64) -> RunSettings {
    RunSettings {
        eps,
        ..Default::default()
    }
}

#[test]
fn trivial_perturbation_converges_at_step_zero() {
    // no perturbation terms: ||P0|| = 0, the run stops before any cycle and
    // the torus residual vanishes
    let spec = r#"{
        "dim": 2,
        "omega": [1.0, 0.6180339887498949],
        "hbar_terms": [{"iota": [2, 0], "coeff": 0.5}, {"iota": [0, 2], "coeff": 0.5}],
        "perturbation_terms": []
    }"#;
    let params = ModelParams {
        custom_spec: Some(spec.to_string()),
        ..Default::default()
    };
    let model = build_model("custom", &params).unwrap();
    let arts = run_kam(model, practical(1e-6)).unwrap();
    assert_eq!(arts.outcome, RunOutcome::Converged { steps: 0 });
    assert_eq!(arts.torus.torus_residual_sampled, 0.0);
    assert_eq!(arts.torus.torus_residual_majorant, 0.0);
    assert!(arts.reports.is_empty());
}

#[test]
fn practical_mu0_matches_measured_norm() {
    let model = build_model("pro2", &ModelParams::default()).unwrap();
    let driver = Driver::init_step0(model, practical(1e-6)).unwrap();
    let sch = &driver.schedule;
    let d = Domain::new(sch.s0, sch.r0).unwrap();
    let p0 = driver.state.current_node().p.weighted_norm(&d);
    let n = 2i32;
    let m = sch.m as i32;
    let rebuilt = sch.mu0 * sch.gamma_norm.powi(n + m + 2) * sch.s0.powi(m);
    assert!((rebuilt / p0 - 1.0).abs() < 1e-12, "mu0 normalization");
}

#[test]
fn action_translation_fires_for_y_dependent_perturbation() {
    // eps cos(x1) (1 + y1) carries a linear-in-y resonant part, so the
    // extracted p01 is O(eps) and the run must actually move the expansion
    // point while keeping the frequency residual at solver level.
    let spec = r#"{
        "dim": 2,
        "omega": [1.0, 0.6180339887498949],
        "hbar_terms": [{"iota": [4, 0], "coeff": 0.25}, {"iota": [2, 2], "coeff": 0.5}, {"iota": [0, 4], "coeff": 0.25}],
        "perturbation_terms": [
            {"k": [1, 0], "iota": [0, 0], "re": 0.5, "im": 0.0},
            {"k": [-1, 0], "iota": [0, 0], "re": 0.5, "im": 0.0},
            {"k": [0, 0], "iota": [1, 0], "re": 1.0, "im": 0.0}
        ]
    }"#;
    let params = ModelParams {
        custom_spec: Some(spec.to_string()),
        ..Default::default()
    };
    let model = build_model("custom", &params).unwrap();
    let mut settings = practical(1e-6);
    settings.max_steps = 3;
    settings.stop_tol = 1e-40;
    settings.prune_tol = 1e-60;
    let arts = run_kam(model, settings).unwrap();

    // step 1 extracts p01 ~ eps and translates by ~ (eps)^{1/3}
    let first = &arts.reports[0];
    assert!(
        first.xi_displacement > 1e-3,
        "expected a visible action shift, got {:.3e}",
        first.xi_displacement
    );
    assert!(first.freq_residual <= 1e-9);
    for rep in &arts.reports {
        assert!(rep.freq_residual <= 1e-9, "step {}", rep.step);
    }
    // the shift magnitude matches the cube-root scaling of the drift
    let expected = 1e-6f64.powf(1.0 / 3.0);
    assert!(
        (first.xi_displacement / expected).ln().abs() < 1.0_f64.exp(),
        "shift {:.3e} vs cube-root scale {:.3e}",
        first.xi_displacement,
        expected
    );
}

#[test]
fn parameter_route_run_converges_with_snap() {
    // The plateau family at ell = 3: the drift is absorbed in one cycle, the
    // grid solve finds the outer-branch root and the marker snaps to the
    // nearest node.
    let model = make_pro1(3);
    let eps = 1.0 / (2.0 * std::f64::consts::PI + std::f64::consts::FRAC_PI_2);
    let mut settings = practical(eps);
    settings.grid_size = 9;
    settings.max_steps = 3;
    let arts = run_kam(model, settings).unwrap();
    assert!(matches!(arts.outcome, RunOutcome::Converged { steps: 1 }));
    let rep = &arts.reports[0];
    // root at (0, +0.902...) snaps to a node in the outer interval
    assert!(rep.xi[1] > 0.5, "snapped xi = {:?}", rep.xi);
    assert!(rep.xi_displacement > 0.8);
    assert_eq!(rep.degree_at_box, Some(-1));
    let has_snap = arts
        .torus
        .transforms
        .iter()
        .any(|t| matches!(t, kamiter::kam::driver::TransformRecord::ParameterShift { .. }));
    assert!(has_snap, "parameter shift must be recorded");
}

#[test]
fn paper_mode_rejects_reachable_eps() {
    let model = build_model("pro2", &ModelParams::default()).unwrap();
    let mut settings = practical(1e-8);
    settings.mode = ScheduleMode::Paper;
    match Driver::init_step0(model, settings) {
        Err(KamError::EpsilonTooLarge { mode, .. }) => assert_eq!(mode, "paper"),
        Err(other) => panic!("expected EpsilonTooLarge, got {other:?}"),
        Ok(_) => panic!("paper mode must reject eps = 1e-8"),
    }
}

#[test]
fn paper_mode_initializes_at_absurdly_small_eps() {
    // the smallness threshold admits eps ~ 1e-100; the 0-th step bound
    // ||P0|| <= gamma^{n+m+2} s0^m mu0 is then asserted internally
    let model = build_model("pro2", &ModelParams::default()).unwrap();
    let mut settings = practical(1e-100);
    settings.mode = ScheduleMode::Paper;
    let driver = Driver::init_step0(model, settings).unwrap();
    let sch = &driver.schedule;
    assert_eq!(sch.k1, 1);
    assert!((sch.rho - 1.0 / 12.0).abs() < 1e-16);
    assert_eq!(sch.eta, 9);
    // schedule identities: s+ / s = mu^{2 rho} / 8 and r_1 = 3/4 r_0 are
    // exercised by one paper step attempt, which must refuse the unsound
    // mu recursion (mu1 = 8^m c0 mu0^{1+rho} >= 1 at double precision)
    let mut driver = driver;
    let before = driver.state.clone();
    match driver.kam_step() {
        Err(KamError::ScheduleUnsound { step, mu }) => {
            assert_eq!(step, 1);
            assert!(mu >= 1.0);
        }
        other => panic!("expected ScheduleUnsound, got {other:?}"),
    }
    // atomicity: the failed step left the state untouched
    assert_eq!(driver.state, before);
}

#[test]
fn failed_step_is_atomic() {
    let model = build_model("pro2", &ModelParams::default()).unwrap();
    let mut driver = Driver::init_step0(model, practical(1e-6)).unwrap();
    driver.kam_step().unwrap();
    // sabotage the divisor gate so the next step fails inside the cycle
    driver.schedule.gamma_dio = 10.0;
    let before_state = driver.state.clone();
    let before_schedule = driver.schedule.clone();
    let before_reports = driver.reports.len();
    match driver.kam_step() {
        Err(KamError::SmallDivisorBreach { .. }) => {}
        other => panic!("expected SmallDivisorBreach, got {other:?}"),
    }
    assert_eq!(driver.state, before_state, "state must be bit-identical");
    assert_eq!(driver.schedule, before_schedule);
    assert_eq!(driver.reports.len(), before_reports);
}

#[test]
fn schedule_identities_hold_in_paper_recursions() {
    // rho = 1/(2(m+1)) exactly and the r-sequence r_v = r0 (1 - sum 2^{-i-1})
    // stays above r0/2
    let model = build_model("pro2", &ModelParams::default()).unwrap();
    let driver = Driver::init_step0(model, practical(1e-6)).unwrap();
    let m = driver.schedule.m as f64;
    assert_eq!(driver.schedule.rho, 1.0 / (2.0 * (m + 1.0)));

    let run = common::reference_run();
    let r0 = 0.5;
    let mut expect = r0;
    for (i, rep) in run.reports.iter().enumerate() {
        expect -= r0 / 2f64.powi(i as i32 + 2);
        assert!((rep.r - expect).abs() < 1e-15, "r schedule at step {}", i + 1);
        assert!(rep.r >= r0 / 2.0 - 1e-15);
    }
}

#[test]
fn divergence_guard_trips_on_rising_norms() {
    // An oversized perturbation on a tiny stop tolerance cannot contract;
    // the driver must refuse within three rising steps rather than loop.
    let spec = r#"{
        "dim": 1,
        "omega": [1.0],
        "hbar_terms": [{"iota": [2], "coeff": 0.5}],
        "perturbation_terms": [
            {"k": [1], "iota": [0], "re": 0.5, "im": 0.0},
            {"k": [-1], "iota": [0], "re": 0.5, "im": 0.0},
            {"k": [1], "iota": [1], "re": 0.5, "im": 0.0},
            {"k": [-1], "iota": [1], "re": 0.5, "im": 0.0}
        ]
    }"#;
    let params = ModelParams {
        custom_spec: Some(spec.to_string()),
        ..Default::default()
    };
    let model = build_model("custom", &params).unwrap();
    let mut settings = practical(0.9);
    settings.max_steps = 12;
    settings.stop_tol = 1e-60;
    match run_kam(model, settings) {
        Err(KamError::Diverged { .. }) | Err(KamError::LieSeriesStalled { .. }) => {}
        Ok(arts) => {
            // a strong perturbation may still contract; then norms must be
            // strictly decreasing, which is the monotonicity contract
            let norms: Vec<f64> = arts.reports.iter().map(|r| r.norm_p).collect();
            for w in norms.windows(2) {
                assert!(w[1] < w[0], "norms not decreasing: {norms:?}");
            }
        }
        Err(e) => panic!("unexpected error {e}"),
    }
}
