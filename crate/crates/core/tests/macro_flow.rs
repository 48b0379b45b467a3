use std::f64::consts::PI;

use homog2d::error::Error;
use homog2d::grid::{Grid, ScalarField, VectorField};
use homog2d::harness::{load_macro_state, save_macro_state, ArtifactWriter};
use homog2d::macroflow::{
    random_smooth_vorticity, resonance_diagnostic, run, run_from, Envelope, ForcingSpec, ForcingTerm,
    HomogenizedModel, MacroSolver, MacroState, RunHooks, CFL_LIMIT,
};
use nalgebra::Matrix2;

fn grid(n: usize) -> Grid {
    Grid::new(n, 2.0 * PI).unwrap()
}

fn anisotropic() -> HomogenizedModel {
    HomogenizedModel::inclusions(Matrix2::new(1.6, 0.2, 0.2, 1.3), 0.2).unwrap()
}

fn stable_dt(g: Grid, model: HomogenizedModel, w: &ScalarField) -> f64 {
    let s = MacroSolver::new(g, model).unwrap();
    0.5 * CFL_LIMIT * g.h() / s.max_transport_speed(w)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn apply(m: &Matrix2<f64>, u: &VectorField) -> VectorField {
    VectorField {
        grid: u.grid,
        x: u.x.iter().zip(&u.y).map(|(a, b)| m[(0, 0)] * a + m[(0, 1)] * b).collect(),
        y: u.x.iter().zip(&u.y).map(|(a, b)| m[(1, 0)] * a + m[(1, 1)] * b).collect(),
    }
}

#[test]
fn restart_reproduces_the_uninterrupted_run() {
    let g = grid(64);
    let model = anisotropic();
    let w0 = random_smooth_vorticity(g, 3, 5, 1.0);
    let dt = 0.02;
    let none = ForcingSpec::none();
    let full = run(&w0, model, 0.4, dt, &none, RunHooks::default()).unwrap();
    let half = run(&w0, model, 0.2, dt, &none, RunHooks::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut writer = ArtifactWriter::new(dir.path()).unwrap();
    save_macro_state(&mut writer, "half", &half.state).unwrap();
    let restored = load_macro_state(&dir.path().join("half.json")).unwrap();
    assert_eq!(restored.w, half.state.w);
    assert_eq!(restored.steps, half.state.steps);

    let solver = MacroSolver::new(g, model).unwrap();
    let resumed = run_from(&solver, restored, 0.4, dt, &none, RunHooks::default()).unwrap();
    assert_eq!(resumed.state.steps, full.state.steps);
    let err = max_diff(&resumed.state.w.data, &full.state.w.data);
    assert!(err <= 1e-12, "restart mismatch {err:.2e}");
}

#[test]
fn deformed_biot_savart_identities() {
    let g = grid(64);
    let w = random_smooth_vorticity(g, 8, 6, 2.0);
    let scale = w.max_abs();

    let incl = anisotropic();
    let s = MacroSolver::new(g, incl).unwrap();
    let v = s.deformed_biot_savart(&w).unwrap();
    let curl = s.curl(&apply(&incl.derived, &v.u));
    assert!(max_diff(&curl.data, &w.data) <= 1e-10 * scale);
    assert!(s.divergence(&v.u).max_abs() <= 1e-10 * scale);

    let lake = HomogenizedModel::lake(Matrix2::new(0.9, -0.1, -0.1, 1.2), 0.8).unwrap();
    let s = MacroSolver::new(g, lake).unwrap();
    let v = s.deformed_biot_savart(&w).unwrap();
    assert!(max_diff(&s.curl(&v.u).data, &w.data) <= 1e-10 * scale);
    assert!(s.divergence(&apply(&lake.derived, &v.u)).max_abs() <= 1e-10 * scale);
    // transport is J∇σ / b0
    let expected = apply(&lake.derived, &v.u);
    assert!(max_diff(&v.transport.x, &expected.x.iter().map(|a| a / 0.8).collect::<Vec<_>>()) <= 1e-12 * scale);
}

#[test]
fn biot_savart_reduces_to_the_laplacian_for_identity() {
    // w = −2 sin x sin y ⇒ σ = sin x sin y, u = J∇σ = (−sin x cos y, cos x sin y)
    let g = grid(32);
    let w = ScalarField::from_fn(g, |[x, y]| -2.0 * x.sin() * y.sin());
    let v = MacroSolver::new(g, HomogenizedModel::euler())
        .unwrap()
        .deformed_biot_savart(&w)
        .unwrap();
    for (k, (_, _, [x, y])) in g.nodes().enumerate() {
        assert!((v.sigma.data[k] - x.sin() * y.sin()).abs() < 1e-13);
        assert!((v.u.x[k] + x.sin() * y.cos()).abs() < 1e-13);
        assert!((v.u.y[k] - x.cos() * y.sin()).abs() < 1e-13);
    }
}

#[test]
fn energy_is_the_quadratic_form_of_the_stream_function() {
    // E = ½∫∇σ·ā∇σ = −½∫σw after integration by parts.
    let g = grid(64);
    let model = anisotropic();
    let s = MacroSolver::new(g, model).unwrap();
    let w = random_smooth_vorticity(g, 4, 5, 1.0);
    let sigma = s.deformed_biot_savart(&w).unwrap().sigma;
    let e = -0.5 * sigma.data.iter().zip(&w.data).map(|(a, b)| a * b).sum::<f64>() * g.area_element();
    assert!((s.energy(&w) - e).abs() <= 1e-12 * e.abs(), "{} vs {e}", s.energy(&w));
}

#[test]
fn energy_is_stationary_along_the_semi_discrete_flow() {
    // A nonzero dE/dt would make |E(dt) − E(0)|/dt tend to a constant; here it
    // must decay with the integrator order.
    let g = grid(64);
    let model = anisotropic();
    let s = MacroSolver::new(g, model).unwrap();
    let w = s.dealias(&random_smooth_vorticity(g, 6, 6, 1.0));
    let e0 = s.energy(&w);
    assert!(s.energy_rate(&w).abs() <= 1e-12 * e0, "{}", s.energy_rate(&w));
    let rate = |dt: f64| {
        let mut st = MacroState::new(w.clone()).unwrap();
        s.step(&mut st, dt, &ForcingSpec::none()).unwrap();
        (s.energy(&st.w) - e0).abs() / dt
    };
    let dt = stable_dt(g, model, &w);
    let (r1, r2) = (rate(dt), rate(dt / 4.0));
    assert!(r2 <= r1 / 16.0 || r2 <= 1e-13 * e0, "{r1:.2e} -> {r2:.2e}");
}

#[test]
fn parallel_shear_is_steady_for_any_tensor() {
    let g = grid(64);
    let w = ScalarField::from_fn(g, |[_, y]| (2.0 * y).cos() + 0.3 * (y + 0.2).sin());
    let out = run(&w, anisotropic(), 1.0, 0.05, &ForcingSpec::none(), RunHooks::default()).unwrap();
    assert!(max_diff(&out.state.w.data, &w.data) <= 1e-12);
}

#[test]
fn runs_are_bitwise_deterministic() {
    let g = grid(64);
    let w0 = random_smooth_vorticity(g, 12, 6, 1.0);
    let forcing = ForcingSpec {
        terms: vec![ForcingTerm { k: [1, 2], amplitude: 0.3, phase: 0.1 }],
        envelope: Envelope::Oscillating { omega: 2.0 },
        allow_nonzero_mean: false,
    };
    let a = run(&w0, anisotropic(), 0.3, 0.02, &forcing, RunHooks { diagnostics_every: 1, dump_every: 0 }).unwrap();
    let b = run(&w0, anisotropic(), 0.3, 0.02, &forcing, RunHooks { diagnostics_every: 1, dump_every: 0 }).unwrap();
    assert_eq!(a.state.w.data, b.state.w.data);
    assert_eq!(a.diagnostics, b.diagnostics);
}

#[test]
fn forcing_injects_circulation_free_vorticity() {
    let g = grid(64);
    let w0 = random_smooth_vorticity(g, 1, 4, 1.0);
    let forcing = ForcingSpec {
        terms: vec![ForcingTerm { k: [2, -1], amplitude: 1.0, phase: 0.0 }],
        envelope: Envelope::Decaying { rate: 0.5 },
        allow_nonzero_mean: false,
    };
    let out = run(&w0, anisotropic(), 0.5, 0.02, &forcing, RunHooks::default()).unwrap();
    let (d0, d1) = (out.diagnostics[0], *out.diagnostics.last().unwrap());
    assert!((d1.circulation - d0.circulation).abs() <= 1e-12);
    assert!((d1.enstrophy - d0.enstrophy).abs() > 1e-3);
}

#[test]
fn failed_steps_leave_the_state_untouched() {
    let g = grid(32);
    let w = random_smooth_vorticity(g, 2, 4, 1.0);
    let s = MacroSolver::new(g, anisotropic()).unwrap();
    let mut st = MacroState::new(w.clone()).unwrap();
    let err = s.step(&mut st, 10.0, &ForcingSpec::none()).unwrap_err();
    assert!(matches!(err, Error::Cfl { .. }), "{err:?}");
    assert_eq!(st.w, w);
    assert_eq!(st.steps, 0);

    let mut bad = w.clone();
    bad.data[5] = f64::NAN;
    assert!(MacroState::new(bad).is_err());

    let mut offset = w.clone();
    offset.data.iter_mut().for_each(|v| *v += 0.1);
    assert!(s.deformed_biot_savart(&offset).is_err());
}

#[test]
fn generic_flow_is_not_resonant() {
    let g = grid(128);
    let model = anisotropic();
    let w = random_smooth_vorticity(g, 21, 6, 1.0);
    let v = MacroSolver::new(g, model).unwrap().deformed_biot_savart(&w).unwrap();
    let rep = resonance_diagnostic(&v.u, 1e-2, 5);
    assert!(rep.flagged_fraction < 0.05, "{}", rep.flagged_fraction);

    let shear = ScalarField::from_fn(g, |[_, y]| y.cos());
    let v = MacroSolver::new(g, model).unwrap().deformed_biot_savart(&shear).unwrap();
    assert!(resonance_diagnostic(&v.u, 1e-2, 5).flagged_fraction > 0.9);
}
