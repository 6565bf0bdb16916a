use gridform_core::certify::{bus_admittance, build_f, build_m, build_y2, ReducedModel};
use gridform_core::linalg::{condition_number, eigenvalues};
use gridform_core::sim::{Event, EventKind, InitialCondition, IntegratorMethod};
use gridform_core::{bundled, simulate, solve_equilibrium, Scenario};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn table2() -> Scenario {
    bundled("table2_2inv").unwrap().scenario
}

fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

#[test]
fn rk4_and_dopri_agree_after_a_load_step() {
    let mut base = table2();
    base.horizon = 0.05;
    base.events = vec![Event {
        time: 0.01,
        kind: EventKind::LoadStep {
            bus: 1,
            power: 1500.0,
            reactive_power: 200.0,
        },
    }];
    let fixed = simulate(&base).unwrap();
    let mut adaptive = base.clone();
    adaptive.integrator.method = IntegratorMethod::Dopri5;
    adaptive.integrator.abs_tol = 1e-8;
    adaptive.integrator.rel_tol = 1e-8;
    let adaptive = simulate(&adaptive).unwrap();
    assert_eq!(fixed.time.len(), adaptive.time.len());
    let d = max_rel_diff(&fixed.final_state().x, &adaptive.final_state().x);
    assert!(d < 1e-5, "relative difference {d:e}");
}

#[test]
fn event_off_the_output_grid_matches_a_restarted_run() {
    let t_event = 0.012_34;
    let step = EventKind::LoadStep {
        bus: 0,
        power: 2000.0,
        reactive_power: 0.0,
    };
    let mut whole = table2();
    whole.horizon = 0.03;
    whole.events = vec![Event { time: t_event, kind: step.clone() }];
    let whole = simulate(&whole).unwrap();

    let mut first = table2();
    first.horizon = t_event;
    let first = simulate(&first).unwrap();
    let mut second = table2();
    second.spec.network.loads[0].power += 2000.0;
    second.horizon = 0.03 - t_event;
    second.integrator.output_interval = 0.03 - t_event;
    second.initial = InitialCondition::State(first.final_state());
    let second = simulate(&second).unwrap();

    let d = max_rel_diff(&whole.final_state().x, &second.final_state().x);
    assert!(d < 1e-6, "relative difference {d:e}");
    assert_eq!(whole.diagnostics.events.len(), 1);
    assert!((whole.diagnostics.events[0].0 - t_event).abs() < 1e-12);
}

#[test]
fn secondary_law_conserves_the_sum_of_setpoints() {
    let mut s = bundled("table1_5bus").unwrap().scenario;
    s.horizon = 0.05;
    s.events.clear();
    s.windows.clear();
    let eq = solve_equilibrium(&s.spec, None).unwrap();
    let mut x0 = eq.state.clone();
    let l = x0.layout;
    for (k, d) in [0.02, -0.01, 0.015, -0.02, 0.005].into_iter().enumerate() {
        x0.x[l.chi(k)] += d;
    }
    let sum0: f64 = (0..5).map(|k| x0.x[l.chi(k)]).sum();
    s.initial = InitialCondition::State(x0);
    let tr = simulate(&s).unwrap();
    let end = tr.final_state();
    let sum1: f64 = (0..5).map(|k| end.x[l.chi(k)]).sum();
    assert!((sum1 - sum0).abs() < 1e-9, "{sum0} -> {sum1}");
}

/// Steady-state output-current shifts after small setpoint changes, from the
/// time domain, against the static admittance prediction.
#[test]
fn static_current_prediction_matches_time_domain_steady_state() {
    let mut base = bundled("table1_5bus").unwrap().scenario;
    base.spec.secondary.enabled = false;
    base.events.clear();
    base.windows.clear();
    let eq = solve_equilibrium(&base.spec, None).unwrap();
    let model = ReducedModel::new(&base.spec, &eq).unwrap();
    let l = eq.state.layout;
    let n = 5;
    for chi in [[0.3, -0.2, 0.1, 0.0, -0.25], [0.15, 0.15, 0.15, 0.15, 0.15]] {
        let mut s = base.clone();
        let mut x0 = eq.state.clone();
        for k in 0..n {
            s.spec.inverters[k].gains.frequency.chi += chi[k];
            x0.x[l.chi(k)] += chi[k];
        }
        s.horizon = 1.0;
        s.integrator.method = IntegratorMethod::Dopri5;
        s.integrator.abs_tol = 1e-9;
        s.integrator.rel_tol = 1e-9;
        s.integrator.output_interval = 0.1;
        s.initial = InitialCondition::State(x0);
        let end = simulate(&s).unwrap().final_state();
        let d_delta = DVector::from_iterator(n, (0..n).map(|k| end.x[l.delta(k)] - eq.state.x[l.delta(k)]));
        assert!(d_delta.norm() <= 0.01 + 1e-12, "|delta~| = {}", d_delta.norm());
        let actual = DVector::from_iterator(
            2 * n,
            (0..n).flat_map(|k| {
                let o = l.i_o(k);
                [end.x[o] - eq.state.x[o], end.x[o + 1] - eq.state.x[o + 1]]
            }),
        );
        let predicted = model.static_current_response(&d_delta).unwrap();
        let err = (&predicted - &actual).norm() / actual.norm();
        assert!(err < 0.05, "relative error {err:.4}");
    }
}

fn table1_y2() -> (DMatrix<f64>, Vec<f64>) {
    let s = bundled("table1_5bus").unwrap().scenario;
    let y1 = bus_admittance(&s.spec.network, None).unwrap();
    let y2 = build_y2(&s.spec, &s.spec.all_inverters(), &y1).unwrap();
    (y2, vec![311.0; 5])
}

#[test]
fn y2_has_rotational_blocks_without_droop_coupling() {
    let mut s = bundled("table1_5bus").unwrap().scenario;
    for inv in &mut s.spec.inverters {
        inv.gains.ac.n_q = 0.0;
    }
    let y1 = bus_admittance(&s.spec.network, None).unwrap();
    let y2 = build_y2(&s.spec, &s.spec.all_inverters(), &y1).unwrap();
    assert!(gridform_core::linalg::all_blocks_rotational(&y2, 1e-9 * y2.amax()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bauer_fike_bound_holds(seed in proptest::collection::vec(-1.0f64..1.0, 25), scale in 1e-4f64..1e-1) {
        let (y2, v_n) = table1_y2();
        let f0 = build_f(&y2, &[0.0; 5]).unwrap();
        let m0 = build_m(&f0, &[0.06; 5], &[40.0; 5], &v_n).unwrap();
        let lap = gridform_core::MicrogridGraph::ring(5).unwrap().laplacian();
        let h = &lap * &m0;
        let delta = DMatrix::from_row_slice(5, 5, &seed) * scale;
        // Similar to a symmetric matrix, so any eigenbasis of the symmetric
        // form gives a valid Psi.
        let s = gridform_core::linalg::spd_sqrt(&m0).unwrap();
        let sym = &s.0 * &lap * &s.0;
        let psi = &s.1 * sym.symmetric_eigen().eigenvectors;
        let k = condition_number(&psi);
        let bound = k * delta.clone().svd(false, false).singular_values.max();
        let h_eigs = eigenvalues(&h);
        for z in eigenvalues(&(&h + &delta)) {
            let d = h_eigs.iter().map(|w| (z - w).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(d <= bound * (1.0 + 1e-9) + 1e-12, "distance {} above bound {}", d, bound);
        }
    }
}
