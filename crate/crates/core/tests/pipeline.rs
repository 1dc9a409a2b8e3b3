use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use qretro_core::gaussian::{self, GaussianState};
use qretro_core::io;
use qretro_core::optomech::{self, OptomechParams, Scheme};
use qretro_core::riccati::{self, Direction};
use qretro_core::trajectory;
use qretro_core::LinearModel;

fn params(eta: f64, c: f64, nbar: f64) -> OptomechParams {
    OptomechParams {
        omega_m: 1.0,
        kappa: 0.5,
        g: 0.0,
        gamma: 1e-3,
        nbar,
        delta_c: 0.0,
        phi_lo: 0.0,
        eta,
    }
    .with_cooperativity(c)
}

#[test]
fn record_file_round_trip_keeps_filter_bitwise() {
    let model = optomech::build_scenario(&params(0.8, 3.0, 1.0), Scheme::ResonantRed).unwrap();
    let initial = GaussianState::new(DVector::from_vec(vec![0.5, -0.25]), DMatrix::identity(2, 2) * 3.0);
    let (record, truth) = trajectory::simulate_record(&model, &initial, 0.05, 20.0, 5).unwrap();
    let mut buf = Vec::new();
    io::write_record(&mut buf, &record).unwrap();
    let back = io::read_record(buf.as_slice(), None).unwrap();
    let filtered = trajectory::filter_forward(&model, &initial, &back).unwrap();
    assert_eq!(filtered.means, truth.means);
    assert_eq!(filtered.covs, truth.covs);

    let mut a = Vec::new();
    let mut b = Vec::new();
    io::write_trajectory(&mut a, &truth, 2).unwrap();
    io::write_trajectory(&mut b, &filtered, 2).unwrap();
    assert_eq!(a, b);
}

#[test]
fn model_json_round_trip_preserves_steady_state() {
    let model = optomech::build_scenario(&params(0.6, 5.0, 2.0), Scheme::ResonantBlue).unwrap();
    let text = model.to_json_value().to_string();
    let back = LinearModel::from_json_str(&text).unwrap();
    for dir in [Direction::Forward, Direction::Backward] {
        let a = riccati::steady_state(&model, dir).unwrap().v;
        let b = riccati::steady_state(&back, dir).unwrap().v;
        assert_eq!(a, b);
    }
}

#[test]
fn long_retrodiction_reaches_sideband_closed_form() {
    let p = params(0.9, 4.0, 0.5);
    let model = optomech::build_scenario(&p, Scheme::ResonantBlue).unwrap();
    let rate = riccati::steady_state(&model, Direction::Backward).unwrap().eigen_real_parts[1].abs();
    let dt = 0.05 / rate;
    let record = trajectory::wiener_record(3, dt, 400, 1, 0);
    let effect = trajectory::identity_surrogate(1, 1e6);
    let path = trajectory::retrodict_backward(&model, &effect, &record).unwrap();
    let cf = optomech::closed_form_variances(&p, Scheme::ResonantBlue, Direction::Backward);
    let v = &path.covs[0];
    assert!((v[(0, 0)] - cf.exact_xx.unwrap()).abs() < 1e-6 * cf.exact_xx.unwrap(), "{v}");
    assert!((v[(1, 1)] - cf.exact_pp.unwrap()).abs() < 1e-6 * cf.exact_pp.unwrap(), "{v}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn steady_states_are_physical(
        eta in 0.05..1.0f64,
        c in 0.05..50.0f64,
        nbar in 0.0..20.0f64,
        scheme in prop_oneof![Just(Scheme::ResonantResonant), Just(Scheme::ResonantRed), Just(Scheme::ResonantBlue)],
    ) {
        let model = optomech::build_scenario(&params(eta, c, nbar), scheme).unwrap();
        for dir in [Direction::Forward, Direction::Backward] {
            let sol = riccati::steady_state(&model, dir).unwrap();
            let check = gaussian::heisenberg_check(&sol.v, model.sigma());
            prop_assert!(check.passed, "{dir}: min eigenvalue {}", check.min_eigenvalue);
            prop_assert!(sol.is_stable());
            let p = gaussian::purity(&sol.v).unwrap();
            prop_assert!(p > 0.0 && p <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn conditioning_never_exceeds_unconditional(eta in 0.0..1.0f64, c in 0.05..50.0f64, nbar in 0.0..20.0f64) {
        let model = optomech::build_scenario(&params(eta, c, nbar), Scheme::ResonantResonant).unwrap();
        let cond = riccati::steady_state(&model, Direction::Forward).unwrap().v;
        let unc = riccati::lyapunov_unconditional(&model).unwrap();
        let gap = (unc - &cond).symmetric_eigenvalues().min();
        prop_assert!(gap >= -1e-9 * cond.amax(), "{gap}");
    }

    #[test]
    fn closed_forms_beat_thermal_in_the_right_direction(eta in 0.1..1.0f64, c in 0.1..100.0f64, nbar in 0.0..10.0f64) {
        let p = params(eta, c, nbar);
        let f = optomech::closed_form_variances(&p, Scheme::ResonantResonant, Direction::Forward).exact_xx.unwrap();
        let b = optomech::closed_form_variances(&p, Scheme::ResonantResonant, Direction::Backward).exact_xx.unwrap();
        let c_bare = optomech::cooperativities(&p).bare;
        prop_assert!(f >= 1.0 - 1e-12);
        prop_assert!((b - f - 1.0 / (2.0 * eta * c_bare)).abs() < 1e-9 * b);
    }
}
