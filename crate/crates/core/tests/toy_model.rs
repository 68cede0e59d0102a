use nalgebra::{DVector, Vector2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wbqp::toy_model::*;

fn random_state(m: &PlanarModel, rng: &mut impl Rng) -> (DVector<f64>, DVector<f64>) {
    let nq = m.nq();
    let q = DVector::from_fn(nq, |_, _| rng.random_range(-1.5..1.5));
    let v = DVector::from_fn(nq, |_, _| rng.random_range(-2.0..2.0));
    (q, v)
}

#[test]
fn mass_matrix_symmetric_pd_on_random_configurations() {
    let m = PlanarModel::default_biped();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let (q, _) = random_state(&m, &mut rng);
        let h = m.mass_matrix(&q);
        assert!((&h - h.transpose()).amax() < 1e-12);
        assert!(h.symmetric_eigenvalues().min() > 0.0);
    }
}

#[test]
fn gravity_bias_matches_potential_gradient() {
    let m = PlanarModel::default_biped();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let (q, _) = random_state(&m, &mut rng);
        let c = m.bias(&q, &DVector::zeros(m.nq()));
        for i in 0..m.nq() {
            let h = 1e-6;
            let mut e = DVector::zeros(m.nq());
            e[i] = h;
            let fd = (m.potential_energy(&(&q + &e)) - m.potential_energy(&(&q - &e))) / (2.0 * h);
            assert!((fd - c[i]).abs() < 1e-6 * c[i].abs().max(1.0), "coord {i}: {fd} vs {}", c[i]);
        }
    }
}

#[test]
fn kinetic_energy_two_ways() {
    let m = PlanarModel::default_biped();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let (q, v) = random_state(&m, &mut rng);
        let quad = 0.5 * (v.transpose() * m.mass_matrix(&q) * &v)[0];
        let links = m.kinetic_energy(&q, &v);
        assert!((quad - links).abs() < 1e-10 * quad.max(1.0));
    }
    let q = DVector::zeros(m.nq());
    assert_eq!(m.kinetic_energy(&q, &DVector::zeros(m.nq())), 0.0);
}

#[test]
fn potential_datum() {
    let flat = r#"
name = "flat"
floating_base = false
[[link]]
name = "base"
mass = 1.0
inertia = 1.0
[[link]]
name = "arm"
parent = "base"
mass = 1.0
inertia = 0.1
com = [0.5, 0.0]
"#;
    let m = PlanarModel::from_toml(flat).unwrap();
    assert_eq!(m.potential_energy(&DVector::zeros(1)), 0.0);
}

#[test]
fn full_bias_matches_lagrangian_finite_differences() {
    // C = Ḣq̇ − ½ ∂(q̇ᵀHq̇)/∂q + ∂V/∂q
    let m = PlanarModel::default_biped();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let nq = m.nq();
    for _ in 0..20 {
        let (q, v) = random_state(&m, &mut rng);
        let h = 1e-6;
        let hdot = (m.mass_matrix(&(&q + &v * h)) - m.mass_matrix(&(&q - &v * h))) / (2.0 * h);
        let mut expect = &hdot * &v;
        for i in 0..nq {
            let mut e = DVector::zeros(nq);
            e[i] = h;
            let ke = |qq: &DVector<f64>| 0.5 * (v.transpose() * m.mass_matrix(qq) * &v)[0];
            expect[i] -= (ke(&(&q + &e)) - ke(&(&q - &e))) / (2.0 * h);
            expect[i] += (m.potential_energy(&(&q + &e)) - m.potential_energy(&(&q - &e))) / (2.0 * h);
        }
        let c = m.bias(&q, &v);
        assert!((&c - &expect).amax() < 1e-5 * c.amax().max(1.0));
    }
}

#[test]
fn contact_jacobian_and_jdot_match_finite_differences() {
    let m = PlanarModel::default_biped();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (q, v) = random_state(&m, &mut rng);
        let snap = m.dynamics_snapshot(&q, &v, &m.contact_ids(), 4).unwrap();
        for (c, id) in snap.contacts.iter().zip(m.contact_ids()) {
            let eps = 1e-7;
            let vel_fd = (m.contact_position(&(&q + &v * eps), id) - m.contact_position(&q, id)) / eps;
            let vel = &c.jacobian * &v;
            assert!((vel_fd[0] - vel[0]).abs() < 1e-5 && (vel_fd[1] - vel[2]).abs() < 1e-5);
            assert_eq!(vel[1], 0.0);
            // J̇q̇ = d/dt (J q̇) along q̇ with q̇ held fixed
            let h = 1e-6;
            let jp = m.dynamics_snapshot(&(&q + &v * h), &v, &[id], 4).unwrap().contacts[0].jacobian.clone();
            let jm = m.dynamics_snapshot(&(&q - &v * h), &v, &[id], 4).unwrap().contacts[0].jacobian.clone();
            let jd_fd = (jp - jm) / (2.0 * h) * &v;
            assert!((jd_fd - c.jdot_qdot).amax() < 1e-6 * c.jdot_qdot.amax().max(1.0));
        }
        // COM Jacobian and its J̇q̇
        let (jc, jdc) = m.com_jacobian(&q, &v);
        let eps = 1e-7;
        let fd: Vector2<f64> = (m.com(&(&q + &v * eps)) - m.com(&q)) / eps;
        assert!((fd - &jc * &v).amax() < 1e-5);
        let h = 1e-6;
        let (jp, _) = m.com_jacobian(&(&q + &v * h), &v);
        let (jm, _) = m.com_jacobian(&(&q - &v * h), &v);
        let jd_fd = (jp - jm) / (2.0 * h) * &v;
        assert!((jd_fd - jdc).amax() < 1e-6 * jdc.amax().max(1.0));
    }
}

#[test]
fn energy_drift_shrinks_with_step() {
    // free-floating, no contact, no input
    let m = PlanarModel::default_biped();
    let nq = m.nq();
    let mut q0 = DVector::zeros(nq);
    q0[1] = 1.0;
    q0[4] = -0.3;
    let mut v0 = DVector::zeros(nq);
    v0[0] = 0.3;
    v0[3] = 1.0;
    v0[6] = -1.0;
    let energy = |q: &DVector<f64>, v: &DVector<f64>| m.kinetic_energy(q, v) + m.potential_energy(q);
    let drift = |dt: f64| {
        let (mut q, mut v) = (q0.clone(), v0.clone());
        let e0 = energy(&q, &v);
        let steps = (0.5 / dt) as usize;
        let mut worst: f64 = 0.0;
        for _ in 0..steps {
            let h = m.mass_matrix(&q);
            let c = m.bias(&q, &v);
            let a = h.cholesky().unwrap().solve(&(-c));
            (q, v) = integrate_step(&q, &v, &a, dt);
            worst = worst.max((energy(&q, &v) - e0).abs());
        }
        worst
    };
    let d1 = drift(2e-3);
    let d2 = drift(1e-3);
    assert!(d2 < d1, "{d2} !< {d1}");
    // first-order method: halving dt should roughly halve the drift
    assert!(d1 / d2 > 1.5, "{d1} / {d2}");
}

#[test]
fn fixed_base_pendulum_inertia() {
    let text = r#"
name = "pendulum"
floating_base = false
[[link]]
name = "base"
mass = 1.0
inertia = 1.0
[[link]]
name = "arm"
parent = "base"
mass = 2.0
inertia = 0.1
com = [0.0, -0.5]
"#;
    let m = PlanarModel::from_toml(text).unwrap();
    assert_eq!(m.nq(), 1);
    for th in [-1.0, 0.0, 0.7] {
        let h = m.mass_matrix(&DVector::from_element(1, th));
        assert!((h[(0, 0)] - (2.0 * 0.25 + 0.1)).abs() < 1e-12);
    }
}

#[test]
fn free_fall_velocity_is_exact() {
    let m = PlanarModel::default_biped();
    let nq = m.nq();
    let mut q = m.standing_posture(&[0.0, 0.0], 0.8, 0.05).unwrap();
    let q_start = q.clone();
    let mut v = DVector::zeros(nq);
    for _ in 0..100 {
        let a = m.mass_matrix(&q).cholesky().unwrap().solve(&(-m.bias(&q, &v)));
        (q, v) = integrate_step(&q, &v, &a, 1e-3);
    }
    // the whole body falls rigidly: every coordinate but the base height is still
    assert!((v[1] + m.gravity * 0.1).abs() < 1e-9, "{}", v[1]);
    assert!(v.iter().enumerate().all(|(i, x)| i == 1 || x.abs() < 1e-9));
    assert!((q[0] - q_start[0]).abs() < 1e-12);
}

#[test]
fn zero_acceleration_drifts_uniformly() {
    let q = DVector::from_vec(vec![0.1, 0.2, -0.3]);
    let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    let (q1, v1) = integrate_step(&q, &v, &DVector::zeros(3), 0.01);
    assert_eq!(v1, v);
    assert!((q1 - (&q + &v * 0.01)).amax() < 1e-15);
}

proptest! {
    #[test]
    fn semi_implicit_update_formula(
        q in prop::collection::vec(-2.0f64..2.0, 4),
        v in prop::collection::vec(-2.0f64..2.0, 4),
        a in prop::collection::vec(-20.0f64..20.0, 4),
        dt in 1e-4f64..1e-2,
    ) {
        let (q, v, a) = (DVector::from_vec(q), DVector::from_vec(v), DVector::from_vec(a));
        let (q1, v1) = integrate_step(&q, &v, &a, dt);
        prop_assert!((&v1 - (&v + &a * dt)).amax() < 1e-14);
        prop_assert!((&q1 - (&q + &v1 * dt)).amax() < 1e-14);
    }
}
