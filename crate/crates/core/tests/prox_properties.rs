use ndarray::{Array1, Array2};
use pmc_lstd::prox::{
    l1_norm, mc_penalty, moreau_env_l1, pmc_penalty, project_subspace, resolvent_l1_minus_id, soft_threshold,
    SubspaceBasis,
};
use pmc_lstd_testkit::{envelope_grid_scalar, fd_gradient, normal_vec, random_orthonormal, rng, subgradient_violation};
use proptest::prelude::*;

fn vec_strategy(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 1..max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn soft_threshold_minimizes_prox_objective(x in vec_strategy(20), tau in 0.01f64..5.0, probe in -1.0f64..1.0) {
        let x = Array1::from(x);
        let p = soft_threshold(x.view(), tau).unwrap();
        let obj = |u: &Array1<f64>| tau * l1_norm(u.view()) + 0.5 * (u - &x).mapv(|d| d * d).sum();
        let best = obj(&p);
        for i in 0..x.len() {
            let mut q = p.clone();
            q[i] += probe;
            prop_assert!(obj(&q) >= best - 1e-12);
        }
    }

    #[test]
    fn soft_threshold_is_nonexpansive(x in vec_strategy(10), tau in 0.01f64..5.0, shift in vec_strategy(10)) {
        let n = x.len().min(shift.len());
        let x = Array1::from(x[..n].to_vec());
        let y = &x + &Array1::from(shift[..n].to_vec());
        let px = soft_threshold(x.view(), tau).unwrap();
        let py = soft_threshold(y.view(), tau).unwrap();
        let dp = (&px - &py).mapv(|d| d * d).sum().sqrt();
        let dx = (&x - &y).mapv(|d| d * d).sum().sqrt();
        prop_assert!(dp <= dx + 1e-12);
    }

    #[test]
    fn mc_lies_between_zero_and_l1(x in vec_strategy(20), tau in 0.01f64..5.0) {
        let x = Array1::from(x);
        let mc = mc_penalty(x.view(), tau).unwrap();
        prop_assert!(mc >= -1e-12);
        prop_assert!(mc <= l1_norm(x.view()) + 1e-12);
        prop_assert!(mc <= x.len() as f64 * tau / 2.0 + 1e-12);
    }

    #[test]
    fn resolvent_is_inverse_of_shifted_subdifferential(
        x in vec_strategy(30),
        eta in 0.01f64..0.99,
        alpha in 0.01f64..2.0,
        mu in 0.01f64..5.0,
    ) {
        let x = Array1::from(x);
        let z = resolvent_l1_minus_id(x.view(), eta, alpha, mu).unwrap();
        // x − (1 − η)z ∈ ηαμ ∂‖z‖₁
        let r = &x - &((1.0 - eta) * &z);
        prop_assert!(subgradient_violation(r.view(), z.view(), eta * alpha * mu) <= 1e-10);
    }

    #[test]
    fn resolvent_reflects_minus_one_monotonicity(
        x in prop::collection::vec(-10.0f64..10.0, 8),
        y in prop::collection::vec(-10.0f64..10.0, 8),
        eta in 0.01f64..0.99,
        weight in 0.01f64..5.0,
    ) {
        // u = J(x), v = J(y): ⟨u − v, (x − u) − (y − v)⟩ ≥ ηρ‖u − v‖² with ρ = −1.
        let (x, y) = (Array1::from(x), Array1::from(y));
        let u = resolvent_l1_minus_id(x.view(), eta, 1.0, weight).unwrap();
        let v = resolvent_l1_minus_id(y.view(), eta, 1.0, weight).unwrap();
        let du = &u - &v;
        let lhs = du.dot(&(&(&x - &u) - &(&y - &v)));
        prop_assert!(lhs >= -eta * du.dot(&du) - 1e-9);
    }
}

#[test]
fn mc_is_l1_minus_envelope_on_random_vectors() {
    let mut g = rng(11);
    for k in 0..1000 {
        let x = normal_vec(&mut g, 1 + (k * 37) % 200) * 5.0;
        let tau = [0.1, 1.0, 10.0][k % 3];
        let lhs = mc_penalty(x.view(), tau).unwrap();
        let rhs = l1_norm(x.view()) - moreau_env_l1(x.view(), tau).unwrap();
        assert!(
            (lhs - rhs).abs() <= 1e-12 * (1.0 + l1_norm(x.view())),
            "k={k}: {lhs} vs {rhs}"
        );
    }
}

#[test]
fn envelope_gradient_matches_finite_differences() {
    let mut g = rng(15);
    let mut checked = 0;
    while checked < 100 {
        let tau = 0.2 + checked as f64 * 0.03;
        let x = normal_vec(&mut g, 6) * 2.0;
        if x.iter().any(|v| (v.abs() - tau).abs() <= 1e-3) {
            continue;
        }
        let fd = fd_gradient(|u| moreau_env_l1(u, tau).unwrap(), x.view(), 1e-6);
        let exact = (&x - &soft_threshold(x.view(), tau).unwrap()) / tau;
        assert!((&fd - &exact).iter().all(|d| d.abs() <= 1e-5));
        checked += 1;
    }
}

#[test]
fn envelope_matches_grid_minimization() {
    for &(t, tau) in &[(0.3, 1.0), (-2.5, 0.5), (0.0, 2.0), (1.7, 0.1)] {
        let closed = moreau_env_l1(ndarray::arr1(&[t]).view(), tau).unwrap();
        let grid = envelope_grid_scalar(t, tau, 5.0, 400_001);
        assert!((closed - grid).abs() < 1e-8, "t={t} tau={tau}: {closed} vs {grid}");
    }
}

#[test]
fn pmc_reduces_to_mc_and_l1() {
    let mut g = rng(12);
    for k in 0..1000 {
        let n = 1 + k % 25;
        let x = normal_vec(&mut g, n) * 2.0;
        let tau = 0.1 + (k % 9) as f64 * 0.3;
        let full = pmc_penalty(x.view(), tau, &SubspaceBasis::full(n)).unwrap();
        let none = pmc_penalty(x.view(), tau, &SubspaceBasis::trivial(n)).unwrap();
        assert!((full - mc_penalty(x.view(), tau).unwrap()).abs() <= 1e-12 * (1.0 + l1_norm(x.view())));
        assert!((none - l1_norm(x.view())).abs() <= 1e-12 * (1.0 + l1_norm(x.view())));
    }
}

#[test]
fn pmc_on_and_off_the_subspace() {
    let mut g = rng(13);
    for _ in 0..50 {
        let v = random_orthonormal(&mut g, 12, 4);
        let basis = SubspaceBasis::new(v.clone()).unwrap();
        let tau = 0.7;
        // x ∈ M: the penalty is the MC penalty of x.
        let on = v.dot(&normal_vec(&mut g, 4));
        let pmc = pmc_penalty(on.view(), tau, &basis).unwrap();
        let expect = l1_norm(on.view()) - moreau_env_l1(on.view(), tau).unwrap();
        assert!((pmc - expect).abs() < 1e-10);
        // x ∈ M⊥: the penalty is ℓ1.
        let y = normal_vec(&mut g, 12);
        let off = &y - &v.dot(&v.t().dot(&y));
        let pmc = pmc_penalty(off.view(), tau, &basis).unwrap();
        assert!((pmc - l1_norm(off.view())).abs() < 1e-10);
        // The penalty never exceeds ℓ1 and never goes negative.
        let pmc = pmc_penalty(y.view(), tau, &basis).unwrap();
        assert!(pmc <= l1_norm(y.view()) + 1e-12 && pmc >= -1e-12);
    }
}

#[test]
fn projection_is_an_orthogonal_projector() {
    let mut g = rng(14);
    for _ in 0..100 {
        let v: Array2<f64> = random_orthonormal(&mut g, 15, 6);
        let basis = SubspaceBasis::new(v).unwrap();
        let x = normal_vec(&mut g, 15);
        let y = normal_vec(&mut g, 15);
        let px = project_subspace(x.view(), &basis).unwrap();
        let ppx = project_subspace(px.view(), &basis).unwrap();
        assert!((&ppx - &px).iter().all(|d| d.abs() < 1e-12));
        let py = project_subspace(y.view(), &basis).unwrap();
        assert!((px.dot(&y) - x.dot(&py)).abs() < 1e-12);
        assert!((&x - &px).dot(&px).abs() < 1e-12);
    }
}
