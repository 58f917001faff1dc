mod common;
mod oracles;

use proptest::prelude::*;
use oracles::schedule::{random_params, CURRICULUM_TABLE};
use sidgen_core::schedule::{
    alpha, curriculum_t, dsigma_dt, loss_weight, sigma, CurriculumParams, NoiseSchedule,
};

fn grid() -> impl Iterator<Item = f64> {
    (0..1000).map(|i| i as f64 / 999.0)
}

#[test]
fn derivative_matches_central_differences() {
    let mut rng = common::rng(5);
    let h = 1e-5;
    for _ in 0..10 {
        let p = random_params(&mut rng);
        for t in grid() {
            let fd = (sigma(t + h, &p) - sigma(t - h, &p)) / (2.0 * h);
            let an = dsigma_dt(t, &p);
            let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-300);
            assert!(rel < 1e-6, "t={t} p={p:?} fd={fd} an={an} rel={rel}");
        }
    }
}

#[test]
fn sigma_and_alpha_are_monotone() {
    let mut rng = common::rng(6);
    for _ in 0..10 {
        let p = random_params(&mut rng);
        let (mut ps, mut pa) = (f64::NEG_INFINITY, f64::INFINITY);
        for t in grid() {
            let (s, a) = (sigma(t, &p), alpha(t, &p));
            assert!(s >= ps && a <= pa, "t={t} {p:?}");
            assert!(a > 0.0 && a <= 1.0);
            assert!(s.is_finite() && dsigma_dt(t, &p) >= 0.0 && loss_weight(t, &p) >= 0.0);
            (ps, pa) = (s, a);
        }
    }
}

#[test]
fn linear_baseline() {
    let s = NoiseSchedule::Linear;
    assert_eq!(s.sigma(0.3), 0.3);
    assert!((s.alpha(1.0) - (-1f64).exp()).abs() < 1e-15);
    assert!((s.loss_weight(0.5) - 1.0 / 0.5f64.exp_m1()).abs() < 1e-12);
}

#[test]
fn curriculum_matches_hand_table() {
    for (t, epoch, tc, eps_t, want) in CURRICULUM_TABLE {
        let c = CurriculumParams {
            t_curriculum: tc,
            eps_t,
        };
        let got = curriculum_t(t, epoch, &c);
        assert!((got - want).abs() < 1e-12, "t={t} epoch={epoch} T={tc}: {got} vs {want}");
    }
}

proptest! {
    #[test]
    fn curriculum_is_bounded_and_nondecreasing(t in 0.0f64..=1.0, e in 0u32..40, tc in 1u32..20) {
        let c = CurriculumParams { t_curriculum: tc, eps_t: 1e-3 };
        let a = curriculum_t(t, e, &c);
        prop_assert!((1e-3..=1.0).contains(&a));
        prop_assert!(curriculum_t(t, e + 1, &c) >= a);
    }
}
