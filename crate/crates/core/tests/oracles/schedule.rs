//! Random schedule parameters and a hand-evaluated curriculum table.

use rand::Rng;
use sidgen_core::schedule::ScheduleParams;

pub fn random_params(rng: &mut impl Rng) -> ScheduleParams {
    ScheduleParams {
        kappa: rng.random_range(0.2..0.8),
        tau: rng.random_range(0.05..0.5),
        eps: 10f64.powf(rng.random_range(-8.0..-2.0)),
    }
}

/// `(t, epoch, T, eps_t, expected)`, evaluated by hand.
pub const CURRICULUM_TABLE: [(f64, u32, u32, f64, f64); 20] = [
    (0.5, 0, 10, 0.01, 0.05),
    (0.5, 4, 10, 0.01, 0.25),
    (0.5, 9, 10, 0.01, 0.5),
    (0.5, 20, 10, 0.01, 0.5),
    (1.0, 0, 10, 0.01, 0.1),
    (1.0, 9, 10, 0.01, 1.0),
    (0.0, 0, 10, 0.01, 0.01),
    (0.0, 50, 10, 0.001, 0.001),
    (0.05, 0, 10, 0.01, 0.01),
    (0.2, 1, 4, 0.001, 0.1),
    (0.8, 1, 4, 0.001, 0.4),
    (0.8, 3, 4, 0.001, 0.8),
    (0.3, 0, 1, 0.001, 0.3),
    (0.9, 0, 2, 0.001, 0.45),
    (0.9, 1, 2, 0.001, 0.9),
    (0.4, 2, 5, 0.1, 0.24),
    (0.1, 0, 5, 0.1, 0.1),
    (0.6, 0, 3, 0.25, 0.25),
    (0.75, 1, 3, 0.25, 0.5),
    (1.0, 100, 3, 0.25, 1.0),
];
