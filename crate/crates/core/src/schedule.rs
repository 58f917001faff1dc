//! Noise schedules, MDLM loss weights and the curriculum timestep transform.
//!
//! The masking probability at time `t` is `1 - alpha(t)` with
//! `alpha = exp(-sigma)`. Under that choice `dsigma/dt / (exp(sigma) - 1)`
//! equals `-alpha' / (1 - alpha)`, the usual masked-diffusion weight.

use serde::{Deserialize, Serialize};

/// Weight cap near `sigma -> 0`.
pub const W_MAX: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    pub kappa: f64,
    pub tau: f64,
    pub eps: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            kappa: 0.5,
            tau: 0.15,
            eps: 1e-6,
        }
    }
}

impl ScheduleParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.eps > 0.0 && self.eps <= 1e-2) {
            return Err(format!("eps must lie in (0, 1e-2], got {}", self.eps));
        }
        if !self.kappa.is_finite() {
            return Err("kappa must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumParams {
    pub t_curriculum: u32,
    pub eps_t: f64,
}

impl Default for CurriculumParams {
    fn default() -> Self {
        Self {
            t_curriculum: 10,
            eps_t: 1e-3,
        }
    }
}

impl CurriculumParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.t_curriculum < 1 {
            return Err("t_curriculum must be at least 1".into());
        }
        if !(self.eps_t > 0.0 && self.eps_t < 1.0) {
            return Err(format!("eps_t must lie in (0, 1), got {}", self.eps_t));
        }
        Ok(())
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-log(1 - sigmoid((t - kappa) / tau) + eps)`.
pub fn sigma(t: f64, p: &ScheduleParams) -> f64 {
    let z = (t - p.kappa) / p.tau;
    let s = logistic(z);
    if s < 0.5 {
        -(p.eps - s).ln_1p()
    } else {
        -(logistic(-z) + p.eps).ln()
    }
}

/// `(s (1 - s) / tau) / (1 - s + eps)` with `s = sigmoid((t - kappa) / tau)`.
pub fn dsigma_dt(t: f64, p: &ScheduleParams) -> f64 {
    let z = (t - p.kappa) / p.tau;
    let (s, one_minus_s) = (logistic(z), logistic(-z));
    s * one_minus_s / p.tau / (one_minus_s + p.eps)
}

/// `exp(-sigma)`, clipped to 1 where `eps` pushes sigma slightly below 0.
pub fn alpha(t: f64, p: &ScheduleParams) -> f64 {
    (-sigma(t, p)).exp().min(1.0)
}

/// `dsigma/dt / (exp(sigma) - 1)`, capped at [`W_MAX`].
pub fn loss_weight(t: f64, p: &ScheduleParams) -> f64 {
    weight_from(sigma(t, p), dsigma_dt(t, p))
}

fn weight_from(sigma: f64, dsigma: f64) -> f64 {
    let denom = sigma.exp_m1();
    if denom <= 0.0 {
        return W_MAX;
    }
    (dsigma / denom).min(W_MAX)
}

/// `min(max(eps_t, a t), 1)` with `a = min(1, (epoch + 1) / T)`.
pub fn curriculum_t(t: f64, epoch: u32, c: &CurriculumParams) -> f64 {
    let a = ((epoch as f64 + 1.0) / c.t_curriculum as f64).min(1.0);
    (a * t).max(c.eps_t).min(1.0)
}

/// Schedule selector used by the trainer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSchedule {
    SigmoidWarped(ScheduleParams),
    /// `sigma(t) = t`, a reference baseline.
    Linear,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::SigmoidWarped(ScheduleParams::default())
    }
}

impl NoiseSchedule {
    pub fn sigma(&self, t: f64) -> f64 {
        match self {
            NoiseSchedule::SigmoidWarped(params) => sigma(t, params),
            NoiseSchedule::Linear => t,
        }
    }

    pub fn dsigma_dt(&self, t: f64) -> f64 {
        match self {
            NoiseSchedule::SigmoidWarped(params) => dsigma_dt(t, params),
            NoiseSchedule::Linear => 1.0,
        }
    }

    pub fn alpha(&self, t: f64) -> f64 {
        (-self.sigma(t)).exp().min(1.0)
    }

    pub fn loss_weight(&self, t: f64) -> f64 {
        weight_from(self.sigma(t), self.dsigma_dt(t))
    }

    /// Smallest `t` on `[0, 1]` with `alpha(t) <= target`, by bisection.
    pub fn t_for_alpha(&self, target: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 1.0);
        if self.alpha(hi) > target {
            return hi;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.alpha(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            NoiseSchedule::SigmoidWarped(params) => params.validate(),
            NoiseSchedule::Linear => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_values() {
        let p = ScheduleParams::default();
        assert!((sigma(0.5, &p) - (-(0.5f64 + 1e-6).ln())).abs() < 1e-12);
        assert!((alpha(0.5, &p) - 0.5).abs() < 1e-5);
        let p = ScheduleParams {
            kappa: 0.5,
            tau: 0.1,
            eps: 1e-12,
        };
        assert!((dsigma_dt(0.5, &p) - 5.0).abs() < 1e-9);
        assert!((loss_weight(0.5, &p) - 5.0).abs() < 1e-9);
    }

    #[test]
    fn far_left_limit() {
        let p = ScheduleParams {
            kappa: 0.5,
            tau: 0.01,
            eps: 1e-6,
        };
        assert!((sigma(0.0, &p) + (1e-6f64).ln_1p()).abs() < 1e-12);
        assert_eq!(alpha(0.0, &p), 1.0);
        assert_eq!(loss_weight(0.0, &p), W_MAX);
    }

    #[test]
    fn curriculum_examples() {
        let c = CurriculumParams {
            t_curriculum: 10,
            eps_t: 0.01,
        };
        assert!((curriculum_t(0.5, 0, &c) - 0.05).abs() < 1e-15);
        assert_eq!(curriculum_t(0.7, 9, &c), 0.7);
        assert_eq!(curriculum_t(0.0, 3, &c), 0.01);
    }

    #[test]
    fn alpha_inverse() {
        let s = NoiseSchedule::default();
        let t = s.t_for_alpha(0.9);
        assert!((s.alpha(t) - 0.9).abs() < 1e-9);
        assert!((NoiseSchedule::Linear.t_for_alpha((-0.25f64).exp()) - 0.25).abs() < 1e-9);
    }

    #[test]
    fn config_round_trip() {
        let s = NoiseSchedule::default();
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<NoiseSchedule>(&j).unwrap(), s);
        assert!(serde_json::from_str::<NoiseSchedule>(r#"{"kind":"sigmoid_warped","kappa":0.5,"tau":0.1,"eps":1e-6,"x":1}"#).is_err());
    }
}
