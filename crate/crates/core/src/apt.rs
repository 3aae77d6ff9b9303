//! Adaptive probabilistic threshold.
//!
//! Known honest ids grow as `c'(t) = α·(|H| − c)/|H|`, which bounds the
//! expected Byzantine share of a view by `B(t) = B/(B + c(t))`. A Chernoff
//! upper tail then turns `B(t)` into a threshold `b(t)` exceeded with
//! probability at most `κ`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AptError {
    #[error("initial honest count c0 = {c0} must lie in [1, {n_honest}]")]
    InitialCount { c0: f64, n_honest: usize },
    #[error("failure probability must lie in (0, 1), got {0}")]
    Kappa(f64),
    #[error("view size must be at least 1")]
    EmptyView,
    #[error("at least one honest node is required")]
    NoHonest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AptParams {
    pub n_honest: usize,
    pub n_byz: usize,
    pub c0: f64,
    pub view_size: usize,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AptEstimate {
    pub t: u64,
    pub alpha: f64,
    pub c_t: f64,
    #[serde(rename = "B_t")]
    pub b_ratio: f64,
    pub delta: f64,
    pub b_t: f64,
}

impl AptEstimate {
    /// Number of models filtered, as reported per round.
    pub fn models_filtered(&self) -> usize {
        self.b_t.ceil() as usize
    }
}

impl AptParams {
    pub fn validate(&self) -> Result<(), AptError> {
        if self.n_honest == 0 {
            return Err(AptError::NoHonest);
        }
        if !(self.c0 >= 1.0 && self.c0 <= self.n_honest as f64) {
            return Err(AptError::InitialCount {
                c0: self.c0,
                n_honest: self.n_honest,
            });
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(AptError::Kappa(self.kappa));
        }
        if self.view_size == 0 {
            return Err(AptError::EmptyView);
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n_honest + self.n_byz
    }

    /// Probability that an id taken from a fresh history is honest.
    fn honest_share(&self) -> f64 {
        self.c0 / (self.c0 + self.n_byz as f64)
    }

    pub fn alpha_pull(&self) -> f64 {
        self.honest_share().powi(2) * self.view_size as f64
    }

    pub fn alpha_push(&self) -> f64 {
        let n = self.n();
        if n < 2 {
            return 0.0;
        }
        self.n_honest as f64 / (n - 1) as f64 * self.honest_share() * self.view_size as f64
    }
}

/// Arrival rate of honest ids, pull plus push.
pub fn alpha(params: &AptParams) -> f64 {
    params.alpha_pull() + params.alpha_push()
}

/// `c(t) = |H| − (|H| − c0)·exp(−α t/|H|)`.
pub fn c_of_t(params: &AptParams, alpha: f64, t: f64) -> f64 {
    let h = params.n_honest as f64;
    h - (h - params.c0) * (-alpha * t / h).exp()
}

/// Positive root of `δ²·v·p/(δ+2) = −ln κ`.
pub fn chernoff_delta(v: usize, p: f64, kappa: f64) -> f64 {
    let vp = v as f64 * p;
    let l = kappa.ln();
    (-l + (l * l - 8.0 * vp * l).sqrt()) / (2.0 * vp)
}

/// `exp(−δ²·v·p/(δ+2))`, the upper-tail bound on `P(X ≥ (1+δ)·v·p)`.
pub fn chernoff_tail(v: usize, p: f64, delta: f64) -> f64 {
    (-delta * delta * v as f64 * p / (delta + 2.0)).exp()
}

/// `(δ, min((1+δ)·v·p, v−1))` for a known Byzantine ratio `p`; `(0, 0)`
/// when `p = 0`.
pub fn chernoff_threshold(v: usize, p: f64, kappa: f64) -> (f64, f64) {
    if p <= 0.0 {
        return (0.0, 0.0);
    }
    let delta = chernoff_delta(v, p, kappa);
    let cap = v.saturating_sub(1) as f64;
    (delta, ((1.0 + delta) * v as f64 * p).min(cap))
}

/// All per-round quantities at round `t`.
pub fn b_of_t(params: &AptParams, t: u64) -> AptEstimate {
    let alpha = alpha(params);
    let c_t = c_of_t(params, alpha, t as f64);
    let b_ratio = if params.n_byz == 0 {
        0.0
    } else {
        params.n_byz as f64 / (params.n_byz as f64 + c_t)
    };
    let (delta, b_t) = chernoff_threshold(params.view_size, b_ratio, params.kappa);
    AptEstimate {
        t,
        alpha,
        c_t,
        b_ratio,
        delta,
        b_t,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_params() -> AptParams {
        AptParams {
            n_honest: 270,
            n_byz: 30,
            c0: 27.0,
            view_size: 20,
            kappa: 1e-3,
        }
    }

    #[test]
    fn alpha_honest_only_limit() {
        let p = AptParams {
            n_honest: 50,
            n_byz: 0,
            c0: 50.0,
            view_size: 8,
            kappa: 0.01,
        };
        assert!((alpha(&p) - 8.0 * (1.0 + 50.0 / 49.0)).abs() < 1e-12);
    }

    #[test]
    fn alpha_table_values() {
        let p = table_params();
        assert!((p.alpha_pull() - 4.488).abs() < 1e-3);
        assert!((p.alpha_push() - 8.555).abs() < 1e-3);
        assert!((alpha(&p) - 13.04).abs() < 1e-2);
        let zero_view = AptParams { view_size: 0, ..p };
        assert_eq!(alpha(&zero_view), 0.0);
    }

    #[test]
    fn c_of_t_boundaries() {
        let p = table_params();
        let a = alpha(&p);
        assert_eq!(c_of_t(&p, a, 0.0), 27.0);
        assert!((c_of_t(&p, a, 1e6) - 270.0).abs() < 1e-9);
    }

    /// Forward Euler on the growth ODE.
    fn euler(p: &AptParams, alpha: f64, t_end: f64, h: f64) -> f64 {
        let hon = p.n_honest as f64;
        let steps = (t_end / h).round() as usize;
        let mut c = p.c0;
        for _ in 0..steps {
            c += h * alpha * (hon - c) / hon;
        }
        c
    }

    #[test]
    fn closed_form_matches_ode() {
        let p = table_params();
        let a = 13.04;
        let numeric = euler(&p, a, 50.0, 1e-3);
        let closed = c_of_t(&p, a, 50.0);
        assert!(((numeric - closed) / closed).abs() < 1e-4);
    }

    #[test]
    fn worked_example() {
        let (delta, b) = chernoff_threshold(20, 0.1, 1e-3);
        assert!((delta - 4.872).abs() < 1e-3, "delta {delta}");
        assert!((b - 11.74).abs() < 1e-2, "b {b}");
        assert_eq!(b.ceil(), 12.0);
    }

    #[test]
    fn delta_vanishes_as_kappa_tends_to_one() {
        let (delta, b) = chernoff_threshold(20, 0.1, 1.0 - 1e-12);
        assert!(delta < 1e-4);
        assert!((b - 2.0).abs() < 1e-3);
    }

    #[test]
    fn threshold_is_capped() {
        let (_, b) = chernoff_threshold(20, 0.45, 1e-6);
        assert_eq!(b, 19.0);
    }

    #[test]
    fn no_byzantine_gives_zero_threshold() {
        let p = AptParams {
            n_byz: 0,
            ..table_params()
        };
        let e = b_of_t(&p, 10);
        assert_eq!((e.b_ratio, e.delta, e.b_t), (0.0, 0.0, 0.0));
    }

    #[test]
    fn tail_inverts_delta() {
        for &(v, p, k) in &[(20, 0.1, 1e-3), (5, 0.5, 1e-6), (100, 0.01, 0.1)] {
            let d = chernoff_delta(v, p, k);
            let tail = chernoff_tail(v, p, d);
            assert!(((tail - k) / k).abs() < 1e-10);
            // plugging back recovers ln κ
            let exponent = d * d * v as f64 * p / (d + 2.0);
            assert!((exponent + k.ln()).abs() < 1e-9);
        }
        assert!((chernoff_tail(20, 0.1, 1e-9) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decay_and_threshold_monotonicity() {
        let p = table_params();
        let mut prev = b_of_t(&p, 0);
        assert!(prev.c_t >= p.c0);
        for t in 1..=500 {
            let e = b_of_t(&p, t);
            assert!(e.c_t <= p.n_honest as f64 + 1e-9);
            assert!(e.b_ratio <= prev.b_ratio);
            if e.b_ratio > 0.1 {
                // the ratio is still visibly moving at this stage
                assert!(e.b_ratio < prev.b_ratio);
            }
            assert!(e.b_t <= prev.b_t + 1e-12);
            assert!(e.b_t <= 19.0);
            prev = e;
        }
        let f = 30.0 / 300.0;
        assert!((prev.b_ratio - f).abs() < 1e-9);
    }

    #[test]
    fn validation() {
        assert!(table_params().validate().is_ok());
        assert!(AptParams { c0: 0.5, ..table_params() }.validate().is_err());
        assert!(AptParams { c0: 271.0, ..table_params() }.validate().is_err());
        assert!(AptParams { kappa: 1.0, ..table_params() }.validate().is_err());
        assert!(AptParams { view_size: 0, ..table_params() }.validate().is_err());
    }
}
