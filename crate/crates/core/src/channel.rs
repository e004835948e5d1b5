//! Analytic photon-number-resolved channel model.
//!
//! A weak coherent pulse of intensity `mu` emits n photons with Poisson
//! probability. Each photon survives the fiber and the detector with
//! probability `eta`, and the detector also fires on background/dark
//! counts with probability `y0` per pulse. The standard conventions used
//! throughout the decoy-state literature follow:
//!
//! - yield:     `Y_n = y0 + eta_n - y0 * eta_n`, `eta_n = 1 - (1 - eta)^n`
//! - error:     `e_n * Y_n = e0 * y0 + e_d * eta_n`, `e0 = 1/2`
//! - gain:      `Q_mu = y0 + (1 - y0) * (1 - exp(-eta * mu))`
//! - QBER:      `E_mu * Q_mu = e0 * y0 + e_d * (1 - exp(-eta * mu))`
//!
//! The error numerator drops the `y0 * eta_n` cross term that the yield
//! keeps; the discrepancy is second order in `y0 * eta_n` and `e_n` is
//! clamped to [0, 1]. Dark counts carry no bit information, so their
//! error rate is exactly 1/2.
//!
//! From these, [`rate_terms_from_model`] assembles the [`RateTerms`] for
//! any scenario, with the multi-photon fraction defined by difference so
//! the three fractions sum to one exactly (truncation mass lands in the
//! multi-photon bucket, which only ever understates the key rate).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rates::{self, RateTerms};

/// Default bound on the Poisson tail mass beyond the truncation cutoff.
pub const DEFAULT_TAIL_BOUND: f64 = 1e-10;

/// Largest truncation cutoff the automatic selection will try.
const N_MAX_CEILING: usize = 4096;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("{name} = {value} is out of range {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("n_max = {n_max} leaves Poisson tail {tail} above bound {bound} at mu = {mu}")]
    TailTooLarge {
        n_max: usize,
        tail: f64,
        bound: f64,
        mu: f64,
    },
    #[error("conditional probability undefined: {what} is zero")]
    UndefinedConditional { what: &'static str },
    #[error("degenerate scenario: overall gain is zero (no detections possible)")]
    DegenerateScenario,
    #[error("selected bound is not positive at distance 0 (rate = {rate})")]
    NoPositiveRate { rate: f64 },
    #[error("selected bound stayed positive up to {limit_km} km; no cutoff in range")]
    NoCutoffInRange { limit_km: f64 },
    #[error(transparent)]
    Rate(#[from] rates::RateError),
}

/// Source description: mean photon number and truncation cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceParams {
    /// Mean photon number per pulse.
    pub mu: f64,
    /// Photon-number cutoff for truncated sums.
    pub n_max: usize,
}

impl SourceParams {
    /// Build with an explicit cutoff, checking the tail bound.
    pub fn new(mu: f64, n_max: usize) -> Result<Self, ChannelError> {
        if !mu.is_finite() || mu < 0.0 {
            return Err(ChannelError::OutOfRange {
                name: "mu",
                value: mu,
                range: ">= 0",
            });
        }
        if n_max < 2 {
            return Err(ChannelError::OutOfRange {
                name: "n_max",
                value: n_max as f64,
                range: ">= 2",
            });
        }
        let tail = poisson_tail(mu, n_max);
        if tail > DEFAULT_TAIL_BOUND {
            return Err(ChannelError::TailTooLarge {
                n_max,
                tail,
                bound: DEFAULT_TAIL_BOUND,
                mu,
            });
        }
        Ok(Self { mu, n_max })
    }

    /// Build with the smallest cutoff whose Poisson tail is below the
    /// default bound.
    pub fn for_intensity(mu: f64) -> Result<Self, ChannelError> {
        if !mu.is_finite() || mu < 0.0 {
            return Err(ChannelError::OutOfRange {
                name: "mu",
                value: mu,
                range: ">= 0",
            });
        }
        let mut n_max = 2;
        while poisson_tail(mu, n_max) > DEFAULT_TAIL_BOUND {
            n_max += 1;
            if n_max > N_MAX_CEILING {
                return Err(ChannelError::TailTooLarge {
                    n_max,
                    tail: poisson_tail(mu, N_MAX_CEILING),
                    bound: DEFAULT_TAIL_BOUND,
                    mu,
                });
            }
        }
        Ok(Self { mu, n_max })
    }
}

/// Fiber and detector description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    /// Fiber loss coefficient, dB/km.
    pub alpha_db_per_km: f64,
    /// Fiber length, km.
    pub distance_km: f64,
    /// Detector efficiency.
    pub eta_det: f64,
    /// Background/dark-count yield per pulse.
    pub y0: f64,
    /// Misalignment error probability.
    pub e_d: f64,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let checks: [(&'static str, f64, f64, f64, &'static str); 5] = [
            ("alpha_db_per_km", self.alpha_db_per_km, 0.0, f64::MAX, ">= 0"),
            ("distance_km", self.distance_km, 0.0, f64::MAX, ">= 0"),
            ("eta_det", self.eta_det, 0.0, 1.0, "[0, 1]"),
            ("y0", self.y0, 0.0, 1.0, "[0, 1]"),
            ("e_d", self.e_d, 0.0, 0.5, "[0, 1/2]"),
        ];
        for (name, value, lo, hi, range) in checks {
            if !value.is_finite() || value < lo || value > hi {
                return Err(ChannelError::OutOfRange { name, value, range });
            }
        }
        Ok(())
    }

    /// Same channel at a different fiber length.
    pub fn at_distance(&self, distance_km: f64) -> Self {
        Self {
            distance_km,
            ..*self
        }
    }
}

/// Per-photon-number emission, yield, gain and error tables up to the
/// truncation cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonNumberStats {
    pub p_n: Vec<f64>,
    pub y_n: Vec<f64>,
    pub q_n: Vec<f64>,
    pub e_n: Vec<f64>,
    pub eta: f64,
}

impl PhotonNumberStats {
    /// Truncated gain `sum p_n * Y_n`.
    pub fn gain(&self) -> f64 {
        self.q_n.iter().sum()
    }

    /// Truncated error mass `sum p_n * Y_n * e_n`.
    pub fn error_mass(&self) -> f64 {
        self.q_n.iter().zip(&self.e_n).map(|(q, e)| q * e).sum()
    }

    /// Emission mass not covered by the truncated table.
    pub fn tail(&self) -> f64 {
        (1.0 - self.p_n.iter().sum::<f64>()).max(0.0)
    }
}

/// Poisson probability `exp(-mu) mu^n / n!`, evaluated in log space.
pub fn poisson_pn(mu: f64, n: u64) -> Result<f64, ChannelError> {
    if !mu.is_finite() || mu < 0.0 {
        return Err(ChannelError::OutOfRange {
            name: "mu",
            value: mu,
            range: ">= 0",
        });
    }
    if mu == 0.0 {
        return Ok(if n == 0 { 1.0 } else { 0.0 });
    }
    Ok((-mu + n as f64 * mu.ln() - ln_factorial(n)).exp())
}

/// Poisson mass above `n_max`.
pub fn poisson_tail(mu: f64, n_max: usize) -> f64 {
    if mu == 0.0 {
        return 0.0;
    }
    // p_n recurrence keeps the partial sum exact to rounding
    let mut p = (-mu).exp();
    let mut sum = p;
    for n in 1..=n_max {
        p *= mu / n as f64;
        sum += p;
    }
    (1.0 - sum).max(0.0)
}

fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    if n <= 1024 {
        return (2..=n).map(|k| (k as f64).ln()).sum();
    }
    // Stirling series, plenty accurate at this size
    let x = n as f64;
    x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln() + 1.0 / (12.0 * x)
        - 1.0 / (360.0 * x.powi(3))
}

/// Overall transmittance: detector efficiency times fiber transmission.
pub fn transmittance(c: &ChannelParams) -> Result<f64, ChannelError> {
    c.validate()?;
    Ok(c.eta_det * 10f64.powf(-c.alpha_db_per_km * c.distance_km / 10.0))
}

/// Yield of an n-photon pulse: at least one of the n photons arrives, or
/// the detector fires on background, with the double-fire overlap removed.
pub fn yield_n(n: u64, eta: f64, y0: f64) -> Result<f64, ChannelError> {
    check_unit("eta", eta)?;
    check_unit("y0", y0)?;
    let eta_n = 1.0 - (1.0 - eta).powi(n as i32);
    Ok(y0 + eta_n - y0 * eta_n)
}

/// Conditional error rate of an n-photon pulse. Background fires are
/// random (rate 1/2), signal photons err with the misalignment rate.
pub fn error_n(n: u64, eta: f64, y0: f64, e_d: f64) -> Result<f64, ChannelError> {
    check_unit("eta", eta)?;
    check_unit("y0", y0)?;
    if !e_d.is_finite() || !(0.0..=0.5).contains(&e_d) {
        return Err(ChannelError::OutOfRange {
            name: "e_d",
            value: e_d,
            range: "[0, 1/2]",
        });
    }
    if n == 0 {
        if y0 == 0.0 {
            return Err(ChannelError::UndefinedConditional { what: "Y_0" });
        }
        return Ok(0.5);
    }
    let y = yield_n(n, eta, y0)?;
    if y == 0.0 {
        return Err(ChannelError::UndefinedConditional { what: "Y_n" });
    }
    let eta_n = 1.0 - (1.0 - eta).powi(n as i32);
    Ok(((0.5 * y0 + e_d * eta_n) / y).clamp(0.0, 1.0))
}

/// Closed-form overall gain `Q_mu`.
pub fn overall_gain(mu: f64, c: &ChannelParams) -> Result<f64, ChannelError> {
    if !mu.is_finite() || mu < 0.0 {
        return Err(ChannelError::OutOfRange {
            name: "mu",
            value: mu,
            range: ">= 0",
        });
    }
    let eta = transmittance(c)?;
    Ok(c.y0 + (1.0 - c.y0) * (1.0 - (-eta * mu).exp()))
}

/// Closed-form overall QBER `E_mu`.
pub fn overall_qber(mu: f64, c: &ChannelParams) -> Result<f64, ChannelError> {
    let q = overall_gain(mu, c)?;
    if q == 0.0 {
        return Err(ChannelError::UndefinedConditional { what: "Q_mu" });
    }
    let eta = transmittance(c)?;
    let signal = 1.0 - (-eta * mu).exp();
    Ok(((0.5 * c.y0 + c.e_d * signal) / q).clamp(0.0, 1.0))
}

/// Photon-number-resolved tables for one (source, channel) scenario.
pub fn photon_number_stats(
    s: &SourceParams,
    c: &ChannelParams,
) -> Result<PhotonNumberStats, ChannelError> {
    let eta = transmittance(c)?;
    let mut p_n = Vec::with_capacity(s.n_max + 1);
    let mut y_n = Vec::with_capacity(s.n_max + 1);
    let mut q_n = Vec::with_capacity(s.n_max + 1);
    let mut e_n = Vec::with_capacity(s.n_max + 1);
    for n in 0..=(s.n_max as u64) {
        let p = poisson_pn(s.mu, n)?;
        let y = yield_n(n, eta, c.y0)?;
        // a never-firing class has no conditional error rate; record 1/2
        let e = if y == 0.0 {
            0.5
        } else {
            error_n(n, eta, c.y0, c.e_d)?
        };
        p_n.push(p);
        y_n.push(y);
        q_n.push(p * y);
        e_n.push(e);
    }
    Ok(PhotonNumberStats {
        p_n,
        y_n,
        q_n,
        e_n,
        eta,
    })
}

/// Assemble the rate-bound inputs for one scenario.
///
/// The vacuum and single-photon fractions come from the exact closed
/// forms; everything else (including any truncation mass) is assigned to
/// the multi-photon fraction, which is the conservative direction.
pub fn rate_terms_from_model(
    s: &SourceParams,
    c: &ChannelParams,
) -> Result<RateTerms, ChannelError> {
    let eta = transmittance(c)?;
    let q = overall_gain(s.mu, c)?;
    if q == 0.0 {
        return Err(ChannelError::DegenerateScenario);
    }
    let e = overall_qber(s.mu, c)?;
    let p0 = poisson_pn(s.mu, 0)?;
    let p1 = poisson_pn(s.mu, 1)?;
    let omega0 = (p0 * c.y0 / q).min(1.0);
    let omega1 = (p1 * yield_n(1, eta, c.y0)? / q).min(1.0 - omega0);
    let omega_m = (1.0 - (omega0 + omega1)).max(0.0);
    let e1 = if s.mu == 0.0 {
        // no single-photon emissions; value is unused downstream
        0.0
    } else {
        error_n(1, eta, c.y0, c.e_d)?
    };
    let terms = RateTerms {
        q_signal: q,
        e_signal: e,
        omega0,
        omega1,
        omega_m,
        e1,
    };
    terms.validate()?;
    Ok(terms)
}

/// Which lower bound a distance search should track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateBound {
    Prior,
    New,
}

impl RateBound {
    pub fn evaluate(&self, t: &RateTerms) -> Result<f64, rates::RateError> {
        match self {
            RateBound::Prior => rates::key_rate_prior(t),
            RateBound::New => rates::key_rate_new(t),
        }
    }
}

/// Search ceiling for [`cutoff_distance`]. Any realistic fiber loss pushes
/// the transmittance to underflow long before this.
pub const CUTOFF_SEARCH_LIMIT_KM: f64 = 1.0e6;

/// Largest distance at which the selected bound stays positive, found by
/// doubling to bracket the zero crossing and bisecting to 0.01 km.
///
/// The distance in `c` is ignored; the search starts at zero. A scenario
/// whose gain collapses to zero (for example `y0 = 0` past transmittance
/// underflow) counts as non-positive rate for bracketing purposes.
pub fn cutoff_distance(
    s: &SourceParams,
    c: &ChannelParams,
    bound: RateBound,
) -> Result<f64, ChannelError> {
    const RESOLUTION_KM: f64 = 0.01;
    let rate_at = |d: f64| -> Result<Option<f64>, ChannelError> {
        match rate_terms_from_model(s, &c.at_distance(d)) {
            Ok(t) => Ok(Some(bound.evaluate(&t)?)),
            Err(ChannelError::DegenerateScenario) => Ok(None),
            Err(e) => Err(e),
        }
    };

    let at_zero = rate_at(0.0)?.ok_or(ChannelError::DegenerateScenario)?;
    if at_zero <= 0.0 {
        return Err(ChannelError::NoPositiveRate { rate: at_zero });
    }

    // bracket by doubling
    let mut lo = 0.0;
    let mut hi = 1.0;
    loop {
        let positive = matches!(rate_at(hi)?, Some(r) if r > 0.0);
        if !positive {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if hi > CUTOFF_SEARCH_LIMIT_KM {
            return Err(ChannelError::NoCutoffInRange {
                limit_km: CUTOFF_SEARCH_LIMIT_KM,
            });
        }
    }

    while hi - lo > RESOLUTION_KM {
        let mid = 0.5 * (lo + hi);
        let positive = matches!(rate_at(mid)?, Some(r) if r > 0.0);
        if positive {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

fn check_unit(name: &'static str, value: f64) -> Result<(), ChannelError> {
    if !value.is_finite() || !(0.0..=1.0).contains(&value) {
        return Err(ChannelError::OutOfRange {
            name,
            value,
            range: "[0, 1]",
        });
    }
    Ok(())
}
