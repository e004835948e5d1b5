//! Secure-key-rate bounds for weak-coherent-pulse BB84.
//!
//! Everything here is expressed per pulse emitted by Alice, in bits. The
//! observable inputs are collected in [`RateTerms`]: the signal gain and
//! QBER, the fractions of Bob's detections that originated from vacuum,
//! single-photon and multi-photon emissions, and the single-photon error
//! rate. Two lower bounds are computed from them:
//!
//! - [`key_rate_prior`]: `Q * (-H2(E) + omega1 * (1 - H2(e1)))`, the
//!   standard single-photon-credit bound;
//! - [`key_rate_new`]: the same plus a `Q * omega0` term crediting
//!   detections that coincide with vacuum emissions, which need no
//!   privacy amplification.
//!
//! Both are tied together by a memory-accounting identity: the sifted key
//! length is `N = Q * (omega0 + omega1 + omega_m)` and the eavesdropper's
//! information is at most `S_Eve = Q * (H2(E) + omega1 * H2(e1) + omega_m)`
//! bits, so `N - S_Eve` reproduces the vacuum-credited bound exactly.
//! [`evaluate`] returns all five quantities in one record and the test
//! suite checks the identities to 1e-12.
//!
//! The bounds may be negative (they are lower bounds, and a negative value
//! marks the scenario as useless for key generation); callers that want
//! zero-clamped numbers for plotting must clamp at the reporting layer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance for the omega-sum invariant.
pub const OMEGA_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum RateError {
    #[error("{name} = {value} is outside [0, 1] or not finite")]
    Domain { name: &'static str, value: f64 },
    #[error("omega fractions sum to {sum}, expected 1 within {OMEGA_SUM_TOL}")]
    OmegaSum { sum: f64 },
    #[error("q_signal must be positive for rate evaluation, got {value}")]
    ZeroGain { value: f64 },
    #[error("{name} = {value} must be finite and nonnegative")]
    NonFinite { name: &'static str, value: f64 },
}

/// Observable quantities consumed by the key-rate bounds.
///
/// `e1` is the bit error rate of detections originating from single-photon
/// emissions; the same value is used where a phase error rate is needed,
/// so there is no separate phase-error field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateTerms {
    /// Gain of the signal state: Bob's detections per emitted pulse.
    pub q_signal: f64,
    /// QBER of the signal state.
    pub e_signal: f64,
    /// Fraction of detections originating from vacuum emissions.
    pub omega0: f64,
    /// Fraction of detections originating from single-photon emissions.
    pub omega1: f64,
    /// Fraction of detections originating from multi-photon emissions.
    pub omega_m: f64,
    /// Error rate of the single-photon detections.
    pub e1: f64,
}

impl RateTerms {
    pub fn new(
        q_signal: f64,
        e_signal: f64,
        omega0: f64,
        omega1: f64,
        omega_m: f64,
        e1: f64,
    ) -> Result<Self, RateError> {
        let t = Self {
            q_signal,
            e_signal,
            omega0,
            omega1,
            omega_m,
            e1,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), RateError> {
        for (name, value) in [
            ("q_signal", self.q_signal),
            ("e_signal", self.e_signal),
            ("omega0", self.omega0),
            ("omega1", self.omega1),
            ("omega_m", self.omega_m),
            ("e1", self.e1),
        ] {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(RateError::Domain { name, value });
            }
        }
        let sum = self.omega0 + self.omega1 + self.omega_m;
        if (sum - 1.0).abs() > OMEGA_SUM_TOL {
            return Err(RateError::OmegaSum { sum });
        }
        if self.q_signal <= 0.0 {
            return Err(RateError::ZeroGain {
                value: self.q_signal,
            });
        }
        Ok(())
    }
}

/// Both bounds and the accounting quantities behind them, per emitted pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRateResult {
    pub rate_prior: f64,
    pub rate_new: f64,
    /// `rate_new - rate_prior = q_signal * omega0`.
    pub vacuum_bonus: f64,
    /// Sifted key length N, bits per emitted pulse.
    pub sifted_length_n: f64,
    /// Eavesdropper memory bound S_Eve, bits per emitted pulse.
    pub eve_memory_s: f64,
}

/// Reporting knobs. The bound formulas use the asymptotic values
/// `f_ec = 1` (Shannon-limit error correction) and `sifting = 1`
/// (fully biased basis choice); real systems can override both.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateOptions {
    /// Error-correction inefficiency, >= 1. Multiplies the H2(E) cost.
    pub f_ec: f64,
    /// Sifting factor in (0, 1]. Multiplies every reported quantity.
    pub sifting: f64,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            f_ec: 1.0,
            sifting: 1.0,
        }
    }
}

impl RateOptions {
    fn validate(&self) -> Result<(), RateError> {
        if !self.f_ec.is_finite() || self.f_ec < 1.0 {
            return Err(RateError::NonFinite {
                name: "f_ec",
                value: self.f_ec,
            });
        }
        if !self.sifting.is_finite() || self.sifting <= 0.0 || self.sifting > 1.0 {
            return Err(RateError::NonFinite {
                name: "sifting",
                value: self.sifting,
            });
        }
        Ok(())
    }
}

/// Binary Shannon entropy in bits, `H2(x) = -x log2 x - (1-x) log2 (1-x)`.
///
/// Endpoint values are 0 by continuity; the maximum is 1 at x = 1/2.
pub fn binary_entropy(x: f64) -> Result<f64, RateError> {
    if !x.is_finite() || !(0.0..=1.0).contains(&x) {
        return Err(RateError::Domain {
            name: "binary_entropy argument",
            value: x,
        });
    }
    Ok(h2(x))
}

/// H2 on a pre-validated argument.
pub(crate) fn h2(x: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&x));
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
}

/// Single-photon-credit bound, bits per emitted pulse. May be negative.
pub fn key_rate_prior(t: &RateTerms) -> Result<f64, RateError> {
    key_rate_prior_with(t, &RateOptions::default())
}

pub fn key_rate_prior_with(t: &RateTerms, opts: &RateOptions) -> Result<f64, RateError> {
    t.validate()?;
    opts.validate()?;
    let bracket = -opts.f_ec * h2(t.e_signal) + t.omega1 * (1.0 - h2(t.e1));
    Ok(opts.sifting * t.q_signal * bracket)
}

/// Vacuum-credited bound, bits per emitted pulse. May be negative.
///
/// Exceeds [`key_rate_prior`] by exactly `q_signal * omega0`: detections
/// coincident with vacuum emissions carry no information usable by an
/// eavesdropper, so they need no privacy amplification.
pub fn key_rate_new(t: &RateTerms) -> Result<f64, RateError> {
    key_rate_new_with(t, &RateOptions::default())
}

pub fn key_rate_new_with(t: &RateTerms, opts: &RateOptions) -> Result<f64, RateError> {
    t.validate()?;
    opts.validate()?;
    let bracket = -opts.f_ec * h2(t.e_signal) + t.omega0 + t.omega1 * (1.0 - h2(t.e1));
    Ok(opts.sifting * t.q_signal * bracket)
}

/// Upper bound on the eavesdropper's memory about the sifted key, bits per
/// emitted pulse: error-correction leakage plus the single-photon phase
/// uncertainty plus every multi-photon detection counted as fully known.
pub fn eve_memory(t: &RateTerms) -> Result<f64, RateError> {
    eve_memory_with(t, &RateOptions::default())
}

pub fn eve_memory_with(t: &RateTerms, opts: &RateOptions) -> Result<f64, RateError> {
    t.validate()?;
    opts.validate()?;
    let bits = opts.f_ec * h2(t.e_signal) + t.omega1 * h2(t.e1) + t.omega_m;
    Ok(opts.sifting * t.q_signal * bits)
}

/// Sifted key length N in bits per emitted pulse.
///
/// Since the omega fractions sum to one this equals `q_signal` (times the
/// sifting factor); it is kept as an operation so the accounting identity
/// can be exercised end to end.
pub fn sifted_length(t: &RateTerms) -> Result<f64, RateError> {
    sifted_length_with(t, &RateOptions::default())
}

pub fn sifted_length_with(t: &RateTerms, opts: &RateOptions) -> Result<f64, RateError> {
    t.validate()?;
    opts.validate()?;
    Ok(opts.sifting * t.q_signal)
}

/// Secure-key bits from the memory accounting: `n - s_eve`.
///
/// Composing [`sifted_length`] and [`eve_memory`] through this function
/// reproduces [`key_rate_new`]; that identity is what makes the vacuum
/// credit come out for free.
pub fn rate_from_memory(n: f64, s_eve: f64) -> Result<f64, RateError> {
    if !n.is_finite() || n < 0.0 {
        return Err(RateError::NonFinite {
            name: "sifted length n",
            value: n,
        });
    }
    if !s_eve.is_finite() || s_eve < 0.0 {
        return Err(RateError::NonFinite {
            name: "eve memory s_eve",
            value: s_eve,
        });
    }
    Ok(n - s_eve)
}

/// Evaluate both bounds and the accounting quantities at once.
pub fn evaluate(t: &RateTerms) -> Result<KeyRateResult, RateError> {
    evaluate_with(t, &RateOptions::default())
}

pub fn evaluate_with(t: &RateTerms, opts: &RateOptions) -> Result<KeyRateResult, RateError> {
    let rate_prior = key_rate_prior_with(t, opts)?;
    let rate_new = key_rate_new_with(t, opts)?;
    let sifted_length_n = sifted_length_with(t, opts)?;
    let eve_memory_s = eve_memory_with(t, opts)?;
    Ok(KeyRateResult {
        rate_prior,
        rate_new,
        vacuum_bonus: opts.sifting * t.q_signal * t.omega0,
        sifted_length_n,
        eve_memory_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    const TOL: f64 = 1e-12;

    /// Random valid RateTerms; omegas drawn uniformly on the simplex.
    pub(crate) fn random_terms(rng: &mut SplitMix64) -> RateTerms {
        let a = rng.next_f64();
        let b = rng.next_f64();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let omega0 = lo;
        let omega1 = hi - lo;
        let omega_m = 1.0 - (omega0 + omega1);
        RateTerms {
            q_signal: rng.next_f64().max(1e-9),
            e_signal: rng.next_f64(),
            omega0,
            omega1,
            omega_m,
            e1: rng.next_f64(),
        }
    }

    #[test]
    fn entropy_known_points() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        // closed form evaluated independently: 0.49991595816452800
        assert!((binary_entropy(0.11).unwrap() - 0.49992).abs() < 1e-4);
        assert!((binary_entropy(0.11).unwrap() - 0.499915958164528).abs() < 1e-12);
    }

    #[test]
    fn entropy_rejects_bad_domain() {
        assert!(binary_entropy(-0.1).is_err());
        assert!(binary_entropy(1.1).is_err());
        assert!(binary_entropy(f64::NAN).is_err());
        assert!(binary_entropy(f64::INFINITY).is_err());
    }

    #[test]
    fn prior_perfect_single_photon_channel() {
        let t = RateTerms::new(1.0, 0.0, 0.0, 1.0, 0.0, 0.0).unwrap();
        assert!((key_rate_prior(&t).unwrap() - 1.0).abs() < TOL);
    }

    #[test]
    fn prior_all_vacuum_is_minus_one() {
        let t = RateTerms::new(1.0, 0.5, 1.0, 0.0, 0.0, 0.3).unwrap();
        assert!((key_rate_prior(&t).unwrap() - (-1.0)).abs() < TOL);
    }

    #[test]
    fn new_all_vacuum_is_exactly_zero() {
        // the omega0 credit cancels the error-correction cost of E = 1/2
        for q in [0.01, 0.1, 0.3, 1.0] {
            let t = RateTerms::new(q, 0.5, 1.0, 0.0, 0.0, 0.0).unwrap();
            assert!(key_rate_new(&t).unwrap().abs() < TOL);
        }
    }

    #[test]
    fn new_equals_prior_when_no_vacuum() {
        let t = RateTerms::new(0.3, 0.04, 0.0, 0.7, 0.3, 0.02).unwrap();
        assert_eq!(key_rate_new(&t).unwrap(), key_rate_prior(&t).unwrap());
    }

    #[test]
    fn vacuum_bonus_identity_randomized() {
        let mut rng = SplitMix64::new(0xB0B0);
        for _ in 0..10_000 {
            let t = random_terms(&mut rng);
            let bonus = key_rate_new(&t).unwrap() - key_rate_prior(&t).unwrap();
            assert!(
                (bonus - t.q_signal * t.omega0).abs() < TOL,
                "bonus {bonus} != q*omega0 for {t:?}"
            );
        }
    }

    #[test]
    fn memory_accounting_identity_randomized() {
        let mut rng = SplitMix64::new(0xACC7);
        for _ in 0..10_000 {
            let t = random_terms(&mut rng);
            let direct = key_rate_new(&t).unwrap();
            let accounted =
                rate_from_memory(sifted_length(&t).unwrap(), eve_memory(&t).unwrap()).unwrap();
            assert!(
                (direct - accounted).abs() < TOL,
                "identity violated for {t:?}: {direct} vs {accounted}"
            );
        }
    }

    #[test]
    fn eve_memory_known_cases() {
        let noiseless = RateTerms::new(1.0, 0.0, 0.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(eve_memory(&noiseless).unwrap(), 0.0);
        // all-vacuum: only the error-correction term H2(1/2) remains
        let vacuum = RateTerms::new(1.0, 0.5, 1.0, 0.0, 0.0, 0.0).unwrap();
        assert!((eve_memory(&vacuum).unwrap() - 1.0).abs() < TOL);
    }

    #[test]
    fn sifted_length_is_gain() {
        let t = RateTerms::new(0.5, 0.1, 0.2, 0.5, 0.3, 0.05).unwrap();
        assert_eq!(sifted_length(&t).unwrap(), 0.5);
    }

    #[test]
    fn zero_gain_rejected() {
        assert_eq!(
            RateTerms::new(0.0, 0.1, 0.2, 0.5, 0.3, 0.05),
            Err(RateError::ZeroGain { value: 0.0 })
        );
    }

    #[test]
    fn omega_sum_violation_rejected() {
        let err = RateTerms::new(0.5, 0.1, 0.4, 0.4, 0.4, 0.05).unwrap_err();
        assert!(matches!(err, RateError::OmegaSum { .. }));
    }

    #[test]
    fn rate_from_memory_rejects_nonfinite() {
        assert!(rate_from_memory(f64::NAN, 0.0).is_err());
        assert!(rate_from_memory(0.0, f64::INFINITY).is_err());
        assert!(rate_from_memory(-0.1, 0.0).is_err());
        assert_eq!(rate_from_memory(1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_bundles_consistently() {
        let mut rng = SplitMix64::new(0xE7A1);
        for _ in 0..1000 {
            let t = random_terms(&mut rng);
            let r = evaluate(&t).unwrap();
            assert!((r.vacuum_bonus - t.q_signal * t.omega0).abs() < TOL);
            assert!((r.rate_new - (r.sifted_length_n - r.eve_memory_s)).abs() < TOL);
            assert!(r.rate_new >= r.rate_prior);
        }
    }

    #[test]
    fn evaluate_all_vacuum() {
        let q = 0.37;
        let t = RateTerms::new(q, 0.5, 1.0, 0.0, 0.0, 0.0).unwrap();
        let r = evaluate(&t).unwrap();
        assert!(r.rate_new.abs() < TOL);
        assert!((r.rate_prior + q).abs() < TOL);
        assert!((r.vacuum_bonus - q).abs() < TOL);
    }

    #[test]
    fn options_validated() {
        let t = RateTerms::new(0.5, 0.1, 0.2, 0.5, 0.3, 0.05).unwrap();
        let bad_fec = RateOptions {
            f_ec: 0.5,
            sifting: 1.0,
        };
        assert!(key_rate_new_with(&t, &bad_fec).is_err());
        let bad_sift = RateOptions {
            f_ec: 1.0,
            sifting: 0.0,
        };
        assert!(key_rate_new_with(&t, &bad_sift).is_err());
    }

    #[test]
    fn accounting_identity_holds_with_options() {
        let mut rng = SplitMix64::new(0x0075);
        let opts = RateOptions {
            f_ec: 1.16,
            sifting: 0.5,
        };
        for _ in 0..1000 {
            let t = random_terms(&mut rng);
            let direct = key_rate_new_with(&t, &opts).unwrap();
            let n = sifted_length_with(&t, &opts).unwrap();
            let s = eve_memory_with(&t, &opts).unwrap();
            assert!((direct - (n - s)).abs() < TOL);
        }
    }

    /// Whole-bit accounting over 4-pulse toy scenarios: count N and S_Eve
    /// directly in bits and compare with the per-pulse formulas.
    #[test]
    fn toy_scenarios_match_direct_bit_counting() {
        let pulses = 4u32;
        for detected in 1..=pulses {
            for d0 in 0..=detected {
                for d1 in 0..=(detected - d0) {
                    let dm = detected - d0 - d1;
                    for e_half in [false, true] {
                        for e1_half in [false, true] {
                            let t = RateTerms {
                                q_signal: detected as f64 / pulses as f64,
                                e_signal: if e_half { 0.5 } else { 0.0 },
                                omega0: d0 as f64 / detected as f64,
                                omega1: d1 as f64 / detected as f64,
                                omega_m: 1.0
                                    - (d0 as f64 / detected as f64
                                        + d1 as f64 / detected as f64),
                                e1: if e1_half { 0.5 } else { 0.0 },
                            };
                            t.validate().unwrap();
                            // direct counting: H2 is 1 bit at rate 1/2, else 0
                            let n_bits = detected as f64;
                            let s_bits = detected as f64 * (e_half as u32 as f64)
                                + d1 as f64 * (e1_half as u32 as f64)
                                + dm as f64;
                            let counted =
                                rate_from_memory(n_bits, s_bits).unwrap() / pulses as f64;
                            let formula = key_rate_new(&t).unwrap();
                            assert!(
                                (counted - formula).abs() < 1e-9,
                                "toy case d={detected} d0={d0} d1={d1} dm={dm}: \
                                 counted {counted} vs formula {formula}"
                            );
                        }
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn entropy_symmetric(x in 0.0..=1.0f64) {
            let a = binary_entropy(x).unwrap();
            let b = binary_entropy(1.0 - x).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn entropy_bounded_and_concave(x in 0.001..=0.999f64, y in 0.001..=0.999f64) {
            let hx = binary_entropy(x).unwrap();
            prop_assert!((0.0..=1.0).contains(&hx));
            // midpoint concavity
            let mid = binary_entropy((x + y) / 2.0).unwrap();
            let avg = (hx + binary_entropy(y).unwrap()) / 2.0;
            prop_assert!(mid >= avg - 1e-12);
        }

        #[test]
        fn rate_new_non_increasing_in_qber(
            e_lo in 0.0..=0.5f64,
            delta in 0.0..=0.25f64,
        ) {
            let e_hi = (e_lo + delta).min(0.5);
            let mk = |e: f64| RateTerms {
                q_signal: 0.3,
                e_signal: e,
                omega0: 0.1,
                omega1: 0.6,
                omega_m: 1.0 - (0.1 + 0.6),
                e1: 0.02,
            };
            let lo = key_rate_new(&mk(e_lo)).unwrap();
            let hi = key_rate_new(&mk(e_hi)).unwrap();
            prop_assert!(hi <= lo + 1e-12);
        }
    }
}
