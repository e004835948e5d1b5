//! Decoy-state estimation: pessimistic bounds on the vacuum yield, the
//! single-photon yield and the single-photon error rate from observable
//! per-intensity gains and QBERs alone.
//!
//! The required path is the analytic vacuum + weak-decoy estimator
//! ([`estimate_y1_e1`]). With a weak decoy `nu < mu`, expanding the two
//! gains in photon number and bounding the `n >= 2` tail of the weak
//! series by `(nu/mu)^2` times the signal tail gives
//!
//! ```text
//! Y1 >= mu / (mu nu - nu^2) *
//!       (Q_nu e^nu - (nu^2/mu^2) Q_mu e^mu - ((mu^2 - nu^2)/mu^2) y0_high)
//! e1 <= (E_nu Q_nu e^nu - y0_low / 2) / (nu * Y1_low)
//! ```
//!
//! with every derived probability clamped to [0, 1] and a flag recorded
//! whenever a clamp fires. A vacuum decoy measures `Y0` directly; without
//! one, `y0_low` falls back to 0 and `y0_high` to the trivial bound
//! `Q_nu e^nu`, both flagged.
//!
//! [`estimate_lp`] is an independent cross-check: a small linear program
//! over truncated photon-number yields and error masses, solved by the
//! bounded simplex in [`simplex`]. It uses strictly more constraints than
//! the analytic bound, so its `y1_low` is never looser.
//!
//! Finite statistics are handled by widening each observed gain and error
//! mass by a configurable number of binomial standard deviations before
//! any bound is evaluated; [`Widening::None`] turns this off so analytic
//! (infinite-sample) inputs can be tested for structural error only.

pub mod simplex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{poisson_pn, poisson_tail};
use crate::rates::{self, h2};
use simplex::{Lp, LpOutcome, LpRow};

#[derive(Debug, Error, PartialEq)]
pub enum DecoyError {
    #[error("no observation at the {role} intensity (mu = {mu})")]
    MissingIntensity { role: &'static str, mu: f64 },
    #[error("weak decoy intensity {weak} must satisfy 0 < weak < signal = {signal}")]
    IntensityOrdering { weak: f64, signal: f64 },
    #[error("observation at mu = {mu} has zero samples")]
    ZeroSamples { mu: f64 },
    #[error("observation invalid: {0}")]
    InvalidObservation(String),
    #[error("estimate_y0 requires a vacuum-intensity observation, got mu = {mu}")]
    NotVacuum { mu: f64 },
    #[error("observations are inconsistent, no feasible yields: {violated}")]
    Infeasible { violated: String },
    #[error("linear program failed: {0}")]
    LpFailure(String),
    #[error("bounds invalid: {0}")]
    InvalidBounds(String),
    #[error(transparent)]
    Rate(#[from] rates::RateError),
    #[error(transparent)]
    Channel(#[from] crate::channel::ChannelError),
}

/// One per-intensity observable record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Mean photon number of this intensity setting.
    pub mu: f64,
    /// Measured gain (detections per emitted pulse).
    pub gain: f64,
    /// Measured QBER on the sifted sample.
    pub qber: f64,
    /// Pulse count behind the estimate.
    pub samples: u64,
}

impl Observation {
    pub fn validate(&self) -> Result<(), DecoyError> {
        if !self.mu.is_finite() || self.mu < 0.0 {
            return Err(DecoyError::InvalidObservation(format!(
                "mu = {} must be >= 0",
                self.mu
            )));
        }
        for (name, v) in [("gain", self.gain), ("qber", self.qber)] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(DecoyError::InvalidObservation(format!(
                    "{name} = {v} must be in [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Infinite-sample observation taken straight from the channel model.
    ///
    /// An intensity that never produces detections has no defined QBER;
    /// 0.5 is recorded, and the zero gain keeps its error mass at zero.
    pub fn from_model(
        mu: f64,
        c: &crate::channel::ChannelParams,
    ) -> Result<Self, DecoyError> {
        let gain = crate::channel::overall_gain(mu, c)?;
        let qber = if gain == 0.0 {
            0.5
        } else {
            crate::channel::overall_qber(mu, c)?
        };
        Ok(Self {
            mu,
            gain,
            qber,
            samples: u64::MAX,
        })
    }

    fn interval(&self, center: f64, widening: Widening) -> Result<(f64, f64), DecoyError> {
        match widening {
            Widening::None => Ok((center, center)),
            Widening::Sigma(k) => {
                if self.samples == 0 {
                    return Err(DecoyError::ZeroSamples { mu: self.mu });
                }
                let sigma = (center * (1.0 - center) / self.samples as f64).sqrt();
                Ok(((center - k * sigma).max(0.0), (center + k * sigma).min(1.0)))
            }
        }
    }

    /// Confidence interval for the gain.
    pub fn gain_interval(&self, widening: Widening) -> Result<(f64, f64), DecoyError> {
        self.interval(self.gain, widening)
    }

    /// Confidence interval for the error mass `E * Q`.
    pub fn error_mass_interval(&self, widening: Widening) -> Result<(f64, f64), DecoyError> {
        self.interval(self.gain * self.qber, widening)
    }
}

/// Statistical widening applied to observations before bound evaluation.
///
/// `None` is the infinite-sample mode used for structural tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Widening {
    None,
    Sigma(f64),
}

impl Default for Widening {
    fn default() -> Self {
        Widening::Sigma(5.0)
    }
}

/// Clamp/fallback events recorded while deriving bounds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundFlags {
    /// No vacuum observation; y0 bounds fell back to documented pessimism.
    pub missing_vacuum: bool,
    /// The raw y1 lower bound was negative and was clamped to 0.
    pub y1_clamped: bool,
    /// The raw e1 upper bound left [0, 1] and was clamped.
    pub e1_clamped: bool,
    /// y1_low was not positive, so e1_high = 1 (maximally pessimistic).
    pub e1_maximal: bool,
}

/// Pessimistic intervals on the photon-number-resolved quantities, plus
/// the derived detection-fraction lower bounds at the signal intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyBounds {
    pub y0_low: f64,
    pub y0_high: f64,
    pub y1_low: f64,
    pub e1_high: f64,
    pub omega0_low: f64,
    pub omega1_low: f64,
    pub flags: BoundFlags,
}

impl DecoyBounds {
    pub fn validate(&self) -> Result<(), DecoyError> {
        let checks = [
            ("y0_low", self.y0_low),
            ("y0_high", self.y0_high),
            ("y1_low", self.y1_low),
            ("e1_high", self.e1_high),
            ("omega0_low", self.omega0_low),
            ("omega1_low", self.omega1_low),
        ];
        for (name, v) in checks {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(DecoyError::InvalidBounds(format!(
                    "{name} = {v} outside [0, 1]"
                )));
            }
        }
        if self.y0_low > self.y0_high {
            return Err(DecoyError::InvalidBounds(format!(
                "y0_low {} > y0_high {}",
                self.y0_low, self.y0_high
            )));
        }
        Ok(())
    }
}

/// Interval estimate of the background yield from a vacuum observation.
pub fn estimate_y0(obs: &Observation, widening: Widening) -> Result<(f64, f64), DecoyError> {
    obs.validate()?;
    if obs.mu != 0.0 {
        return Err(DecoyError::NotVacuum { mu: obs.mu });
    }
    obs.gain_interval(widening)
}

fn find_obs(obs: &[Observation], mu: f64) -> Option<&Observation> {
    obs.iter().find(|o| o.mu == mu)
}

/// Vacuum + weak-decoy bounds on Y0, Y1 and e1.
pub fn estimate_y1_e1(
    obs: &[Observation],
    signal_mu: f64,
    weak_mu: f64,
    widening: Widening,
) -> Result<DecoyBounds, DecoyError> {
    for o in obs {
        o.validate()?;
    }
    if !(weak_mu > 0.0 && weak_mu < signal_mu) {
        return Err(DecoyError::IntensityOrdering {
            weak: weak_mu,
            signal: signal_mu,
        });
    }
    let signal = find_obs(obs, signal_mu).ok_or(DecoyError::MissingIntensity {
        role: "signal",
        mu: signal_mu,
    })?;
    let weak = find_obs(obs, weak_mu).ok_or(DecoyError::MissingIntensity {
        role: "weak decoy",
        mu: weak_mu,
    })?;

    let mut flags = BoundFlags::default();
    let (q_weak_lo, q_weak_hi) = weak.gain_interval(widening)?;
    let (_, q_sig_hi) = signal.gain_interval(widening)?;
    let (_, m_weak_hi) = weak.error_mass_interval(widening)?;

    let (y0_low, y0_high) = match find_obs(obs, 0.0) {
        Some(vac) => estimate_y0(vac, widening)?,
        None => {
            // documented pessimism: Y0 is at least 0 and at most the
            // whole weak-decoy photon-number series
            flags.missing_vacuum = true;
            (0.0, (q_weak_hi * weak_mu.exp()).min(1.0))
        }
    };

    let (mu, nu) = (signal_mu, weak_mu);
    let raw_y1 = mu / (mu * nu - nu * nu)
        * (q_weak_lo * nu.exp()
            - (nu * nu) / (mu * mu) * q_sig_hi * mu.exp()
            - (mu * mu - nu * nu) / (mu * mu) * y0_high);
    let y1_low = if raw_y1 < 0.0 {
        flags.y1_clamped = true;
        0.0
    } else {
        raw_y1.min(1.0)
    };

    let e1_high = if y1_low <= 0.0 {
        flags.e1_maximal = true;
        1.0
    } else {
        let raw_e1 = (m_weak_hi * nu.exp() - 0.5 * y0_low) / (nu * y1_low);
        if !(0.0..=1.0).contains(&raw_e1) {
            flags.e1_clamped = true;
        }
        raw_e1.clamp(0.0, 1.0)
    };

    let bounds = DecoyBounds {
        y0_low,
        y0_high,
        y1_low,
        e1_high,
        omega0_low: omega_low(0, mu, y0_low, q_sig_hi)?,
        omega1_low: omega_low(1, mu, y1_low, q_sig_hi)?,
        flags,
    };
    bounds.validate()?;
    Ok(bounds)
}

/// Lower bound on the fraction of signal detections from the n-photon
/// class: smallest yield over largest gain.
fn omega_low(n: u64, mu: f64, yield_low: f64, gain_high: f64) -> Result<f64, DecoyError> {
    if gain_high <= 0.0 {
        return Ok(0.0);
    }
    Ok((poisson_pn(mu, n)? * yield_low / gain_high).clamp(0.0, 1.0))
}

/// Raw optima of the yield linear program: the four objectives behind
/// [`estimate_lp`], before any derived quantities are formed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawLpBounds {
    pub y0_min: f64,
    pub y0_max: f64,
    pub y1_min: f64,
    pub b1_max: f64,
}

/// Solve the truncated photon-number linear program.
///
/// Variables are `Y_0..Y_n_max` and error masses `b_n = e_n Y_n`; each
/// observation contributes a two-sided sandwich on `sum p_n(mu_i) Y_n`
/// and on `sum p_n(mu_i) b_n`, with the truncated Poisson tail absorbed
/// on the lower side.
pub fn lp_yield_bounds(
    obs: &[Observation],
    n_max: usize,
    widening: Widening,
) -> Result<RawLpBounds, DecoyError> {
    for o in obs {
        o.validate()?;
    }
    if obs.len() < 2 {
        return Err(DecoyError::InvalidObservation(
            "linear program needs at least 2 distinct intensities".into(),
        ));
    }
    for (i, a) in obs.iter().enumerate() {
        if obs[..i].iter().any(|b| b.mu == a.mu) {
            return Err(DecoyError::InvalidObservation(format!(
                "duplicate intensity mu = {}",
                a.mu
            )));
        }
    }

    let k = n_max + 1;
    let mut rows = Vec::new();
    for o in obs {
        let p: Vec<f64> = (0..k as u64)
            .map(|n| poisson_pn(o.mu, n))
            .collect::<Result<_, _>>()?;
        let tail = poisson_tail(o.mu, n_max);
        let (q_lo, q_hi) = o.gain_interval(widening)?;
        let (m_lo, m_hi) = o.error_mass_interval(widening)?;

        // gain sandwich: q_lo - tail <= sum p_n Y_n <= q_hi
        let mut up = vec![0.0; 2 * k];
        up[..k].copy_from_slice(&p);
        rows.push(LpRow {
            coeffs: up.clone(),
            rhs: q_hi,
            label: format!("gain upper bound at mu = {}", o.mu),
        });
        let mut down: Vec<f64> = up.iter().map(|v| -v).collect();
        rows.push(LpRow {
            coeffs: down.clone(),
            rhs: -(q_lo - tail),
            label: format!("gain lower bound at mu = {}", o.mu),
        });

        // error-mass sandwich over the b_n
        up.rotate_right(k);
        down.rotate_right(k);
        rows.push(LpRow {
            coeffs: up,
            rhs: m_hi,
            label: format!("error-mass upper bound at mu = {}", o.mu),
        });
        rows.push(LpRow {
            coeffs: down,
            rhs: -(m_lo - tail),
            label: format!("error-mass lower bound at mu = {}", o.mu),
        });
    }
    // box and coupling constraints: Y_n <= 1, b_n <= Y_n
    for n in 0..k {
        let mut r = vec![0.0; 2 * k];
        r[n] = 1.0;
        rows.push(LpRow {
            coeffs: r,
            rhs: 1.0,
            label: format!("Y_{n} <= 1"),
        });
        let mut r = vec![0.0; 2 * k];
        r[n] = -1.0;
        r[k + n] = 1.0;
        rows.push(LpRow {
            coeffs: r,
            rhs: 0.0,
            label: format!("b_{n} <= Y_{n}"),
        });
    }
    let lp = Lp {
        num_vars: 2 * k,
        rows,
    };

    let solve = |objective: &[f64]| -> Result<f64, DecoyError> {
        match lp.solve_min(objective) {
            LpOutcome::Optimal { value, .. } => Ok(value),
            LpOutcome::Infeasible { violated } => Err(DecoyError::Infeasible {
                violated: violated.join("; "),
            }),
            LpOutcome::Unbounded => Err(DecoyError::LpFailure("unbounded objective".into())),
        }
    };
    let mut objective = vec![0.0; 2 * k];

    objective[0] = 1.0;
    let y0_min = solve(&objective)?.clamp(0.0, 1.0);
    objective[0] = -1.0;
    let y0_max = (-solve(&objective)?).clamp(y0_min, 1.0);
    objective[0] = 0.0;

    objective[1] = 1.0;
    let y1_min = solve(&objective)?.clamp(0.0, 1.0);
    objective[1] = 0.0;

    objective[k + 1] = -1.0;
    let b1_max = (-solve(&objective)?).clamp(0.0, 1.0);

    Ok(RawLpBounds {
        y0_min,
        y0_max,
        y1_min,
        b1_max,
    })
}

/// Linear-program cross-check over truncated photon-number yields.
///
/// Same contract as [`estimate_y1_e1`] but never looser: the program sees
/// every observation's sandwich at once. The error bound is formed as
/// `max b1 / min Y1`, which upper-bounds `e1 = b1 / Y1` over the feasible
/// set.
pub fn estimate_lp(
    obs: &[Observation],
    signal_mu: f64,
    n_max: usize,
    widening: Widening,
) -> Result<DecoyBounds, DecoyError> {
    let signal = find_obs(obs, signal_mu).ok_or(DecoyError::MissingIntensity {
        role: "signal",
        mu: signal_mu,
    })?;
    let (_, q_sig_hi) = signal.gain_interval(widening)?;
    let raw = lp_yield_bounds(obs, n_max, widening)?;

    let mut flags = BoundFlags {
        missing_vacuum: find_obs(obs, 0.0).is_none(),
        ..BoundFlags::default()
    };
    let e1_high = if raw.y1_min <= 0.0 {
        flags.e1_maximal = true;
        1.0
    } else {
        let ratio = raw.b1_max / raw.y1_min;
        if ratio > 1.0 {
            flags.e1_clamped = true;
        }
        ratio.clamp(0.0, 1.0)
    };

    let bounds = DecoyBounds {
        y0_low: raw.y0_min,
        y0_high: raw.y0_max,
        y1_low: raw.y1_min,
        e1_high,
        omega0_low: omega_low(0, signal_mu, raw.y0_min, q_sig_hi)?,
        omega1_low: omega_low(1, signal_mu, raw.y1_min, q_sig_hi)?,
        flags,
    };
    bounds.validate()?;
    Ok(bounds)
}

/// Certified key-rate lower bound: the vacuum-credited formula evaluated
/// at the pessimistic ends of the decoy bounds.
///
/// The single-photon error enters through the worst value it can take in
/// `[0, e1_high]`, which is `min(e1_high, 1/2)` since the entropy peaks
/// at one half.
pub fn pessimistic_rate(
    bounds: &DecoyBounds,
    q_signal: f64,
    e_signal: f64,
) -> Result<f64, DecoyError> {
    bounds.validate()?;
    if !q_signal.is_finite() || q_signal <= 0.0 || q_signal > 1.0 {
        return Err(DecoyError::InvalidBounds(format!(
            "q_signal = {q_signal} must be in (0, 1]"
        )));
    }
    if !e_signal.is_finite() || !(0.0..=1.0).contains(&e_signal) {
        return Err(DecoyError::InvalidBounds(format!(
            "e_signal = {e_signal} must be in [0, 1]"
        )));
    }
    let worst_e1 = bounds.e1_high.min(0.5);
    Ok(q_signal
        * (-h2(e_signal) + bounds.omega0_low + bounds.omega1_low * (1.0 - h2(worst_e1))))
}
