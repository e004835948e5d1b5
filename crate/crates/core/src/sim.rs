//! Pulse-level Monte Carlo simulation of decoy-state BB84.
//!
//! The simulator samples at the photon-number level: for every pulse it
//! draws the emitted photon count, then detection with the analytic yield
//! `Y_n`, then a bit error with the analytic conditional rate `e_n`. It
//! therefore realises exactly the conventions of [`crate::channel`], which
//! keeps the statistical comparisons between simulation and closed forms
//! sharp. Detector clicks are not modelled below this level.
//!
//! Every detection is tagged with the true emitted photon-number class
//! (vacuum / single / multi), which an omniscient analysis can use
//! directly and which is erased by [`observable_view`] to produce the
//! statistics a real experiment would see.
//!
//! Runs are deterministic: the tally is a pure function of the
//! configuration, the channel, the seed and the shard count. Shards run
//! concurrently, each on its own derived random stream, and merge by
//! field-wise addition.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{self, ChannelParams};
use crate::rates::RateTerms;
use crate::rng::SplitMix64;

const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("simulation config invalid: {0}")]
    InvalidConfig(String),
    #[error("tally schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("intensity index {index} out of range ({len} intensities)")]
    BadIntensityIndex { index: usize, len: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error(transparent)]
    Channel(#[from] channel::ChannelError),
    #[error(transparent)]
    Rate(#[from] crate::rates::RateError),
}

/// Monte Carlo run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Total pulses emitted by Alice.
    pub pulses: u64,
    /// Mean photon numbers in use; the vacuum decoy (0.0) is allowed.
    pub intensities: Vec<f64>,
    /// Selection probability per intensity; sums to 1.
    pub intensity_probs: Vec<f64>,
    /// Probability that each party picks the Z basis, in [1/2, 1).
    pub p_z: f64,
    /// Seed of the deterministic generator.
    pub seed: u64,
    /// Number of parallel shards.
    pub shards: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.pulses == 0 {
            return Err(SimError::InvalidConfig("pulses must be positive".into()));
        }
        if self.shards == 0 {
            return Err(SimError::InvalidConfig("shards must be >= 1".into()));
        }
        if self.pulses < self.shards {
            return Err(SimError::InvalidConfig(format!(
                "pulses ({}) must be >= shards ({})",
                self.pulses, self.shards
            )));
        }
        if self.intensities.is_empty() {
            return Err(SimError::InvalidConfig("intensities must be non-empty".into()));
        }
        if self.intensities.len() != self.intensity_probs.len() {
            return Err(SimError::InvalidConfig(format!(
                "{} intensities but {} selection probabilities",
                self.intensities.len(),
                self.intensity_probs.len()
            )));
        }
        for (i, &mu) in self.intensities.iter().enumerate() {
            if !mu.is_finite() || mu < 0.0 {
                return Err(SimError::InvalidConfig(format!(
                    "intensity[{i}] = {mu} must be >= 0"
                )));
            }
            if self.intensities[..i].contains(&mu) {
                return Err(SimError::InvalidConfig(format!(
                    "intensity {mu} listed more than once"
                )));
            }
        }
        let mut sum = 0.0;
        for (i, &p) in self.intensity_probs.iter().enumerate() {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(SimError::InvalidConfig(format!(
                    "intensity_probs[{i}] = {p} must be in [0, 1]"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(SimError::InvalidConfig(format!(
                "intensity probabilities sum to {sum}, expected 1"
            )));
        }
        if !self.p_z.is_finite() || !(0.5..1.0).contains(&self.p_z) {
            return Err(SimError::InvalidConfig(format!(
                "p_z = {} must be in [0.5, 1)",
                self.p_z
            )));
        }
        Ok(())
    }

    /// Fraction of detections surviving basis sifting.
    pub fn sifting_factor(&self) -> f64 {
        self.p_z * self.p_z + (1.0 - self.p_z) * (1.0 - self.p_z)
    }
}

/// Counters partitioned by the true emitted photon-number class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub vacuum: u64,
    pub single: u64,
    pub multi: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.vacuum + self.single + self.multi
    }

    fn add(&mut self, class: usize) {
        match class {
            0 => self.vacuum += 1,
            1 => self.single += 1,
            _ => self.multi += 1,
        }
    }

    fn merged(&self, other: &Self) -> Self {
        Self {
            vacuum: self.vacuum + other.vacuum,
            single: self.single + other.single,
            multi: self.multi + other.multi,
        }
    }
}

/// Counters for one intensity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntensityTally {
    pub emitted: u64,
    pub detected: ClassCounts,
    pub sifted: ClassCounts,
    pub errors: ClassCounts,
}

impl IntensityTally {
    fn merged(&self, other: &Self) -> Self {
        Self {
            emitted: self.emitted + other.emitted,
            detected: self.detected.merged(&other.detected),
            sifted: self.sifted.merged(&other.sifted),
            errors: self.errors.merged(&other.errors),
        }
    }
}

/// Ground-truth-tagged counters of a simulation run.
///
/// Tallies over the same intensity schedule merge by field-wise addition,
/// so shards (or machines) can count independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TallyResult {
    pub intensities: Vec<f64>,
    pub p_z: f64,
    pub per_intensity: Vec<IntensityTally>,
}

impl TallyResult {
    /// Tally with all counters zero; the identity element of merge.
    pub fn empty(intensities: Vec<f64>, p_z: f64) -> Self {
        let per_intensity = vec![IntensityTally::default(); intensities.len()];
        Self {
            intensities,
            p_z,
            per_intensity,
        }
    }

    pub fn merge(&self, other: &Self) -> Result<Self, SimError> {
        if self.intensities != other.intensities {
            return Err(SimError::SchemaMismatch(format!(
                "intensity lists differ: {:?} vs {:?}",
                self.intensities, other.intensities
            )));
        }
        if self.p_z != other.p_z {
            return Err(SimError::SchemaMismatch(format!(
                "p_z differs: {} vs {}",
                self.p_z, other.p_z
            )));
        }
        let per_intensity = self
            .per_intensity
            .iter()
            .zip(&other.per_intensity)
            .map(|(a, b)| a.merged(b))
            .collect();
        Ok(Self {
            intensities: self.intensities.clone(),
            p_z: self.p_z,
            per_intensity,
        })
    }

    /// Fraction of detections surviving basis sifting.
    pub fn sifting_factor(&self) -> f64 {
        self.p_z * self.p_z + (1.0 - self.p_z) * (1.0 - self.p_z)
    }
}

/// What Alice and Bob can actually measure: per-intensity totals with the
/// photon-number tags erased.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableView {
    pub p_z: f64,
    pub rows: Vec<ObservableRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservableRow {
    pub mu: f64,
    pub emitted: u64,
    pub detected: u64,
    pub sifted: u64,
    pub errors: u64,
}

/// Run the Monte Carlo simulation.
pub fn simulate(cfg: &SimConfig, c: &ChannelParams) -> Result<TallyResult, SimError> {
    cfg.validate()?;
    c.validate()?;
    let eta = channel::transmittance(c)?;

    let mut cumulative = Vec::with_capacity(cfg.intensity_probs.len());
    let mut acc = 0.0;
    for &p in &cfg.intensity_probs {
        acc += p;
        cumulative.push(acc);
    }
    if let Some(last) = cumulative.last_mut() {
        *last = 1.0;
    }

    let base = cfg.pulses / cfg.shards;
    let remainder = cfg.pulses % cfg.shards;
    let shard_pulses: Vec<u64> = (0..cfg.shards)
        .map(|i| base + u64::from(i < remainder))
        .collect();

    let shard_tallies: Vec<TallyResult> = if cfg.shards == 1 {
        vec![run_shard(cfg, c, eta, &cumulative, 0, cfg.pulses)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = shard_pulses
                .iter()
                .enumerate()
                .map(|(i, &n)| {
                    let cumulative = &cumulative;
                    scope.spawn(move || run_shard(cfg, c, eta, cumulative, i as u64, n))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        })
    };

    let mut total = TallyResult::empty(cfg.intensities.clone(), cfg.p_z);
    for t in &shard_tallies {
        total = total.merge(t)?;
    }
    Ok(total)
}

fn run_shard(
    cfg: &SimConfig,
    c: &ChannelParams,
    eta: f64,
    cumulative: &[f64],
    shard: u64,
    pulses: u64,
) -> TallyResult {
    let mut rng = SplitMix64::for_shard(cfg.seed, shard);
    let mut tally = TallyResult::empty(cfg.intensities.clone(), cfg.p_z);

    for _ in 0..pulses {
        let idx = if cumulative.len() == 1 {
            0
        } else {
            rng.categorical(cumulative)
        };
        let mu = cfg.intensities[idx];
        let _bit = rng.bernoulli(0.5);
        let alice_z = rng.bernoulli(cfg.p_z);
        let n = rng.poisson(mu);
        let class = (n.min(2)) as usize;

        let row = &mut tally.per_intensity[idx];
        row.emitted += 1;

        let eta_n = 1.0 - (1.0 - eta).powi(n as i32);
        let y_n = c.y0 + eta_n - c.y0 * eta_n;
        if !rng.bernoulli(y_n) {
            // Bob still picks a basis; nothing to record
            let _ = rng.bernoulli(cfg.p_z);
            continue;
        }
        row.detected.add(class);

        let e_n = if n == 0 {
            0.5
        } else {
            ((0.5 * c.y0 + c.e_d * eta_n) / y_n).clamp(0.0, 1.0)
        };
        let error = rng.bernoulli(e_n);
        let bob_z = rng.bernoulli(cfg.p_z);
        if alice_z == bob_z {
            row.sifted.add(class);
            if error {
                row.errors.add(class);
            }
        }
    }
    tally
}

/// Omniscient rate-bound inputs for one intensity, computed from the
/// ground-truth class tags.
///
/// The gain is reported per emitted pulse with the sifting factor divided
/// out, so it estimates the same `Q_mu` the analytic model produces; the
/// fractions and error rates are computed on the sifted sample.
pub fn empirical_rate_terms(t: &TallyResult, signal: usize) -> Result<RateTerms, SimError> {
    let len = t.per_intensity.len();
    let row = t
        .per_intensity
        .get(signal)
        .ok_or(SimError::BadIntensityIndex { index: signal, len })?;
    let sifted = row.sifted.total();
    if sifted == 0 {
        return Err(SimError::InsufficientData(format!(
            "no sifted detections at intensity index {signal}"
        )));
    }
    let s = t.sifting_factor();
    let q = (sifted as f64 / (row.emitted as f64 * s)).min(1.0);
    let e = row.errors.total() as f64 / sifted as f64;
    let omega0 = row.sifted.vacuum as f64 / sifted as f64;
    let omega1 = row.sifted.single as f64 / sifted as f64;
    let omega_m = 1.0 - (omega0 + omega1);
    let e1 = if row.sifted.single == 0 {
        0.0
    } else {
        row.errors.single as f64 / row.sifted.single as f64
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

/// Erase the ground-truth tags, keeping per-intensity totals.
pub fn observable_view(t: &TallyResult) -> ObservableView {
    let rows = t
        .intensities
        .iter()
        .zip(&t.per_intensity)
        .map(|(&mu, row)| ObservableRow {
            mu,
            emitted: row.emitted,
            detected: row.detected.total(),
            sifted: row.sifted.total(),
            errors: row.errors.total(),
        })
        .collect();
    ObservableView { p_z: t.p_z, rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{overall_gain, rate_terms_from_model, SourceParams};

    fn reference_channel() -> ChannelParams {
        ChannelParams {
            alpha_db_per_km: 0.0,
            distance_km: 0.0,
            eta_det: 0.1,
            y0: 1.0e-5,
            e_d: 0.01,
        }
    }

    fn single_intensity_cfg(mu: f64, pulses: u64, seed: u64) -> SimConfig {
        SimConfig {
            pulses,
            intensities: vec![mu],
            intensity_probs: vec![1.0],
            p_z: 0.95,
            seed,
            shards: 1,
        }
    }

    /// 4-sigma binomial band around probability `p` at `n` trials.
    fn band(p: f64, n: u64) -> f64 {
        4.0 * (p * (1.0 - p) / n as f64).sqrt()
    }

    #[test]
    fn deterministic_given_seed_and_shards() {
        let cfg = SimConfig {
            shards: 4,
            ..single_intensity_cfg(0.5, 40_000, 0xD5)
        };
        let c = reference_channel();
        let a = simulate(&cfg, &c).unwrap();
        let b = simulate(&cfg, &c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn counters_are_consistent() {
        let cfg = SimConfig {
            intensities: vec![0.5, 0.1, 0.0],
            intensity_probs: vec![0.7, 0.2, 0.1],
            ..single_intensity_cfg(0.5, 60_000, 11)
        };
        let t = simulate(&cfg, &reference_channel()).unwrap();
        let mut emitted_total = 0;
        for row in &t.per_intensity {
            assert!(row.detected.total() <= row.emitted);
            assert!(row.sifted.total() <= row.detected.total());
            assert!(row.sifted.vacuum <= row.detected.vacuum);
            assert!(row.sifted.single <= row.detected.single);
            assert!(row.sifted.multi <= row.detected.multi);
            assert!(row.errors.vacuum <= row.sifted.vacuum);
            assert!(row.errors.single <= row.sifted.single);
            assert!(row.errors.multi <= row.sifted.multi);
            emitted_total += row.emitted;
        }
        assert_eq!(emitted_total, cfg.pulses);
    }

    #[test]
    fn vacuum_source_without_darks_never_fires() {
        let cfg = single_intensity_cfg(0.0, 10_000, 3);
        let mut c = reference_channel();
        c.y0 = 0.0;
        let t = simulate(&cfg, &c).unwrap();
        assert_eq!(t.per_intensity[0].detected.total(), 0);
    }

    #[test]
    fn perfect_channel_has_no_errors() {
        // eta = 1, y0 = 0, e_d = 0, mu = 2: QBER exactly 0, gain near 1-e^-2
        let cfg = single_intensity_cfg(2.0, 50_000, 17);
        let c = ChannelParams {
            alpha_db_per_km: 0.0,
            distance_km: 0.0,
            eta_det: 1.0,
            y0: 0.0,
            e_d: 0.0,
        };
        let t = simulate(&cfg, &c).unwrap();
        let row = &t.per_intensity[0];
        assert_eq!(row.errors.total(), 0);
        let p = 1.0 - (-2.0f64).exp();
        let gain = row.detected.total() as f64 / row.emitted as f64;
        assert!((gain - p).abs() < band(p, row.emitted));
    }

    #[test]
    fn merge_identity_and_commutativity() {
        let cfg = single_intensity_cfg(0.5, 20_000, 23);
        let c = reference_channel();
        let t = simulate(&cfg, &c).unwrap();
        let empty = TallyResult::empty(t.intensities.clone(), t.p_z);
        assert_eq!(t.merge(&empty).unwrap(), t);
        let u = simulate(&single_intensity_cfg(0.5, 20_000, 24), &c).unwrap();
        assert_eq!(t.merge(&u).unwrap(), u.merge(&t).unwrap());
    }

    #[test]
    fn merge_associativity() {
        let c = reference_channel();
        let t: Vec<TallyResult> = (0..3)
            .map(|i| simulate(&single_intensity_cfg(0.5, 10_000, 31 + i), &c).unwrap())
            .collect();
        let left = t[0].merge(&t[1]).unwrap().merge(&t[2]).unwrap();
        let right = t[0].merge(&t[1].merge(&t[2]).unwrap()).unwrap();
        assert_eq!(left, right);
    }

    #[test]
    fn merge_rejects_schema_mismatch() {
        let a = TallyResult::empty(vec![0.5], 0.95);
        let b = TallyResult::empty(vec![0.4], 0.95);
        assert!(matches!(a.merge(&b), Err(SimError::SchemaMismatch(_))));
        let c = TallyResult::empty(vec![0.5], 0.9);
        assert!(matches!(a.merge(&c), Err(SimError::SchemaMismatch(_))));
    }

    #[test]
    fn sharded_run_matches_analytics() {
        let c = reference_channel();
        let mu = 0.5;
        let q = overall_gain(mu, &c).unwrap();
        for shards in [1, 4] {
            let cfg = SimConfig {
                shards,
                ..single_intensity_cfg(mu, 200_000, 0x5EED)
            };
            let t = simulate(&cfg, &c).unwrap();
            let row = &t.per_intensity[0];
            let gain = row.detected.total() as f64 / row.emitted as f64;
            assert!(
                (gain - q).abs() < band(q, row.emitted),
                "shards={shards}: empirical gain {gain} vs analytic {q}"
            );
        }
    }

    #[test]
    fn sifted_fraction_matches_basis_bias() {
        let cfg = single_intensity_cfg(0.5, 200_000, 77);
        let t = simulate(&cfg, &reference_channel()).unwrap();
        let row = &t.per_intensity[0];
        let s = cfg.sifting_factor();
        let frac = row.sifted.total() as f64 / row.detected.total() as f64;
        assert!((frac - s).abs() < band(s, row.detected.total()));
    }

    #[test]
    fn empirical_terms_match_analytic_model() {
        let c = reference_channel();
        let mu = 0.5;
        let cfg = single_intensity_cfg(mu, 400_000, 0xFACE);
        let t = simulate(&cfg, &c).unwrap();
        let emp = empirical_rate_terms(&t, 0).unwrap();
        let s = SourceParams::for_intensity(mu).unwrap();
        let truth = rate_terms_from_model(&s, &c).unwrap();
        let n = t.per_intensity[0].sifted.total();
        assert!((emp.e_signal - truth.e_signal).abs() < band(truth.e_signal, n));
        assert!((emp.omega0 - truth.omega0).abs() < band(truth.omega0, n));
        assert!((emp.omega1 - truth.omega1).abs() < band(truth.omega1, n));
        assert!((emp.q_signal - truth.q_signal).abs() < band(truth.q_signal, n));
    }

    #[test]
    fn vacuum_only_with_darks_is_all_vacuum_class() {
        let cfg = single_intensity_cfg(0.0, 3_000_000, 41);
        let mut c = reference_channel();
        c.y0 = 1.0e-3;
        let t = simulate(&cfg, &c).unwrap();
        let emp = empirical_rate_terms(&t, 0).unwrap();
        assert_eq!(emp.omega0, 1.0);
        let n = t.per_intensity[0].sifted.total();
        assert!((emp.e_signal - 0.5).abs() < band(0.5, n));
    }

    #[test]
    fn no_darks_means_no_vacuum_class() {
        let cfg = single_intensity_cfg(0.5, 100_000, 43);
        let mut c = reference_channel();
        c.y0 = 0.0;
        let t = simulate(&cfg, &c).unwrap();
        assert_eq!(t.per_intensity[0].detected.vacuum, 0);
        let emp = empirical_rate_terms(&t, 0).unwrap();
        assert_eq!(emp.omega0, 0.0);
    }

    #[test]
    fn empirical_terms_need_sifted_data() {
        let t = TallyResult::empty(vec![0.5], 0.95);
        assert!(matches!(
            empirical_rate_terms(&t, 0),
            Err(SimError::InsufficientData(_))
        ));
        assert!(matches!(
            empirical_rate_terms(&t, 5),
            Err(SimError::BadIntensityIndex { .. })
        ));
    }

    #[test]
    fn observable_view_preserves_totals() {
        let cfg = SimConfig {
            intensities: vec![0.5, 0.1],
            intensity_probs: vec![0.8, 0.2],
            ..single_intensity_cfg(0.5, 50_000, 59)
        };
        let t = simulate(&cfg, &reference_channel()).unwrap();
        let view = observable_view(&t);
        for (row, tally) in view.rows.iter().zip(&t.per_intensity) {
            assert_eq!(row.emitted, tally.emitted);
            assert_eq!(row.detected, tally.detected.total());
            assert_eq!(row.sifted, tally.sifted.total());
            assert_eq!(row.errors, tally.errors.total());
        }
    }

    #[test]
    fn view_of_merge_is_merge_of_views() {
        let c = reference_channel();
        let a = simulate(&single_intensity_cfg(0.5, 30_000, 61), &c).unwrap();
        let b = simulate(&single_intensity_cfg(0.5, 30_000, 62), &c).unwrap();
        let merged_view = observable_view(&a.merge(&b).unwrap());
        let view_a = observable_view(&a);
        let view_b = observable_view(&b);
        for ((m, x), y) in merged_view.rows.iter().zip(&view_a.rows).zip(&view_b.rows) {
            assert_eq!(m.emitted, x.emitted + y.emitted);
            assert_eq!(m.detected, x.detected + y.detected);
            assert_eq!(m.sifted, x.sifted + y.sifted);
            assert_eq!(m.errors, x.errors + y.errors);
        }
    }

    #[test]
    fn config_validation_catches_bad_inputs() {
        let good = single_intensity_cfg(0.5, 1000, 1);
        assert!(good.validate().is_ok());

        let mut bad = good.clone();
        bad.pulses = 0;
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.shards = 2000;
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.intensity_probs = vec![0.5];
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.intensities = vec![0.5, 0.5];
        bad.intensity_probs = vec![0.5, 0.5];
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.p_z = 0.4;
        assert!(bad.validate().is_err());

        let mut bad = good;
        bad.p_z = 1.0;
        assert!(bad.validate().is_err());
    }
}
