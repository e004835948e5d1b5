//! Run configuration: one JSON document with source / channel / sim /
//! estimation / output sections. Every field has a default, and the
//! `defaults` subcommand prints the fully populated document.

use serde::{Deserialize, Serialize};

use qkd_rates::channel::ChannelParams;
use qkd_rates::sim::SimConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub source: SourceSection,
    pub channel: ChannelParams,
    pub sim: Option<SimConfig>,
    pub estimation: EstimationSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSection {
    /// Signal intensity (mean photon number).
    pub mu: f64,
    /// Photon-number cutoff; selected automatically when absent.
    pub n_max: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationSection {
    /// Signal intensity role.
    pub signal_mu: f64,
    /// Weak decoy intensity role.
    pub weak_mu: f64,
    /// Vacuum decoy intensity role, if a vacuum decoy is run.
    pub vacuum_mu: Option<f64>,
    /// Confidence widening in binomial standard deviations.
    pub n_sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub format: OutputFormat,
    /// Destination path; stdout when absent.
    pub path: Option<String>,
    /// Zero out negative rates in reports.
    pub clamp_negative: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Structured,
}

impl Default for SourceSection {
    fn default() -> Self {
        Self {
            mu: 0.48,
            n_max: None,
        }
    }
}

fn default_channel() -> ChannelParams {
    ChannelParams {
        alpha_db_per_km: 0.21,
        distance_km: 0.0,
        eta_det: 0.045,
        y0: 1.7e-6,
        e_d: 0.033,
    }
}

fn default_sim() -> SimConfig {
    SimConfig {
        pulses: 1_000_000,
        intensities: vec![0.48, 0.05, 0.0],
        intensity_probs: vec![0.8, 0.1, 0.1],
        p_z: 0.95,
        seed: 7,
        shards: 4,
    }
}

impl Default for EstimationSection {
    fn default() -> Self {
        Self {
            signal_mu: 0.48,
            weak_mu: 0.05,
            vacuum_mu: Some(0.0),
            n_sigma: 5.0,
        }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            format: OutputFormat::Structured,
            path: None,
            clamp_negative: false,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            source: SourceSection::default(),
            channel: default_channel(),
            sim: Some(default_sim()),
            estimation: EstimationSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl RunConfig {
    /// Full upfront validation; any failure here is a configuration error
    /// (exit code 2) and names the offending field.
    pub fn validate(&self) -> Result<(), String> {
        if !self.source.mu.is_finite() || self.source.mu < 0.0 {
            return Err(format!("source.mu = {} must be >= 0", self.source.mu));
        }
        if let Some(n_max) = self.source.n_max {
            if n_max < 2 {
                return Err(format!("source.n_max = {n_max} must be >= 2"));
            }
        }
        self.channel
            .validate()
            .map_err(|e| format!("channel.{e}"))?;
        if let Some(sim) = &self.sim {
            sim.validate().map_err(|e| format!("sim: {e}"))?;
            // the decoy roles are checked by the estimator when used;
            // only the signal designation is structural
            if !sim.intensities.contains(&self.estimation.signal_mu) {
                return Err(format!(
                    "estimation.signal_mu = {} is not one of sim.intensities {:?}",
                    self.estimation.signal_mu, sim.intensities
                ));
            }
            if self.source.mu != self.estimation.signal_mu {
                return Err(format!(
                    "source.mu = {} and estimation.signal_mu = {} must designate \
                     the same signal intensity",
                    self.source.mu, self.estimation.signal_mu
                ));
            }
        }
        if !self.estimation.n_sigma.is_finite() || self.estimation.n_sigma < 0.0 {
            return Err(format!(
                "estimation.n_sigma = {} must be >= 0",
                self.estimation.n_sigma
            ));
        }
        if let Some(v) = self.estimation.vacuum_mu {
            if v != 0.0 {
                return Err(format!(
                    "estimation.vacuum_mu = {v} must be 0 (the vacuum decoy)"
                ));
            }
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| format!("cannot parse config {}: {e}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
