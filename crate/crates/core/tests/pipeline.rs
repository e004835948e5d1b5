//! End-to-end pipeline: Monte Carlo tallies, class-erased observations,
//! decoy estimation with finite-sample widening, all checked against the
//! analytic ground truth the simulation was driven by.

use qkd_rates::channel::{error_n, transmittance, yield_n, ChannelParams};
use qkd_rates::decoy::{estimate_y0, estimate_y1_e1, Observation, Widening};
use qkd_rates::sim::{observable_view, simulate, SimConfig};

fn reference_channel() -> ChannelParams {
    ChannelParams {
        alpha_db_per_km: 0.0,
        distance_km: 0.0,
        eta_det: 0.1,
        y0: 1.0e-5,
        e_d: 0.01,
    }
}

fn observations_from_run(cfg: &SimConfig, c: &ChannelParams) -> Vec<Observation> {
    let tally = simulate(cfg, c).unwrap();
    observable_view(&tally)
        .rows
        .iter()
        .map(|row| Observation {
            mu: row.mu,
            gain: row.detected as f64 / row.emitted as f64,
            qber: if row.sifted > 0 {
                row.errors as f64 / row.sifted as f64
            } else {
                0.5
            },
            samples: row.emitted,
        })
        .collect()
}

#[test]
fn vacuum_yield_interval_covers_truth_at_ten_million_pulses() {
    let c = reference_channel();
    let cfg = SimConfig {
        pulses: 10_000_000,
        intensities: vec![0.0],
        intensity_probs: vec![1.0],
        p_z: 0.95,
        seed: 0xDECAF,
        shards: 4,
    };
    let obs = observations_from_run(&cfg, &c);
    let (lo, hi) = estimate_y0(&obs[0], Widening::Sigma(5.0)).unwrap();
    assert!(
        lo <= c.y0 && c.y0 <= hi,
        "five-sigma interval [{lo:.3e}, {hi:.3e}] misses Y0 = {:.1e}",
        c.y0
    );
    assert!(hi < 1e-3, "interval should be tight at this sample size");
}

#[test]
fn monte_carlo_observations_feed_bracketing_bounds() {
    let c = reference_channel();
    let cfg = SimConfig {
        pulses: 2_000_000,
        intensities: vec![0.5, 0.1, 0.0],
        intensity_probs: vec![0.6, 0.2, 0.2],
        p_z: 0.95,
        seed: 0xB0B_CAFE,
        shards: 4,
    };
    let obs = observations_from_run(&cfg, &c);
    let bounds = estimate_y1_e1(&obs, 0.5, 0.1, Widening::Sigma(5.0)).unwrap();

    let eta = transmittance(&c).unwrap();
    let y1_true = yield_n(1, eta, c.y0).unwrap();
    let e1_true = error_n(1, eta, c.y0, c.e_d).unwrap();
    assert!(
        bounds.y0_low <= c.y0 && c.y0 <= bounds.y0_high,
        "Y0 bracket [{:.3e}, {:.3e}] misses {:.1e}",
        bounds.y0_low,
        bounds.y0_high,
        c.y0
    );
    assert!(
        bounds.y1_low <= y1_true,
        "y1_low {} above the true yield {y1_true}",
        bounds.y1_low
    );
    assert!(
        bounds.e1_high >= e1_true,
        "e1_high {} below the true error rate {e1_true}",
        bounds.e1_high
    );
    // widened but not vacuous at two million pulses
    assert!(bounds.y1_low > 0.5 * y1_true);
    assert!(bounds.e1_high < 10.0 * e1_true);
}
