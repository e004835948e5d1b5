//! Output formatting: 9-significant-digit numbers, the fixed CSV schema
//! and report assembly.
//!
//! The CSV column order is part of the tool's contract:
//! `distance_km,eta,q_signal,e_signal,omega0,omega1,e1,rate_prior,rate_new,vacuum_bonus`
//! with cutoff distances appended as `#`-prefixed summary lines.

use qkd_rates::rates::{KeyRateResult, RateTerms};

pub const CSV_HEADER: &str =
    "distance_km,eta,q_signal,e_signal,omega0,omega1,e1,rate_prior,rate_new,vacuum_bonus";

/// Format with 9 significant digits, positional notation for moderate
/// exponents and scientific otherwise, trailing zeros trimmed. The result
/// is deterministic for a given value.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_fixed(format!("{x:.decimals$}"))
    } else {
        let s = format!("{x:.8e}");
        match s.split_once('e') {
            Some((mantissa, exponent)) => {
                format!("{}e{}", trim_fixed(mantissa.to_string()), exponent)
            }
            None => s,
        }
    }
}

fn trim_fixed(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    let t = s.trim_end_matches('0').trim_end_matches('.');
    t.to_string()
}

/// One data row of the fixed CSV schema.
pub fn csv_row(
    distance_km: f64,
    eta: f64,
    t: &RateTerms,
    r: &KeyRateResult,
    clamp: bool,
) -> String {
    let rate = |v: f64| if clamp { v.max(0.0) } else { v };
    [
        distance_km,
        eta,
        t.q_signal,
        t.e_signal,
        t.omega0,
        t.omega1,
        t.e1,
        rate(r.rate_prior),
        rate(r.rate_new),
        r.vacuum_bonus,
    ]
    .iter()
    .map(|&v| fmt_sig9(v))
    .collect::<Vec<_>>()
    .join(",")
}

/// Summary line for a cutoff search that may have found nothing.
pub fn cutoff_line(name: &str, outcome: &Result<f64, qkd_rates::channel::ChannelError>) -> String {
    match outcome {
        Ok(km) => format!("# {name},{}", fmt_sig9(*km)),
        Err(e) => format!("# {name},none ({e})"),
    }
}
