//! Bundled example: `P(s) = 1/(s²(s²+1))` fitted to noisy samples of
//! `1.5 - e^{-t}` at `t = 1, ..., 7`.

use crate::error::{Error, Result};
use crate::kernel::StateSpace;
use crate::problem::DataSet;
use crate::realization::parse_transfer_function;

pub const EXAMPLE_SEC6: &str = "example-sec6";

/// Stored noise draws, one per sample time.
const NOISE_CSV: &str = include_str!("../fixtures/example_sec6_noise.csv");

pub const NUMERATOR: [f64; 1] = [1.0];
pub const DENOMINATOR: [f64; 5] = [1.0, 0.0, 1.0, 0.0, 0.0];
pub const LAMBDA: f64 = 0.01;
pub const WEIGHT: f64 = 1.0;
/// Margin and box bound used for the proposed fit. The automatic choices
/// need grids far above the default cap for this system.
pub const EPSILON: f64 = 1e-3;
pub const R: f64 = 2.0;

/// `1.5 - e^{-t}`.
pub fn original_curve(t: f64) -> f64 {
    1.5 - (-t).exp()
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub system: StateSpace,
    pub data: DataSet,
    pub epsilon: f64,
    pub r: f64,
}

/// `(t_i, ε_i)` pairs from the stored noise file.
pub fn noise() -> Result<Vec<(f64, f64)>> {
    let mut lines = NOISE_CSV.lines();
    if lines.next().map(str::trim) != Some("t,noise") {
        return Err(Error::Validation("fixture noise file has an unexpected header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let (t, e) = line
                .split_once(',')
                .ok_or_else(|| Error::Validation(format!("bad fixture noise line {line:?}")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Validation(format!("bad fixture noise value {s:?}: {e}")))
            };
            Ok((parse(t)?, parse(e)?))
        })
        .collect()
}

pub fn load(name: &str) -> Result<Fixture> {
    match name {
        EXAMPLE_SEC6 => example_sec6(),
        other => Err(Error::Validation(format!(
            "unknown fixture {other:?}; available: {EXAMPLE_SEC6}"
        ))),
    }
}

pub fn example_sec6() -> Result<Fixture> {
    let samples = noise()?;
    let times: Vec<f64> = samples.iter().map(|&(t, _)| t).collect();
    let values: Vec<f64> = samples.iter().map(|&(t, e)| original_curve(t) + e).collect();
    let horizon = *times
        .last()
        .ok_or_else(|| Error::Validation("fixture noise file is empty".into()))?;
    let system = parse_transfer_function(&NUMERATOR, &DENOMINATOR, horizon)?;
    let data = DataSet::with_uniform_weight(times, values, WEIGHT, LAMBDA)?;
    Ok(Fixture {
        system,
        data,
        epsilon: EPSILON,
        r: R,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_at_integer_times() {
        let fx = example_sec6().unwrap();
        assert_eq!(fx.data.times(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(fx.system.horizon(), 7.0);
        assert_eq!(fx.system.order(), 4);
        let first = fx.data.values()[0];
        assert!((first - (1.5 - (-1.0f64).exp() - 0.08762476048813563)).abs() < 1e-15);
    }

    #[test]
    fn unknown_fixture_is_rejected() {
        assert!(load("nope").is_err());
        assert!(load(EXAMPLE_SEC6).is_ok());
    }
}
