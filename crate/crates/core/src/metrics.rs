//! Episode-level safety metrics.
//!
//! All three metrics operate on per-episode cost returns against a fixed
//! threshold `d`. An episode violates when its return cost strictly exceeds
//! `d`; equality is compliant.

use crate::error::{ensure_finite, Error, Result};

/// Per-episode cost returns plus the threshold they are judged against.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeCosts {
    pub returns: Vec<f64>,
    pub d: f64,
}

impl EpisodeCosts {
    pub fn new(returns: Vec<f64>, d: f64) -> Self {
        Self { returns, d }
    }

    fn validate(&self) -> Result<()> {
        if self.returns.is_empty() {
            return Err(Error::parameter("metrics need at least one episode"));
        }
        ensure_finite("d", self.d)?;
        for (i, &c) in self.returns.iter().enumerate() {
            ensure_finite(&format!("C[{i}]"), c)?;
        }
        Ok(())
    }
}

/// Fraction of episodes whose cost return exceeds the threshold.
pub fn violation_rate(ep: &EpisodeCosts) -> Result<f64> {
    ep.validate()?;
    let violations = ep.returns.iter().filter(|&&c| c > ep.d).count();
    Ok(violations as f64 / ep.returns.len() as f64)
}

/// Mean excess `max(0, C_i - d)` over the violating episodes; 0 when no
/// episode violates (so downstream tables never see NaN).
pub fn violation_magnitude(ep: &EpisodeCosts) -> Result<f64> {
    ep.validate()?;
    let excesses: Vec<f64> = ep
        .returns
        .iter()
        .filter(|&&c| c > ep.d)
        .map(|&c| c - ep.d)
        .collect();
    if excesses.is_empty() {
        Ok(0.0)
    } else {
        Ok(excesses.iter().sum::<f64>() / excesses.len() as f64)
    }
}

/// Mean cost return over all episodes.
pub fn average_cost(ep: &EpisodeCosts) -> Result<f64> {
    ep.validate()?;
    Ok(ep.returns.iter().sum::<f64>() / ep.returns.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_fixtures() {
        let all_safe = EpisodeCosts::new(vec![10.0, 25.0, 24.9], 25.0);
        assert_eq!(violation_rate(&all_safe).unwrap(), 0.0);

        let half = EpisodeCosts::new(vec![30.0, 20.0, 30.0, 20.0], 25.0);
        assert_eq!(violation_rate(&half).unwrap(), 0.5);

        let all_bad = EpisodeCosts::new(vec![26.0, 40.0], 25.0);
        assert_eq!(violation_rate(&all_bad).unwrap(), 1.0);
    }

    #[test]
    fn magnitude_fixtures() {
        let none = EpisodeCosts::new(vec![10.0, 20.0], 25.0);
        assert_eq!(violation_magnitude(&none).unwrap(), 0.0);

        let mixed = EpisodeCosts::new(vec![30.0, 20.0, 35.0], 25.0);
        assert_eq!(violation_magnitude(&mixed).unwrap(), 7.5);

        let single = EpisodeCosts::new(vec![26.0], 25.0);
        assert_eq!(violation_magnitude(&single).unwrap(), 1.0);
    }

    #[test]
    fn average_fixtures() {
        assert_eq!(
            average_cost(&EpisodeCosts::new(vec![25.0], 25.0)).unwrap(),
            25.0
        );
        assert_eq!(
            average_cost(&EpisodeCosts::new(vec![10.0, 20.0, 30.0], 25.0)).unwrap(),
            20.0
        );
        assert_eq!(
            average_cost(&EpisodeCosts::new(vec![0.0, 0.0], 25.0)).unwrap(),
            0.0
        );
    }

    #[test]
    fn equality_is_compliant() {
        let ep = EpisodeCosts::new(vec![25.0, 25.0], 25.0);
        assert_eq!(violation_rate(&ep).unwrap(), 0.0);
        assert_eq!(violation_magnitude(&ep).unwrap(), 0.0);
    }

    #[test]
    fn empty_rejected() {
        let ep = EpisodeCosts::new(vec![], 25.0);
        assert!(violation_rate(&ep).is_err());
        assert!(average_cost(&ep).is_err());
    }

    #[test]
    fn shift_coherence() {
        // Shifting every return and d together preserves the violation
        // metrics and shifts the average by the same constant.
        let base = EpisodeCosts::new(vec![30.0, 20.0, 35.0, 25.0], 25.0);
        let shift = 7.25;
        let shifted = EpisodeCosts::new(
            base.returns.iter().map(|c| c + shift).collect(),
            base.d + shift,
        );
        assert_eq!(
            violation_rate(&base).unwrap(),
            violation_rate(&shifted).unwrap()
        );
        assert!(
            (violation_magnitude(&base).unwrap() - violation_magnitude(&shifted).unwrap()).abs()
                < 1e-12
        );
        assert!(
            (average_cost(&shifted).unwrap() - average_cost(&base).unwrap() - shift).abs() < 1e-12
        );
    }

    #[test]
    fn magnitude_bounded_by_max_excess() {
        let ep = EpisodeCosts::new(vec![30.0, 27.0, 41.0, 12.0], 25.0);
        let mag = violation_magnitude(&ep).unwrap();
        assert!(mag <= 41.0 - 25.0);
    }
}
