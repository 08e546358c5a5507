use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How per-context log-probabilities are reduced to one outcome.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeStat {
    #[default]
    Mean,
    Std,
    Median,
    Iqr,
}

impl OutcomeStat {
    pub const ALL: [OutcomeStat; 4] = [
        OutcomeStat::Mean,
        OutcomeStat::Std,
        OutcomeStat::Median,
        OutcomeStat::Iqr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeStat::Mean => "mean",
            OutcomeStat::Std => "std",
            OutcomeStat::Median => "median",
            OutcomeStat::Iqr => "iqr",
        }
    }
}

impl fmt::Display for OutcomeStat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OutcomeStat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OutcomeStat::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown outcome statistic {s:?}")))
    }
}

/// All four aggregates of one sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub iqr: f64,
}

impl Aggregates {
    pub fn of(samples: &[f64]) -> Result<Self> {
        check(samples)?;
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = mean(samples);
        Ok(Self {
            mean,
            std: pop_std(samples, mean),
            median: quantile_sorted(&sorted, 0.5),
            iqr: quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25),
        })
    }

    pub fn get(&self, stat: OutcomeStat) -> f64 {
        match stat {
            OutcomeStat::Mean => self.mean,
            OutcomeStat::Std => self.std,
            OutcomeStat::Median => self.median,
            OutcomeStat::Iqr => self.iqr,
        }
    }
}

/// Mean, population standard deviation, median or interquartile range.
/// Quantiles interpolate linearly between order statistics.
pub fn aggregate(samples: &[f64], stat: OutcomeStat) -> Result<f64> {
    check(samples)?;
    Ok(match stat {
        OutcomeStat::Mean => mean(samples),
        OutcomeStat::Std => pop_std(samples, mean(samples)),
        OutcomeStat::Median | OutcomeStat::Iqr => {
            let mut sorted = samples.to_vec();
            sorted.sort_by(f64::total_cmp);
            if stat == OutcomeStat::Median {
                quantile_sorted(&sorted, 0.5)
            } else {
                quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25)
            }
        }
    })
}

fn check(samples: &[f64]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InsufficientData(
            "cannot aggregate an empty sample".into(),
        ));
    }
    if let Some(x) = samples.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sample value {x} is not finite"
        )));
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn pop_std(xs: &[f64], mean: f64) -> f64 {
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(aggregate(&[-1.0, -3.0], OutcomeStat::Mean).unwrap(), -2.0);
        assert_eq!(
            aggregate(&[-1.0, -1.0, -1.0], OutcomeStat::Std).unwrap(),
            0.0
        );
        assert_eq!(
            aggregate(&[1.0, 2.0, 3.0, 4.0], OutcomeStat::Iqr).unwrap(),
            1.5
        );
        assert_eq!(
            aggregate(&[4.0, 1.0, 3.0, 2.0], OutcomeStat::Median).unwrap(),
            2.5
        );
        assert_eq!(aggregate(&[7.0], OutcomeStat::Iqr).unwrap(), 0.0);
        assert!(aggregate(&[], OutcomeStat::Mean).is_err());
        assert!(aggregate(&[f64::NEG_INFINITY], OutcomeStat::Mean).is_err());
    }

    #[test]
    fn all_at_once_agrees() {
        let xs = [-3.5, -1.0, -7.25, -2.0, -2.0, -9.0];
        let a = Aggregates::of(&xs).unwrap();
        for stat in OutcomeStat::ALL {
            assert_eq!(a.get(stat), aggregate(&xs, stat).unwrap());
        }
    }

    #[test]
    fn parse() {
        assert_eq!("iqr".parse::<OutcomeStat>().unwrap(), OutcomeStat::Iqr);
        assert!("mode".parse::<OutcomeStat>().is_err());
    }
}
