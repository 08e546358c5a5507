use serde::{Deserialize, Serialize};

use super::{RdDataset, RdFit};
use crate::error::{Error, Result};

/// One row of the fitted-values CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedPoint {
    pub rank: usize,
    pub treated: bool,
    pub y: f64,
    pub fitted: f64,
    /// The fitted value with the treatment flipped; on the treated side this
    /// is the line the subword would follow outside the vocabulary.
    pub counterfactual: f64,
}

pub fn fitted_values(data: &RdDataset, fit: &RdFit) -> Vec<FittedPoint> {
    let mut points: Vec<FittedPoint> = data
        .points
        .iter()
        .map(|p| FittedPoint {
            rank: p.rank,
            treated: p.treated,
            y: p.y,
            fitted: fit.predict(p.rank, p.treated),
            counterfactual: fit.predict(p.rank, !p.treated),
        })
        .collect();
    points.sort_by_key(|p| p.rank);
    points
}

pub fn fitted_values_csv(points: &[FittedPoint]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if points.is_empty() {
        w.write_record(["rank", "treated", "y", "fitted", "counterfactual"])?;
    }
    for p in points {
        w.serialize(p)?;
    }
    w.into_inner().map_err(|e| Error::Io {
        path: "<fitted values csv>".into(),
        source: e.into_error(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rd::{fit_rd, FitOptions, RdPoint};

    #[test]
    fn counterfactual_differs_by_tau() {
        let pts = (1..=10)
            .map(|r| {
                RdPoint::new(
                    r,
                    r <= 5,
                    r as f64 * 0.01 + if r <= 5 { 3.0 } else { 0.0 } + (r % 3) as f64 * 0.1,
                )
            })
            .collect();
        let d = RdDataset::new(pts, 5, 5).unwrap();
        let fit = fit_rd(&d, &FitOptions::default()).unwrap();
        let fv = fitted_values(&d, &fit);
        for p in &fv {
            let diff = if p.treated {
                p.fitted - p.counterfactual
            } else {
                p.counterfactual - p.fitted
            };
            assert!((diff - fit.tau_hat).abs() < 1e-12);
        }
        let csv = String::from_utf8(fitted_values_csv(&fv).unwrap()).unwrap();
        assert!(csv.starts_with("rank,treated,y,fitted,counterfactual\n"));
        assert_eq!(csv.lines().count(), 11);
    }
}
