use serde::{Deserialize, Serialize};

use super::{RdDataset, RANK_SCALE};
use crate::error::{Error, Result};

const GRID_POINTS: usize = 50;
const MIN_SIDE_POINTS: usize = 10;

/// Locally weighted linear fits on each side of the cutoff.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoessCurve {
    pub bandwidth: f64,
    /// `(rank, smoothed outcome)` on an even grid over the treated ranks.
    pub treated: Vec<(f64, f64)>,
    pub control: Vec<(f64, f64)>,
    /// Each side's fit evaluated midway between the last treated and the
    /// first control rank.
    pub treated_limit: f64,
    pub control_limit: f64,
    /// `treated_limit - control_limit`.
    pub gap: f64,
}

/// LOESS with tricube weights over the nearest `ceil(bandwidth · n)` points
/// of each side, evaluated on a rank grid and at the cutoff.
pub fn local_regression_check(data: &RdDataset, bandwidth: f64) -> Result<LoessCurve> {
    if !(bandwidth > 0.0 && bandwidth <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "bandwidth {bandwidth} is not in (0, 1]"
        )));
    }
    let side = |treated: bool| -> Vec<(f64, f64)> {
        data.points
            .iter()
            .filter(|p| p.treated == treated)
            .map(|p| (p.rank as f64 / RANK_SCALE, p.y))
            .collect()
    };
    let (t, c) = (side(true), side(false));
    if t.len() < MIN_SIDE_POINTS || c.len() < MIN_SIDE_POINTS {
        return Err(Error::InsufficientData(format!(
            "local regression needs {MIN_SIDE_POINTS} points per side, have {} treated and {} control",
            t.len(),
            c.len()
        )));
    }
    let at = (data.cutoff as f64 + 0.5) / RANK_SCALE;
    let treated_limit = local_linear(&t, at, bandwidth);
    let control_limit = local_linear(&c, at, bandwidth);
    Ok(LoessCurve {
        bandwidth,
        treated: grid(&t, bandwidth),
        control: grid(&c, bandwidth),
        treated_limit,
        control_limit,
        gap: treated_limit - control_limit,
    })
}

fn grid(points: &[(f64, f64)], bandwidth: f64) -> Vec<(f64, f64)> {
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    (0..GRID_POINTS)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64;
            (x * RANK_SCALE, local_linear(points, x, bandwidth))
        })
        .collect()
}

fn tricube(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else {
        let a = 1.0 - u * u * u;
        a * a * a
    }
}

fn local_linear(points: &[(f64, f64)], x0: f64, bandwidth: f64) -> f64 {
    let q = ((bandwidth * points.len() as f64).ceil() as usize).clamp(2, points.len());
    let mut dist: Vec<f64> = points.iter().map(|p| (p.0 - x0).abs()).collect();
    dist.sort_by(f64::total_cmp);
    // a radius a hair beyond the q-th distance keeps the q-th point in play
    let h = dist[q - 1] * (1.0 + 1e-9) + f64::MIN_POSITIVE;
    let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let u = x - x0;
        let w = tricube(u.abs() / h);
        s0 += w;
        s1 += w * u;
        s2 += w * u * u;
        t0 += w * y;
        t1 += w * u * y;
    }
    let det = s0 * s2 - s1 * s1;
    if det.abs() <= 1e-12 * s0 * s2.max(f64::MIN_POSITIVE) {
        return t0 / s0;
    }
    (s2 * t0 - s1 * t1) / det
}
