//! Regression discontinuity at the vocabulary cutoff.
//!
//! The primary estimator fits `y = α + β·r/1000 + τ·W + η` by ordinary least
//! squares over the candidates in a window around the cutoff; `τ̂` is the
//! tokenisation bias.

mod loess;
mod report;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::outcomes::{window_ranks, OutcomeRow, OutcomeStat};
use crate::Execution;

pub use loess::{local_regression_check, LoessCurve};
pub use report::{fitted_values, fitted_values_csv, FittedPoint};

/// Running-variable scale: ranks enter the regression as `r / 1000`.
pub const RANK_SCALE: f64 = 1000.0;

/// Default slack for [`uniform_model_bound_check`].
pub const BOUND_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub rank: usize,
    pub treated: bool,
    pub y: f64,
    /// Only used by weighted fits.
    pub weight: f64,
}

impl RdPoint {
    pub fn new(rank: usize, treated: bool, y: f64) -> Self {
        Self {
            rank,
            treated,
            y,
            weight: 1.0,
        }
    }
}

/// Observations in a window around the cutoff.
#[derive(Clone, Debug, PartialEq)]
pub struct RdDataset {
    pub points: Vec<RdPoint>,
    pub cutoff: usize,
    pub window: usize,
    pub stat: OutcomeStat,
}

impl RdDataset {
    /// Every rank must lie in `cutoff - window + 1 ..= cutoff + window` and be
    /// treated exactly when it is at most `cutoff`.
    pub fn new(points: Vec<RdPoint>, cutoff: usize, window: usize) -> Result<Self> {
        let lo = cutoff as i64 - window as i64 + 1;
        for p in &points {
            if (p.rank as i64) < lo || p.rank > cutoff + window {
                return Err(Error::InvalidArgument(format!(
                    "rank {} lies outside the window {lo}..={}",
                    p.rank,
                    cutoff + window
                )));
            }
            if p.treated != (p.rank <= cutoff) {
                return Err(Error::InvalidArgument(format!(
                    "rank {} has treated={} but the cutoff is {cutoff}",
                    p.rank, p.treated
                )));
            }
            if !p.y.is_finite() || !(p.weight > 0.0 && p.weight.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "rank {} has a non-finite outcome or non-positive weight",
                    p.rank
                )));
            }
        }
        Ok(Self {
            points,
            cutoff,
            window,
            stat: OutcomeStat::Mean,
        })
    }

    /// Rows inside the window, with `stat` as outcome and `n_samples` as weight.
    pub fn from_rows(
        rows: &[OutcomeRow],
        cutoff: usize,
        window: usize,
        stat: OutcomeStat,
    ) -> Result<Self> {
        let lo = cutoff.saturating_sub(window) + 1;
        let points = rows
            .iter()
            .filter(|r| r.rank >= lo && r.rank <= cutoff + window)
            .map(|r| RdPoint {
                rank: r.rank,
                treated: r.treated,
                y: match stat {
                    OutcomeStat::Mean => r.mean,
                    OutcomeStat::Std => r.std,
                    OutcomeStat::Median => r.median,
                    OutcomeStat::Iqr => r.iqr,
                },
                weight: r.n_samples.max(1) as f64,
            })
            .collect();
        let mut data = Self::new(points, cutoff, window)?;
        data.stat = stat;
        Ok(data)
    }

    pub fn n_treated(&self) -> usize {
        self.points.iter().filter(|p| p.treated).count()
    }

    pub fn n_control(&self) -> usize {
        self.points.len() - self.n_treated()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeKind {
    /// Homoskedastic OLS covariance.
    #[default]
    Classical,
    /// White's heteroskedasticity-consistent covariance with the `n/(n-k)`
    /// small-sample factor.
    Hc1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub se: SeKind,
    /// Degree of the common polynomial in `r/1000`.
    pub poly_order: usize,
    /// Weight each point by its weight (the sample count for outcome rows).
    pub weighted: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            se: SeKind::Classical,
            poly_order: 1,
            weighted: false,
        }
    }
}

/// A fitted discontinuity. Serialises to the fit report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdFit {
    pub cutoff: usize,
    pub window: usize,
    pub stat: OutcomeStat,
    pub tau_hat: f64,
    pub se_tau: f64,
    pub alpha_hat: f64,
    /// Slope per 1000 ranks.
    pub beta_hat: f64,
    pub n_treated: usize,
    pub n_control: usize,
    /// `[α, β, higher polynomial terms…, τ]`.
    #[serde(skip)]
    pub coefficients: Vec<f64>,
    #[serde(skip)]
    pub options: FitOptions,
}

impl RdFit {
    /// Fitted value at a rank with the given treatment.
    pub fn predict(&self, rank: usize, treated: bool) -> f64 {
        let x = rank as f64 / RANK_SCALE;
        let p = self.coefficients.len() - 2;
        let mut y = self.coefficients[0];
        let mut xp = 1.0;
        for j in 1..=p {
            xp *= x;
            y += self.coefficients[j] * xp;
        }
        if treated {
            y += self.tau_hat;
        }
        y
    }
}

fn design_row(p: &RdPoint, poly_order: usize) -> impl Iterator<Item = f64> {
    let x = p.rank as f64 / RANK_SCALE;
    (0..=poly_order)
        .map(move |j| x.powi(j as i32))
        .chain(std::iter::once(if p.treated { 1.0 } else { 0.0 }))
}

/// Design matrix `[1, x, …, x^p, W]` with `x = r/1000`.
pub fn design_matrix(data: &RdDataset, poly_order: usize) -> DMatrix<f64> {
    let cols = poly_order + 2;
    DMatrix::from_row_iterator(
        data.points.len(),
        cols,
        data.points.iter().flat_map(|p| design_row(p, poly_order)),
    )
}

/// Least-squares fit of the discontinuity regression.
pub fn fit_rd(data: &RdDataset, options: &FitOptions) -> Result<RdFit> {
    if options.poly_order == 0 {
        return Err(Error::InvalidArgument(
            "polynomial order must be at least 1".into(),
        ));
    }
    let (n_treated, n_control) = (data.n_treated(), data.n_control());
    if n_treated < 2 || n_control < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 treated and 2 control points, have {n_treated} and {n_control}"
        )));
    }
    let n = data.points.len();
    let k = options.poly_order + 2;
    if n <= k {
        return Err(Error::InsufficientData(format!(
            "{n} points cannot identify {k} coefficients with a residual variance"
        )));
    }

    let x = design_matrix(data, options.poly_order);
    let y = DVector::from_iterator(n, data.points.iter().map(|p| p.y));
    let sw = DVector::from_iterator(
        n,
        data.points.iter().map(|p| {
            if options.weighted {
                p.weight.sqrt()
            } else {
                1.0
            }
        }),
    );
    let xw = DMatrix::from_fn(n, k, |i, j| x[(i, j)] * sw[i]);
    let yw = y.component_mul(&sw);

    let qr = xw.clone().qr();
    let r = qr.r();
    let max_diag = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..k).any(|i| r[(i, i)].abs() <= max_diag * 1e-12 * n as f64) {
        return Err(Error::RankDeficient(format!(
            "the {n}×{k} design has linearly dependent columns"
        )));
    }
    let qty = qr.q().transpose() * &yw;
    let theta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient("triangular solve failed".into()))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::RankDeficient("triangular inverse failed".into()))?;
    // (XᵀWX)⁻¹ = R⁻¹ R⁻ᵀ
    let bread = &r_inv * r_inv.transpose();

    let resid = &yw - &xw * &theta;
    let dof = (n - k) as f64;
    let cov = match options.se {
        SeKind::Classical => bread * (resid.norm_squared() / dof),
        SeKind::Hc1 => {
            let meat = DMatrix::from_fn(k, k, |a, b| {
                (0..n)
                    .map(|i| xw[(i, a)] * xw[(i, b)] * resid[i] * resid[i])
                    .sum()
            });
            &bread * meat * &bread * (n as f64 / dof)
        }
    };

    Ok(RdFit {
        cutoff: data.cutoff,
        window: data.window,
        stat: data.stat,
        tau_hat: theta[k - 1],
        se_tau: cov[(k - 1, k - 1)].max(0.0).sqrt(),
        alpha_hat: theta[0],
        beta_hat: theta[1],
        n_treated,
        n_control,
        coefficients: theta.iter().copied().collect(),
        options: *options,
    })
}

/// A window that could not be fitted during a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedWindow {
    pub window: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Sweep {
    /// In the order the windows were requested.
    pub fits: Vec<RdFit>,
    pub skipped: Vec<SkippedWindow>,
}

/// Fits every requested window over the same outcome rows. `available` is
/// the number of ranked merges, which bounds feasible windows.
pub fn window_sweep(
    rows: &[OutcomeRow],
    cutoff: usize,
    available: usize,
    windows: &[usize],
    stat: OutcomeStat,
    options: &FitOptions,
    execution: Execution,
) -> Sweep {
    let results = execution.map(windows, |&w| {
        window_ranks(available, cutoff, w)
            .and_then(|_| RdDataset::from_rows(rows, cutoff, w, stat))
            .and_then(|d| fit_rd(&d, options))
    });
    let mut sweep = Sweep::default();
    for (&window, result) in windows.iter().zip(results) {
        match result {
            Ok(fit) => sweep.fits.push(fit),
            Err(e) => sweep.skipped.push(SkippedWindow {
                window,
                reason: e.to_string(),
            }),
        }
    }
    sweep
}

/// Whether a uniform-model fit respects `τ̂ ≥ ln(vocab_size) - tolerance`,
/// where `vocab_size` counts the end-of-sequence event.
pub fn uniform_model_bound_check(fit: &RdFit, vocab_size: usize, tolerance: f64) -> bool {
    fit.tau_hat >= (vocab_size as f64).ln() - tolerance
}
