mod common;

use common::stats;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tokbias::outcomes::{OutcomeRow, OutcomeStat};
use tokbias::rd::{
    design_matrix, fit_rd, local_regression_check, window_sweep, FitOptions, RdDataset, RdPoint,
    SeKind, RANK_SCALE,
};
use tokbias::Execution;

fn dataset(cutoff: usize, window: usize, mut f: impl FnMut(usize, bool) -> f64) -> RdDataset {
    let pts = (cutoff + 1 - window..=cutoff + window)
        .map(|r| {
            let t = r <= cutoff;
            RdPoint::new(r, t, f(r, t))
        })
        .collect();
    RdDataset::new(pts, cutoff, window).unwrap()
}

fn noisy(
    seed: u64,
    cutoff: usize,
    window: usize,
    sigma: f64,
    f: impl Fn(f64) -> f64,
    tau: f64,
) -> RdDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    dataset(cutoff, window, |r, t| {
        f(r as f64 / RANK_SCALE) + if t { tau } else { 0.0 } + noise.sample(&mut rng)
    })
}

fn random_dataset(rng: &mut ChaCha8Rng) -> RdDataset {
    let cutoff = rng.gen_range(100..1500);
    let window = rng.gen_range(cutoff / 4..cutoff);
    let (a, b, c) = (
        rng.gen_range(-10.0..0.0),
        rng.gen_range(-5.0..5.0),
        rng.gen_range(0.0..4.0),
    );
    let mut pts = Vec::new();
    for r in cutoff + 1 - window..=cutoff + window {
        if rng.gen_bool(0.8) {
            let t = r <= cutoff;
            let y =
                a + b * r as f64 / RANK_SCALE + if t { c } else { 0.0 } + rng.gen_range(-1.0..1.0);
            pts.push(RdPoint::new(r, t, y));
        }
    }
    for (t, r) in [
        (true, cutoff),
        (true, cutoff - 1),
        (false, cutoff + 1),
        (false, cutoff + 2),
    ] {
        pts.push(RdPoint::new(r, t, a + rng.gen_range(-1.0..1.0)));
    }
    RdDataset::new(pts, cutoff, window).unwrap()
}

#[test]
fn noiseless_recovery() {
    let d = dataset(1000, 1000, |r, t| {
        1.0 + 0.1 * r as f64 / RANK_SCALE + if t { 2.0 } else { 0.0 }
    });
    let fit = fit_rd(&d, &FitOptions::default()).unwrap();
    assert!((fit.alpha_hat - 1.0).abs() <= 1e-9);
    assert!((fit.beta_hat - 0.1).abs() <= 1e-9);
    assert!((fit.tau_hat - 2.0).abs() <= 1e-9);
    assert!(fit.se_tau <= 1e-9);
}

#[test]
fn matches_naive_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..200 {
        let d = random_dataset(&mut rng);
        let fit = fit_rd(&d, &FitOptions::default()).unwrap();
        let x: Vec<[f64; 3]> = d
            .points
            .iter()
            .map(|p| {
                [
                    1.0,
                    p.rank as f64 / RANK_SCALE,
                    if p.treated { 1.0 } else { 0.0 },
                ]
            })
            .collect();
        let y: Vec<f64> = d.points.iter().map(|p| p.y).collect();
        let (theta, inv) = stats::ols3(&x, &y);
        for (got, want) in [fit.alpha_hat, fit.beta_hat, fit.tau_hat].iter().zip(theta) {
            assert!(
                (got - want).abs() <= 1e-10 * want.abs().max(1.0),
                "{got} vs {want}"
            );
        }
        let rss: f64 = x
            .iter()
            .zip(&y)
            .map(|(row, yi)| (yi - (0..3).map(|j| row[j] * theta[j]).sum::<f64>()).powi(2))
            .sum();
        let se = (rss / (y.len() - 3) as f64 * inv[2][2]).sqrt();
        assert!((fit.se_tau - se).abs() <= 1e-8 * se.max(1.0));
    }
}

#[test]
fn residuals_are_orthogonal_to_the_design() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for poly_order in [1, 2, 3] {
        for _ in 0..50 {
            let d = random_dataset(&mut rng);
            let opts = FitOptions {
                poly_order,
                ..FitOptions::default()
            };
            let Ok(fit) = fit_rd(&d, &opts) else { continue };
            let x = design_matrix(&d, poly_order);
            for j in 0..x.ncols() {
                let dot: f64 = d
                    .points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| x[(i, j)] * (p.y - fit.predict(p.rank, p.treated)))
                    .sum();
                assert!(dot.abs() <= 1e-8, "column {j}: {dot}");
            }
        }
    }
}

proptest! {
    #[test]
    fn affine_shift(seed in any::<u64>(), c in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_dataset(&mut rng);
        let mut shifted = d.clone();
        for p in &mut shifted.points {
            p.y += c;
        }
        let (a, b) = (fit_rd(&d, &FitOptions::default()).unwrap(), fit_rd(&shifted, &FitOptions::default()).unwrap());
        prop_assert!((a.tau_hat - b.tau_hat).abs() <= 1e-8);
        prop_assert!((a.beta_hat - b.beta_hat).abs() <= 1e-8);
        prop_assert!((a.alpha_hat + c - b.alpha_hat).abs() <= 1e-8);
        prop_assert!((a.se_tau - b.se_tau).abs() <= 1e-8);
    }
}

#[test]
fn noisy_recovery_within_three_se() {
    let covered = (0..100u64)
        .filter(|&seed| {
            let d = noisy(seed, 2000, 2000, 0.5, |x| -3.0 + 0.4 * x, 2.0);
            let fit = fit_rd(&d, &FitOptions::default()).unwrap();
            (fit.tau_hat - 2.0).abs() <= 3.0 * fit.se_tau
        })
        .count();
    assert!(covered >= 99, "{covered}/100");
}

#[test]
fn placebo_cutoff_on_smooth_data() {
    // no jump anywhere; assignment at a random rank is a placebo
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let null = (0..100u64)
        .filter(|&seed| {
            let cutoff = rng.gen_range(200..800);
            let d = noisy(seed, cutoff, 150, 1.0, |x| 1.0 - 2.0 * x, 0.0);
            let fit = fit_rd(&d, &FitOptions::default()).unwrap();
            fit.tau_hat.abs() <= 3.0 * fit.se_tau
        })
        .count();
    assert!(null >= 95, "{null}/100");
}

#[test]
fn hc1_agrees_with_classical_under_homoskedasticity() {
    let d = noisy(1, 1000, 1000, 0.5, |x| x, 1.0);
    let classical = fit_rd(&d, &FitOptions::default()).unwrap();
    let hc1 = fit_rd(
        &d,
        &FitOptions {
            se: SeKind::Hc1,
            ..FitOptions::default()
        },
    )
    .unwrap();
    assert_eq!(classical.tau_hat, hc1.tau_hat);
    assert!((hc1.se_tau / classical.se_tau - 1.0).abs() < 0.1);
}

#[test]
fn weighted_fit_equals_replicated_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let d = random_dataset(&mut rng);
    let mut weighted = d.clone();
    let mut replicated = Vec::new();
    for p in &mut weighted.points {
        let w = rng.gen_range(1..4);
        p.weight = w as f64;
        replicated.extend(std::iter::repeat_n(RdPoint::new(p.rank, p.treated, p.y), w));
    }
    let opts = FitOptions {
        weighted: true,
        ..FitOptions::default()
    };
    let a = fit_rd(&weighted, &opts).unwrap();
    let b = fit_rd(
        &RdDataset::new(replicated, d.cutoff, d.window).unwrap(),
        &FitOptions::default(),
    )
    .unwrap();
    assert!((a.tau_hat - b.tau_hat).abs() <= 1e-9);
    assert!((a.beta_hat - b.beta_hat).abs() <= 1e-9);
}

fn rows(cutoff: usize, available: usize, mut f: impl FnMut(usize) -> f64) -> Vec<OutcomeRow> {
    (1..=available)
        .map(|r| OutcomeRow {
            rank: r,
            subword: format!("s{r}"),
            treated: r <= cutoff,
            n_samples: 5,
            mean: f(r),
            std: 0.0,
            median: 0.0,
            iqr: 0.0,
            n_dropped_mismatch: 0,
        })
        .collect()
}

#[test]
fn sweep_matches_individual_fits() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rs = rows(500, 1200, |r| {
        rng.gen_range(-1.0..1.0) + if r <= 500 { 1.5 } else { 0.0 }
    });
    let windows = [100, 250, 500, 700];
    for execution in [Execution::Sequential, Execution::Parallel] {
        let s = window_sweep(
            &rs,
            500,
            1200,
            &windows,
            OutcomeStat::Mean,
            &FitOptions::default(),
            execution,
        );
        assert_eq!(
            s.skipped.iter().map(|w| w.window).collect::<Vec<_>>(),
            vec![700]
        );
        for fit in &s.fits {
            let d = RdDataset::from_rows(&rs, 500, fit.window, OutcomeStat::Mean).unwrap();
            assert_eq!(fit, &fit_rd(&d, &FitOptions::default()).unwrap());
        }
    }
}

#[test]
fn linear_outcomes_give_the_same_jump_at_every_window() {
    let rs = rows(500, 1500, |r| {
        -2.0 + 0.7 * r as f64 / RANK_SCALE + if r <= 500 { 0.25 } else { 0.0 }
    });
    let s = window_sweep(
        &rs,
        500,
        1500,
        &[50, 250, 500],
        OutcomeStat::Mean,
        &FitOptions::default(),
        Execution::Parallel,
    );
    assert_eq!(s.fits.len(), 3);
    for fit in &s.fits {
        assert!((fit.tau_hat - 0.25).abs() <= 1e-9);
    }
}

#[test]
fn loess_recovers_jump_on_curved_data() {
    let d = noisy(12, 1000, 1000, 0.1, |x| 0.5 + 1.5 * x * x - x, 2.0);
    let curve = local_regression_check(&d, 0.3).unwrap();
    assert!((curve.gap - 2.0).abs() <= 0.1, "gap {}", curve.gap);
    assert_eq!(curve.treated.len(), 50);
}
