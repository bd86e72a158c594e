//! Point-prediction and calibration metrics.
//!
//! Calibration is measured through interval coverage: for each confidence
//! level `c` the fraction of targets inside the central `c` interval is
//! compared with `c`, and ECE is `100 · mean |coverage(c) − c|`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::mean_std;
use crate::error::{Error, Result};
use crate::uq::{predictive_interval, IntervalMethod, UncertaintyReport};

pub const DEFAULT_LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

fn check_pair(pred: &[f64], targets: &[f64]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::Data("no examples to score".into()));
    }
    if pred.len() != targets.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} targets",
            pred.len(),
            targets.len()
        )));
    }
    Ok(())
}

/// Coefficient of determination. Errors when the targets are constant.
pub fn r2(pred: &[f64], targets: &[f64]) -> Result<f64> {
    check_pair(pred, targets)?;
    let (mean, _) = mean_std(targets);
    let ss_tot: f64 = targets.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Data("R² is undefined for constant targets".into()));
    }
    let ss_res: f64 = pred.iter().zip(targets).map(|(p, y)| (y - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn rmse(pred: &[f64], targets: &[f64]) -> Result<f64> {
    check_pair(pred, targets)?;
    let mse = pred.iter().zip(targets).map(|(p, y)| (y - p).powi(2)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

pub fn mae(pred: &[f64], targets: &[f64]) -> Result<f64> {
    check_pair(pred, targets)?;
    Ok(pred.iter().zip(targets).map(|(p, y)| (y - p).abs()).sum::<f64>() / pred.len() as f64)
}

/// Fraction of targets with `lo ≤ y ≤ hi`.
pub fn coverage(intervals: &[(f64, f64)], targets: &[f64]) -> f64 {
    let inside = intervals
        .iter()
        .zip(targets)
        .filter(|&(&(lo, hi), &y)| lo <= y && y <= hi)
        .count();
    inside as f64 / targets.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityCurve {
    pub levels: Vec<f64>,
    pub observed: Vec<f64>,
}

impl ReliabilityCurve {
    pub fn ece(&self) -> f64 {
        ece(self)
    }

    /// Columns `level, expected, observed`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["level", "expected", "observed"])?;
        for (c, o) in self.levels.iter().zip(&self.observed) {
            w.write_record([c.to_string(), c.to_string(), o.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn reliability_curve(
    report: &UncertaintyReport,
    targets: &[f64],
    levels: &[f64],
    method: IntervalMethod,
) -> Result<ReliabilityCurve> {
    if report.is_empty() {
        return Err(Error::Data("empty uncertainty report".into()));
    }
    check_pair(&report.mu_eu, targets)?;
    if levels.is_empty() {
        return Err(Error::invalid("levels", "need at least one confidence level"));
    }
    let observed = levels
        .iter()
        .map(|&c| predictive_interval(report, c, method).map(|iv| coverage(&iv, targets)))
        .collect::<Result<_>>()?;
    Ok(ReliabilityCurve {
        levels: levels.to_vec(),
        observed,
    })
}

/// Expected calibration error in percent.
pub fn ece(curve: &ReliabilityCurve) -> f64 {
    let gap: f64 = curve.levels.iter().zip(&curve.observed).map(|(c, o)| (o - c).abs()).sum();
    100.0 * gap / curve.levels.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub n: usize,
    pub r2: f64,
    pub rmse: f64,
    pub mae: f64,
    /// Percent.
    pub ece: f64,
    /// Mean `√PU` in target units.
    pub mean_pu: f64,
    /// `mean_pu` divided by the standard deviation of the targets.
    pub norm_pu: f64,
    pub mean_au: f64,
    pub mean_var_eu: f64,
    pub reliability: ReliabilityCurve,
}

pub fn evaluate(
    report: &UncertaintyReport,
    targets: &[f64],
    levels: &[f64],
    method: IntervalMethod,
) -> Result<MetricBundle> {
    let curve = reliability_curve(report, targets, levels, method)?;
    let (_, target_std) = mean_std(targets);
    let mean_pu = report.mean_std_pu();
    let n = report.len() as f64;
    Ok(MetricBundle {
        n: report.len(),
        r2: r2(&report.mu_eu, targets)?,
        rmse: rmse(&report.mu_eu, targets)?,
        mae: mae(&report.mu_eu, targets)?,
        ece: curve.ece(),
        mean_pu,
        norm_pu: mean_pu / target_std,
        mean_au: report.au.iter().sum::<f64>() / n,
        mean_var_eu: report.var_eu.iter().sum::<f64>() / n,
        reliability: curve,
    })
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    let (mx, sx) = mean_std(xs);
    let (my, sy) = mean_std(ys);
    if sx == 0.0 || sy == 0.0 {
        return Err(Error::Data("correlation is undefined for a constant sequence".into()));
    }
    let cov = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.len() as f64;
    Ok(cov / (sx * sy))
}

/// Rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    pearson(&ranks(xs), &ranks(ys))
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn report(mu: Vec<f64>, pu: Vec<f64>) -> UncertaintyReport {
        UncertaintyReport::from_samples(vec![mu.clone(), mu], vec![pu.clone(), pu]).unwrap()
    }

    #[test]
    fn point_metrics() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(r2(&y, &y).unwrap(), 1.0);
        assert_eq!(r2(&[2.5; 4], &y).unwrap(), 0.0);
        assert_relative_eq!(rmse(&[0.0; 4], &y).unwrap(), (30.0f64 / 4.0).sqrt());
        assert_eq!(mae(&[0.0; 4], &y).unwrap(), 2.5);
        assert!(r2(&y, &[1.0; 4]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn infinite_and_zero_uncertainty() {
        let wide = report(vec![0.0; 3], vec![f64::INFINITY; 3]);
        let c = reliability_curve(&wide, &[5.0, -3.0, 1.0], &DEFAULT_LEVELS, IntervalMethod::Gaussian).unwrap();
        assert!(c.observed.iter().all(|&o| o == 1.0));
        assert_relative_eq!(ece(&c), 50.0, epsilon = 1e-12);

        let point = report(vec![0.0; 3], vec![0.0; 3]);
        for method in [IntervalMethod::Gaussian, IntervalMethod::Mixture] {
            let c = reliability_curve(&point, &[5.0, -3.0, 1.0], &DEFAULT_LEVELS, method).unwrap();
            assert!(c.observed.iter().all(|&o| o == 0.0));
        }
    }

    #[test]
    fn perfect_curve_has_zero_ece() {
        let c = ReliabilityCurve {
            levels: DEFAULT_LEVELS.to_vec(),
            observed: DEFAULT_LEVELS.to_vec(),
        };
        assert_eq!(ece(&c), 0.0);
    }

    #[test]
    fn empty_report_is_rejected() {
        let r = report(vec![], vec![]);
        assert!(reliability_curve(&r, &[], &DEFAULT_LEVELS, IntervalMethod::Gaussian).is_err());
    }

    #[test]
    fn reliability_csv() {
        let c = ReliabilityCurve {
            levels: vec![0.5],
            observed: vec![0.25],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        c.write_csv(&p).unwrap();
        assert_eq!(std::fs::read_to_string(p).unwrap(), "level,expected,observed\n0.5,0.5,0.25\n");
    }

    #[test]
    fn rank_correlation() {
        assert_relative_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 100.0, 1000.0]).unwrap(), 1.0);
        assert_relative_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn coverage_monotone_in_level(
            rows in prop::collection::vec((-5.0f64..5.0, 1e-3f64..4.0, -8.0f64..8.0), 1..40)
        ) {
            let r = report(rows.iter().map(|r| r.0).collect(), rows.iter().map(|r| r.1).collect());
            let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let c = reliability_curve(&r, &y, &DEFAULT_LEVELS, IntervalMethod::Gaussian).unwrap();
            prop_assert!(c.observed.windows(2).all(|w| w[0] <= w[1]));

            let scaled = report(r.mu_eu.clone(), r.pu.iter().map(|p| p * 2.0).collect());
            let s = reliability_curve(&scaled, &y, &DEFAULT_LEVELS, IntervalMethod::Gaussian).unwrap();
            prop_assert!(s.observed.iter().zip(&c.observed).all(|(a, b)| a >= b));
        }

        #[test]
        fn ece_ignores_order(
            rows in prop::collection::vec((-5.0f64..5.0, 1e-3f64..4.0, -8.0f64..8.0), 2..40),
            seed in any::<u64>()
        ) {
            use rand::seq::SliceRandom;
            let mut shuffled = rows.clone();
            shuffled.shuffle(&mut crate::rng::stream(seed, 0));
            let score = |rows: &[(f64, f64, f64)]| {
                let r = report(rows.iter().map(|r| r.0).collect(), rows.iter().map(|r| r.1).collect());
                let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
                ece(&reliability_curve(&r, &y, &DEFAULT_LEVELS, IntervalMethod::Gaussian).unwrap())
            };
            prop_assert!((score(&rows) - score(&shuffled)).abs() < 1e-9);
        }
    }
}
