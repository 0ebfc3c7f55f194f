use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, FeatureKind, Sample};
use super::trainer::{predict_all, EpochRecord};
use crate::error::{Error, Result};
use crate::neural::{NetworkParams, TARGET_AMPLIFICATION};

pub const DEFAULT_FIT_DEGREE: usize = 3;

/// Percent drift from amplified network units.
pub fn amplified_to_percent(v: f64) -> f64 {
    v / TARGET_AMPLIFICATION * 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub id: String,
    pub truth_pct: f64,
    pub pred_pct: f64,
    pub abs_error_pct: f64,
}

/// Test-set metrics for one feature kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub feature: FeatureKind,
    pub n_samples: usize,
    /// Mean absolute error in percent drift.
    pub mae_pct: f64,
    /// Same error in amplified network units.
    pub mae_amplified: f64,
    /// Least-squares polynomial of |error| against truth (both percent), lowest order first.
    pub fit_coeffs: Vec<f64>,
    pub points: Vec<ScatterPoint>,
    /// Wall-clock seconds; kept out of serialized reports so they stay reproducible.
    #[serde(skip)]
    pub runtime_s: f64,
}

/// Least-squares polynomial coefficients, lowest order first. The degree drops to
/// `n - 1` when there are too few points.
pub fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Result<Vec<f64>> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::ShapeMismatch("polyfit needs equal, non-empty inputs".into()));
    }
    let deg = degree.min(x.len() - 1);
    let a = DMatrix::from_fn(x.len(), deg + 1, |i, j| x[i].powi(j as i32));
    let b = DVector::from_column_slice(y);
    let coeffs = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::InvalidArgument(format!("polyfit failed: {e}")))?;
    Ok(coeffs.iter().copied().collect())
}

pub fn polyval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Build a report from amplified predictions and targets.
pub fn report_from_predictions(
    feature: FeatureKind,
    ids: &[String],
    pred: &[f64],
    targets: &[f64],
    fit_degree: usize,
) -> Result<EvalReport> {
    if pred.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty test set".into()));
    }
    if pred.len() != targets.len() || ids.len() != pred.len() {
        return Err(Error::ShapeMismatch("ids, predictions and targets differ in length".into()));
    }
    let points: Vec<ScatterPoint> = ids
        .iter()
        .zip(pred.iter().zip(targets))
        .map(|(id, (&p, &t))| ScatterPoint {
            id: id.clone(),
            truth_pct: amplified_to_percent(t),
            pred_pct: amplified_to_percent(p),
            abs_error_pct: amplified_to_percent((p - t).abs()),
        })
        .collect();
    let n = points.len() as f64;
    let mae_amplified = pred.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let mae_pct = points.iter().map(|p| p.abs_error_pct).sum::<f64>() / n;
    let via_units = mae_amplified * 10.0;
    if (mae_pct - via_units).abs() > 1e-12 * via_units.max(1.0) {
        return Err(Error::Divergence {
            location: format!("MAE unit conversion ({mae_pct} vs {via_units})"),
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.truth_pct).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.abs_error_pct).collect();
    Ok(EvalReport {
        feature,
        n_samples: points.len(),
        mae_pct,
        mae_amplified,
        fit_coeffs: polyfit(&xs, &ys, fit_degree)?,
        points,
        runtime_s: 0.0,
    })
}

pub fn evaluate(params: &NetworkParams, test: &Dataset, fit_degree: usize) -> Result<EvalReport> {
    let start = std::time::Instant::now();
    if test.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty test set".into()));
    }
    let refs: Vec<&Sample> = test.samples().iter().collect();
    let pred = predict_all(params, &refs)?;
    let targets: Vec<f64> = refs.iter().map(|s| s.target()).collect();
    let ids: Vec<String> = refs.iter().map(|s| s.id.clone()).collect();
    let mut r = report_from_predictions(test.kind(), &ids, &pred, &targets, fit_degree)?;
    r.runtime_s = start.elapsed().as_secs_f64();
    Ok(r)
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["epoch", "train_mae", "val_mae"]).map_err(|e| Error::csv(path, e))?;
    for h in history {
        w.write_record([h.epoch.to_string(), h.train_mae.to_string(), h.val_mae.to_string()])
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_history_csv(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::csv(path, e)))
        .collect()
}

pub fn write_scatter_csv(path: &Path, points: &[ScatterPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for p in points {
        w.serialize(p).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scatter_csv(path: &Path) -> Result<Vec<ScatterPoint>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::csv(path, e)))
        .collect()
}

fn nice_max(v: f64) -> f64 {
    if !(v > 0.0) {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&c| c >= v)
        .unwrap_or(10.0 * mag)
}

/// Absolute error against true drift with the fitted polynomial overlaid.
pub fn scatter_svg(report: &EvalReport) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const L: f64 = 70.0;
    const R: f64 = 20.0;
    const T: f64 = 40.0;
    const B: f64 = 60.0;
    let x_max = nice_max(report.points.iter().map(|p| p.truth_pct).fold(0.0, f64::max));
    let y_max = nice_max(report.points.iter().map(|p| p.abs_error_pct).fold(0.0, f64::max));
    let px = |x: f64| L + x / x_max * (W - L - R);
    let py = |y: f64| H - B - (y / y_max).clamp(0.0, 1.0) * (H - T - B);

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    s.push_str(&format!("<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{} (MAE {:.4}%)</text>\n",
        W / 2.0,
        report.feature.as_str().to_uppercase(),
        report.mae_pct
    ));
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let (gx, gy) = (px(f * x_max), py(f * y_max));
        s.push_str(&format!(
            "<line x1=\"{gx:.2}\" y1=\"{:.2}\" x2=\"{gx:.2}\" y2=\"{:.2}\" stroke=\"#ddd\"/>\n",
            T,
            H - B
        ));
        s.push_str(&format!(
            "<line x1=\"{L}\" y1=\"{gy:.2}\" x2=\"{:.2}\" y2=\"{gy:.2}\" stroke=\"#ddd\"/>\n",
            W - R
        ));
        s.push_str(&format!(
            "<text x=\"{gx:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            H - B + 18.0,
            trim_label(f * x_max)
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
            L - 6.0,
            gy + 4.0,
            trim_label(f * y_max)
        ));
    }
    s.push_str(&format!(
        "<rect x=\"{L}\" y=\"{T}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        W - L - R,
        H - T - B
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">True drift ratio (%)</text>\n",
        (L + W - R) / 2.0,
        H - 16.0
    ));
    s.push_str(&format!(
        "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">Absolute error (%)</text>\n",
        (T + H - B) / 2.0,
        (T + H - B) / 2.0
    ));
    s.push_str("<g fill=\"#1f77b4\" fill-opacity=\"0.6\">\n");
    for p in &report.points {
        s.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\"/>\n",
            px(p.truth_pct),
            py(p.abs_error_pct)
        ));
    }
    s.push_str("</g>\n");
    let path: Vec<String> = (0..=100)
        .map(|i| {
            let x = x_max * i as f64 / 100.0;
            format!("{:.2},{:.2}", px(x), py(polyval(&report.fit_coeffs, x)))
        })
        .collect();
    s.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\" points=\"{}\"/>\n",
        path.join(" ")
    ));
    s.push_str("</svg>\n");
    s
}

fn trim_label(v: f64) -> String {
    let t = format!("{v:.3}");
    t.trim_end_matches('0').trim_end_matches('.').to_string()
}

pub fn write_scatter_svg(path: &Path, report: &EvalReport) -> Result<()> {
    fs::write(path, scatter_svg(report)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("e{i}")).collect()
    }

    #[test]
    fn perfect_predictor_scores_zero() {
        let t = [0.1, 0.25, 0.6, 0.9];
        let r = report_from_predictions(FeatureKind::Mfb, &ids(4), &t, &t, 3).unwrap();
        assert_eq!(r.mae_pct, 0.0);
        assert!(r.points.iter().all(|p| p.abs_error_pct == 0.0));
    }

    #[test]
    fn constant_half_predictor_by_hand() {
        // drift fractions 0.01, 0.03, 0.08 -> amplified 0.1, 0.3, 0.8
        // |0.5 - y| = 0.4, 0.2, 0.3 -> mean 0.3 amplified -> 3% drift
        let targets = [0.1, 0.3, 0.8];
        let r = report_from_predictions(FeatureKind::Mfcc, &ids(3), &[0.5; 3], &targets, 3).unwrap();
        assert!((r.mae_amplified - 0.3).abs() < 1e-15);
        assert!((r.mae_pct - 3.0).abs() < 1e-12);
        let mean: f64 = r.points.iter().map(|p| p.abs_error_pct).sum::<f64>() / 3.0;
        assert!((r.mae_pct - mean).abs() <= 1e-12);
    }

    #[test]
    fn empty_set_rejected() {
        assert!(report_from_predictions(FeatureKind::Mfb, &[], &[], &[], 3).is_err());
    }

    #[test]
    fn polyfit_recovers_cubic() {
        let c = [0.5, -1.0, 0.25, 0.125];
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.3 - 2.0).collect();
        let y: Vec<f64> = x.iter().map(|&v| polyval(&c, v)).collect();
        let fit = polyfit(&x, &y, 3).unwrap();
        for (a, b) in fit.iter().zip(c) {
            assert!((a - b).abs() < 1e-10);
        }
        assert_eq!(polyfit(&[1.0, 2.0], &[3.0, 5.0], 3).unwrap().len(), 2);
    }

    #[test]
    fn csv_round_trips_and_mae_recomputes() {
        let dir = tempdir().unwrap();
        let r = report_from_predictions(
            FeatureKind::Intensity,
            &ids(5),
            &[0.1, 0.2, 0.35, 0.41, 0.5],
            &[0.12, 0.18, 0.3, 0.5, 0.5],
            3,
        )
        .unwrap();
        let p = dir.path().join("scatter.csv");
        write_scatter_csv(&p, &r.points).unwrap();
        let back = read_scatter_csv(&p).unwrap();
        assert_eq!(back, r.points);
        let mae = back.iter().map(|p| p.abs_error_pct).sum::<f64>() / back.len() as f64;
        assert_eq!(mae, r.mae_pct);

        let h = vec![
            EpochRecord { epoch: 1, train_mae: 0.3, val_mae: 0.25 },
            EpochRecord { epoch: 2, train_mae: 0.2, val_mae: 0.21 },
        ];
        let hp = dir.path().join("history.csv");
        write_history_csv(&hp, &h).unwrap();
        assert!(fs::read_to_string(&hp).unwrap().starts_with("epoch,train_mae,val_mae\n"));
        assert_eq!(read_history_csv(&hp).unwrap(), h);
    }

    #[test]
    fn svg_has_one_marker_per_point() {
        let r = report_from_predictions(FeatureKind::Mfb, &ids(4), &[0.1, 0.2, 0.3, 0.4], &[0.2, 0.2, 0.1, 0.5], 3)
            .unwrap();
        let svg = scatter_svg(&r);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<circle").count(), 4);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(!svg.contains("NaN"));
    }
}
