//! Heart-rate agreement metrics and Bland-Altman data.

use std::fmt::Write as _;

use crate::error::{Error, Result};

fn check_pairs(gt: &[f64], pred: &[f64]) -> Result<()> {
    if gt.len() != pred.len() {
        return Err(Error::invalid(format!("{} ground-truth values vs {} predictions", gt.len(), pred.len())));
    }
    if gt.is_empty() {
        return Err(Error::InsufficientData("no samples".into()));
    }
    if gt.iter().chain(pred).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "metrics" });
    }
    Ok(())
}

fn mean(x: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = x.len() as f64;
    x.sum::<f64>() / n
}

pub fn mae(gt: &[f64], pred: &[f64]) -> Result<f64> {
    check_pairs(gt, pred)?;
    Ok(mean(gt.iter().zip(pred).map(|(g, p)| (g - p).abs())))
}

pub fn rmse(gt: &[f64], pred: &[f64]) -> Result<f64> {
    check_pairs(gt, pred)?;
    Ok(mean(gt.iter().zip(pred).map(|(g, p)| (g - p).powi(2))).sqrt())
}

/// Mean absolute percentage error as a fraction.
pub fn mape(gt: &[f64], pred: &[f64]) -> Result<f64> {
    check_pairs(gt, pred)?;
    if gt.contains(&0.0) {
        return Err(Error::invalid("MAPE undefined: zero ground-truth value"));
    }
    Ok(mean(gt.iter().zip(pred).map(|(g, p)| ((g - p) / g).abs())))
}

pub fn pearson_r(gt: &[f64], pred: &[f64]) -> Result<f64> {
    check_pairs(gt, pred)?;
    if gt.len() < 2 {
        return Err(Error::InsufficientData("Pearson r needs at least 2 samples".into()));
    }
    let mg = mean(gt.iter().copied());
    let mp = mean(pred.iter().copied());
    let (mut sgp, mut sgg, mut spp) = (0.0, 0.0, 0.0);
    for (g, p) in gt.iter().zip(pred) {
        let (dg, dp) = (g - mg, p - mp);
        sgp += dg * dp;
        sgg += dg * dg;
        spp += dp * dp;
    }
    if sgg == 0.0 || spp == 0.0 {
        return Err(Error::invalid("Pearson r undefined: zero variance"));
    }
    Ok((sgp / (sgg.sqrt() * spp.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlandAltman {
    pub bias: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    /// Per sample `(mean of the pair, pred - gt)`.
    pub points: Vec<(f64, f64)>,
}

/// Bias and 95% limits of agreement, `bias +- 1.96 sd`, with the population
/// standard deviation of the differences.
pub fn bland_altman(gt: &[f64], pred: &[f64]) -> Result<BlandAltman> {
    check_pairs(gt, pred)?;
    if gt.len() < 2 {
        return Err(Error::InsufficientData("Bland-Altman needs at least 2 samples".into()));
    }
    let points: Vec<(f64, f64)> = gt.iter().zip(pred).map(|(g, p)| ((g + p) / 2.0, p - g)).collect();
    let bias = mean(points.iter().map(|p| p.1));
    let sd = mean(points.iter().map(|p| (p.1 - bias).powi(2))).sqrt();
    Ok(BlandAltman {
        bias,
        loa_low: bias - 1.96 * sd,
        loa_high: bias + 1.96 * sd,
        points,
    })
}

impl BlandAltman {
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# bias={}\n# loa_low={}\n# loa_high={}\nmean,diff\n",
            self.bias, self.loa_low, self.loa_high
        );
        for (m, d) in &self.points {
            let _ = writeln!(s, "{m},{d}");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub source_id: String,
    pub gt_bpm: f64,
    pub pred_bpm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    /// Fraction, not percent.
    pub mape: f64,
    /// `None` when either side has zero variance.
    pub pearson_r: Option<f64>,
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    /// Rows are sorted by source id.
    pub fn new(mut rows: Vec<MetricsRow>) -> Result<Self> {
        rows.sort_by(|a, b| a.source_id.cmp(&b.source_id));
        let gt: Vec<f64> = rows.iter().map(|r| r.gt_bpm).collect();
        let pred: Vec<f64> = rows.iter().map(|r| r.pred_bpm).collect();
        Ok(MetricsReport {
            n: rows.len(),
            mae: mae(&gt, &pred)?,
            rmse: rmse(&gt, &pred)?,
            mape: mape(&gt, &pred)?,
            pearson_r: pearson_r(&gt, &pred).ok(),
            rows,
        })
    }

    pub fn gt(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.gt_bpm).collect()
    }

    pub fn pred(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.pred_bpm).collect()
    }

    /// `source_id,gt_bpm,pred_bpm` rows followed by a `#` summary line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("source_id,gt_bpm,pred_bpm\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{}", r.source_id, r.gt_bpm, r.pred_bpm);
        }
        let r = self.pearson_r.map_or("nan".to_string(), |v| v.to_string());
        let _ = writeln!(
            s,
            "# summary n={} mae={} rmse={} mape_pct={} pearson_r={r}",
            self.n,
            self.mae,
            self.rmse,
            100.0 * self.mape
        );
        s
    }
}
