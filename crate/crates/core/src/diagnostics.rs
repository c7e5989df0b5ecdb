//! Projection metrics and emulator validation diagnostics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::calibrate::quantile_sorted;
use crate::grid::Grid;
use crate::scalar::{to_f64, Real};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("grids differ in geometry")]
    GeometryMismatch,
    #[error("observation has no flooded cell or zero total depth")]
    NoObservedFlood,
    #[error("predictive covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("reference distribution needs positive degrees of freedom, got {0}")]
    NonPositiveDf(i64),
}

pub fn rmse<T: Real>(pred: &[T], obs: &[T]) -> Result<f64, DiagnosticsError> {
    if pred.len() != obs.len() {
        return Err(DiagnosticsError::LengthMismatch(pred.len(), obs.len()));
    }
    if pred.is_empty() {
        return Err(DiagnosticsError::EmptyInput);
    }
    let ss: f64 = pred.iter().zip(obs).map(|(&p, &o)| to_f64(p - o).powi(2)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// `RMSE_MR - RMSE_HR`; negative favors the multiresolution emulator.
pub fn d_mr_hr(rmse_mr: f64, rmse_hr: f64) -> f64 {
    rmse_mr - rmse_hr
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub percent_bias: f64,
    pub fit: f64,
    pub correctness: f64,
    /// Observed flooded cells.
    pub a_r: usize,
    /// Predicted flooded cells.
    pub a_m: usize,
    /// Cells flooded in both.
    pub a_rm: usize,
    pub n_cells: usize,
}

impl MetricReport {
    /// Fixed-width text table, one metric per line.
    pub fn table(&self) -> String {
        format!(
            "metric        value\nrmse          {:.6}\npercent_bias  {:.6}\nfit           {:.6}\ncorrectness   {:.6}\nA_r           {}\nA_m           {}\nA_rm          {}\ncells         {}\n",
            self.rmse, self.percent_bias, self.fit, self.correctness, self.a_r, self.a_m, self.a_rm, self.n_cells
        )
    }
}

/// Flood-extent and depth metrics over cells valid in both grids. A cell is
/// flooded when its depth exceeds `flood_threshold`.
pub fn extent_metrics<T: Real>(pred: &Grid<T>, obs: &Grid<T>, flood_threshold: f64) -> Result<MetricReport, DiagnosticsError> {
    if pred.geometry() != obs.geometry() {
        return Err(DiagnosticsError::GeometryMismatch);
    }
    let (mut a_r, mut a_m, mut a_rm, mut n) = (0, 0, 0, 0);
    let (mut sum_diff, mut sum_obs, mut ss) = (0.0, 0.0, 0.0);
    for i in 0..pred.values().len() {
        if pred.nodata_mask()[i] || obs.nodata_mask()[i] {
            continue;
        }
        let p = to_f64(pred.values()[i]);
        let z = to_f64(obs.values()[i]);
        n += 1;
        sum_diff += p - z;
        sum_obs += z;
        ss += (p - z) * (p - z);
        let (fp, fz) = (p > flood_threshold, z > flood_threshold);
        a_m += usize::from(fp);
        a_r += usize::from(fz);
        a_rm += usize::from(fp && fz);
    }
    if n == 0 {
        return Err(DiagnosticsError::EmptyInput);
    }
    if a_r == 0 || !(sum_obs > 0.0) {
        return Err(DiagnosticsError::NoObservedFlood);
    }
    Ok(MetricReport {
        rmse: (ss / n as f64).sqrt(),
        percent_bias: 100.0 * sum_diff / sum_obs,
        fit: a_rm as f64 / (a_r + a_m - a_rm) as f64,
        correctness: a_rm as f64 / a_r as f64,
        a_r,
        a_m,
        a_rm,
        n_cells: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UspeReport {
    /// Standardized errors in point order.
    pub uspe: Vec<f64>,
    pub df: usize,
    /// `(empirical quantile, reference quantile)` sorted ascending.
    pub qq: Vec<(f64, f64)>,
}

impl UspeReport {
    /// Fraction of `|u|` beyond the two-sided `1 - alpha` reference critical value.
    pub fn exceedance_rate(&self, alpha: f64) -> f64 {
        let crit = StudentsT::new(0.0, 1.0, self.df as f64).expect("df > 0").inverse_cdf(1.0 - alpha / 2.0);
        self.uspe.iter().filter(|u| u.abs() > crit).count() as f64 / self.uspe.len().max(1) as f64
    }

    pub fn qq_csv(&self) -> String {
        let mut s = String::from("empirical,theoretical\n");
        for (e, t) in &self.qq {
            s.push_str(&format!("{e},{t}\n"));
        }
        s
    }
}

/// Whitened prediction errors `u = L^{-1} (y - m)` with `L` the lower
/// Cholesky factor of `cov` in the given point order, paired with Student-t
/// quantiles at plotting positions `(i - 0.5) / n`, `df = n - n_mean_params`.
pub fn uspe<T: Real>(y: &DVector<T>, mean: &DVector<T>, cov: &DMatrix<T>, n_mean_params: usize) -> Result<UspeReport, DiagnosticsError> {
    let n = y.len();
    if n == 0 {
        return Err(DiagnosticsError::EmptyInput);
    }
    if mean.len() != n || cov.nrows() != n || cov.ncols() != n {
        return Err(DiagnosticsError::LengthMismatch(n, mean.len().min(cov.nrows())));
    }
    let df = n as i64 - n_mean_params as i64;
    if df <= 0 {
        return Err(DiagnosticsError::NonPositiveDf(df));
    }
    let chol = cov.clone().cholesky().ok_or(DiagnosticsError::NotPositiveDefinite)?;
    let u = chol.l_dirty().solve_lower_triangular(&(y - mean)).ok_or(DiagnosticsError::NotPositiveDefinite)?;
    let uspe: Vec<f64> = u.iter().map(|&v| to_f64(v)).collect();
    let mut sorted = uspe.clone();
    sorted.sort_by(f64::total_cmp);
    let t = StudentsT::new(0.0, 1.0, df as f64).expect("df > 0");
    let qq = sorted.iter().enumerate().map(|(i, &e)| (e, t.inverse_cdf((i as f64 + 0.5) / n as f64))).collect();
    Ok(UspeReport { uspe, df: df as usize, qq })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuartileSummary {
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
}

impl QuartileSummary {
    pub const HEADER: &'static str = "Q1 Median Mean Q3";

    pub fn row(&self) -> String {
        format!("{:.3} {:.3} {:.3} {:.3}", self.q1, self.median, self.mean, self.q3)
    }
}

/// Quartiles (linear interpolation) and mean of `D_MR-HR` values.
pub fn summarize_d(values: &[f64]) -> Result<QuartileSummary, DiagnosticsError> {
    if values.is_empty() {
        return Err(DiagnosticsError::EmptyInput);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(QuartileSummary {
        q1: quantile_sorted(&v, 0.25),
        median: quantile_sorted(&v, 0.5),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        q3: quantile_sorted(&v, 0.75),
    })
}
