use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::experiment::config::ExperimentConfig;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub master_seed: u64,
    pub feature_names: Vec<String>,
    /// Order of the Taylor surrogate (2 independent, 1 correlated).
    pub surrogate_order: usize,
    /// How features are ranked for rank changes and top-k selection.
    pub rank_key: String,
    pub derivatives: String,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub dj_cache_key: Option<String>,
    pub dj_exact: Option<bool>,
    pub dj_n_permutations: Option<usize>,
    pub v_empty_model: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    /// Row of the held-out set used as the query point.
    pub row: usize,
    pub x: Vec<f64>,
    pub error: Option<String>,
    pub f_x: f64,
    /// `repetition × feature` estimates without and with the correction.
    pub raw: Vec<Vec<f64>>,
    pub cv: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    pub anticipated_rho2: Vec<Vec<f64>>,
    /// Exact Shapley values of the surrogate, per repetition.
    pub exact_approx: Vec<Vec<f64>>,
    pub var_reduc: Vec<Option<f64>>,
    /// Mean over repetitions of the anticipated reduction.
    pub mean_anticipated_rho2: Vec<f64>,
    pub rank_changes_raw: Option<f64>,
    pub rank_changes_cv: Option<f64>,
    pub rank_change_reduction: Option<f64>,
    pub efficiency_gap_raw: Vec<f64>,
    pub efficiency_gap_cv: Vec<f64>,
    pub top_features: Vec<usize>,
    /// Median VarReduc over `top_features`.
    pub top_k_var_reduc: Option<f64>,
    pub hessian_excluded: Vec<usize>,
}

impl PointReport {
    pub fn failed(row: usize, x: Vec<f64>, error: String) -> Self {
        Self {
            row,
            x,
            error: Some(error),
            f_x: 0.0,
            raw: Vec::new(),
            cv: Vec::new(),
            alpha: Vec::new(),
            anticipated_rho2: Vec::new(),
            exact_approx: Vec::new(),
            var_reduc: Vec::new(),
            mean_anticipated_rho2: Vec::new(),
            rank_changes_raw: None,
            rank_changes_cv: None,
            rank_change_reduction: None,
            efficiency_gap_raw: Vec::new(),
            efficiency_gap_cv: Vec::new(),
            top_features: Vec::new(),
            top_k_var_reduc: None,
            hessian_excluded: Vec::new(),
        }
    }

    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub n_points_ok: usize,
    pub n_points_failed: usize,
    /// Mean over points of the top-k median VarReduc.
    pub mean_top_k_var_reduc: Option<f64>,
    /// Mean over points of the relative reduction in rank changes.
    pub mean_rank_change_reduction: Option<f64>,
    pub median_efficiency_gap_raw: Option<f64>,
    pub median_efficiency_gap_cv: Option<f64>,
    /// Median over points and features of `|mean ρ̂² − VarReduc|`.
    pub median_rho2_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub metadata: ReportMetadata,
    pub summary: ReportSummary,
    pub points: Vec<PointReport>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn all_points_succeeded(&self) -> bool {
        self.points.iter().all(PointReport::succeeded)
    }

    /// One row per successful point and feature.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "row",
            "feature",
            "name",
            "mean_raw",
            "mean_cv",
            "var_raw",
            "var_cv",
            "var_reduc",
            "anticipated_rho2",
            "top_k",
        ])?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in self.points.iter().filter(|p| p.succeeded()) {
            let d = p.var_reduc.len();
            for j in 0..d {
                let raw: Vec<f64> = p.raw.iter().map(|r| r[j]).collect();
                let cv: Vec<f64> = p.cv.iter().map(|r| r[j]).collect();
                let name = self.metadata.feature_names.get(j).cloned().unwrap_or_default();
                w.write_record([
                    p.row.to_string(),
                    j.to_string(),
                    name,
                    fmt(super::metrics::mean(&raw)),
                    fmt(super::metrics::mean(&cv)),
                    super::metrics::sample_variance(&raw).to_string(),
                    super::metrics::sample_variance(&cv).to_string(),
                    fmt(p.var_reduc[j]),
                    p.mean_anticipated_rho2[j].to_string(),
                    p.top_features.contains(&j).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Plain-text summary for terminals.
    pub fn render_summary(&self) -> String {
        let s = &self.summary;
        let c = &self.metadata.config;
        let pct = |v: Option<f64>| v.map(|x| format!("{:.1}%", 100.0 * x)).unwrap_or_else(|| "n/a".into());
        let num = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
        format!(
            "estimator: {:?}, mode: {:?}, variance: {:?}\n\
             points: {} ok, {} failed\n\
             top-{} median VarReduc (mean over points): {}\n\
             rank-change reduction (mean over points): {}\n\
             median efficiency gap: raw {}, cv {}\n\
             median |rho2 - VarReduc|: {}\n",
            c.estimator,
            c.mode,
            c.variance_method(),
            s.n_points_ok,
            s.n_points_failed,
            c.top_k,
            pct(s.mean_top_k_var_reduc),
            pct(s.mean_rank_change_reduction),
            num(s.median_efficiency_gap_raw),
            num(s.median_efficiency_gap_cv),
            num(s.median_rho2_gap),
        )
    }
}
