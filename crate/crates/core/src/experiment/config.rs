use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, ShapError};
use crate::explainer::EstimatorKind;
use crate::predictors::{ForestTrainConfig, LogisticTrainConfig, MlpTrainConfig};
use crate::taylor::DjStrategy;
use crate::value::SamplingMode;
use crate::variance::VarianceMethod;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// The simulated block-covariance task.
    Sim { n_rows: usize },
    /// A CSV file with a header row; `label_column` holds the 0/1 target.
    Csv {
        path: PathBuf,
        label_column: String,
        #[serde(default)]
        groups_path: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Logistic(LogisticTrainConfig),
    Mlp(MlpTrainConfig),
    RandomForest(ForestTrainConfig),
    /// A model JSON file; no training.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub model: ModelSpec,
    pub estimator: EstimatorKind,
    pub mode: SamplingMode,
    /// Defaults to `ss_empirical` for Shapley sampling and `ks_least_squares`
    /// for KernelSHAP.
    pub variance: Option<VarianceMethod>,
    pub n_coalitions: usize,
    /// Defaults to 1 for Shapley sampling and 10 for KernelSHAP.
    pub samples_per_coalition: Option<usize>,
    pub n_repetitions: usize,
    pub n_query_points: usize,
    pub bootstrap_resamples: usize,
    pub groups: usize,
    /// Gaussian draws used to estimate `E[f(X)]` in correlated mode.
    pub n_reference: usize,
    /// Share of rows used for training and background; query points come
    /// from the rest.
    pub train_fraction: f64,
    /// Defaults to exact enumeration for `d <= 10`.
    pub dj_strategy: Option<DjStrategy>,
    pub dj_cache_dir: Option<PathBuf>,
    /// Features per point whose VarReduc median is reported.
    pub top_k: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Sim { n_rows: 2000 },
            model: ModelSpec::Logistic(LogisticTrainConfig::default()),
            estimator: EstimatorKind::ShapleySampling,
            mode: SamplingMode::Correlated,
            variance: None,
            n_coalitions: 1000,
            samples_per_coalition: None,
            n_repetitions: 50,
            n_query_points: 40,
            bootstrap_resamples: 200,
            groups: 20,
            n_reference: 10_000,
            train_fraction: 0.75,
            dj_strategy: None,
            dj_cache_dir: None,
            top_k: 5,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(std::fs::File::open(path)?)?)
    }

    pub fn variance_method(&self) -> VarianceMethod {
        self.variance.unwrap_or(match self.estimator {
            EstimatorKind::ShapleySampling => VarianceMethod::SsEmpirical,
            EstimatorKind::Kernelshap => VarianceMethod::KsLeastSquares,
        })
    }

    pub fn samples(&self) -> usize {
        self.samples_per_coalition.unwrap_or(match self.estimator {
            EstimatorKind::ShapleySampling => 1,
            EstimatorKind::Kernelshap => 10,
        })
    }

    pub fn dj_strategy_for(&self, d: usize) -> DjStrategy {
        self.dj_strategy
            .unwrap_or_else(|| DjStrategy::default_for(d, crate::rng::child_seed(self.seed, &[7])))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(ShapError::Configuration(msg.into()));
        if self.n_coalitions < 2 {
            return bad("n_coalitions must be at least 2");
        }
        if self.samples() == 0 || self.n_reference == 0 || self.top_k == 0 {
            return bad("samples_per_coalition, n_reference and top_k must be positive");
        }
        if self.n_repetitions < 2 {
            return bad("n_repetitions must be at least 2");
        }
        if self.n_query_points == 0 {
            return bad("n_query_points must be positive");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie strictly between 0 and 1");
        }
        if let DataSource::Sim { n_rows } = self.data {
            if n_rows < 4 {
                return bad("simulated data needs at least 4 rows");
            }
        }
        let ss = self.estimator == EstimatorKind::ShapleySampling;
        if ss != (self.variance_method() == VarianceMethod::SsEmpirical) {
            return bad("variance method does not match the estimator");
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_estimator() {
        let mut c = ExperimentConfig::default();
        assert_eq!(c.samples(), 1);
        assert_eq!(c.variance_method(), VarianceMethod::SsEmpirical);
        c.estimator = EstimatorKind::Kernelshap;
        assert_eq!(c.samples(), 10);
        assert_eq!(c.variance_method(), VarianceMethod::KsLeastSquares);
        assert!(c.validate().is_ok());
        c.variance = Some(VarianceMethod::SsEmpirical);
        assert!(c.validate().is_err());
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c: ExperimentConfig =
            serde_json::from_str(r#"{"estimator": "kernelshap", "mode": "independent", "seed": 9}"#).unwrap();
        assert_eq!(c.n_coalitions, 1000);
        assert_eq!(c.seed, 9);
        assert_eq!(c.mode, SamplingMode::Independent);
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }
}
