use rand::seq::{index::sample, SliceRandom};

use crate::error::{Result, ShapError};
use crate::experiment::config::{DataSource, ExperimentConfig, ModelSpec};
use crate::experiment::metrics::{
    efficiency_gap, mean, median, rank_changes, relative_reduction, top_k_features, var_reduc,
};
use crate::experiment::report::{
    ExperimentReport, PointReport, ReportMetadata, ReportSummary, REPORT_SCHEMA_VERSION,
};
use crate::experiment::sim::generate_sim_dataset;
use crate::explainer::{surrogate_order, Explainer, ExplainerConfig, Explanation};
use crate::predictors::{
    train_logistic, train_mlp, train_random_forest, FiniteDifferenceConfig, ForestTrainConfig, MlpTrainConfig, Model,
};
use crate::rng::{child_rng, child_seed};
use crate::taylor::{load_or_compute_dj, DerivativeSource, DjPrecompute};
use crate::types::{Dataset, FeatureMoments, Predictor};
use crate::value::SamplingMode;

// Stream tags for child seeds derived from the master seed.
const DATA_STREAM: u64 = 3;
const MODEL_STREAM: u64 = 4;
const SPLIT_STREAM: u64 = 5;
const QUERY_STREAM: u64 = 6;
const REFERENCE_STREAM: u64 = 8;
const CELL_STREAM: u64 = 11;

/// Data, trained model and query-independent precomputation for a run.
pub struct ExperimentSetup {
    pub train: Dataset,
    pub test: Dataset,
    pub model: Model,
    /// Sample moments of the training rows.
    pub moments: FeatureMoments,
    pub dj: Option<(DjPrecompute, String)>,
    pub derivatives: DerivativeSource,
    /// Held-out rows used as query points.
    pub query_rows: Vec<usize>,
}

fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Vec<f64>)> {
    match &cfg.data {
        DataSource::Sim { n_rows } => {
            let sim = generate_sim_dataset(*n_rows, child_seed(cfg.seed, &[DATA_STREAM]))?;
            Ok((sim.data, sim.labels))
        }
        DataSource::Csv {
            path,
            label_column,
            groups_path,
        } => Dataset::from_csv(path, groups_path.as_deref())?.split_column(label_column),
    }
}

fn train_model(spec: &ModelSpec, data: &Dataset, labels: &[f64], seed: u64) -> Result<Model> {
    let model = match spec {
        ModelSpec::Logistic(c) => Model::Logistic(train_logistic(data, labels, c)?),
        ModelSpec::Mlp(c) => Model::Mlp(train_mlp(data, labels, &MlpTrainConfig { seed, ..*c })?),
        ModelSpec::RandomForest(c) => {
            Model::TreeEnsemble(train_random_forest(data, labels, &ForestTrainConfig { seed, ..*c })?)
        }
        ModelSpec::File { path } => Model::load_json(path)?,
    };
    if model.n_features() != data.n_features() {
        return Err(ShapError::Dimension {
            expected: data.n_features(),
            found: model.n_features(),
        });
    }
    Ok(model)
}

/// Analytic derivatives when the model has them (to the order the mode
/// needs), otherwise finite differences with marginal-SD steps.
fn choose_derivatives(model: &Model, train: &Dataset, mode: SamplingMode) -> DerivativeSource {
    let probe = train.row(0);
    let has_grad = model.gradient(&probe).is_some();
    let has_hess = model.hessian(&probe).is_some();
    if has_grad && (surrogate_order(mode) == 1 || has_hess) {
        DerivativeSource::Analytic
    } else {
        DerivativeSource::FiniteDifference(FiniteDifferenceConfig::from_dataset(train))
    }
}

/// Loads and splits the data, trains the model, and precomputes `D_j` in
/// correlated mode (through the cache directory when configured).
pub fn setup_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSetup> {
    cfg.validate()?;
    let (data, labels) = load_data(cfg)?;
    let n = data.n_rows();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut child_rng(cfg.seed, &[SPLIT_STREAM]));
    let n_train = ((n as f64 * cfg.train_fraction).round() as usize).clamp(2, n.saturating_sub(1));
    let (train_idx, test_idx) = order.split_at(n_train);
    if test_idx.len() < cfg.n_query_points {
        return Err(ShapError::Configuration(format!(
            "{} held-out rows cannot supply {} query points",
            test_idx.len(),
            cfg.n_query_points
        )));
    }
    let train = data.select_rows(train_idx)?;
    let test = data.select_rows(test_idx)?;
    let train_labels: Vec<f64> = train_idx.iter().map(|&i| labels[i]).collect();
    log::info!("training {:?} model on {} rows", model_kind(&cfg.model), train.n_rows());
    let model = train_model(&cfg.model, &train, &train_labels, child_seed(cfg.seed, &[MODEL_STREAM]))?;
    let moments = train.moments()?;
    let dj = match cfg.mode {
        SamplingMode::Correlated => {
            let strategy = cfg.dj_strategy_for(moments.dim());
            Some(load_or_compute_dj(&moments, &strategy, cfg.dj_cache_dir.as_deref())?)
        }
        SamplingMode::Independent => None,
    };
    let derivatives = choose_derivatives(&model, &train, cfg.mode);
    let mut query_rows =
        sample(&mut child_rng(cfg.seed, &[QUERY_STREAM]), test.n_rows(), cfg.n_query_points).into_vec();
    query_rows.sort_unstable();
    Ok(ExperimentSetup {
        train,
        test,
        model,
        moments,
        dj,
        derivatives,
        query_rows,
    })
}

fn model_kind(spec: &ModelSpec) -> &'static str {
    match spec {
        ModelSpec::Logistic(_) => "logistic",
        ModelSpec::Mlp(_) => "mlp",
        ModelSpec::RandomForest(_) => "random_forest",
        ModelSpec::File { .. } => "file",
    }
}

impl ExperimentSetup {
    pub fn explainer_config(&self, cfg: &ExperimentConfig) -> ExplainerConfig {
        ExplainerConfig {
            estimator: cfg.estimator,
            mode: cfg.mode,
            variance: cfg.variance_method(),
            n_coalitions: cfg.n_coalitions,
            samples_per_coalition: cfg.samples(),
            bootstrap_resamples: cfg.bootstrap_resamples,
            groups: cfg.groups,
            n_reference: cfg.n_reference,
            reference_seed: child_seed(cfg.seed, &[REFERENCE_STREAM]),
        }
    }

    pub fn explainer(&self, cfg: &ExplainerConfig) -> Result<Explainer<'_>> {
        Explainer::new(
            &self.model,
            Some(&self.train),
            Some(self.moments.clone()),
            self.dj.as_ref().map(|(dj, _)| dj.clone()),
            self.derivatives.clone(),
            *cfg,
        )
    }

    pub fn query_point(&self, i: usize) -> Vec<f64> {
        self.test.row(self.query_rows[i])
    }
}

/// Seed of the `(point, repetition)` cell.
pub fn cell_seed(master: u64, point: usize, rep: usize) -> u64 {
    child_seed(master, &[CELL_STREAM, point as u64, rep as u64])
}

/// Metrics for one query point from its repeated explanations.
pub fn summarize_point(row: usize, x: Vec<f64>, runs: &[Explanation], top_k: usize) -> Result<PointReport> {
    let raw: Vec<Vec<f64>> = runs.iter().map(|e| e.estimate.phi_model.as_slice().to_vec()).collect();
    let cv: Vec<Vec<f64>> = runs.iter().map(|e| e.estimate.phi_cv.as_slice().to_vec()).collect();
    let rho: Vec<Vec<f64>> = runs
        .iter()
        .map(|e| e.estimate.anticipated_rho2.as_slice().to_vec())
        .collect();
    let d = raw.first().map(Vec::len).unwrap_or(0);
    let vr = var_reduc(&raw, &cv)?;
    let mean_raw: Vec<f64> = (0..d)
        .map(|j| mean(&raw.iter().map(|r| r[j]).collect::<Vec<_>>()).unwrap_or(0.0))
        .collect();
    let top = top_k_features(&mean_raw, top_k);
    let top_vr: Vec<f64> = top.iter().filter_map(|&j| vr[j]).collect();
    let rc_raw = rank_changes(&raw)?;
    let rc_cv = rank_changes(&cv)?;
    let first = &runs[0];
    Ok(PointReport {
        row,
        x,
        error: None,
        f_x: first.f_x,
        efficiency_gap_raw: raw.iter().map(|p| efficiency_gap(p, first.f_x, first.v_empty_model)).collect(),
        efficiency_gap_cv: cv.iter().map(|p| efficiency_gap(p, first.f_x, first.v_empty_model)).collect(),
        mean_anticipated_rho2: (0..d)
            .map(|j| mean(&rho.iter().map(|r| r[j]).collect::<Vec<_>>()).unwrap_or(0.0))
            .collect(),
        alpha: runs.iter().map(|e| e.estimate.alpha.as_slice().to_vec()).collect(),
        exact_approx: runs
            .iter()
            .map(|e| e.estimate.exact_approx.as_slice().to_vec())
            .collect(),
        anticipated_rho2: rho,
        raw,
        cv,
        var_reduc: vr,
        rank_changes_raw: Some(rc_raw),
        rank_changes_cv: Some(rc_cv),
        rank_change_reduction: relative_reduction(rc_raw, rc_cv),
        top_features: top,
        top_k_var_reduc: median(&top_vr),
        hessian_excluded: first.hessian_excluded.clone(),
    })
}

pub fn summarize(points: &[PointReport]) -> ReportSummary {
    let ok: Vec<&PointReport> = points.iter().filter(|p| p.succeeded()).collect();
    let top: Vec<f64> = ok.iter().filter_map(|p| p.top_k_var_reduc).collect();
    let rc: Vec<f64> = ok.iter().filter_map(|p| p.rank_change_reduction).collect();
    let gap_raw: Vec<f64> = ok.iter().flat_map(|p| p.efficiency_gap_raw.iter().copied()).collect();
    let gap_cv: Vec<f64> = ok.iter().flat_map(|p| p.efficiency_gap_cv.iter().copied()).collect();
    let rho_gap: Vec<f64> = ok
        .iter()
        .flat_map(|p| {
            p.var_reduc
                .iter()
                .zip(&p.mean_anticipated_rho2)
                .filter_map(|(v, r)| v.map(|v| (r - v).abs()))
        })
        .collect();
    ReportSummary {
        n_points_ok: ok.len(),
        n_points_failed: points.len() - ok.len(),
        mean_top_k_var_reduc: mean(&top),
        mean_rank_change_reduction: mean(&rc),
        median_efficiency_gap_raw: median(&gap_raw),
        median_efficiency_gap_cv: median(&gap_cv),
        median_rho2_gap: median(&rho_gap),
    }
}

fn run_point(explainer: &Explainer<'_>, x: &[f64], cfg: &ExperimentConfig, point: usize) -> Result<Vec<Explanation>> {
    (0..cfg.n_repetitions)
        .map(|r| explainer.explain(x, cell_seed(cfg.seed, point, r)))
        .collect()
}

/// Runs every repetition at every query point. A point whose explanation
/// fails is recorded with its error and the run continues.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let setup = setup_experiment(cfg)?;
    run_with_setup(cfg, &setup)
}

pub fn run_with_setup(cfg: &ExperimentConfig, setup: &ExperimentSetup) -> Result<ExperimentReport> {
    let explainer = setup.explainer(&setup.explainer_config(cfg))?;
    let mut points = Vec::with_capacity(cfg.n_query_points);
    for (p, &row) in setup.query_rows.iter().enumerate() {
        let x = setup.query_point(p);
        let report = run_point(&explainer, &x, cfg, p).and_then(|runs| summarize_point(row, x.clone(), &runs, cfg.top_k));
        match report {
            Ok(r) => {
                log::info!(
                    "point {}/{} (row {row}): top-{} VarReduc {}",
                    p + 1,
                    setup.query_rows.len(),
                    cfg.top_k,
                    r.top_k_var_reduc.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into())
                );
                points.push(r);
            }
            Err(e) => {
                log::warn!("point {}/{} (row {row}) failed: {e}", p + 1, setup.query_rows.len());
                points.push(PointReport::failed(row, x, e.to_string()));
            }
        }
    }
    let (dj_key, dj_exact, dj_perms) = match &setup.dj {
        Some((dj, key)) => (Some(key.clone()), Some(dj.exact), dj.n_permutations),
        None => (None, None, None),
    };
    let metadata = ReportMetadata {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        config_hash: cfg.hash(),
        master_seed: cfg.seed,
        feature_names: setup.train.feature_names().to_vec(),
        surrogate_order: surrogate_order(cfg.mode),
        rank_key: "descending |phi|, ties by feature index".into(),
        derivatives: match setup.derivatives {
            DerivativeSource::Analytic => "analytic".into(),
            DerivativeSource::FiniteDifference(_) => "finite_difference (marginal sd steps)".into(),
        },
        mu: explainer.moments().mu().as_slice().to_vec(),
        sigma: (0..explainer.moments().dim())
            .map(|i| explainer.moments().sigma().row(i).iter().copied().collect())
            .collect(),
        dj_cache_key: dj_key,
        dj_exact,
        dj_n_permutations: dj_perms,
        v_empty_model: explainer.v_empty_model(),
    };
    Ok(ExperimentReport {
        metadata,
        summary: summarize(&points),
        points,
    })
}
