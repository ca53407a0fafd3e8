//! Shared domain types: datasets, feature moments, coalitions, the predictor
//! contract and the per-feature estimate record.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result, ShapError};
use crate::linalg;

/// Tolerance on `|Σ_jk - Σ_kj|` accepted by [`FeatureMoments::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Most negative eigenvalue accepted by [`FeatureMoments::new`].
pub const PSD_TOL: f64 = -1e-10;

/// Background data: `n × d` feature matrix plus metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: DMatrix<f64>,
    feature_names: Vec<String>,
    categorical_groups: Vec<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GroupsFile {
    groups: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(
        rows: DMatrix<f64>,
        feature_names: Vec<String>,
        categorical_groups: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let (n, d) = rows.shape();
        if n < 2 {
            return Err(ShapError::InvalidInput(format!(
                "dataset needs at least 2 rows, got {n}"
            )));
        }
        if d < 1 {
            return Err(ShapError::InvalidInput("dataset has no columns".into()));
        }
        check_dim(d, feature_names.len())?;
        validate_groups(&categorical_groups, d)?;
        for group in &categorical_groups {
            for i in 0..n {
                let mut ones = 0;
                for &c in group {
                    let v = rows[(i, c)];
                    if v == 1.0 {
                        ones += 1;
                    } else if v != 0.0 {
                        return Err(ShapError::InvalidGrouping(format!(
                            "row {i} column {c} is {v}, expected a 0/1 one-hot entry"
                        )));
                    }
                }
                if ones != 1 {
                    return Err(ShapError::InvalidGrouping(format!(
                        "row {i} has {ones} active levels in group {group:?}"
                    )));
                }
            }
        }
        Ok(Self {
            rows,
            feature_names,
            categorical_groups,
        })
    }

    /// Dataset with generated names `x0, x1, ...` and no categorical groups.
    pub fn from_matrix(rows: DMatrix<f64>) -> Result<Self> {
        let names = (0..rows.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(rows, names, Vec::new())
    }

    /// Reads a headed, all-numeric CSV body.
    pub fn from_csv_reader<R: Read>(reader: R, groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let names: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let d = names.len();
        let mut data = Vec::new();
        let mut n = 0usize;
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            check_dim(d, record.len())?;
            for field in record.iter() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    ShapError::InvalidInput(format!(
                        "non-numeric value {field:?} on data line {}",
                        line + 1
                    ))
                })?;
                data.push(v);
            }
            n += 1;
        }
        let rows = DMatrix::from_row_slice(n, d, &data);
        Self::new(rows, names, groups)
    }

    /// Loads a CSV plus an optional sidecar JSON `{"groups": [[...], ...]}`
    /// of zero-based one-hot column indices.
    pub fn from_csv(path: impl AsRef<Path>, groups_path: Option<&Path>) -> Result<Self> {
        let groups = match groups_path {
            Some(p) => {
                let file: GroupsFile = serde_json::from_reader(std::fs::File::open(p)?)?;
                file.groups
            }
            None => Vec::new(),
        };
        Self::from_csv_reader(std::fs::File::open(path)?, groups)
    }

    pub fn n_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.rows.row(i).iter().copied().collect()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn categorical_groups(&self) -> &[Vec<usize>] {
        &self.categorical_groups
    }

    /// Removes the named column and returns it separately (typically the label).
    pub fn split_column(&self, name: &str) -> Result<(Dataset, Vec<f64>)> {
        let col = self
            .feature_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| ShapError::InvalidInput(format!("no column named {name:?}")))?;
        if self.categorical_groups.iter().any(|g| g.contains(&col)) {
            return Err(ShapError::InvalidInput(format!(
                "column {name:?} belongs to a categorical group"
            )));
        }
        let labels = self.rows.column(col).iter().copied().collect();
        let keep: Vec<usize> = (0..self.n_features()).filter(|&j| j != col).collect();
        let all_rows: Vec<usize> = (0..self.n_rows()).collect();
        let rows = linalg::submatrix(&self.rows, &all_rows, &keep);
        let names = keep.iter().map(|&j| self.feature_names[j].clone()).collect();
        let shift = |c: usize| if c > col { c - 1 } else { c };
        let groups = self
            .categorical_groups
            .iter()
            .map(|g| g.iter().map(|&c| shift(c)).collect())
            .collect();
        Ok((Dataset::new(rows, names, groups)?, labels))
    }

    pub fn select_rows(&self, idx: &[usize]) -> Result<Dataset> {
        let cols: Vec<usize> = (0..self.n_features()).collect();
        let rows = linalg::submatrix(&self.rows, idx, &cols);
        Dataset::new(rows, self.feature_names.clone(), self.categorical_groups.clone())
    }

    /// Sample mean and sample covariance (denominator `n - 1`).
    pub fn moments(&self) -> Result<FeatureMoments> {
        self.moments_with_denominator(self.n_rows() as f64 - 1.0)
    }

    /// Mean and covariance of the empirical distribution (denominator `n`),
    /// i.e. the exact moments of a uniformly drawn background row.
    pub fn population_moments(&self) -> Result<FeatureMoments> {
        self.moments_with_denominator(self.n_rows() as f64)
    }

    fn moments_with_denominator(&self, denom: f64) -> Result<FeatureMoments> {
        let n = self.n_rows() as f64;
        let d = self.n_features();
        let mu = DVector::from_fn(d, |j, _| self.rows.column(j).sum() / n);
        let mut centered = self.rows.clone();
        for j in 0..d {
            let m = mu[j];
            centered.column_mut(j).add_scalar_mut(-m);
        }
        let sigma = linalg::symmetrize(&((centered.transpose() * &centered) / denom));
        FeatureMoments::new(mu, sigma)
    }

    /// Per-column standard deviation with denominator `n - 1`.
    pub fn marginal_std(&self) -> Vec<f64> {
        let n = self.n_rows() as f64;
        (0..self.n_features())
            .map(|j| {
                let col = self.rows.column(j);
                let mean = col.sum() / n;
                (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            })
            .collect()
    }
}

pub(crate) fn validate_groups(groups: &[Vec<usize>], d: usize) -> Result<()> {
    let mut seen = BTreeSet::new();
    for g in groups {
        if g.is_empty() {
            return Err(ShapError::InvalidGrouping("empty group".into()));
        }
        for &c in g {
            if c >= d {
                return Err(ShapError::InvalidGrouping(format!(
                    "column index {c} out of range for {d} features"
                )));
            }
            if !seen.insert(c) {
                return Err(ShapError::InvalidGrouping(format!(
                    "column {c} appears in more than one group"
                )));
            }
        }
    }
    Ok(())
}

/// Mean vector and covariance matrix of the features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMoments {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
}

impl FeatureMoments {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        check_dim(d, sigma.nrows())?;
        check_dim(d, sigma.ncols())?;
        let asym = linalg::asymmetry(&sigma);
        if asym > SYMMETRY_TOL {
            return Err(ShapError::InvalidInput(format!(
                "covariance is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let min_eig = linalg::min_eigenvalue(&sigma);
        if min_eig < PSD_TOL {
            return Err(ShapError::InvalidInput(format!(
                "covariance has negative eigenvalue {min_eig:e}"
            )));
        }
        Ok(Self { mu, sigma })
    }

    /// Zero mean, identity covariance.
    pub fn standard(d: usize) -> Self {
        Self {
            mu: DVector::zeros(d),
            sigma: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }
}

/// A subset `S` of features, held both as a 0/1 mask and as sorted indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Coalition {
    mask: Vec<bool>,
    indices: Vec<usize>,
}

impl Coalition {
    pub fn from_mask(mask: &[bool]) -> Self {
        let indices = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        Self {
            mask: mask.to_vec(),
            indices,
        }
    }

    pub fn from_indices(d: usize, indices: &[usize]) -> Result<Self> {
        let mut mask = vec![false; d];
        for &i in indices {
            if i >= d {
                return Err(ShapError::Dimension {
                    expected: d,
                    found: i + 1,
                });
            }
            mask[i] = true;
        }
        Ok(Self::from_mask(&mask))
    }

    /// Coalition whose bit `i` of `bits` marks feature `i`.
    pub fn from_bits(d: usize, bits: u64) -> Self {
        let mask: Vec<bool> = (0..d).map(|i| bits >> i & 1 == 1).collect();
        Self::from_mask(&mask)
    }

    pub fn empty(d: usize) -> Self {
        Self::from_mask(&vec![false; d])
    }

    pub fn full(d: usize) -> Self {
        Self::from_mask(&vec![true; d])
    }

    pub fn dim(&self) -> usize {
        self.mask.len()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.indices.len() == self.mask.len()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, j: usize) -> bool {
        self.mask.get(j).copied().unwrap_or(false)
    }

    pub fn complement(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| (!m).then_some(i))
            .collect()
    }

    /// `S ∪ {j}`.
    pub fn with(&self, j: usize) -> Self {
        let mut mask = self.mask.clone();
        mask[j] = true;
        Self::from_mask(&mask)
    }

    /// Bit-packed mask; only meaningful for `d <= 64`.
    pub fn bits(&self) -> u64 {
        self.indices.iter().fold(0u64, |acc, &i| acc | (1u64 << i))
    }
}

/// Builds a coalition from a mask, checking it against the feature count.
pub fn coalition_from_mask(mask: &[bool], d: usize) -> Result<Coalition> {
    check_dim(d, mask.len())?;
    Ok(Coalition::from_mask(mask))
}

/// Black-box model contract. Implementations must be deterministic and
/// callable concurrently.
pub trait Predictor: Send + Sync {
    fn n_features(&self) -> usize;

    fn predict_one(&self, x: &[f64]) -> f64;

    fn predict(&self, batch: &[Vec<f64>]) -> Vec<f64> {
        batch.iter().map(|x| self.predict_one(x)).collect()
    }

    /// Analytic gradient, if the model has one.
    fn gradient(&self, _x: &[f64]) -> Option<DVector<f64>> {
        None
    }

    /// Analytic Hessian, if the model has one.
    fn hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

/// Per-feature Shapley estimates with optional variance information.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapleyEstimate {
    pub values: DVector<f64>,
    pub variances: Option<DVector<f64>>,
    pub model_approx_covariances: Option<DVector<f64>>,
    pub n_coalitions: usize,
}

impl ShapleyEstimate {
    pub fn new(values: DVector<f64>, n_coalitions: usize) -> Self {
        Self {
            values,
            variances: None,
            model_approx_covariances: None,
            n_coalitions,
        }
    }
}

/// Sums each categorical group's entries into one value. The group takes the
/// position of its lowest column; ungrouped columns pass through.
pub fn aggregate_categorical(values: &[f64], groups: &[Vec<usize>]) -> Result<Vec<f64>> {
    let d = values.len();
    validate_groups(groups, d)?;
    let mut owner = vec![None; d];
    for (g, cols) in groups.iter().enumerate() {
        for &c in cols {
            owner[c] = Some(g);
        }
    }
    let mut out = Vec::with_capacity(d);
    let mut emitted = vec![false; groups.len()];
    for j in 0..d {
        match owner[j] {
            None => out.push(values[j]),
            Some(g) if !emitted[g] => {
                emitted[g] = true;
                out.push(groups[g].iter().map(|&c| values[c]).sum());
            }
            Some(_) => {}
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coalition_from_masks() {
        assert!(coalition_from_mask(&[false, false, false], 3).unwrap().is_empty());
        assert_eq!(
            coalition_from_mask(&[true, true, true], 3).unwrap().indices(),
            &[0, 1, 2]
        );
        assert_eq!(
            coalition_from_mask(&[true, false, true], 3).unwrap().indices(),
            &[0, 2]
        );
        assert!(matches!(
            coalition_from_mask(&[true], 3),
            Err(ShapError::Dimension { .. })
        ));
    }

    #[test]
    fn coalition_round_trip_exhaustive() {
        for d in 1..=12usize {
            for bits in 0..(1u64 << d) {
                let c = Coalition::from_bits(d, bits);
                let again = coalition_from_mask(c.mask(), d).unwrap();
                assert_eq!(again.indices(), c.indices());
                assert_eq!(again.len(), c.mask().iter().filter(|&&m| m).count());
                assert_eq!(again.bits(), bits);
            }
        }
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(
            aggregate_categorical(&[1.0, 2.0, 3.0], &[vec![1, 2]]).unwrap(),
            vec![1.0, 5.0]
        );
        assert_eq!(
            aggregate_categorical(&[1.0, 2.0, 3.0], &[]).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        assert_eq!(
            aggregate_categorical(&[0.5, -0.5, 0.25, 0.25], &[vec![0, 1], vec![2, 3]]).unwrap(),
            vec![0.0, 0.5]
        );
    }

    #[test]
    fn aggregate_rejects_overlap() {
        let err = aggregate_categorical(&[1.0, 2.0, 3.0], &[vec![0, 1], vec![1, 2]]);
        assert!(matches!(err, Err(ShapError::InvalidGrouping(_))));
    }

    #[test]
    fn dataset_validates_one_hot_blocks() {
        let rows = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.3, 0.0, 1.0, 0.1]);
        let names = vec!["a".into(), "b".into(), "c".into()];
        assert!(Dataset::new(rows.clone(), names.clone(), vec![vec![0, 1]]).is_ok());
        let bad = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.3, 0.0, 1.0, 0.1]);
        assert!(Dataset::new(bad, names, vec![vec![0, 1]]).is_err());
    }

    #[test]
    fn dataset_needs_two_rows() {
        let rows = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert!(Dataset::from_matrix(rows).is_err());
    }

    #[test]
    fn moments_use_sample_denominator() {
        let rows = DMatrix::from_row_slice(2, 1, &[0.0, 2.0]);
        let m = Dataset::from_matrix(rows).unwrap().moments().unwrap();
        assert_eq!(m.mu()[0], 1.0);
        assert_eq!(m.sigma()[(0, 0)], 2.0);
    }

    #[test]
    fn csv_with_header_and_groups() {
        let text = "a,b,c\n1,0,2.5\n0,1,-1\n";
        let ds = Dataset::from_csv_reader(text.as_bytes(), vec![vec![0, 1]]).unwrap();
        assert_eq!(ds.n_rows(), 2);
        assert_eq!(ds.feature_names(), &["a", "b", "c"]);
        assert_eq!(ds.row(1), vec![0.0, 1.0, -1.0]);
        let (x, y) = ds.split_column("c").unwrap();
        assert_eq!(y, vec![2.5, -1.0]);
        assert_eq!(x.n_features(), 2);
    }

    #[test]
    fn csv_rejects_text() {
        let text = "a,b\n1,x\n2,3\n";
        assert!(Dataset::from_csv_reader(text.as_bytes(), vec![]).is_err());
    }

    #[test]
    fn moments_reject_asymmetric() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(FeatureMoments::new(DVector::zeros(2), sigma).is_err());
    }

    #[test]
    fn moments_reject_indefinite() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(FeatureMoments::new(DVector::zeros(2), sigma).is_err());
    }
}
