//! Uncertainty datasets, empirical distributions and the synthetic mixture
//! sampler used as ground truth in experiments.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream_rng;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at row {row}, column {col}: {message}")]
    Parse {
        row: usize,
        col: usize,
        message: String,
    },
    #[error("dataset has no rows")]
    Empty,
    #[error("row {row} has non-finite value in column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("row {row} has {found} columns, expected {expected}")]
    Dimension {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid mixture specification: {0}")]
    InvalidSpec(String),
}

/// An `N x m` matrix of uncertainty observations, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dim: usize,
    values: Vec<f64>,
    pub source: String,
}

impl Dataset {
    pub fn from_rows(rows: Vec<Vec<f64>>, source: impl Into<String>) -> Result<Self, DatasetError> {
        let first = rows.first().ok_or(DatasetError::Empty)?;
        let dim = first.len();
        if dim == 0 {
            return Err(DatasetError::Dimension {
                row: 1,
                expected: 1,
                found: 0,
            });
        }
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(DatasetError::Dimension {
                    row: r + 1,
                    expected: dim,
                    found: row.len(),
                });
            }
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(DatasetError::NonFinite { row: r + 1, col: c + 1 });
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            dim,
            values,
            source: source.into(),
        })
    }

    /// Convenience constructor for one-dimensional data.
    pub fn from_scalars(values: &[f64], source: impl Into<String>) -> Result<Self, DatasetError> {
        Self::from_rows(values.iter().map(|&v| vec![v]).collect(), source)
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Dataset {
            dim: self.dim,
            values,
            source: self.source.clone(),
        }
    }

    pub fn column_means(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut mean = vec![0.0; self.dim];
        for row in self.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Second central moment matrix with the biased `1/N` normalisation.
    pub fn central_second_moment(&self) -> Vec<Vec<f64>> {
        let mean = self.column_means();
        let n = self.len() as f64;
        let mut cov = vec![vec![0.0; self.dim]; self.dim];
        for row in self.rows() {
            for a in 0..self.dim {
                let da = row[a] - mean[a];
                for b in 0..self.dim {
                    cov[a][b] += da * (row[b] - mean[b]);
                }
            }
        }
        for r in cov.iter_mut() {
            r.iter_mut().for_each(|v| *v /= n);
        }
        cov
    }
}

/// Reads a headerless (or single-header-line) numeric CSV file.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let io_err = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut rows = Vec::new();
    let mut dim = None;
    for (i, record) in reader.records().enumerate() {
        let line = i + 1 + usize::from(has_header);
        let record = record.map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => io_err(source),
            other => DatasetError::Parse {
                row: line,
                col: 1,
                message: format!("{other:?}"),
            },
        })?;
        let expected = *dim.get_or_insert(record.len());
        if record.len() != expected {
            return Err(DatasetError::Parse {
                row: line,
                col: expected.min(record.len()) + 1,
                message: format!("expected {expected} columns, found {}", record.len()),
            });
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(c, cell)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(DatasetError::Parse {
                    row: line,
                    col: c + 1,
                    message: format!("not a finite number: {cell:?}"),
                }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Dataset::from_rows(rows, path.display().to_string())
}

/// Writes the dataset in the format [`load_csv`] reads. Values use the
/// shortest representation that round-trips exactly.
pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let io_err = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for row in dataset.rows() {
        let line = row.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub point: Vec<f64>,
    pub weight: f64,
}

/// Finitely supported probability distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    pub atoms: Vec<Atom>,
}

impl DiscreteDistribution {
    pub fn new(atoms: Vec<Atom>) -> Result<Self, DatasetError> {
        if atoms.is_empty() {
            return Err(DatasetError::Empty);
        }
        let total = total_weight(&atoms);
        if atoms.iter().any(|a| a.weight < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(DatasetError::InvalidSpec(format!(
                "atom weights must be nonnegative and sum to 1 (sum = {total})"
            )));
        }
        for (r, a) in atoms.iter().enumerate() {
            if let Some(c) = a.point.iter().position(|v| !v.is_finite()) {
                return Err(DatasetError::NonFinite { row: r + 1, col: c + 1 });
            }
        }
        Ok(Self { atoms })
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Sum of the atom weights (compensated, so a million `1/N` weights
    /// still add up to 1 within a few ulps).
    pub fn total_weight(&self) -> f64 {
        total_weight(&self.atoms)
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].point.len()
    }

    pub fn expectation(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.atoms.iter().map(|a| a.weight * f(&a.point)).sum()
    }
}

// Neumaier summation
fn total_weight(atoms: &[Atom]) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for a in atoms {
        let t = sum + a.weight;
        carry += if sum.abs() >= a.weight.abs() { (sum - t) + a.weight } else { (a.weight - t) + sum };
        sum = t;
    }
    sum + carry
}

/// Uniform distribution over the rows of `dataset`. Duplicate rows stay
/// separate atoms.
pub fn empirical(dataset: &Dataset) -> DiscreteDistribution {
    let w = 1.0 / dataset.len() as f64;
    DiscreteDistribution {
        atoms: dataset
            .rows()
            .map(|row| Atom {
                point: row.to_vec(),
                weight: w,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

/// Gaussian mixture used as a known data-generating distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub components: Vec<MixtureComponent>,
}

impl MixtureSpec {
    /// One-dimensional mixture from `(weight, mean, standard deviation)` triples.
    pub fn scalar(components: &[(f64, f64, f64)]) -> Self {
        Self {
            components: components
                .iter()
                .map(|&(weight, mean, sd)| MixtureComponent {
                    weight,
                    mean: vec![mean],
                    covariance: vec![vec![sd * sd]],
                })
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.mean.len())
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim()];
        for c in &self.components {
            for (m, v) in mean.iter_mut().zip(&c.mean) {
                *m += c.weight * v;
            }
        }
        mean
    }

    /// Checks the specification and returns a sampler with factored covariances.
    pub fn sampler(&self) -> Result<MixtureSampler, DatasetError> {
        let dim = self.dim();
        if self.components.is_empty() || dim == 0 {
            return Err(DatasetError::InvalidSpec("mixture has no components".into()));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if self.components.iter().any(|c| !(c.weight > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(DatasetError::InvalidSpec(format!(
                "weights must be positive and sum to 1 (sum = {total})"
            )));
        }
        let mut factors = Vec::with_capacity(self.components.len());
        for (k, c) in self.components.iter().enumerate() {
            if c.mean.len() != dim || c.covariance.len() != dim || c.covariance.iter().any(|r| r.len() != dim) {
                return Err(DatasetError::InvalidSpec(format!("component {k} has inconsistent dimensions")));
            }
            if c.mean.iter().chain(c.covariance.iter().flatten()).any(|v| !v.is_finite()) {
                return Err(DatasetError::InvalidSpec(format!("component {k} has non-finite parameters")));
            }
            factors.push(psd_factor(&c.covariance).ok_or_else(|| {
                DatasetError::InvalidSpec(format!("covariance of component {k} is not symmetric PSD"))
            })?);
        }
        let mut cumulative = Vec::with_capacity(self.components.len());
        let mut acc = 0.0;
        for c in &self.components {
            acc += c.weight / total;
            cumulative.push(acc);
        }
        Ok(MixtureSampler {
            spec: self.clone(),
            cumulative,
            factors,
        })
    }
}

/// Returns `L` with `L Lᵀ = cov`, or `None` when `cov` is not symmetric PSD.
fn psd_factor(cov: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let m = cov.len();
    let mat = DMatrix::from_fn(m, m, |i, j| cov[i][j]);
    let scale = mat.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
    if (&mat - mat.transpose()).iter().any(|v| v.abs() > 1e-10 * scale) {
        return None;
    }
    let eig = SymmetricEigen::new(mat);
    if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale) {
        return None;
    }
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Some(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals))
}

#[derive(Debug, Clone)]
pub struct MixtureSampler {
    spec: MixtureSpec,
    cumulative: Vec<f64>,
    factors: Vec<DMatrix<f64>>,
}

impl MixtureSampler {
    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// Draws one point into `out` and returns its component index.
    pub fn draw_into<R: Rng>(&self, rng: &mut R, out: &mut [f64]) -> usize {
        let u: f64 = rng.random();
        let k = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cumulative.len() - 1);
        let comp = &self.spec.components[k];
        let m = out.len();
        let z: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        let factor = &self.factors[k];
        for i in 0..m {
            out[i] = comp.mean[i] + (0..m).map(|j| factor[(i, j)] * z[j]).sum::<f64>();
        }
        k
    }
}

/// `n` i.i.d. draws from the mixture together with the generating component
/// of each draw. A pure function of `(spec, n, seed)`.
pub fn sample_mixture_labeled(
    spec: &MixtureSpec,
    n: usize,
    seed: u64,
) -> Result<(Dataset, Vec<usize>), DatasetError> {
    if n == 0 {
        return Err(DatasetError::Empty);
    }
    let sampler = spec.sampler()?;
    let dim = sampler.dim();
    let mut rng = stream_rng(seed, 0);
    let mut values = vec![0.0; n * dim];
    let labels = values
        .chunks_exact_mut(dim)
        .map(|row| sampler.draw_into(&mut rng, row))
        .collect();
    Ok((
        Dataset {
            dim,
            values,
            source: format!("mixture sample n={n} seed={seed}"),
        },
        labels,
    ))
}

pub fn sample_mixture(spec: &MixtureSpec, n: usize, seed: u64) -> Result<Dataset, DatasetError> {
    sample_mixture_labeled(spec, n, seed).map(|(d, _)| d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_scalar_column() {
        let f = write_tmp("0.5\n0.7\n");
        let d = load_csv(f.path(), false).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.dim(), 1);
        assert_eq!(d.row(0), &[0.5]);
        assert_eq!(d.row(1), &[0.7]);
    }

    #[test]
    fn reports_bad_cell_position() {
        let f = write_tmp("1\n2\nabc\n4\n");
        match load_csv(f.path(), false) {
            Err(DatasetError::Parse { row, col, .. }) => assert_eq!((row, col), (3, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_rows_are_parse_errors() {
        let f = write_tmp("1,2\n3\n");
        assert!(matches!(load_csv(f.path(), false), Err(DatasetError::Parse { row: 2, .. })));
    }

    #[test]
    fn header_line_skipped_on_request() {
        let f = write_tmp("a,b\n1,2\n3,4\n");
        let d = load_csv(f.path(), true).unwrap();
        assert_eq!(d.len(), 2);
        assert!(load_csv(f.path(), false).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_csv("/nonexistent/data.csv", false),
            Err(DatasetError::Io { .. })
        ));
    }

    #[test]
    fn hundred_row_column_means() {
        let mut text = String::new();
        let mut sums = [0.0_f64; 2];
        for i in 0..100 {
            let a = (i as f64 * 0.37).sin() * 10.0;
            let b = i as f64 / 7.0;
            sums[0] += a;
            sums[1] += b;
            text.push_str(&format!("{a},{b}\n"));
        }
        let d = load_csv(write_tmp(&text).path(), false).unwrap();
        assert_eq!((d.len(), d.dim()), (100, 2));
        let means = d.column_means();
        assert!((means[0] - sums[0] / 100.0).abs() < 1e-12);
        assert!((means[1] - sums[1] / 100.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_keeps_duplicates() {
        let d = Dataset::from_scalars(&[1.0, 1.0], "t").unwrap();
        let e = empirical(&d);
        assert_eq!(e.len(), 2);
        assert!(e.atoms.iter().all(|a| a.weight == 0.5 && a.point == [1.0]));

        let d = Dataset::from_rows(vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0], vec![6.0, 8.0]], "t").unwrap();
        let e = empirical(&d);
        assert!(e.atoms.iter().all(|a| a.weight == 0.25));
        let means = d.column_means();
        assert!((e.expectation(|w| w[0]) - means[0]).abs() < 1e-12);
        assert!((e.expectation(|w| 2.0 * w[1] - w[0]) - (2.0 * means[1] - means[0])).abs() < 1e-12);
    }

    #[test]
    fn degenerate_component_repeats_mean() {
        let spec = MixtureSpec::scalar(&[(1.0, 3.0, 0.0)]);
        let d = sample_mixture(&spec, 50, 7).unwrap();
        assert!(d.rows().all(|r| r == [3.0]));
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = MixtureSpec::scalar(&[(0.3, -1.0, 2.0), (0.7, 4.0, 0.5)]);
        let a = sample_mixture(&spec, 100, 42).unwrap();
        let b = sample_mixture(&spec, 100, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_mixture(&spec, 100, 43).unwrap());
    }

    #[test]
    fn bimodal_sample_mean_near_zero() {
        let spec = MixtureSpec::scalar(&[(0.5, -5.0, 1.0), (0.5, 5.0, 1.0)]);
        let d = sample_mixture(&spec, 10_000, 1).unwrap();
        assert!(d.column_means()[0].abs() < 0.15);
    }

    #[test]
    fn rejects_bad_specs() {
        let spec = MixtureSpec::scalar(&[(0.6, 0.0, 1.0), (0.6, 1.0, 1.0)]);
        assert!(matches!(spec.sampler(), Err(DatasetError::InvalidSpec(_))));
        let spec = MixtureSpec {
            components: vec![MixtureComponent {
                weight: 1.0,
                mean: vec![0.0, 0.0],
                covariance: vec![vec![1.0, 2.0], vec![2.0, 1.0]],
            }],
        };
        assert!(matches!(spec.sampler(), Err(DatasetError::InvalidSpec(_))));
    }

    #[test]
    fn correlated_2d_sample_covariance() {
        let spec = MixtureSpec {
            components: vec![MixtureComponent {
                weight: 1.0,
                mean: vec![1.0, -2.0],
                covariance: vec![vec![2.0, 0.8], vec![0.8, 1.0]],
            }],
        };
        let d = sample_mixture(&spec, 20_000, 3).unwrap();
        let cov = d.central_second_moment();
        assert!((cov[0][0] - 2.0).abs() < 0.1);
        assert!((cov[0][1] - 0.8).abs() < 0.06);
        assert!((cov[1][1] - 1.0).abs() < 0.05);
    }

    proptest::proptest! {
        #[test]
        fn csv_round_trip(rows in proptest::collection::vec(proptest::collection::vec(-1e6f64..1e6, 3), 1..20)) {
            let d = Dataset::from_rows(rows, "p").unwrap();
            let f = tempfile::NamedTempFile::new().unwrap();
            save_csv(&d, f.path()).unwrap();
            let back = load_csv(f.path(), false).unwrap();
            proptest::prop_assert_eq!(back.values, d.values);
        }

        #[test]
        fn empirical_weights_sum_to_one(n in 1usize..2000) {
            let d = Dataset::from_scalars(&vec![0.0; n], "p").unwrap();
            let total: f64 = empirical(&d).atoms.iter().map(|a| a.weight).sum();
            proptest::prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
