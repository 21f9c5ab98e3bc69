//! Synthetic classification data and CSV I/O.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::loss::LabelMatrix;
use crate::model::{rng_for, standard_normals};
use crate::scalar::Scalar;

/// How a dataset was produced; written beside experiment outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetDescriptor {
    GaussianBlobs {
        num_classes: usize,
        train_size: usize,
        test_size: usize,
        input_dim: usize,
        separation: f64,
        seed: u64,
    },
    Csv {
        train_path: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_path: Option<String>,
    },
}

/// Inputs and one-hot labels of one split.
#[derive(Clone, Debug, PartialEq)]
pub struct Split<T> {
    pub x: Matrix<T>,
    pub y: LabelMatrix<T>,
}

impl<T: Scalar> Split<T> {
    pub fn new(x: Matrix<T>, labels: &[usize], num_classes: usize) -> Result<Self> {
        if x.rows() != labels.len() {
            return shape_err(format!("{} inputs but {} labels", x.rows(), labels.len()));
        }
        Ok(Self {
            x,
            y: LabelMatrix::from_labels(labels, num_classes)?,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn labels(&self) -> &[usize] {
        self.y.labels()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.y.num_classes()];
        for &l in self.labels() {
            counts[l] += 1;
        }
        counts
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub train: Split<T>,
    pub test: Split<T>,
    pub num_classes: usize,
    pub descriptor: DatasetDescriptor,
    /// Seed of the training-label permutation, if labels were shuffled.
    pub label_shuffle_seed: Option<u64>,
}

impl<T: Scalar> Dataset<T> {
    pub fn input_dim(&self) -> usize {
        self.train.x.cols()
    }
}

/// Per-dimension affine map fitted on one split.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit(x: &Matrix<T>) -> Self {
        let m = T::of_usize(x.rows().max(1));
        let mean: Vec<T> = (0..x.cols())
            .map(|c| (0..x.rows()).map(|r| x[(r, c)]).sum::<T>() / m)
            .collect();
        let std = (0..x.cols())
            .map(|c| {
                let var = (0..x.rows())
                    .map(|r| (x[(r, c)] - mean[c]).powi(2))
                    .sum::<T>()
                    / m;
                var.sqrt()
            })
            .collect();
        Self { mean, std }
    }

    /// Centres every column and scales it to unit variance; constant columns are only centred.
    pub fn apply(&self, x: &Matrix<T>) -> Matrix<T> {
        Matrix::from_fn(x.rows(), x.cols(), |r, c| {
            let d = x[(r, c)] - self.mean[c];
            if self.std[c] > T::zero() {
                d / self.std[c]
            } else {
                d
            }
        })
    }
}

/// Rescales every nonzero row to Euclidean norm `sqrt(N)`.
pub fn row_normalize<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    let target = T::of_usize(x.cols()).sqrt();
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm > T::zero() {
            let s = target / norm;
            row.iter_mut().for_each(|v| *v *= s);
        }
    }
    out
}

/// Vertices of a regular simplex with unit edge, expressed in the first `K - 1`
/// coordinates of `R^N` through the Helmert basis of the sum-zero subspace.
fn simplex_vertices<T: Scalar>(k: usize, n: usize) -> Matrix<T> {
    let mut out = Matrix::zeros(k, n);
    let inv_sqrt2 = T::one() / T::of(2.0).sqrt();
    for class in 0..k {
        for j in 1..k {
            // Helmert row j: (1, ..., 1, -j, 0, ...) / sqrt(j (j + 1)) with j ones.
            let norm = T::of_usize(j * (j + 1)).sqrt();
            let coord = if class < j {
                T::one()
            } else if class == j {
                -T::of_usize(j)
            } else {
                T::zero()
            };
            out[(class, j - 1)] = coord / norm * inv_sqrt2;
        }
    }
    out
}

/// Classes `m mod K` centred on simplex vertices `separation` apart, with unit
/// isotropic noise. Inputs are standardized on training moments and then
/// row-normalized to norm `sqrt(N)`.
pub fn gaussian_blobs<T: Scalar>(
    num_classes: usize,
    train_size: usize,
    test_size: usize,
    input_dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset<T>> {
    if num_classes < 2 {
        return invalid("gaussian_blobs needs at least two classes");
    }
    if input_dim < 2 || input_dim + 1 < num_classes {
        return invalid(format!(
            "input_dim {input_dim} cannot hold a {num_classes}-class simplex (needs 2 and K - 1)"
        ));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return invalid("separation must be nonnegative");
    }
    if train_size == 0 {
        return invalid("training split is empty");
    }
    let means = simplex_vertices::<T>(num_classes, input_dim).scale(T::of(separation));
    let draw = |size: usize, stream: u64| {
        let mut rng = rng_for(seed, stream);
        let noise: Vec<T> = standard_normals(&mut rng, size * input_dim);
        let labels: Vec<usize> = (0..size).map(|m| m % num_classes).collect();
        let x = Matrix::from_fn(size, input_dim, |r, c| {
            means[(labels[r], c)] + noise[r * input_dim + c]
        });
        (x, labels)
    };
    let (xtr, ltr) = draw(train_size, 10);
    let (xte, lte) = draw(test_size, 11);
    let standardizer = Standardizer::fit(&xtr);
    let xtr = row_normalize(&standardizer.apply(&xtr));
    let xte = row_normalize(&standardizer.apply(&xte));
    Ok(Dataset {
        train: Split::new(xtr, &ltr, num_classes)?,
        test: Split::new(xte, &lte, num_classes)?,
        num_classes,
        descriptor: DatasetDescriptor::GaussianBlobs {
            num_classes,
            train_size,
            test_size,
            input_dim,
            separation,
            seed,
        },
        label_shuffle_seed: None,
    })
}

/// Uniformly random permutation of the training labels; inputs and the test split are kept.
pub fn shuffle_labels<T: Scalar>(data: &Dataset<T>, seed: u64) -> Result<Dataset<T>> {
    if data.train.is_empty() {
        return invalid("cannot shuffle an empty training split");
    }
    let mut labels = data.train.labels().to_vec();
    labels.shuffle(&mut rng_for(seed, 20));
    Ok(Dataset {
        train: Split::new(data.train.x.clone(), &labels, data.num_classes)?,
        label_shuffle_seed: Some(seed),
        ..data.clone()
    })
}

/// Reads a `x1,...,xN,label` file. Returns inputs and labels; the label
/// cardinality is left to the caller.
pub fn read_csv_split<T: Scalar>(path: impl AsRef<Path>) -> Result<(Matrix<T>, Vec<usize>)> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: name.clone(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    let n = header.len().saturating_sub(1);
    if n == 0 || &header[n] != "label" {
        return Err(parse_err(1, "header must be x1,...,xN,label".into()));
    }
    for (i, h) in header.iter().take(n).enumerate() {
        if h != format!("x{}", i + 1) {
            return Err(parse_err(1, format!("expected column x{}, found {h:?}", i + 1)));
        }
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != n + 1 {
            return Err(parse_err(line, format!("expected {} fields, found {}", n + 1, record.len())));
        }
        for field in record.iter().take(n) {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("non-numeric feature {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite feature {field:?}")));
            }
            data.push(T::of(v));
        }
        let label: usize = record[n]
            .parse()
            .map_err(|_| parse_err(line, format!("label {:?} is not a class index", &record[n])))?;
        labels.push(label);
    }
    let rows = labels.len();
    Ok((Matrix::new(rows, n, data)?, labels))
}

/// Loads a dataset whose training split is the given file; the test split is empty.
/// `K` is one more than the largest label (at least 2).
pub fn load_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let (x, labels) = read_csv_split::<T>(path)?;
    let k = labels.iter().max().map_or(2, |&l| (l + 1).max(2));
    let n = x.cols();
    Ok(Dataset {
        train: Split::new(x, &labels, k)?,
        test: Split::new(Matrix::zeros(0, n), &[], k)?,
        num_classes: k,
        descriptor: DatasetDescriptor::Csv {
            train_path: path.display().to_string(),
            test_path: None,
        },
        label_shuffle_seed: None,
    })
}

/// Writes a split in the format read by [`load_csv`]. Values use the shortest
/// representation that parses back to the same float.
pub fn save_csv<T: Scalar>(split: &Split<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = split.x.cols();
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (r, &label) in split.labels().iter().enumerate() {
        let mut row: Vec<String> = split.x.row(r).iter().map(|v| v.to_text()).collect();
        row.push(label.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
