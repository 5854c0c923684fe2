//! Data loaded from disk.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use super::{ClassMoments, LabelSpace, Moments, Projections, Sample};
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Stored samples, one per column, with their labels.
#[derive(Clone, Debug)]
pub struct Empirical {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    label_space: LabelSpace,
    /// Original values of the labels now stored as `(−1, +1)`, when the file
    /// used another binary convention.
    pub label_map: Option<(f64, f64)>,
}

impl Empirical {
    /// Labels are binary when they take exactly the values `{−1, +1}` or
    /// `{0, 1}` (the latter remapped to `{−1, +1}`), real otherwise.
    pub fn new(x: DMatrix<f64>, y: Vec<f64>) -> Result<Self> {
        if x.ncols() != y.len() {
            return Err(Error::Dimension {
                expected: x.ncols(),
                got: y.len(),
            });
        }
        if y.is_empty() {
            return Err(Error::InvalidArgument("empirical data has no rows".into()));
        }
        let all_in = |a: f64, b: f64| y.iter().all(|&v| v == a || v == b);
        let (label_space, label_map, y) = if all_in(-1.0, 1.0) {
            (LabelSpace::BinaryPM1, None, y)
        } else if all_in(0.0, 1.0) {
            let mapped = y.iter().map(|&v| if v == 1.0 { 1.0 } else { -1.0 }).collect();
            (LabelSpace::BinaryPM1, Some((0.0, 1.0)), mapped)
        } else {
            (LabelSpace::Real, None, y)
        };
        Ok(Empirical {
            x,
            y,
            label_space,
            label_map,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn label_space(&self) -> LabelSpace {
        self.label_space
    }

    pub fn moments(&self) -> Moments {
        moments_of(&self.x, (0..self.len()).collect::<Vec<_>>().as_slice())
    }

    pub fn class_moments(&self) -> Option<Vec<ClassMoments>> {
        if self.label_space != LabelSpace::BinaryPM1 {
            return None;
        }
        let n = self.len() as f64;
        let out = [-1.0, 1.0]
            .into_iter()
            .filter_map(|label| {
                let idx: Vec<usize> = (0..self.len()).filter(|&j| self.y[j] == label).collect();
                (!idx.is_empty()).then(|| ClassMoments {
                    label,
                    prior: idx.len() as f64 / n,
                    moments: moments_of(&self.x, &idx),
                })
            })
            .collect();
        Some(out)
    }

    /// `n` distinct stored rows chosen at random.
    pub(crate) fn subsample(&self, n: usize, seed: u64) -> Result<Sample> {
        if n > self.len() {
            return Err(Error::InvalidArgument(format!(
                "requested {n} samples but only {} rows are stored",
                self.len()
            )));
        }
        let mut rng = rng::stream(seed, rng::domain::SAMPLE, 0);
        let mut idx = rand::seq::index::sample(&mut rng, self.len(), n).into_vec();
        idx.sort_unstable();
        Ok(Sample {
            x: self.x.select_columns(&idx),
            y: DVector::from_iterator(n, idx.iter().map(|&j| self.y[j])),
        })
    }

    /// Draws with replacement from the stored rows.
    pub(crate) fn project(&self, u: &DVector<f64>, rng: &mut Rng, count: usize) -> Projections {
        let mut out = Projections {
            proj: Vec::with_capacity(count),
            labels: Vec::with_capacity(count),
        };
        for _ in 0..count {
            let j = rng.random_range(0..self.len());
            out.proj.push(self.x.column(j).dot(u));
            out.labels.push(self.y[j]);
        }
        out
    }
}

/// Sample mean and unbiased covariance of the selected columns.
fn moments_of(x: &DMatrix<f64>, idx: &[usize]) -> Moments {
    let p = x.nrows();
    let sel = x.select_columns(idx);
    let mean = sel.column_mean();
    let mut centered = sel;
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let denom = (idx.len().max(2) - 1) as f64;
    let cov = if idx.len() > 1 {
        &centered * centered.transpose() / denom
    } else {
        DMatrix::zeros(p, p)
    };
    Moments { mean, cov }
}

/// Reads a CSV with header `x1,...,xp,y` and one sample per row.
pub fn load_csv(path: impl AsRef<Path>) -> Result<super::DataModel> {
    let path = path.as_ref();
    let ctx = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: ctx.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let parse_err = |line: u64, message: String| Error::Parse {
        context: ctx.clone(),
        line,
        message,
    };
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(parse_err(1, "empty file".into()));
    }
    if headers.len() < 2 || headers[headers.len() - 1].trim() != "y" {
        return Err(parse_err(1, "header must read x1,...,xp,y".into()));
    }
    let p = headers.len() - 1;
    let mut values: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |pos| pos.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |pos| pos.line());
        if record.len() != p + 1 {
            return Err(parse_err(line, format!("expected {} fields, found {}", p + 1, record.len())));
        }
        for (i, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("non-numeric cell {cell:?} in column {}", i + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite cell {cell:?}")));
            }
            if i < p {
                values.push(v);
            } else {
                labels.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(parse_err(1, "empty file: header but no rows".into()));
    }
    let x = DMatrix::from_vec(p, labels.len(), values);
    Ok(super::DataModel::Empirical(Empirical::new(x, labels)?))
}
