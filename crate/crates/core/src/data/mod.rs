//! Datasets, stage splits, the synthetic benchmark and the discrete oracle world.

mod csv_io;
pub mod discrete;
mod synthetic;

use faer::{Mat, MatRef};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::select_rows;

pub use csv_io::{load_csv, write_csv, CsvSchema};
pub use discrete::{gen_discrete_toy, DiscreteToyWorld};
pub use synthetic::{gen_synthetic_lowdim, true_dose_response, SyntheticTruth, TruthMoments};

/// Observations `(y_i, a_i, z_i, w_i)`; matrices hold one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxyDataset {
    pub y: Vec<f64>,
    pub a: Mat<f64>,
    pub z: Mat<f64>,
    pub w: Mat<f64>,
}

impl ProxyDataset {
    pub fn new(y: Vec<f64>, a: Mat<f64>, z: Mat<f64>, w: Mat<f64>) -> Result<Self> {
        let t = y.len();
        for (name, m) in [("a", &a), ("z", &z), ("w", &w)] {
            if m.nrows() != t {
                return Err(Error::DimensionMismatch {
                    context: match name {
                        "a" => "treatment rows",
                        "z" => "treatment proxy rows",
                        _ => "outcome proxy rows",
                    },
                    expected: t,
                    found: m.nrows(),
                });
            }
        }
        if t < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                found: t,
            });
        }
        let finite = |m: &Mat<f64>| {
            (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| m[(i, j)].is_finite()))
        };
        if !y.iter().all(|v| v.is_finite()) || !finite(&a) || !finite(&z) || !finite(&w) {
            return Err(Error::InvalidArgument("dataset contains NaN or Inf".into()));
        }
        Ok(Self { y, a, z, w })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Rows `idx`, in order.
    pub fn subset(&self, idx: &[usize]) -> ProxyDataset {
        ProxyDataset {
            y: idx.iter().map(|&i| self.y[i]).collect(),
            a: select_rows(self.a.as_ref(), idx),
            z: select_rows(self.z.as_ref(), idx),
            w: select_rows(self.w.as_ref(), idx),
        }
    }

    pub fn y_col(&self) -> Mat<f64> {
        crate::linalg::column(&self.y)
    }

    pub fn a(&self) -> MatRef<'_, f64> {
        self.a.as_ref()
    }
}

/// Disjoint first and second stage index sets; the third stage is every index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSplit {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
    pub t: usize,
}

impl StageSplit {
    pub fn third(&self) -> std::ops::Range<usize> {
        0..self.t
    }
}

/// `floor(t/2)` random indices for stage one, the rest for stage two.
pub fn split_stages(t: usize, seed: u64) -> Result<StageSplit> {
    if t < 4 {
        return Err(Error::TooFewSamples {
            needed: 4,
            found: t,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = t / 2;
    let mut first = rand::seq::index::sample(&mut rng, t, n).into_vec();
    first.sort_unstable();
    let mut in_first = vec![false; t];
    for &i in &first {
        in_first[i] = true;
    }
    let second = (0..t).filter(|&i| !in_first[i]).collect();
    Ok(StageSplit { first, second, t })
}
