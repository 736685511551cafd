//! Principal-component linear baseline at equal codeword length.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::metrics::{mean_nmse, nmse, MetricError, Nmse};
use crate::channel::{ChannelMatrix, Dataset};

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("codeword length {n} exceeds the {dims} real channel dimensions")]
    TooManyComponents { n: usize, dims: usize },
    #[error("train and test shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("empty training set")]
    EmptyTrain,
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Mean and leading principal directions of real-stacked training channels.
#[derive(Debug, Clone)]
pub struct PcaBasis {
    pub shape: (usize, usize),
    pub mean: DVector<f64>,
    /// Orthonormal columns, by decreasing variance.
    pub components: DMatrix<f64>,
    pub variances: Vec<f64>,
}

fn stack(h: &ChannelMatrix) -> DVector<f64> {
    DVector::from_iterator(2 * h.len(), h.re().iter().chain(h.im()).copied())
}

fn unstack(v: &DVector<f64>, shape: (usize, usize)) -> ChannelMatrix {
    let half = shape.0 * shape.1;
    ChannelMatrix::from_planes(shape.0, shape.1, v.rows(0, half).iter().copied().collect(), v.rows(half, half).iter().copied().collect())
}

impl PcaBasis {
    /// Fits the top `n` directions; directions with negligible variance are
    /// dropped, so fewer than `n` may be kept.
    pub fn fit(train: &Dataset, n: usize) -> Result<Self, BaselineError> {
        let shape = (train.num_antennas, train.num_subcarriers);
        let dims = 2 * shape.0 * shape.1;
        if n > dims {
            return Err(BaselineError::TooManyComponents { n, dims });
        }
        if train.is_empty() {
            return Err(BaselineError::EmptyTrain);
        }
        let count = train.len() as f64;
        let mut mean = DVector::zeros(dims);
        for h in &train.samples {
            mean += stack(h);
        }
        mean /= count;
        let mut centered = DMatrix::zeros(dims, train.len());
        for (j, h) in train.samples.iter().enumerate() {
            centered.set_column(j, &(stack(h) - &mean));
        }
        let cov = &centered * centered.transpose() / count;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dims).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let top = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));
        let tol = top * dims as f64 * f64::EPSILON;
        let keep: Vec<usize> = order.into_iter().take(n).filter(|&i| eig.eigenvalues[i] > tol).collect();
        let mut components = DMatrix::zeros(dims, keep.len());
        for (c, &i) in keep.iter().enumerate() {
            let mut v = eig.eigenvectors.column(i).into_owned();
            // fix the sign so the largest-magnitude entry is positive
            let (arg, _) = v.iter().enumerate().fold((0, 0.0f64), |(ai, am), (k, x)| if x.abs() > am { (k, x.abs()) } else { (ai, am) });
            if v[arg] < 0.0 {
                v.neg_mut();
            }
            components.set_column(c, &v);
        }
        let variances = keep.iter().map(|&i| eig.eigenvalues[i]).collect();
        Ok(Self { shape, mean, components, variances })
    }

    pub fn encode(&self, h: &ChannelMatrix) -> DVector<f64> {
        self.components.transpose() * (stack(h) - &self.mean)
    }

    pub fn decode(&self, coefficients: &DVector<f64>) -> ChannelMatrix {
        unstack(&(&self.mean + &self.components * coefficients), self.shape)
    }
}

/// Per-sample and mean NMSE of the `n`-component baseline on `test`.
#[derive(Debug, Clone)]
pub struct BaselineReport {
    pub codeword_dim: usize,
    pub components_kept: usize,
    pub per_sample: Vec<f64>,
    pub nmse: Nmse,
}

pub fn svd_baseline(train: &Dataset, test: &Dataset, n: usize) -> Result<BaselineReport, BaselineError> {
    let basis = PcaBasis::fit(train, n)?;
    let test_shape = (test.num_antennas, test.num_subcarriers);
    if test_shape != basis.shape {
        return Err(BaselineError::ShapeMismatch(basis.shape, test_shape));
    }
    let per_sample = test
        .samples
        .iter()
        .map(|h| Ok(nmse(h, &basis.decode(&basis.encode(h)))?.linear))
        .collect::<Result<Vec<_>, BaselineError>>()?;
    let nmse = mean_nmse(&per_sample)?;
    Ok(BaselineReport { codeword_dim: n, components_kept: basis.components.ncols(), per_sample, nmse })
}
