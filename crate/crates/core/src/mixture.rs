//! Gaussian components and finite mixtures, evaluated in the log domain.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{MixError, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const WEIGHT_SUM_TOL: f64 = 1e-10;

/// Cholesky-derived quantities of an SPD covariance.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Factor {
    /// Lower Cholesky factor `L`, row-major.
    pub(crate) chol: Vec<f64>,
    /// `L^{-1}`, row-major lower triangular.
    pub(crate) inv_chol: Vec<f64>,
    /// `-0.5 * log|2 pi Sigma|`.
    pub(crate) log_norm: f64,
}

impl Factor {
    pub(crate) fn new(cov: &[f64], d: usize) -> Option<Factor> {
        let m = DMatrix::from_row_slice(d, d, cov);
        let chol = m.cholesky()?;
        let l = chol.l();
        let log_det_l: f64 = (0..d).map(|i| l[(i, i)].ln()).sum();
        let inv = l.solve_lower_triangular(&DMatrix::identity(d, d))?;
        let log_norm = -0.5 * d as f64 * (2.0 * PI).ln() - log_det_l;
        if !log_norm.is_finite() || inv.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let row_major = |a: &DMatrix<f64>| {
            let mut out = vec![0.0; d * d];
            for r in 0..d {
                for c in 0..=r {
                    out[r * d + c] = a[(r, c)];
                }
            }
            out
        };
        Some(Factor {
            chol: row_major(&l),
            inv_chol: row_major(&inv),
            log_norm,
        })
    }

    /// `log phi(x; mu, Sigma)` without dimension checks.
    #[inline]
    pub(crate) fn log_density(&self, x: &[f64], mean: &[f64]) -> f64 {
        let d = mean.len();
        let mut maha = 0.0;
        for r in 0..d {
            let row = &self.inv_chol[r * d..r * d + r + 1];
            let mut y = 0.0;
            for c in 0..=r {
                y += row[c] * (x[c] - mean[c]);
            }
            maha += y * y;
        }
        self.log_norm - 0.5 * maha
    }
}

/// Multivariate normal component with a validated SPD covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ComponentRepr", into = "ComponentRepr")]
pub struct GaussianComponent {
    mean: Vec<f64>,
    cov: Vec<f64>,
    factor: Factor,
}

#[derive(Serialize, Deserialize)]
struct ComponentRepr {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl TryFrom<ComponentRepr> for GaussianComponent {
    type Error = MixError;

    fn try_from(r: ComponentRepr) -> Result<Self> {
        let d = r.mean.len();
        if r.cov.len() != d || r.cov.iter().any(|row| row.len() != d) {
            return Err(MixError::Dimension {
                expected: d,
                got: r.cov.len(),
            });
        }
        GaussianComponent::new(r.mean, r.cov.concat())
    }
}

impl From<GaussianComponent> for ComponentRepr {
    fn from(c: GaussianComponent) -> Self {
        let d = c.dim();
        ComponentRepr {
            cov: c.cov.chunks(d).map(<[f64]>::to_vec).collect(),
            mean: c.mean,
        }
    }
}

impl GaussianComponent {
    /// `cov` is row-major `d x d`. It must be symmetric (to 1e-12 relative)
    /// and positive definite.
    pub fn new(mean: Vec<f64>, mut cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(MixError::Invariant("component dimension must be positive".into()));
        }
        if cov.len() != d * d {
            return Err(MixError::Dimension {
                expected: d * d,
                got: cov.len(),
            });
        }
        if mean.iter().chain(&cov).any(|v| !v.is_finite()) {
            return Err(MixError::Invariant("non-finite component parameter".into()));
        }
        let scale = cov.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for a in 0..d {
            for b in 0..a {
                let (x, y) = (cov[a * d + b], cov[b * d + a]);
                if (x - y).abs() > SYMMETRY_TOL * scale {
                    return Err(MixError::Invariant(format!(
                        "covariance not symmetric at ({a}, {b}): {x} vs {y}"
                    )));
                }
                let avg = 0.5 * (x + y);
                cov[a * d + b] = avg;
                cov[b * d + a] = avg;
            }
        }
        let factor = Factor::new(&cov, d)
            .ok_or_else(|| MixError::PositiveDefinite(format!("Cholesky failed for {cov:?}")))?;
        Ok(GaussianComponent { mean, cov, factor })
    }

    /// Univariate convenience constructor.
    pub fn univariate(mean: f64, variance: f64) -> Result<Self> {
        GaussianComponent::new(vec![mean], vec![variance])
    }

    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        let mut cov = vec![0.0; d * d];
        (0..d).for_each(|i| cov[i * d + i] = variance);
        GaussianComponent::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major covariance.
    pub fn cov(&self) -> &[f64] {
        &self.cov
    }

    pub(crate) fn factor(&self) -> &Factor {
        &self.factor
    }

    /// Same mean, covariance multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        GaussianComponent::new(self.mean.clone(), self.cov.iter().map(|v| v * c).collect())
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(MixError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.factor.log_density(x, &self.mean))
    }

    pub(crate) fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        self.factor.log_density(x, &self.mean)
    }

    /// Draws `mu + L z` with `z` standard normal.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.dim();
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for r in 0..d {
            let mut v = self.mean[r];
            for c in 0..=r {
                v += self.factor.chol[r * d + c] * z[c];
            }
            out[r] = v;
        }
    }
}

/// `log phi(x; mu, Sigma)`, evaluated through the Cholesky factor.
pub fn log_density_gaussian(x: &[f64], comp: &GaussianComponent) -> Result<f64> {
    comp.log_density(x)
}

/// Weights plus components of a `g`-component Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureRepr", into = "MixtureRepr")]
pub struct MixtureParams {
    weights: Vec<f64>,
    components: Vec<GaussianComponent>,
}

#[derive(Serialize, Deserialize)]
struct MixtureRepr {
    weights: Vec<f64>,
    components: Vec<GaussianComponent>,
}

impl TryFrom<MixtureRepr> for MixtureParams {
    type Error = MixError;

    fn try_from(r: MixtureRepr) -> Result<Self> {
        MixtureParams::new(r.weights, r.components)
    }
}

impl From<MixtureParams> for MixtureRepr {
    fn from(p: MixtureParams) -> Self {
        MixtureRepr {
            weights: p.weights,
            components: p.components,
        }
    }
}

impl MixtureParams {
    pub fn new(weights: Vec<f64>, components: Vec<GaussianComponent>) -> Result<Self> {
        if weights.is_empty() {
            return Err(MixError::Invariant("mixture needs at least one component".into()));
        }
        if weights.len() != components.len() {
            return Err(MixError::Dimension {
                expected: weights.len(),
                got: components.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(MixError::Invariant(format!("weights must be nonnegative: {weights:?}")));
        }
        let sum: f64 = weights.iter().sum();
        if sum == 0.0 {
            return Err(MixError::Invariant("all mixture weights are zero".into()));
        }
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(MixError::Invariant(format!("weights sum to {sum}, not 1")));
        }
        let d = components[0].dim();
        if let Some(c) = components.iter().find(|c| c.dim() != d) {
            return Err(MixError::Dimension {
                expected: d,
                got: c.dim(),
            });
        }
        Ok(MixtureParams {
            weights,
            components,
        })
    }

    pub fn single(component: GaussianComponent) -> Self {
        MixtureParams {
            weights: vec![1.0],
            components: vec![component],
        }
    }

    pub fn g(&self) -> usize {
        self.weights.len()
    }

    pub fn d(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    /// All covariances multiplied by `c`.
    pub fn with_scaled_covariances(&self, c: f64) -> Result<Self> {
        let components = self
            .components
            .iter()
            .map(|comp| comp.scaled(c))
            .collect::<Result<Vec<_>>>()?;
        MixtureParams::new(self.weights.clone(), components)
    }

    pub(crate) fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        let mut terms = [0.0_f64; 32];
        let mut heap;
        let buf: &mut [f64] = if self.g() <= terms.len() {
            &mut terms[..self.g()]
        } else {
            heap = vec![0.0; self.g()];
            &mut heap
        };
        let mut k = 0;
        for (w, comp) in self.weights.iter().zip(&self.components) {
            if *w > 0.0 {
                buf[k] = w.ln() + comp.log_density_unchecked(x);
                k += 1;
            }
        }
        log_sum_exp(&buf[..k])
    }

    /// `log sum_z pi_z phi(x; mu_z, Sigma_z)`; zero-weight components are skipped.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.d() {
            return Err(MixError::Dimension {
                expected: self.d(),
                got: x.len(),
            });
        }
        Ok(self.log_density_unchecked(x))
    }

    pub fn log_likelihood(&self, data: &Dataset) -> Result<f64> {
        log_likelihood(data, self)
    }
}

pub fn log_mixture_density(x: &[f64], params: &MixtureParams) -> Result<f64> {
    params.log_density(x)
}

/// Sum of per-row log mixture densities.
pub fn log_likelihood(data: &Dataset, params: &MixtureParams) -> Result<f64> {
    if data.n() == 0 {
        return Err(MixError::EmptyData);
    }
    if data.d() != params.d() {
        return Err(MixError::Dimension {
            expected: params.d(),
            got: data.d(),
        });
    }
    Ok(data.rows().map(|x| params.log_density_unchecked(x)).sum())
}

/// Draws `n` rows: component index by weight, then the component's normal.
pub fn sample<R: Rng + ?Sized>(params: &MixtureParams, n: usize, rng: &mut R) -> Result<Dataset> {
    if n == 0 {
        return Err(MixError::EmptyData);
    }
    let d = params.d();
    let picker = WeightedIndex::new(params.weights())
        .map_err(|e| MixError::Invariant(format!("bad weights: {e}")))?;
    let mut values = vec![0.0; n * d];
    for row in values.chunks_exact_mut(d) {
        let z = picker.sample(rng);
        params.components[z].sample_into(rng, row);
    }
    Dataset::new(values, n, d)
}

/// `log sum exp(v)`; `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + s.ln()
}
