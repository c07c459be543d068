//! Random mixture parameters with a prescribed average pairwise overlap.
//!
//! The overlap of components `i` and `j` is the pair of misclassification
//! probabilities
//!
//! ```text
//! w(j|i) = Pr_{x ~ N(mu_i, S_i)} [ pi_j phi_j(x) >= pi_i phi_i(x) ]
//! ```
//!
//! and the average overlap is `2 / (g (g - 1)) * sum_{i<j} (w(j|i) + w(i|j))`.
//! Both are estimated by Monte Carlo. Calibration scales every covariance by
//! a common factor, found by bisection on `log c` with common random numbers
//! so the estimated overlap is a deterministic step function of `c`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{MixError, Result};
use crate::mixture::{sample, GaussianComponent, MixtureParams};
use crate::seed;

/// Accepted relative deviation between achieved and target overlap.
pub const OVERLAP_REL_TOL: f64 = 0.05;
const MAX_BRACKET_STEPS: usize = 60;
const MAX_BISECTION_STEPS: usize = 60;

fn default_mc_samples() -> usize {
    20_000
}

fn default_eigen_range() -> (f64, f64) {
    (0.05, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub g0: usize,
    pub d: usize,
    pub omega_bar_target: f64,
    /// Lower bound on every mixing weight; `None` means `1 / (2 g0)`.
    #[serde(default)]
    pub min_weight: Option<f64>,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Range of the log-uniform covariance eigenvalues before scaling.
    #[serde(default = "default_eigen_range")]
    pub eigen_range: (f64, f64),
}

impl GenSpec {
    pub fn new(g0: usize, d: usize, omega_bar_target: f64, seed: u64) -> Self {
        GenSpec {
            g0,
            d,
            omega_bar_target,
            min_weight: None,
            mc_samples: default_mc_samples(),
            seed,
            eigen_range: default_eigen_range(),
        }
    }

    pub fn min_weight(&self) -> f64 {
        self.min_weight.unwrap_or(0.5 / self.g0 as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.g0 == 0 || self.d == 0 {
            return Err(MixError::Config("g0 and d must be positive".into()));
        }
        if self.g0 >= 2 && !(self.omega_bar_target > 0.0 && self.omega_bar_target < 1.0) {
            return Err(MixError::Config(format!(
                "omega_bar_target must lie in (0, 1), got {}",
                self.omega_bar_target
            )));
        }
        let mw = self.min_weight();
        if !(0.0..=1.0 / self.g0 as f64 + 1e-15).contains(&mw) {
            return Err(MixError::Config(format!(
                "min_weight {mw} outside [0, 1/g0]"
            )));
        }
        if self.mc_samples == 0 {
            return Err(MixError::Config("mc_samples must be positive".into()));
        }
        let (lo, hi) = self.eigen_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(MixError::Config("eigen_range must satisfy 0 < lo <= hi".into()));
        }
        Ok(())
    }

    /// Generates with an RNG seeded from `self.seed`.
    pub fn generate(&self) -> Result<GeneratedMixture> {
        generate_mixture_params(self, &mut seed::rng_from(self.seed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapEstimate {
    /// Average pairwise overlap, clamped to `[0, 1]`.
    pub omega_bar: f64,
    pub std_error: f64,
    /// Set when the unclamped estimate exceeded 1 (e.g. identical components).
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedMixture {
    #[serde(flatten)]
    pub params: MixtureParams,
    pub achieved_omega_bar: f64,
    pub target: f64,
    pub scale: f64,
}

/// Standard-normal draws shared across calibration steps.
struct OverlapDraws {
    z: Vec<f64>,
    m: usize,
    d: usize,
}

impl OverlapDraws {
    fn new<R: Rng + ?Sized>(g: usize, d: usize, m: usize, rng: &mut R) -> Self {
        let z = (0..g * m * d).map(|_| rng.sample(StandardNormal)).collect();
        OverlapDraws { z, m, d }
    }

    fn estimate(&self, params: &MixtureParams) -> OverlapEstimate {
        let (g, d, m) = (params.g(), self.d, self.m);
        let comps = params.components();
        let log_w: Vec<f64> = params.weights().iter().map(|w| w.ln()).collect();
        let mut x = vec![0.0; d];
        let mut total = 0.0;
        let mut var = 0.0;
        for i in 0..g {
            let chol = &comps[i].factor().chol;
            let mean = comps[i].mean();
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for s in 0..m {
                let z = &self.z[(i * m + s) * d..(i * m + s + 1) * d];
                for r in 0..d {
                    let mut v = mean[r];
                    for c in 0..=r {
                        v += chol[r * d + c] * z[c];
                    }
                    x[r] = v;
                }
                let own = log_w[i] + comps[i].log_density_unchecked(&x);
                let hits = (0..g)
                    .filter(|&j| j != i && log_w[j] + comps[j].log_density_unchecked(&x) >= own)
                    .count() as f64;
                sum += hits;
                sum_sq += hits * hits;
            }
            let mean_hits = sum / m as f64;
            total += mean_hits;
            if m > 1 {
                let v = (sum_sq - m as f64 * mean_hits * mean_hits) / (m as f64 - 1.0);
                var += v.max(0.0) / m as f64;
            }
        }
        let norm = 2.0 / (g as f64 * (g as f64 - 1.0));
        let raw = norm * total;
        OverlapEstimate {
            omega_bar: raw.min(1.0),
            std_error: norm * var.sqrt(),
            degenerate: raw > 1.0,
        }
    }
}

/// Monte Carlo average pairwise overlap using `m` draws per component.
pub fn pairwise_overlap_mc<R: Rng + ?Sized>(
    params: &MixtureParams,
    m: usize,
    rng: &mut R,
) -> Result<OverlapEstimate> {
    if params.g() < 2 {
        return Err(MixError::InsufficientComponents(params.g()));
    }
    if m == 0 {
        return Err(MixError::Config("overlap needs at least one draw".into()));
    }
    Ok(OverlapDraws::new(params.g(), params.d(), m, rng).estimate(params))
}

/// Haar-random orthogonal matrix from the QR decomposition of a Gaussian matrix.
fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = a.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn random_covariance<R: Rng + ?Sized>(d: usize, range: (f64, f64), rng: &mut R) -> Vec<f64> {
    let q = random_orthogonal(d, rng);
    let (lo, hi) = (range.0.ln(), range.1.ln());
    let eig: Vec<f64> = (0..d)
        .map(|_| {
            let u: f64 = rng.random();
            (lo + u * (hi - lo)).exp()
        })
        .collect();
    let mut cov = vec![0.0; d * d];
    for a in 0..d {
        for b in 0..=a {
            let v: f64 = (0..d).map(|k| q[(a, k)] * eig[k] * q[(b, k)]).sum();
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    cov
}

/// Uniform on `{w in simplex : w_z >= floor}`, as an affine image of the
/// uniform simplex.
fn constrained_weights<R: Rng + ?Sized>(g: usize, floor: f64, rng: &mut R) -> Vec<f64> {
    let e: Vec<f64> = (0..g).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = e.iter().sum();
    let slack = (1.0 - g as f64 * floor).max(0.0);
    let mut w: Vec<f64> = e.iter().map(|v| floor + slack * v / s).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Unscaled random parameters: uniform weights above the floor, means in
/// the unit cube, rotated log-uniform-spectrum covariances.
pub fn draw_base_params<R: Rng + ?Sized>(spec: &GenSpec, rng: &mut R) -> Result<MixtureParams> {
    spec.validate()?;
    let (g, d) = (spec.g0, spec.d);
    let weights = constrained_weights(g, spec.min_weight(), rng);
    let mut comps = Vec::with_capacity(g);
    for _ in 0..g {
        let mean: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        comps.push(GaussianComponent::new(mean, random_covariance(d, spec.eigen_range, rng))?);
    }
    MixtureParams::new(weights, comps)
}

/// Draws base parameters and rescales all covariances so the estimated
/// average overlap matches `spec.omega_bar_target` to within 5% relative.
pub fn generate_mixture_params<R: Rng + ?Sized>(
    spec: &GenSpec,
    rng: &mut R,
) -> Result<GeneratedMixture> {
    let base = draw_base_params(spec, rng)?;
    if spec.g0 == 1 {
        return Ok(GeneratedMixture {
            params: base,
            achieved_omega_bar: 0.0,
            target: spec.omega_bar_target,
            scale: 1.0,
        });
    }
    calibrate_overlap(&base, spec.omega_bar_target, spec.mc_samples, rng)
}

struct ScaleSearch<'a> {
    base: &'a MixtureParams,
    draws: OverlapDraws,
    target: f64,
    /// `(log c, overlap)` closest to the target so far.
    best: (f64, f64),
    /// Smallest and largest overlap observed.
    seen: (f64, f64),
}

impl ScaleSearch<'_> {
    fn eval(&mut self, log_c: f64) -> Result<f64> {
        let scaled = self.base.with_scaled_covariances(log_c.exp())?;
        let v = self.draws.estimate(&scaled).omega_bar;
        self.seen = (self.seen.0.min(v), self.seen.1.max(v));
        if self.best.1.is_nan() || (v - self.target).abs() < (self.best.1 - self.target).abs() {
            self.best = (log_c, v);
        }
        Ok(v)
    }

    fn done(&self) -> bool {
        (self.best.1 - self.target).abs() <= OVERLAP_REL_TOL * self.target
    }

    fn unreachable(&self) -> MixError {
        MixError::OverlapUnreachable {
            target: self.target,
            lo: self.seen.0,
            hi: self.seen.1,
        }
    }
}

/// Finds a common covariance scale `c` such that the overlap of `base` with
/// covariances `c * S_z` is within 5% of `target`.
pub fn calibrate_overlap<R: Rng + ?Sized>(
    base: &MixtureParams,
    target: f64,
    mc_samples: usize,
    rng: &mut R,
) -> Result<GeneratedMixture> {
    if base.g() < 2 {
        return Err(MixError::InsufficientComponents(base.g()));
    }
    let mut search = ScaleSearch {
        base,
        draws: OverlapDraws::new(base.g(), base.d(), mc_samples, rng),
        target,
        best: (0.0, f64::NAN),
        seen: (f64::INFINITY, f64::NEG_INFINITY),
    };

    // Bracket in log-scale by doubling or halving, then bisect.
    let step = std::f64::consts::LN_2;
    let upward = search.eval(0.0)? < target;
    let (mut lo, mut hi) = (0.0, 0.0);
    let mut bracketed = search.done();
    let mut edge = 0.0;
    for _ in 0..MAX_BRACKET_STEPS {
        if bracketed {
            break;
        }
        let next = if upward { edge + step } else { edge - step };
        let v = search.eval(next)?;
        if search.done() || (upward && v >= target) || (!upward && v <= target) {
            (lo, hi) = if upward { (edge, next) } else { (next, edge) };
            bracketed = true;
        }
        edge = next;
    }
    if !bracketed {
        return Err(search.unreachable());
    }
    for _ in 0..MAX_BISECTION_STEPS {
        if search.done() {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if search.eval(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if !search.done() {
        return Err(search.unreachable());
    }
    let (log_c, achieved) = search.best;
    let scale = log_c.exp();
    Ok(GeneratedMixture {
        params: base.with_scaled_covariances(scale)?,
        achieved_omega_bar: achieved,
        target,
        scale,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Monte Carlo `KL(f0 || f)` from `m` draws of `f0`.
pub fn kl_mc<R: Rng + ?Sized>(
    f0: &MixtureParams,
    f: &MixtureParams,
    m: usize,
    rng: &mut R,
) -> Result<KlEstimate> {
    if f0.d() != f.d() {
        return Err(MixError::Dimension {
            expected: f0.d(),
            got: f.d(),
        });
    }
    let draws = sample(f0, m, rng)?;
    let terms: Vec<f64> = draws
        .rows()
        .map(|x| f0.log_density_unchecked(x) - f.log_density_unchecked(x))
        .collect();
    let mean = terms.iter().sum::<f64>() / m as f64;
    let std_error = if m > 1 {
        let var = terms.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (m as f64 - 1.0);
        (var / m as f64).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(KlEstimate {
        estimate: mean,
        std_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    fn pair(delta: f64) -> MixtureParams {
        MixtureParams::new(
            vec![0.5, 0.5],
            vec![
                GaussianComponent::univariate(0.0, 1.0).unwrap(),
                GaussianComponent::univariate(delta, 1.0).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn identical_components_are_clamped() {
        let est = pairwise_overlap_mc(&pair(0.0), 1000, &mut rng_from(1)).unwrap();
        assert_eq!(est.omega_bar, 1.0);
        assert!(est.degenerate);
    }

    #[test]
    fn disjoint_components_do_not_overlap() {
        let p = MixtureParams::new(
            vec![0.5, 0.5],
            vec![
                GaussianComponent::univariate(-50.0, 1.0).unwrap(),
                GaussianComponent::univariate(50.0, 1.0).unwrap(),
            ],
        )
        .unwrap();
        let est = pairwise_overlap_mc(&p, 100_000, &mut rng_from(2)).unwrap();
        assert!(est.omega_bar < 1e-6);
    }

    #[test]
    fn single_component_has_no_overlap() {
        assert!(matches!(
            pairwise_overlap_mc(&MixtureParams::single(GaussianComponent::univariate(0.0, 1.0).unwrap()), 10, &mut rng_from(0)),
            Err(MixError::InsufficientComponents(1))
        ));
    }

    #[test]
    fn weights_respect_floor() {
        let mut rng = rng_from(5);
        for g in [2, 5, 10] {
            let floor = 0.5 / g as f64;
            for _ in 0..200 {
                let w = constrained_weights(g, floor, &mut rng);
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(w.iter().all(|&v| v >= floor - 1e-15));
            }
        }
        let w = constrained_weights(4, 0.25, &mut rng);
        assert!(w.iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn random_covariances_are_spd_with_bounded_spectrum() {
        let mut rng = rng_from(8);
        for d in 1..=4 {
            let cov = random_covariance(d, (0.05, 1.0), &mut rng);
            let m = DMatrix::from_row_slice(d, d, &cov);
            let eig = m.symmetric_eigenvalues();
            assert!(eig.iter().all(|&e| e > 0.05 - 1e-9 && e < 1.0 + 1e-9), "{eig:?}");
        }
    }

    #[test]
    fn calibration_hits_target() {
        let spec = GenSpec::new(2, 1, 0.05, 3);
        let gen = spec.generate().unwrap();
        assert!((0.0475..=0.0525).contains(&gen.achieved_omega_bar));
        assert_eq!(spec.generate().unwrap(), gen);
    }

    #[test]
    fn unreachable_target_reports_range() {
        // Nearly concentric components of very different spread never reach 0.9.
        let base = MixtureParams::new(
            vec![0.5, 0.5],
            vec![
                GaussianComponent::univariate(0.0, 1.0).unwrap(),
                GaussianComponent::univariate(0.5, 0.05).unwrap(),
            ],
        )
        .unwrap();
        match calibrate_overlap(&base, 0.9, 2000, &mut rng_from(4)) {
            Err(MixError::OverlapUnreachable { hi, .. }) => assert!(hi < 0.9),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn kl_of_identical_is_zero() {
        let p = pair(2.0);
        let est = kl_mc(&p, &p, 1000, &mut rng_from(3)).unwrap();
        assert_eq!(est.estimate, 0.0);
    }
}
