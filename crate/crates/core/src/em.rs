//! Maximum-likelihood fitting of full-covariance Gaussian mixtures by EM.
//!
//! Each restart seeds the means with k-means++ (D^2 sampling over the rows),
//! starts every component at the pooled sample covariance and uses uniform
//! weights. The restart with the largest final log-likelihood wins. A
//! restart whose weights collapse below `COLLAPSE_WEIGHT`, or whose
//! covariance loses positive definiteness even after the ridge, is
//! discarded and replaced by a fresh seeding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{MixError, Result};
use crate::mixture::{log_likelihood, Factor, GaussianComponent, MixtureParams};
use crate::seed;

pub const COLLAPSE_WEIGHT: f64 = 1e-10;
/// Attempts allowed per requested restart before giving up.
const ATTEMPTS_PER_RESTART: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Ridge added to every covariance, as a fraction of `trace(S)/d` of the
    /// pooled sample covariance `S`.
    pub cov_ridge: f64,
    pub min_weight_floor: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            restarts: 8,
            max_iters: 1000,
            rel_tol: 1e-8,
            cov_ridge: 1e-6,
            min_weight_floor: 0.0,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(MixError::Config("restarts must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(MixError::Config("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(MixError::Config("rel_tol must be positive".into()));
        }
        if !(self.cov_ridge >= 0.0) || !(self.min_weight_floor >= 0.0) {
            return Err(MixError::Config("cov_ridge and min_weight_floor must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: MixtureParams,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub restart_index: usize,
}

/// One EM run with its per-iteration log-likelihood sequence.
#[derive(Debug, Clone)]
pub struct EmRun {
    pub result: FitResult,
    pub trace: Vec<f64>,
}

struct State<'a> {
    data: &'a Dataset,
    g: usize,
    d: usize,
    ridge: f64,
    weights: Vec<f64>,
    means: Vec<f64>,
    covs: Vec<f64>,
    factors: Vec<Factor>,
    resp: Vec<f64>,
}

enum Step {
    Ok,
    Collapsed(String),
}

impl<'a> State<'a> {
    fn new(data: &'a Dataset, g: usize, ridge: f64) -> Self {
        let (n, d) = (data.n(), data.d());
        State {
            data,
            g,
            d,
            ridge,
            weights: vec![1.0 / g as f64; g],
            means: vec![0.0; g * d],
            covs: vec![0.0; g * d * d],
            factors: Vec::with_capacity(g),
            resp: vec![0.0; n * g],
        }
    }

    fn refactor(&mut self) -> Step {
        let dd = self.d * self.d;
        self.factors.clear();
        for z in 0..self.g {
            match Factor::new(&self.covs[z * dd..(z + 1) * dd], self.d) {
                Some(f) => self.factors.push(f),
                None => return Step::Collapsed(format!("component {z} covariance not SPD")),
            }
        }
        Step::Ok
    }

    /// Fills responsibilities; returns the log-likelihood.
    fn e_step(&mut self) -> f64 {
        let (g, d) = (self.g, self.d);
        let log_w: Vec<f64> = self.weights.iter().map(|w| w.ln()).collect();
        let mut ll = 0.0;
        for (i, x) in self.data.rows().enumerate() {
            let r = &mut self.resp[i * g..(i + 1) * g];
            let mut max = f64::NEG_INFINITY;
            for z in 0..g {
                let v = log_w[z] + self.factors[z].log_density(x, &self.means[z * d..(z + 1) * d]);
                r[z] = v;
                max = max.max(v);
            }
            let mut s = 0.0;
            for v in r.iter_mut() {
                *v = (*v - max).exp();
                s += *v;
            }
            let inv = 1.0 / s;
            r.iter_mut().for_each(|v| *v *= inv);
            ll += max + s.ln();
        }
        ll
    }

    fn m_step(&mut self, weight_floor: f64) -> Step {
        let (n, g, d) = (self.data.n(), self.g, self.d);
        let dd = d * d;
        let mut mass = vec![0.0; g];
        self.means.iter_mut().for_each(|v| *v = 0.0);
        for (i, x) in self.data.rows().enumerate() {
            let r = &self.resp[i * g..(i + 1) * g];
            for z in 0..g {
                mass[z] += r[z];
                let m = &mut self.means[z * d..(z + 1) * d];
                for k in 0..d {
                    m[k] += r[z] * x[k];
                }
            }
        }
        for z in 0..g {
            let w = mass[z] / n as f64;
            if !(w >= COLLAPSE_WEIGHT) {
                return Step::Collapsed(format!("component {z} weight {w:e}"));
            }
            self.weights[z] = w;
            self.means[z * d..(z + 1) * d]
                .iter_mut()
                .for_each(|v| *v /= mass[z]);
        }
        self.covs.iter_mut().for_each(|v| *v = 0.0);
        let mut diff = vec![0.0; d];
        for (i, x) in self.data.rows().enumerate() {
            let r = &self.resp[i * g..(i + 1) * g];
            for z in 0..g {
                let m = &self.means[z * d..(z + 1) * d];
                for k in 0..d {
                    diff[k] = x[k] - m[k];
                }
                let c = &mut self.covs[z * dd..(z + 1) * dd];
                for a in 0..d {
                    let ra = r[z] * diff[a];
                    for b in 0..=a {
                        c[a * d + b] += ra * diff[b];
                    }
                }
            }
        }
        for z in 0..g {
            let c = &mut self.covs[z * dd..(z + 1) * dd];
            for a in 0..d {
                for b in 0..=a {
                    let v = c[a * d + b] / mass[z] + if a == b { self.ridge } else { 0.0 };
                    c[a * d + b] = v;
                    c[b * d + a] = v;
                }
            }
        }
        if weight_floor > 0.0 {
            self.weights.iter_mut().for_each(|w| *w = w.max(weight_floor));
            let s: f64 = self.weights.iter().sum();
            self.weights.iter_mut().for_each(|w| *w /= s);
        }
        self.refactor()
    }

    fn to_params(&self) -> Result<MixtureParams> {
        let (d, dd) = (self.d, self.d * self.d);
        let comps = (0..self.g)
            .map(|z| {
                GaussianComponent::new(
                    self.means[z * d..(z + 1) * d].to_vec(),
                    self.covs[z * dd..(z + 1) * dd].to_vec(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let s: f64 = self.weights.iter().sum();
        MixtureParams::new(self.weights.iter().map(|w| w / s).collect(), comps)
    }
}

/// k-means++ seeding: first center uniform, then proportional to squared
/// distance from the nearest chosen center.
pub fn kmeans_pp_centers<R: Rng + ?Sized>(data: &Dataset, g: usize, rng: &mut R) -> Vec<f64> {
    let (n, d) = (data.n(), data.d());
    let mut centers = Vec::with_capacity(g * d);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(data.row(first));
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut dist: Vec<f64> = data.rows().map(|x| sq(x, data.row(first))).collect();
    for _ in 1..g {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 && total.is_finite() {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = data.row(pick).to_vec();
        for (i, x) in data.rows().enumerate() {
            dist[i] = dist[i].min(sq(x, &c));
        }
        centers.extend_from_slice(&c);
    }
    centers
}

fn ridge_for(data: &Dataset, cfg: &FitConfig) -> (Vec<f64>, f64) {
    let d = data.d();
    let pooled = data.covariance();
    let trace: f64 = (0..d).map(|i| pooled[i * d + i]).sum();
    (pooled, cfg.cov_ridge * trace / d as f64)
}

fn run_from_state(mut st: State<'_>, cfg: &FitConfig, restart_index: usize) -> Result<EmRun> {
    if let Step::Collapsed(why) = st.refactor() {
        return Err(MixError::DegenerateFit { g: st.g, reason: why });
    }
    let mut ll = st.e_step();
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        if let Step::Collapsed(why) = st.m_step(cfg.min_weight_floor) {
            return Err(MixError::DegenerateFit { g: st.g, reason: why });
        }
        iterations += 1;
        let next = st.e_step();
        if !next.is_finite() {
            return Err(MixError::DegenerateFit {
                g: st.g,
                reason: "non-finite log-likelihood".into(),
            });
        }
        trace.push(next);
        let change = (next - ll).abs();
        ll = next;
        if change <= cfg.rel_tol * ll.abs() {
            converged = true;
            break;
        }
    }
    let params = st.to_params()?;
    Ok(EmRun {
        result: FitResult {
            params,
            log_likelihood: ll,
            converged,
            iterations,
            restart_index,
        },
        trace,
    })
}

/// Runs EM from explicit starting parameters.
pub fn em_from(data: &Dataset, init: &MixtureParams, cfg: &FitConfig) -> Result<EmRun> {
    if init.d() != data.d() {
        return Err(MixError::Dimension {
            expected: data.d(),
            got: init.d(),
        });
    }
    let (_, ridge) = ridge_for(data, cfg);
    let mut st = State::new(data, init.g(), ridge);
    let (d, dd) = (data.d(), data.d() * data.d());
    for (z, comp) in init.components().iter().enumerate() {
        st.means[z * d..(z + 1) * d].copy_from_slice(comp.mean());
        st.covs[z * dd..(z + 1) * dd].copy_from_slice(comp.cov());
    }
    st.weights.copy_from_slice(init.weights());
    run_from_state(st, cfg, 0)
}

fn seeded_run(data: &Dataset, g: usize, cfg: &FitConfig, attempt: usize) -> Result<EmRun> {
    let (pooled, ridge) = ridge_for(data, cfg);
    let mut rng = seed::derive_rng(cfg.seed, seed::RESTART, attempt as u64);
    let mut st = State::new(data, g, ridge);
    st.means = kmeans_pp_centers(data, g, &mut rng);
    let d = data.d();
    for z in 0..g {
        let c = &mut st.covs[z * d * d..(z + 1) * d * d];
        c.copy_from_slice(&pooled);
        (0..d).for_each(|i| c[i * d + i] += ridge);
    }
    run_from_state(st, cfg, attempt)
}

/// All successful restarts, in attempt order.
pub fn fit_mle_runs(data: &Dataset, g: usize, cfg: &FitConfig) -> Result<Vec<EmRun>> {
    cfg.validate()?;
    if g == 0 {
        return Err(MixError::Config("number of components must be positive".into()));
    }
    if data.n() < g {
        return Err(MixError::InsufficientData(format!(
            "{} rows cannot support {g} components",
            data.n()
        )));
    }
    let mut runs = Vec::with_capacity(cfg.restarts);
    let mut last_err = None;
    let max_attempts = cfg.restarts * ATTEMPTS_PER_RESTART;
    let mut attempt = 0;
    while runs.len() < cfg.restarts && attempt < max_attempts {
        match seeded_run(data, g, cfg, attempt) {
            Ok(run) => runs.push(run),
            Err(e @ MixError::DegenerateFit { .. }) | Err(e @ MixError::PositiveDefinite(_)) => {
                last_err = Some(e)
            }
            Err(e) => return Err(e),
        }
        attempt += 1;
    }
    if runs.is_empty() {
        return Err(MixError::DegenerateFit {
            g,
            reason: format!(
                "all {max_attempts} attempts collapsed (last: {})",
                last_err.map(|e| e.to_string()).unwrap_or_default()
            ),
        });
    }
    Ok(runs)
}

/// Best-of-restarts EM maximum-likelihood fit with `g` components.
pub fn fit_mle(data: &Dataset, g: usize, cfg: &FitConfig) -> Result<FitResult> {
    let runs = fit_mle_runs(data, g, cfg)?;
    let best = runs
        .into_iter()
        .reduce(|best, run| {
            if run.result.log_likelihood > best.result.log_likelihood {
                run
            } else {
                best
            }
        })
        .expect("at least one run");
    let mut result = best.result;
    // Re-evaluate through the public density path so callers see one number.
    result.log_likelihood = log_likelihood(data, &result.params)?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::sample;
    use crate::seed::rng_from;

    fn two_blobs(n: usize, seed: u64) -> Dataset {
        let p = MixtureParams::new(
            vec![0.5, 0.5],
            vec![
                GaussianComponent::univariate(-5.0, 1.0).unwrap(),
                GaussianComponent::univariate(5.0, 1.0).unwrap(),
            ],
        )
        .unwrap();
        sample(&p, n, &mut rng_from(seed)).unwrap()
    }

    #[test]
    fn single_component_is_closed_form() {
        let p = MixtureParams::single(
            GaussianComponent::new(vec![1.0, -2.0], vec![2.0, 0.5, 0.5, 1.0]).unwrap(),
        );
        let data = sample(&p, 500, &mut rng_from(1)).unwrap();
        let cfg = FitConfig::default();
        let fit = fit_mle(&data, 1, &cfg).unwrap();
        let mean = data.mean();
        let mut cov = data.covariance();
        let ridge = cfg.cov_ridge * (cov[0] + cov[3]) / 2.0;
        cov[0] += ridge;
        cov[3] += ridge;
        let comp = &fit.params.components()[0];
        for (a, b) in comp.mean().iter().zip(&mean) {
            assert!((a - b).abs() < 1e-6);
        }
        for (a, b) in comp.cov().iter().zip(&cov) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(fit.converged);
    }

    #[test]
    fn log_likelihood_is_monotone_and_consistent() {
        let data = two_blobs(600, 2);
        let cfg = FitConfig::default().with_seed(9);
        for g in 1..=4 {
            let runs = fit_mle_runs(&data, g, &cfg).unwrap();
            for run in &runs {
                for w in run.trace.windows(2) {
                    assert!(w[1] >= w[0] - 1e-9, "g={g}: {} -> {}", w[0], w[1]);
                }
                let recomputed = log_likelihood(&data, &run.result.params).unwrap();
                let ll = run.result.log_likelihood;
                assert!((recomputed - ll).abs() <= 1e-8 * ll.abs());
            }
        }
    }

    #[test]
    fn one_point_per_component_with_ridge() {
        let data = Dataset::new(vec![0.0, 1.0, 3.0, 7.0], 4, 1).unwrap();
        let fit = fit_mle(&data, 4, &FitConfig::default()).unwrap();
        assert!(fit.log_likelihood.is_finite());
        let no_ridge = FitConfig {
            cov_ridge: 0.0,
            ..FitConfig::default()
        };
        match fit_mle(&data, 4, &no_ridge) {
            Ok(f) => assert!(f.log_likelihood.is_finite()),
            Err(e) => assert!(matches!(e, MixError::DegenerateFit { .. })),
        }
    }

    #[test]
    fn more_components_than_rows_is_rejected() {
        let data = Dataset::new(vec![0.0, 1.0], 2, 1).unwrap();
        assert!(matches!(
            fit_mle(&data, 3, &FitConfig::default()),
            Err(MixError::InsufficientData(_))
        ));
    }

    #[test]
    fn identical_rows_collapse() {
        let data = Dataset::new(vec![2.0; 10], 10, 1).unwrap();
        assert!(matches!(
            fit_mle(&data, 2, &FitConfig::default()),
            Err(MixError::DegenerateFit { .. })
        ));
    }

    #[test]
    fn fits_are_seed_deterministic() {
        let data = two_blobs(300, 5);
        let cfg = FitConfig::default().with_seed(77);
        assert_eq!(fit_mle(&data, 3, &cfg).unwrap(), fit_mle(&data, 3, &cfg).unwrap());
    }

    #[test]
    fn kmeans_pp_picks_distinct_rows() {
        let data = Dataset::new(vec![0.0, 0.0, 10.0, 10.0], 4, 1).unwrap();
        let c = kmeans_pp_centers(&data, 2, &mut rng_from(4));
        assert_ne!(c[0], c[1]);
    }
}
