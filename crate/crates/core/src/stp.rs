//! Sequential testing of `H_1, H_2, ...` and the AIC/BIC point estimates.
//!
//! The procedure tests `H_g` for `g = 1, 2, ...` at a fixed level and stops
//! at the first non-rejection, returning that `g`. Because the hypotheses are
//! nested this is a closed testing procedure, so `Pr(g0 >= g_hat) >= 1 - alpha`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::em::{fit_mle, FitConfig};
use crate::error::{MixError, Result};
use crate::order_test::{random_split, SplitPlan, SplitSizes, SplitTester, TestConfig, TestOutcome};
use crate::seed;

pub const DEFAULT_G_MAX: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AlphaSchedule {
    Fixed { alpha: f64 },
    /// `alpha = n1^(-kappa)`.
    Power { kappa: f64 },
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        AlphaSchedule::Fixed { alpha: 0.05 }
    }
}

impl AlphaSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AlphaSchedule::Fixed { alpha } if !(alpha > 0.0 && alpha < 1.0) => {
                Err(MixError::Config(format!("alpha must lie in (0, 1), got {alpha}")))
            }
            AlphaSchedule::Power { kappa } if !(kappa > 0.0 && kappa.is_finite()) => {
                Err(MixError::Config(format!("kappa must be positive, got {kappa}")))
            }
            _ => Ok(()),
        }
    }
}

/// Level used for a first half of size `n1`. Power schedules are clamped to
/// `(0, 0.5]`.
pub fn resolve_alpha(schedule: &AlphaSchedule, n1: usize) -> f64 {
    match *schedule {
        AlphaSchedule::Fixed { alpha } => alpha,
        AlphaSchedule::Power { kappa } => (n1.max(1) as f64)
            .powf(-kappa)
            .clamp(f64::MIN_POSITIVE, 0.5),
    }
}

/// Anything that can produce the local test of `H_g`.
pub trait LevelTest {
    fn test_level(&mut self, g: usize) -> Result<TestOutcome>;

    /// Largest `g` the test can be run at.
    fn max_level(&self) -> usize {
        usize::MAX
    }
}

impl LevelTest for SplitTester {
    fn test_level(&mut self, g: usize) -> Result<TestOutcome> {
        self.test(g)
    }

    fn max_level(&self) -> usize {
        self.max_testable_g()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StpOutcome {
    pub g_hat: usize,
    pub trail: Vec<TestOutcome>,
    pub alpha_used: f64,
    pub hit_cap: bool,
    /// The cap actually applied: `g_max` lowered if the halves are too small.
    pub g_max: usize,
    pub split: SplitSizes,
    pub seed: u64,
}

impl StpOutcome {
    /// Recomputes `g_hat` from the trail as one plus the number of leading
    /// rejections, capped at `g_max`.
    pub fn closed_testing_g_hat(&self) -> usize {
        g_hat_from_trail(&self.trail, self.alpha_used, self.g_max)
    }
}

pub fn g_hat_from_trail(trail: &[TestOutcome], alpha: f64, g_max: usize) -> usize {
    let leading = trail.iter().take_while(|t| t.rejects(alpha)).count();
    (leading + 1).min(g_max)
}

/// Runs the procedure against any level test.
///
/// Returns `(g_hat, trail, hit_cap)`.
pub fn run_stp_with<T: LevelTest + ?Sized>(
    tester: &mut T,
    alpha: f64,
    g_max: usize,
) -> Result<(usize, Vec<TestOutcome>, bool)> {
    if g_max == 0 {
        return Err(MixError::Config("g_max must be at least 1".into()));
    }
    let mut trail = Vec::new();
    for g in 1..=g_max {
        let outcome = tester.test_level(g).map_err(|e| MixError::at_level(g, e))?;
        let reject = outcome.rejects(alpha);
        trail.push(outcome);
        if !reject {
            return Ok((g, trail, false));
        }
    }
    Ok((g_max, trail, true))
}

/// Runs the procedure on a given split.
pub fn run_stp_on_plan(
    data: &Dataset,
    plan: &SplitPlan,
    test_cfg: &TestConfig,
    schedule: &AlphaSchedule,
    g_max: usize,
) -> Result<StpOutcome> {
    schedule.validate()?;
    let mut tester = SplitTester::new(data, plan, *test_cfg)?;
    let g_max_eff = g_max.min(tester.max_testable_g());
    if g_max_eff == 0 {
        let s = plan.sizes();
        return Err(MixError::InsufficientData(format!(
            "halves of sizes {} and {} are too small for l = {}",
            s.n1, s.n2, test_cfg.l
        )));
    }
    let alpha = resolve_alpha(schedule, plan.sizes().n1);
    let (g_hat, trail, hit_cap) = run_stp_with(&mut tester, alpha, g_max_eff)?;
    let out = StpOutcome {
        g_hat,
        trail,
        alpha_used: alpha,
        hit_cap,
        g_max: g_max_eff,
        split: plan.sizes(),
        seed: test_cfg.fit.seed,
    };
    debug_assert_eq!(out.closed_testing_g_hat(), out.g_hat);
    Ok(out)
}

/// Draws one random split with `floor(n / 2)` rows in the first half and
/// runs the procedure on it.
pub fn run_stp<R: Rng + ?Sized>(
    data: &Dataset,
    test_cfg: &TestConfig,
    schedule: &AlphaSchedule,
    g_max: usize,
    rng: &mut R,
) -> Result<StpOutcome> {
    let plan = random_split(data.n(), data.n() / 2, rng)?;
    run_stp_on_plan(data, &plan, test_cfg, schedule, g_max)
}

/// Free parameters of a `g`-component full-covariance Gaussian mixture in
/// dimension `d`.
pub fn dim_g(g: usize, d: usize) -> usize {
    (g - 1) + g * d + g * d * (d + 1) / 2
}

/// `(AIC, BIC)` on the per-observation scale.
pub fn ic_from_loglik(loglik: f64, n: usize, d: usize, g: usize) -> (f64, f64) {
    let nf = n as f64;
    let k = dim_g(g, d) as f64;
    let fit = -2.0 * loglik / nf;
    (2.0 * k / nf + fit, nf.ln() * k / nf + fit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcRow {
    pub g: usize,
    pub dim: usize,
    /// `None` when the fit at this `g` failed.
    pub loglik: Option<f64>,
    pub aic: Option<f64>,
    pub bic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcTable {
    pub n: usize,
    pub d: usize,
    pub rows: Vec<IcRow>,
    pub g_aic: Option<usize>,
    pub g_bic: Option<usize>,
}

impl IcTable {
    /// Builds the table from per-`g` log-likelihoods (index 0 is `g = 1`).
    pub fn from_logliks(n: usize, d: usize, logliks: &[Option<f64>]) -> Self {
        let rows: Vec<IcRow> = logliks
            .iter()
            .enumerate()
            .map(|(i, &ll)| {
                let g = i + 1;
                let ic = ll.map(|ll| ic_from_loglik(ll, n, d, g));
                IcRow {
                    g,
                    dim: dim_g(g, d),
                    loglik: ll,
                    aic: ic.map(|v| v.0),
                    bic: ic.map(|v| v.1),
                }
            })
            .collect();
        let g_aic = argmin(&rows, |r| r.aic);
        let g_bic = argmin(&rows, |r| r.bic);
        IcTable {
            n,
            d,
            rows,
            g_aic,
            g_bic,
        }
    }
}

// Strict comparison keeps the smallest g among ties.
fn argmin(rows: &[IcRow], key: impl Fn(&IcRow) -> Option<f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for r in rows {
        if let Some(v) = key(r) {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((r.g, v));
            }
        }
    }
    best.map(|(g, _)| g)
}

/// Fits `g = 1..=g_max` on the full data and tabulates AIC and BIC. A fit
/// that degenerates marks its row as missing; other errors propagate.
pub fn information_criteria(data: &Dataset, g_max: usize, cfg: &FitConfig) -> Result<IcTable> {
    if g_max == 0 {
        return Err(MixError::Config("g_max must be at least 1".into()));
    }
    if data.n() < g_max {
        return Err(MixError::InsufficientData(format!(
            "{} rows cannot fit {g_max} components",
            data.n()
        )));
    }
    let mut logliks = Vec::with_capacity(g_max);
    for g in 1..=g_max {
        let fit_cfg = cfg.with_seed(seed::derive(cfg.seed, seed::IC, g as u64));
        match fit_mle(data, g, &fit_cfg) {
            Ok(fit) => logliks.push(Some(fit.log_likelihood)),
            Err(MixError::DegenerateFit { .. } | MixError::PositiveDefinite(_)) => logliks.push(None),
            Err(e) => return Err(MixError::at_level(g, e)),
        }
    }
    Ok(IcTable::from_logliks(data.n(), data.d(), &logliks))
}
