//! Replicated simulation scenarios and their summary metrics.
//!
//! Replicate `i` of a scenario derives every random quantity from
//! `seed::derive(base_seed, REPLICATE, i)`, so any replicate can be re-run on
//! its own and reproduces bit for bit.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::em::FitConfig;
use crate::error::{MixError, Result};
use crate::mixture::{sample, MixtureParams};
use crate::order_test::{random_split, SplitTester, TestConfig, Variant};
use crate::seed;
use crate::simgen::GenSpec;
use crate::stp::{information_criteria, resolve_alpha, run_stp_with, AlphaSchedule, DEFAULT_G_MAX};

/// Fraction of failed replicates above which a scenario is aborted.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamMode {
    /// New mixture parameters for every replicate.
    #[default]
    Fresh,
    /// One parameter draw shared by all replicates.
    Fixed,
}

fn default_l() -> usize {
    1
}

fn default_variant() -> Variant {
    Variant::Swapped
}

fn default_g_max() -> usize {
    DEFAULT_G_MAX
}

fn default_mc_samples() -> usize {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub id: String,
    pub g0: usize,
    pub d: usize,
    #[serde(default)]
    pub omega_bar: f64,
    pub n1: usize,
    /// Defaults to `n1`.
    #[serde(default)]
    pub n2: Option<usize>,
    #[serde(default = "default_l")]
    pub l: usize,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default)]
    pub alpha_schedule: AlphaSchedule,
    pub r: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub run_ic: bool,
    #[serde(default = "default_g_max")]
    pub g_max: usize,
    /// Largest `g` in the AIC/BIC table; defaults to `g0 + 3`.
    #[serde(default)]
    pub ic_g_max: Option<usize>,
    #[serde(default)]
    pub param_mode: ParamMode,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    /// Parameters to sample from instead of generated ones. When set,
    /// `g0` must equal its component count and `omega_bar` is not used.
    #[serde(default)]
    pub params: Option<MixtureParams>,
}

impl Scenario {
    pub fn new(g0: usize, d: usize, omega_bar: f64, n1: usize, r: usize) -> Self {
        Scenario {
            id: String::new(),
            g0,
            d,
            omega_bar,
            n1,
            n2: None,
            l: default_l(),
            variant: default_variant(),
            alpha_schedule: AlphaSchedule::default(),
            r,
            base_seed: 0,
            run_ic: false,
            g_max: default_g_max(),
            ic_g_max: None,
            param_mode: ParamMode::Fresh,
            fit: FitConfig::default(),
            mc_samples: default_mc_samples(),
            params: None,
        }
    }

    pub fn n2(&self) -> usize {
        self.n2.unwrap_or(self.n1)
    }

    pub fn ic_g_max(&self) -> usize {
        self.ic_g_max.unwrap_or(self.g0 + 3)
    }

    pub fn alpha(&self) -> f64 {
        resolve_alpha(&self.alpha_schedule, self.n1)
    }

    pub fn label(&self) -> String {
        if self.id.is_empty() {
            format!(
                "g0={} omega={} d={} n1={} l={} {}",
                self.g0, self.omega_bar, self.d, self.n1, self.l, self.variant
            )
        } else {
            self.id.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(MixError::Config("r must be at least 1".into()));
        }
        if self.n1 == 0 || self.n2() == 0 {
            return Err(MixError::Config("n1 and n2 must be positive".into()));
        }
        if self.g_max == 0 || (self.run_ic && self.ic_g_max() == 0) {
            return Err(MixError::Config("g_max must be at least 1".into()));
        }
        self.alpha_schedule.validate()?;
        self.test_config(0).validate()?;
        match &self.params {
            Some(p) if p.g() != self.g0 || p.d() != self.d => Err(MixError::Config(format!(
                "explicit params have g = {}, d = {} but scenario says g0 = {}, d = {}",
                p.g(),
                p.d(),
                self.g0,
                self.d
            ))),
            Some(_) => Ok(()),
            None => self.gen_spec(0).validate(),
        }
    }

    fn gen_spec(&self, seed: u64) -> GenSpec {
        let mut spec = GenSpec::new(self.g0, self.d, self.omega_bar, seed);
        spec.mc_samples = self.mc_samples;
        spec
    }

    fn test_config(&self, seed: u64) -> TestConfig {
        TestConfig {
            l: self.l,
            variant: self.variant,
            fit: self.fit.with_seed(seed),
        }
    }
}

/// Seed of replicate `index`.
pub fn replicate_seed(base_seed: u64, index: usize) -> u64 {
    seed::derive(base_seed, seed::REPLICATE, index as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: usize,
    pub seed: u64,
    pub g_hat: usize,
    pub hit_cap: bool,
    /// `None` when the scenario supplies its own parameters.
    pub achieved_omega_bar: Option<f64>,
    /// `log p` of every test in the trail, for `g = 1, 2, ...`.
    pub log_p: Vec<f64>,
    /// Log-likelihoods of the null fits on the first half along the trail.
    pub null_logliks: Vec<f64>,
    pub g_aic: Option<usize>,
    pub g_bic: Option<usize>,
    /// Full-data log-likelihoods of the AIC/BIC fits, `g = 1, 2, ...`.
    pub ic_logliks: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub index: usize,
    pub seed: u64,
    pub error: String,
}

/// Summary of one scenario plus the per-replicate detail behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: Scenario,
    pub alpha: f64,
    pub cov_prop: f64,
    pub mean_comp: f64,
    pub corr_prop: f64,
    pub aic_mean_comp: Option<f64>,
    pub aic_corr_prop: Option<f64>,
    pub bic_mean_comp: Option<f64>,
    pub bic_corr_prop: Option<f64>,
    pub replicates: Vec<ReplicateRecord>,
    pub failures: Vec<ReplicateFailure>,
}

impl MetricsRow {
    pub fn g_hats(&self) -> Vec<usize> {
        self.replicates.iter().map(|r| r.g_hat).collect()
    }

    /// Empirical `Pr(g_hat > g0)`.
    pub fn fwer(&self) -> f64 {
        let over = self.replicates.iter().filter(|r| r.g_hat > self.scenario.g0).count();
        over as f64 / self.replicates.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cov_prop: f64,
    pub mean_comp: f64,
    pub corr_prop: f64,
}

/// Coverage, mean and exact-hit proportion of a list of estimates.
pub fn summarize(g_hats: &[usize], g0: usize) -> Result<Summary> {
    if g_hats.is_empty() {
        return Err(MixError::EmptyAggregate);
    }
    let r = g_hats.len() as f64;
    let frac = |pred: &dyn Fn(usize) -> bool| g_hats.iter().filter(|&&g| pred(g)).count() as f64 / r;
    Ok(Summary {
        cov_prop: frac(&|g| g <= g0),
        mean_comp: g_hats.iter().sum::<usize>() as f64 / r,
        corr_prop: frac(&|g| g == g0),
    })
}

fn scenario_params(s: &Scenario, seed: u64) -> Result<(MixtureParams, Option<f64>)> {
    if let Some(p) = &s.params {
        return Ok((p.clone(), None));
    }
    let gen = s.gen_spec(seed).generate()?;
    Ok((gen.params, Some(gen.achieved_omega_bar)))
}

/// Runs replicate `index` of `s`. Parameters passed in `fixed` are used
/// instead of a fresh draw.
fn run_replicate(
    s: &Scenario,
    index: usize,
    fixed: Option<&(MixtureParams, Option<f64>)>,
) -> Result<ReplicateRecord> {
    let rep_seed = replicate_seed(s.base_seed, index);
    let fresh;
    let (params, omega) = match fixed {
        Some(p) => p,
        None => {
            fresh = scenario_params(s, seed::derive(rep_seed, seed::PARAMS, 0))?;
            &fresh
        }
    };
    let n = s.n1 + s.n2();
    let data = sample(params, n, &mut seed::derive_rng(rep_seed, seed::SAMPLE, 0))?;
    let plan = random_split(n, s.n1, &mut seed::derive_rng(rep_seed, seed::SPLIT, 0))?;
    let test_cfg = s.test_config(seed::derive(rep_seed, seed::FIT, 0));
    let mut tester = SplitTester::new(&data, &plan, test_cfg)?;
    let g_max = s.g_max.min(tester.max_testable_g());
    if g_max == 0 {
        return Err(MixError::InsufficientData(format!(
            "n1 = {}, n2 = {} too small for l = {}",
            s.n1,
            s.n2(),
            s.l
        )));
    }
    let (g_hat, trail, hit_cap) = run_stp_with(&mut tester, s.alpha(), g_max)?;
    let mut record = ReplicateRecord {
        index,
        seed: rep_seed,
        g_hat,
        hit_cap,
        achieved_omega_bar: *omega,
        log_p: trail.iter().map(|t| t.log_p).collect(),
        null_logliks: trail
            .iter()
            .filter_map(|t| t.null_fit_1.as_ref().or(t.null_fit_2.as_ref()))
            .map(|f| f.log_likelihood)
            .collect(),
        g_aic: None,
        g_bic: None,
        ic_logliks: Vec::new(),
    };
    if s.run_ic {
        let ic_g_max = s.ic_g_max().min(data.n());
        let ic = information_criteria(&data, ic_g_max, &s.fit.with_seed(seed::derive(rep_seed, seed::IC, 0)))?;
        record.g_aic = ic.g_aic;
        record.g_bic = ic.g_bic;
        record.ic_logliks = ic.rows.iter().map(|r| r.loglik).collect();
    }
    Ok(record)
}

fn fixed_params(s: &Scenario) -> Result<Option<(MixtureParams, Option<f64>)>> {
    match s.param_mode {
        ParamMode::Fixed => Ok(Some(scenario_params(
            s,
            seed::derive(s.base_seed, seed::PARAMS, 0),
        )?)),
        ParamMode::Fresh if s.params.is_some() => Ok(Some(scenario_params(s, 0)?)),
        ParamMode::Fresh => Ok(None),
    }
}

/// Re-runs a single replicate from scratch.
pub fn replay_replicate(s: &Scenario, index: usize) -> Result<ReplicateRecord> {
    s.validate()?;
    let fixed = fixed_params(s)?;
    run_replicate(s, index, fixed.as_ref())
}

/// Runs all replicates (in parallel on the current rayon pool) and
/// aggregates them. Results do not depend on the number of threads.
pub fn run_scenario(s: &Scenario) -> Result<MetricsRow> {
    s.validate()?;
    let fixed = fixed_params(s)?;
    let outcomes: Vec<Result<ReplicateRecord>> = (0..s.r)
        .into_par_iter()
        .map(|i| run_replicate(s, i, fixed.as_ref()))
        .collect();
    let mut replicates = Vec::with_capacity(s.r);
    let mut failures = Vec::new();
    let mut first_error = None;
    for (index, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(rec) => replicates.push(rec),
            Err(e) => {
                failures.push(ReplicateFailure {
                    index,
                    seed: replicate_seed(s.base_seed, index),
                    error: e.to_string(),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    if failures.len() as f64 > MAX_FAILURE_FRACTION * s.r as f64 || replicates.is_empty() {
        return Err(MixError::ScenarioFailed {
            id: s.label(),
            failures: failures.len(),
            replicates: s.r,
            first: first_error.expect("at least one failure").to_string(),
        });
    }
    let main = summarize(&replicates.iter().map(|r| r.g_hat).collect::<Vec<_>>(), s.g0)?;
    let ic_summary = |pick: fn(&ReplicateRecord) -> Option<usize>| -> Option<Summary> {
        if !s.run_ic {
            return None;
        }
        let gs: Vec<usize> = replicates.iter().filter_map(pick).collect();
        summarize(&gs, s.g0).ok()
    };
    let aic = ic_summary(|r| r.g_aic);
    let bic = ic_summary(|r| r.g_bic);
    debug_assert!(main.mean_comp <= s.g0 as f64 + (1.0 - main.cov_prop) * s.g_max as f64 + 1e-9);
    Ok(MetricsRow {
        alpha: s.alpha(),
        scenario: s.clone(),
        cov_prop: main.cov_prop,
        mean_comp: main.mean_comp,
        corr_prop: main.corr_prop,
        aic_mean_comp: aic.map(|a| a.mean_comp),
        aic_corr_prop: aic.map(|a| a.corr_prop),
        bic_mean_comp: bic.map(|b| b.mean_comp),
        bic_corr_prop: bic.map(|b| b.corr_prop),
        replicates,
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FwerEstimate {
    /// Empirical `Pr(g_hat > g0)`.
    pub rate: f64,
    pub exceedances: usize,
    pub r: usize,
}

/// Brute-force family-wise error rate of the whole procedure on data drawn
/// from `params`, which has `g0 = params.g()` components.
#[allow(clippy::too_many_arguments)]
pub fn fwer_oracle(
    params: &MixtureParams,
    n1: usize,
    n2: usize,
    variant: Variant,
    l: usize,
    alpha: f64,
    r: usize,
    seed: u64,
) -> Result<FwerEstimate> {
    let mut s = Scenario::new(params.g(), params.d(), 0.0, n1, r);
    s.n2 = Some(n2);
    s.variant = variant;
    s.l = l;
    s.alpha_schedule = AlphaSchedule::Fixed { alpha };
    s.base_seed = seed;
    s.params = Some(params.clone());
    let row = run_scenario(&s)?;
    let exceedances = row.replicates.iter().filter(|r| r.g_hat > s.g0).count();
    Ok(FwerEstimate {
        rate: row.fwer(),
        exceedances,
        r: row.replicates.len(),
    })
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultLine {
    pub scenario_id: String,
    pub g0: usize,
    pub omega_bar: f64,
    pub d: usize,
    pub n1: usize,
    pub l: usize,
    pub variant: Variant,
    pub alpha: f64,
    pub r: usize,
    pub cov_prop: f64,
    pub mean_comp: f64,
    pub corr_prop: f64,
    pub aic_mean_comp: Option<f64>,
    pub aic_corr_prop: Option<f64>,
    pub bic_mean_comp: Option<f64>,
    pub bic_corr_prop: Option<f64>,
    pub failures: usize,
}

impl From<&MetricsRow> for ResultLine {
    fn from(m: &MetricsRow) -> Self {
        let s = &m.scenario;
        ResultLine {
            scenario_id: s.label(),
            g0: s.g0,
            omega_bar: s.omega_bar,
            d: s.d,
            n1: s.n1,
            l: s.l,
            variant: s.variant,
            alpha: m.alpha,
            r: s.r,
            cov_prop: m.cov_prop,
            mean_comp: m.mean_comp,
            corr_prop: m.corr_prop,
            aic_mean_comp: m.aic_mean_comp,
            aic_corr_prop: m.aic_corr_prop,
            bic_mean_comp: m.bic_mean_comp,
            bic_corr_prop: m.bic_corr_prop,
            failures: m.failures.len(),
        }
    }
}

/// Rows in emission order: stable sort by `(d, n1, l)`.
pub fn sorted_rows(rows: &[MetricsRow]) -> Vec<&MetricsRow> {
    let mut sorted: Vec<&MetricsRow> = rows.iter().collect();
    sorted.sort_by_key(|m| (m.scenario.d, m.scenario.n1, m.scenario.l));
    sorted
}

pub fn write_results_csv<W: Write>(rows: &[MetricsRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for m in sorted_rows(rows) {
        wtr.serialize(ResultLine::from(m))?;
    }
    wtr.flush().map_err(|e| MixError::io("<csv writer>", e))?;
    Ok(())
}

pub fn read_results_csv(path: impl AsRef<Path>) -> Result<Vec<ResultLine>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| MixError::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    rdr.deserialize().map(|r| r.map_err(MixError::from)).collect()
}

/// Sidecar path next to a results CSV.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes the results CSV at `path` and the per-replicate JSON sidecar next
/// to it. Returns the sidecar path.
pub fn emit_results(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<PathBuf> {
    if rows.is_empty() {
        return Err(MixError::EmptyAggregate);
    }
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| MixError::io(path, e))?;
    write_results_csv(rows, std::io::BufWriter::new(file))?;
    let side = sidecar_path(path);
    let file = std::fs::File::create(&side).map_err(|e| MixError::io(&side, e))?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &sorted_rows(rows))?;
    w.flush().map_err(|e| MixError::io(&side, e))?;
    Ok(side)
}

/// Reads a scenario grid: a JSON array of scenarios.
pub fn read_grid(path: impl AsRef<Path>) -> Result<Vec<Scenario>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| MixError::io(path, e))?;
    let grid: Vec<Scenario> = serde_json::from_str(&text)?;
    for s in &grid {
        s.validate()?;
    }
    Ok(grid)
}

/// Data for replicate `index` of `s`, as the harness would draw it.
pub fn replicate_data(s: &Scenario, index: usize) -> Result<Dataset> {
    let rep_seed = replicate_seed(s.base_seed, index);
    let (params, _) = match fixed_params(s)? {
        Some(p) => p,
        None => scenario_params(s, seed::derive(rep_seed, seed::PARAMS, 0))?,
    };
    sample(&params, s.n1 + s.n2(), &mut seed::derive_rng(rep_seed, seed::SAMPLE, 0))
}
