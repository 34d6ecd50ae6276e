//! Coverage studies: simulate random-intercept data for a fixed design,
//! compute every requested interval, and tabulate coverage and length.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    bootstrap_se_eta, closed_form_interval, iid_normal_interval, nonparametric_bootstrap_draws,
    parametric_bootstrap_draws, reml_fit, BootstrapDraws, PredictionSetup, VarianceEstimate,
};
use crate::dist::{normal_quantile, quantile_sorted};
use crate::error::{Error, Result};
use crate::generalized::{GenContour, GenMode};
use crate::intervals::{check_alpha, IntervalReport, Method};
use crate::joint::{joint_interval, marginal_contour, JointConfig, JointContour, SamplerConfig};
use crate::model::{
    prediction_constants, sufficient_stats, Dataset, Design, PredictionConstants, PredictionTarget,
    Structure, SuffStats, TargetKind,
};
use crate::rng::{child_seed, substream};

/// Coverage below this is flagged for 95% intervals.
pub const UNDER_COVERAGE: f64 = 0.935;
pub const MIN_REPLICATIONS: usize = 100;

/// Group layout of the simulated study.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DesignSpec {
    /// 5 groups of 6.
    A,
    /// 10 groups of 12.
    B,
    /// Groups of 4, 4, 4, 6 and 12.
    C,
    /// Ten unbalanced groups, 120 observations.
    D,
    #[serde(rename = "custom")]
    Custom(Vec<usize>),
}

impl DesignSpec {
    pub fn group_sizes(&self) -> Vec<usize> {
        match self {
            DesignSpec::A => vec![6; 5],
            DesignSpec::B => vec![12; 10],
            DesignSpec::C => vec![4, 4, 4, 6, 12],
            DesignSpec::D => vec![4, 4, 7, 11, 13, 16, 16, 16, 16, 17],
            DesignSpec::Custom(sizes) => sizes.clone(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            DesignSpec::A => "A".into(),
            DesignSpec::B => "B".into(),
            DesignSpec::C => "C".into(),
            DesignSpec::D => "D".into(),
            DesignSpec::Custom(s) => format!("custom{s:?}"),
        }
    }
}

/// Joint-IM cost settings used inside a study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointSettings {
    pub rho_points: usize,
    pub draws: usize,
    pub burn_in: usize,
}

impl Default for JointSettings {
    fn default() -> Self {
        Self {
            rho_points: 100,
            draws: 5000,
            burn_in: 1000,
        }
    }
}

impl JointSettings {
    pub fn thinned() -> Self {
        Self {
            rho_points: 50,
            draws: 2000,
            burn_in: 1000,
        }
    }

    pub fn to_config(self) -> JointConfig {
        JointConfig {
            rho_grid: JointConfig::equally_spaced(self.rho_points),
            sampler: SamplerConfig {
                draws: self.draws,
                burn_in: self.burn_in,
                ..SamplerConfig::default()
            },
        }
    }
}

fn default_alphas() -> Vec<f64> {
    vec![0.05]
}

fn default_target() -> TargetKind {
    TargetKind::GroupMean
}

fn default_bootstrap() -> usize {
    500
}

fn default_delta() -> usize {
    100
}

/// One simulation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub design: DesignSpec,
    /// (σ_α², σ_ε²).
    pub variance_pair: (f64, f64),
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "default_target")]
    pub target: TargetKind,
    pub methods: Vec<Method>,
    pub replications: usize,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub joint: JointSettings,
    /// Parametric and nonparametric bootstrap resamples.
    #[serde(default = "default_bootstrap")]
    pub bootstrap_resamples: usize,
    /// Resamples for the bootstrap SE of η̂ used by the adjusted generalized IM.
    #[serde(default = "default_delta")]
    pub delta_resamples: usize,
}

impl StudyConfig {
    pub fn new(
        design: DesignSpec,
        variance_pair: (f64, f64),
        target: TargetKind,
        methods: Vec<Method>,
        replications: usize,
        seed: u64,
    ) -> Self {
        Self {
            design,
            variance_pair,
            mu: 0.0,
            target,
            methods,
            replications,
            alphas: default_alphas(),
            seed,
            joint: JointSettings::default(),
            bootstrap_resamples: default_bootstrap(),
            delta_resamples: default_delta(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = self.design.group_sizes();
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Validation(
                "a design needs at least 2 non-empty groups".into(),
            ));
        }
        let (sa, se) = self.variance_pair;
        if !(sa >= 0.0 && se > 0.0 && sa.is_finite() && se.is_finite()) {
            return Err(Error::Validation(format!(
                "variance pair ({sa}, {se}) needs sigma_alpha2 >= 0 and sigma_eps2 > 0"
            )));
        }
        if !self.mu.is_finite() {
            return Err(Error::Validation("mu must be finite".into()));
        }
        if self.replications < MIN_REPLICATIONS {
            return Err(Error::Validation(format!(
                "at least {MIN_REPLICATIONS} replications are required, got {}",
                self.replications
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::Validation("no methods requested".into()));
        }
        if let Some(m) = self.methods.iter().find(|m| **m == Method::Contour) {
            return Err(Error::Validation(format!("{m} is not a study method")));
        }
        if self.alphas.is_empty() {
            return Err(Error::Validation("no alpha levels given".into()));
        }
        for &a in &self.alphas {
            check_alpha(a)?;
        }
        Ok(())
    }
}

/// One simulated dataset with the realized new-group quantities.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub dataset: Dataset,
    /// θ = μ + α*.
    pub theta: f64,
    /// Y* = θ + ε*.
    pub y_new: f64,
}

impl Replicate {
    pub fn truth(&self, kind: TargetKind) -> f64 {
        match kind {
            TargetKind::GroupMean => self.theta,
            TargetKind::NewObservation => self.y_new,
        }
    }
}

/// A validated study with its design structure precomputed.
#[derive(Debug, Clone)]
pub struct Study {
    config: StudyConfig,
    design: Arc<Design>,
    structure: Structure,
    target: PredictionTarget,
    consts: PredictionConstants,
}

impl Study {
    pub fn new(config: StudyConfig) -> Result<Self> {
        config.validate()?;
        let labels = Design::balanced_labels(&config.design.group_sizes());
        let design = Design::random_intercept(&labels)?;
        let structure = Structure::new(&design)?;
        let target = PredictionTarget::intercept(config.target);
        let consts = prediction_constants(&structure, &target)?;
        Ok(Self {
            config,
            design: Arc::new(design),
            structure,
            target,
            consts,
        })
    }

    pub fn config(&self) -> &StudyConfig {
        &self.config
    }

    pub fn structure(&self) -> &Structure {
        &self.structure
    }

    /// Replication `rep`: data, then α*, then ε*, all from stream `rep`.
    pub fn generate(&self, rep: u64) -> Replicate {
        self.generate_with(&mut substream(self.config.seed, rep))
    }

    fn generate_with(&self, rng: &mut impl Rng) -> Replicate {
        let (sa, se) = self.config.variance_pair;
        let mu = self.config.mu;
        let y = self
            .design
            .simulate_response(&DVector::from_element(1, mu), sa, se, rng);
        let theta = mu + self.design.draw_effect(sa.sqrt(), rng)[0];
        let eps: f64 = rng.sample(StandardNormal);
        Replicate {
            dataset: Dataset::new(Arc::clone(&self.design), y)
                .expect("simulated response matches its design"),
            theta,
            y_new: theta + se.sqrt() * eps,
        }
    }

    /// Oracle interval length at level 1 − α; the denominator of the ratios.
    pub fn oracle_length(&self, alpha: f64) -> f64 {
        let (sa, se) = self.config.variance_pair;
        2.0 * normal_quantile(1.0 - alpha / 2.0) * self.consts.variance(sa, se).sqrt()
    }

    /// All intervals for one replication, per method and then per α.
    pub fn intervals(&self, rep: u64) -> (Replicate, Vec<Vec<Outcome>>) {
        let mut rng = substream(self.config.seed, rep);
        let data = self.generate_with(&mut rng);
        let method_seed = child_seed(&mut rng);
        let mut ctx = RepContext {
            study: self,
            stats: sufficient_stats(&data.dataset, &self.structure).ok(),
            data: &data,
            fit: None,
            joint: None,
            method_seed,
        };
        let out = self
            .config
            .methods
            .iter()
            .map(|&m| {
                let mut r = substream(method_seed, m as u64);
                let truth = data.truth(self.config.target);
                match ctx.method_intervals(m, &mut r) {
                    Ok(reports) => reports
                        .into_iter()
                        .map(|r| match r {
                            Ok(rep) => Outcome::Interval {
                                covered: rep.contains(truth),
                                length: rep.length(),
                            },
                            Err(Error::EmptyCut { .. }) => Outcome::EmptyCut,
                            Err(_) => Outcome::Failed,
                        })
                        .collect(),
                    Err(_) => vec![Outcome::Failed; self.config.alphas.len()],
                }
            })
            .collect();
        (data, out)
    }

    /// Run every replication and aggregate.
    pub fn run(&self) -> SimReport {
        let start = Instant::now();
        let per_rep: Vec<Vec<Vec<Outcome>>> = (0..self.config.replications as u64)
            .into_par_iter()
            .map(|rep| self.intervals(rep).1)
            .collect();
        let elapsed = start.elapsed().as_secs_f64();

        let mut cells = Vec::new();
        for (mi, &method) in self.config.methods.iter().enumerate() {
            for (ai, &alpha) in self.config.alphas.iter().enumerate() {
                let mut tally = Tally::default();
                for rep in &per_rep {
                    tally.add(rep[mi][ai]);
                }
                cells.push(tally.cell(method, alpha, self.oracle_length(alpha)));
            }
        }
        SimReport {
            design: self.config.design.label(),
            variance_pair: self.config.variance_pair,
            target: self.config.target,
            replications: self.config.replications,
            seed: self.config.seed,
            cells,
            runtime: Runtime {
                wall_seconds: elapsed,
                seconds_per_replication: elapsed / self.config.replications as f64,
                threads: rayon::current_num_threads(),
            },
        }
    }
}

/// Per-replication state shared between methods.
struct RepContext<'a> {
    study: &'a Study,
    data: &'a Replicate,
    /// None when the data are degenerate for the decomposition.
    stats: Option<SuffStats>,
    /// Cached REML fit; the inner None records a failed fit.
    fit: Option<Option<VarianceEstimate>>,
    /// One contour serves both the nominal and the adjusted joint cut.
    joint: Option<Option<JointContour>>,
    method_seed: u64,
}

impl RepContext<'_> {
    fn stats(&self) -> Result<&SuffStats> {
        self.stats
            .as_ref()
            .ok_or_else(|| Error::Estimation("degenerate simulated data".into()))
    }

    fn fit(&mut self) -> Result<VarianceEstimate> {
        if self.fit.is_none() {
            self.fit = Some(self.stats().and_then(reml_fit).ok());
        }
        self.fit
            .flatten()
            .ok_or_else(|| Error::Estimation("REML fit failed".into()))
    }

    fn joint(&mut self) -> Result<&JointContour> {
        if self.joint.is_none() {
            let study = self.study;
            let built = self.stats().and_then(|stats| {
                marginal_contour(
                    stats,
                    study.consts,
                    stats.center(&study.target),
                    study.config.target,
                    &study.config.joint.to_config(),
                    &mut substream(self.method_seed, Method::JointIm as u64),
                )
            });
            self.joint = Some(built.ok());
        }
        self.joint
            .as_ref()
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::Estimation("joint contour failed".into()))
    }

    fn setup(&self) -> Result<PredictionSetup<'_>> {
        let stats = self.stats()?;
        Ok(PredictionSetup {
            stats,
            consts: self.study.consts,
            center: stats.center(&self.study.target),
            n_groups: self.study.design.n_groups(),
            kind: self.study.config.target,
        })
    }

    fn method_intervals(
        &mut self,
        method: Method,
        rng: &mut impl Rng,
    ) -> Result<Vec<Result<IntervalReport>>> {
        let study = self.study;
        let cfg = &study.config;
        let alphas = &cfg.alphas;
        let kind = cfg.target;
        let each =
            |f: &dyn Fn(f64) -> Result<IntervalReport>| alphas.iter().map(|&a| f(a)).collect();
        match method {
            Method::Oracle => {
                let setup = self.setup()?;
                let truth = Some(cfg.variance_pair);
                Ok(each(&|a| {
                    closed_form_interval(method, &setup, truth, None, a)
                }))
            }
            Method::StudentT | Method::Satterthwaite | Method::GenSatterthwaite => {
                let fit = self.fit()?;
                let setup = self.setup()?;
                Ok(each(&|a| {
                    closed_form_interval(method, &setup, None, Some(&fit), a)
                }))
            }
            Method::GenIm | Method::PlugInGenIm | Method::AdjGenIm => {
                let mode = match method {
                    Method::GenIm => GenMode::Sup,
                    Method::PlugInGenIm => GenMode::PlugIn {
                        eta: self.fit()?.eta_hat,
                    },
                    _ => {
                        let fit = self.fit()?;
                        let se = bootstrap_se_eta(
                            &self.data.dataset,
                            &study.structure,
                            &fit,
                            cfg.delta_resamples,
                            rng,
                        )?;
                        GenMode::Adjusted {
                            eta_hat: fit.eta_hat,
                            delta: se.se,
                        }
                    }
                };
                let stats = self.stats()?;
                let c =
                    GenContour::new(stats, study.consts, stats.center(&study.target), mode, kind)?;
                Ok(each(&|a| {
                    let (lo, hi) = c.closed_form_cut(a);
                    Ok(IntervalReport::new(method, kind, 1.0 - a, lo, hi))
                }))
            }
            Method::JointIm | Method::AdjJointIm => {
                let contour = self.joint()?;
                let adjusted = method == Method::AdjJointIm;
                Ok(each(&|a| joint_interval(contour, a, adjusted)))
            }
            Method::ParametricBootstrap => {
                let fit = self.fit()?;
                let draws = parametric_bootstrap_draws(
                    &self.data.dataset,
                    &study.structure,
                    &study.target,
                    &fit,
                    cfg.bootstrap_resamples,
                    rng,
                )?;
                Ok(cut_draws(&draws, alphas))
            }
            Method::NonparametricBootstrap => {
                let draws = nonparametric_bootstrap_draws(
                    &self.data.dataset,
                    kind,
                    cfg.bootstrap_resamples,
                    rng,
                )?;
                Ok(cut_draws(&draws, alphas))
            }
            Method::IidNormal => {
                let y = self.data.dataset.y().as_slice().to_vec();
                Ok(each(&|a| iid_normal_interval(&y, a)))
            }
            Method::Contour => Err(Error::Validation("contour is not a study method".into())),
        }
    }
}

fn cut_draws(draws: &BootstrapDraws, alphas: &[f64]) -> Vec<Result<IntervalReport>> {
    alphas.iter().map(|&a| draws.interval(a)).collect()
}

/// Result of one method at one level in one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Interval {
        covered: bool,
        length: f64,
    },
    /// No ϑ reached the cut level: scored as a miss of length 0.
    EmptyCut,
    Failed,
}

#[derive(Default)]
struct Tally {
    scored: usize,
    covered: usize,
    lengths: Vec<f64>,
    empty: usize,
    failed: usize,
}

impl Tally {
    fn add(&mut self, o: Outcome) {
        match o {
            Outcome::Interval { covered, length } => {
                self.scored += 1;
                self.covered += covered as usize;
                self.lengths.push(length);
            }
            Outcome::EmptyCut => {
                self.scored += 1;
                self.empty += 1;
                self.lengths.push(0.0);
            }
            Outcome::Failed => self.failed += 1,
        }
    }

    fn cell(&self, method: Method, alpha: f64, oracle_length: f64) -> CellSummary {
        let level = 1.0 - alpha;
        let n = self.scored as f64;
        let (coverage, mean_length, median_length) = if self.scored == 0 {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            let mut sorted = self.lengths.clone();
            sorted.sort_by(f64::total_cmp);
            (
                self.covered as f64 / n,
                self.lengths.iter().sum::<f64>() / n,
                quantile_sorted(&sorted, 0.5),
            )
        };
        let coverage_se = (coverage * (1.0 - coverage) / n).sqrt();
        let nominal_se = (level * (1.0 - level) / n).sqrt();
        CellSummary {
            method,
            alpha,
            level,
            replications: self.scored,
            coverage,
            coverage_se,
            mean_length,
            length_ratio: mean_length / oracle_length,
            median_length_ratio: median_length / oracle_length,
            failures: self.failed,
            empty_cuts: self.empty,
            under_coverage: (alpha - 0.05).abs() < 1e-12 && coverage < UNDER_COVERAGE,
            below_nominal_3se: coverage < level - 3.0 * nominal_se,
        }
    }
}

/// Coverage summary for one (method, α).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: Method,
    pub alpha: f64,
    pub level: f64,
    /// Replications scored (failures excluded).
    pub replications: usize,
    pub coverage: f64,
    /// Binomial SE of the observed coverage.
    pub coverage_se: f64,
    pub mean_length: f64,
    /// Mean length over the oracle length at the same level.
    pub length_ratio: f64,
    /// Median length over the oracle length; robust to a few huge intervals.
    pub median_length_ratio: f64,
    pub failures: usize,
    pub empty_cuts: usize,
    /// 95% interval with coverage below 0.935.
    pub under_coverage: bool,
    /// Coverage below nominal by more than 3 binomial SEs at the nominal rate.
    pub below_nominal_3se: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Runtime {
    pub wall_seconds: f64,
    pub seconds_per_replication: f64,
    pub threads: usize,
}

/// Aggregated study results. Everything except `runtime` is bit-identical
/// for a fixed configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub design: String,
    pub variance_pair: (f64, f64),
    pub target: TargetKind,
    pub replications: usize,
    pub seed: u64,
    pub cells: Vec<CellSummary>,
    pub runtime: Runtime,
}

impl SimReport {
    pub fn cell(&self, method: Method, alpha: f64) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.method == method && (c.alpha - alpha).abs() < 1e-12)
    }

    /// Table with columns method, alpha, coverage, length_ratio and the
    /// remaining summary fields.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "method",
            "alpha",
            "coverage",
            "length_ratio",
            "coverage_se",
            "median_length_ratio",
            "mean_length",
            "replications",
            "failures",
            "empty_cuts",
            "under_coverage",
        ])?;
        for c in &self.cells {
            w.write_record([
                c.method.label().to_string(),
                c.alpha.to_string(),
                format!("{:.4}", c.coverage),
                format!("{:.4}", c.length_ratio),
                format!("{:.4}", c.coverage_se),
                format!("{:.4}", c.median_length_ratio),
                format!("{:.6}", c.mean_length),
                c.replications.to_string(),
                c.failures.to_string(),
                c.empty_cuts.to_string(),
                c.under_coverage.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Replication `rep` of a study: dataset, θ and Y*.
pub fn generate_dataset(config: &StudyConfig, rep: u64) -> Result<Replicate> {
    Ok(Study::new(config.clone())?.generate(rep))
}

pub fn run_coverage_study(config: &StudyConfig) -> Result<SimReport> {
    Ok(Study::new(config.clone())?.run())
}
