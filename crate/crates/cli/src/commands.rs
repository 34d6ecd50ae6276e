use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use predim::baselines::{
    bootstrap_se_eta, closed_form_interval, iid_normal_interval, nonparametric_bootstrap_interval,
    parametric_bootstrap_interval, reml_fit, PredictionSetup, VarianceEstimate,
};
use predim::generalized::{GenContour, GenMode};
use predim::intervals::{
    check_alpha, default_grid, tabulate, write_contour_csv, Contour, IntervalReport, Method,
};
use predim::joint::{joint_interval, marginal_contour, JointConfig, JointContour, SamplerConfig};
use predim::model::{
    load_dataset, prediction_constants, sufficient_stats, Dataset, DatasetSummary,
    PredictionConstants, PredictionTarget, Schema, Structure, SuffStats, TargetKind,
};
use predim::rng::{substream, StreamRng};
use predim::sim::{run_coverage_study, StudyConfig};
use serde::Serialize;

use crate::failure::Failure;
use crate::{
    ContourArgs, ContourMethod, DataArgs, JointArgs, Outcome, PredictArgs, Target, TargetArgs,
};

pub fn parse_method(s: &str) -> Result<Method, String> {
    match Method::parse(s) {
        Some(Method::Contour) | None => {
            let names: Vec<_> = Method::ALL
                .iter()
                .filter(|m| **m != Method::Contour)
                .map(|m| m.label())
                .collect();
            Err(format!(
                "unknown method `{s}`; expected one of {}",
                names.join(", ")
            ))
        }
        Some(m) => Ok(m),
    }
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, Failure> {
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(&path, &text)?;
    println!("{text}");
    Ok(path)
}

/// A loaded dataset with its decomposition and prediction target.
struct Problem {
    dataset: Dataset,
    structure: Structure,
    target: PredictionTarget,
    consts: PredictionConstants,
}

impl Problem {
    fn load(data: &DataArgs, target: Option<&TargetArgs>) -> Result<Self, Failure> {
        let schema = match &data.schema {
            Some(path) => serde_json::from_reader(std::fs::File::open(path)?)?,
            None => Schema::random_intercept(&data.response, &data.group),
        };
        let dataset = load_dataset(&data.data, &schema)?;
        let design = Arc::clone(dataset.design());
        let structure = Structure::new(&design)?;
        let kind = match target.map(|t| t.target) {
            Some(Target::NewObs) => TargetKind::NewObservation,
            _ => TargetKind::GroupMean,
        };
        let covariates = |given: Option<&Vec<f64>>, len: usize, flag: &str| match given {
            Some(v) if v.len() == len => Ok(DVector::from_column_slice(v)),
            Some(v) => Err(Failure::Validation(format!(
                "--{flag} has {} values, the model expects {len}",
                v.len()
            ))),
            None if len == 1 => Ok(DVector::from_element(1, 1.0)),
            None => Err(Failure::Usage(format!(
                "the model has {len} {flag}-columns; pass --{flag}"
            ))),
        };
        let x = covariates(target.and_then(|t| t.x.as_ref()), design.p(), "x")?;
        let z = covariates(target.and_then(|t| t.z.as_ref()), design.a_dim(), "z")?;
        let target = PredictionTarget::new(x, z, kind);
        let consts = prediction_constants(&structure, &target)?;
        Ok(Self {
            dataset,
            structure,
            target,
            consts,
        })
    }

    fn stats(&self) -> Result<SuffStats, Failure> {
        Ok(sufficient_stats(&self.dataset, &self.structure)?)
    }

    fn summary(&self) -> DatasetSummary {
        self.structure.summary(self.dataset.design())
    }

    fn joint_contour(
        &self,
        stats: &SuffStats,
        args: &JointArgs,
        rng: &mut StreamRng,
    ) -> Result<JointContour, Failure> {
        let config = JointConfig {
            rho_grid: JointConfig::equally_spaced(args.rho_points.max(1)),
            sampler: SamplerConfig {
                draws: args.draws,
                burn_in: args.burn_in,
                ..SamplerConfig::default()
            },
        };
        Ok(marginal_contour(
            stats,
            self.consts,
            stats.center(&self.target),
            self.target.kind,
            &config,
            rng,
        )?)
    }

    fn adjusted_mode(
        &self,
        fit: &VarianceEstimate,
        resamples: usize,
        rng: &mut StreamRng,
    ) -> Result<(GenMode, f64), Failure> {
        let se = bootstrap_se_eta(&self.dataset, &self.structure, fit, resamples, rng)?;
        let mode = GenMode::Adjusted {
            eta_hat: fit.eta_hat,
            delta: se.se,
        };
        Ok((mode, se.se))
    }
}

#[derive(Serialize)]
struct FitOutput {
    summary: DatasetSummary,
    reml: VarianceEstimate,
    fixed_effects: Vec<f64>,
    sums_of_squares: Vec<f64>,
    residual_df: usize,
}

pub fn fit(data: &DataArgs, out: &Path) -> Result<Outcome, Failure> {
    let problem = Problem::load(data, None)?;
    let stats = problem.stats()?;
    let output = FitOutput {
        summary: problem.summary(),
        reml: reml_fit(&stats)?,
        fixed_effects: stats.by().iter().copied().collect(),
        sums_of_squares: stats.s().to_vec(),
        residual_df: stats.residual_df(),
    };
    Ok(Outcome {
        seed: None,
        outputs: vec![write_json(out, "fit.json", &output)?],
        extra: None,
    })
}

#[derive(Serialize)]
struct ContourDiagnostics {
    method: ContourMethod,
    kind: TargetKind,
    center: f64,
    scale: f64,
    points: usize,
    max_plausibility: f64,
    theta_at_max: f64,
    /// α-cut at the requested level, absent when the cut is empty.
    interval: Option<IntervalReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
    details: serde_json::Value,
}

pub fn contour(args: &ContourArgs, out: &Path) -> Result<Outcome, Failure> {
    let alpha = 1.0 - args.level;
    check_alpha(alpha)?;
    if args.points < 2 || args.half_widths.is_nan() || args.half_widths <= 0.0 {
        return Err(Failure::Usage(
            "--points must be at least 2 and --half-widths positive".into(),
        ));
    }
    let problem = Problem::load(&args.data, Some(&args.target))?;
    let stats = problem.stats()?;
    let center = stats.center(&problem.target);
    let kind = problem.target.kind;
    let mut rng = substream(args.seed, 0);
    let mut warnings = Vec::new();

    let (contour, interval, details): (Box<dyn Contour>, _, _) = match args.method {
        ContourMethod::Joint => {
            let c = problem.joint_contour(&stats, &args.joint, &mut rng)?;
            let interval = match joint_interval(&c, alpha, false) {
                Ok(r) => Some(r),
                Err(e @ predim::Error::EmptyCut { .. }) => {
                    warnings.push(format!("{e}; raise --draws or --rho-points"));
                    None
                }
                Err(e) => return Err(e.into()),
            };
            let details = serde_json::to_value(c.diagnostics())?;
            (Box::new(c), interval, details)
        }
        ContourMethod::Gen | ContourMethod::AdjGen => {
            let (mode, delta) = match args.method {
                ContourMethod::Gen => (GenMode::Sup, None),
                _ => {
                    let fit = reml_fit(&stats)?;
                    let (mode, se) = problem.adjusted_mode(&fit, args.delta_resamples, &mut rng)?;
                    (mode, Some(se))
                }
            };
            let c = GenContour::new(&stats, problem.consts, center, mode, kind)?;
            let method = if delta.is_some() {
                Method::AdjGenIm
            } else {
                Method::GenIm
            };
            let (lo, hi) = c.closed_form_cut(alpha);
            let interval = IntervalReport::new(method, kind, args.level, lo, hi);
            let mut details = serde_json::to_value(&c)?;
            if let Some(se) = delta {
                details["eta_se"] = serde_json::json!(se);
            }
            (Box::new(c), Some(interval), details)
        }
    };

    let rows = tabulate(
        contour.as_ref(),
        &default_grid(contour.as_ref(), args.half_widths, args.points),
    );
    let best = rows.iter().fold(rows[0], |b, r| {
        if r.plausibility > b.plausibility {
            *r
        } else {
            b
        }
    });
    let csv_path = out.join("contour.csv");
    write_contour_csv(std::fs::File::create(&csv_path)?, &rows)?;
    let diagnostics = ContourDiagnostics {
        method: args.method,
        kind,
        center,
        scale: contour.scale(),
        points: rows.len(),
        max_plausibility: best.plausibility,
        theta_at_max: best.theta,
        interval,
        warnings,
        details,
    };
    let diag_path = write_json(out, "contour-diagnostics.json", &diagnostics)?;
    Ok(Outcome {
        seed: Some(args.seed),
        outputs: vec![csv_path, diag_path],
        extra: None,
    })
}

pub fn predict(args: &PredictArgs, out: &Path) -> Result<Outcome, Failure> {
    let alpha = 1.0 - args.level;
    check_alpha(alpha)?;
    let problem = Problem::load(&args.data, Some(&args.target))?;
    let kind = problem.target.kind;
    let mut rng = substream(args.seed, 0);
    let method = args.method;

    let report = match method {
        Method::IidNormal => iid_normal_interval(problem.dataset.y().as_slice(), alpha)?,
        Method::NonparametricBootstrap => nonparametric_bootstrap_interval(
            &problem.dataset,
            kind,
            args.resamples,
            alpha,
            &mut rng,
        )?,
        _ => {
            let stats = problem.stats()?;
            let center = stats.center(&problem.target);
            match method {
                Method::Oracle
                | Method::StudentT
                | Method::Satterthwaite
                | Method::GenSatterthwaite => {
                    let setup = PredictionSetup {
                        stats: &stats,
                        consts: problem.consts,
                        center,
                        n_groups: problem.dataset.design().n_groups(),
                        kind,
                    };
                    let truth = match (&args.truth, method) {
                        (Some(t), _) => Some((t[0], t[1])),
                        (None, Method::Oracle) => {
                            return Err(Failure::Usage("the oracle needs --truth".into()))
                        }
                        (None, _) => None,
                    };
                    closed_form_interval(method, &setup, truth, None, alpha)?
                }
                Method::GenIm | Method::PlugInGenIm | Method::AdjGenIm => {
                    let mode = match method {
                        Method::GenIm => GenMode::Sup,
                        Method::PlugInGenIm => GenMode::PlugIn {
                            eta: reml_fit(&stats)?.eta_hat,
                        },
                        _ => {
                            let fit = reml_fit(&stats)?;
                            problem
                                .adjusted_mode(&fit, args.delta_resamples, &mut rng)?
                                .0
                        }
                    };
                    let c = GenContour::new(&stats, problem.consts, center, mode, kind)?;
                    let (lo, hi) = c.closed_form_cut(alpha);
                    IntervalReport::new(method, kind, args.level, lo, hi)
                }
                Method::JointIm | Method::AdjJointIm => {
                    let c = problem.joint_contour(&stats, &args.joint, &mut rng)?;
                    joint_interval(&c, alpha, method == Method::AdjJointIm)?
                }
                Method::ParametricBootstrap => {
                    let fit = reml_fit(&stats)?;
                    parametric_bootstrap_interval(
                        &problem.dataset,
                        &problem.structure,
                        &problem.target,
                        &fit,
                        args.resamples,
                        alpha,
                        &mut rng,
                    )?
                }
                _ => unreachable!("handled above or rejected by the parser"),
            }
        }
    };
    Ok(Outcome {
        seed: Some(args.seed),
        outputs: vec![write_json(out, "interval.json", &report)?],
        extra: None,
    })
}

pub fn simulate(config: &Path, seed: Option<u64>, out: &Path) -> Result<Outcome, Failure> {
    let mut config: StudyConfig = serde_json::from_reader(std::fs::File::open(config)?)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let report = run_coverage_study(&config)?;
    // Timing goes to the manifest so the report itself is reproducible.
    let mut value = serde_json::to_value(&report)?;
    let runtime = value.as_object_mut().and_then(|o| o.remove("runtime"));
    let json_path = write_json(out, "report.json", &value)?;
    let csv_path = out.join("report.csv");
    report.write_csv(std::fs::File::create(&csv_path)?)?;
    Ok(Outcome {
        seed: Some(config.seed),
        outputs: vec![json_path, csv_path],
        extra: runtime.map(|r| serde_json::json!({ "runtime": r })),
    })
}
