use std::fs;
use std::io::Write;
use std::path::Path;

use allocsim::acceptance::{auroc, fit_logistic};
use allocsim::cohort::Cohort;
use allocsim::policies::{PolicySpec, SurvivalModels};
use allocsim::simulator::{replicate, run, Replication};
use allocsim::survival::{concordance_index, fit_cox, SurvivalSample};
use allocsim::tuning::tune_potentials;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{
    CompareFile, FitFile, GenCohortFile, ModelKind, Models, RunSettings, SimulateFile, SweepFile, SweepParameter,
    TuneFile,
};
use crate::error::CliError;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<fs::File, CliError> {
    fs::File::create(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn gen_cohort(file: &GenCohortFile, out: &Path) -> Result<(), CliError> {
    let cohort = allocsim::cohort::generate(&file.cohort)?;
    cohort.save_dir(out)?;
    log::info!("wrote {} patients and {} donors to {}", cohort.patients.len(), cohort.donors.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct FitMetrics {
    kind: ModelKind,
    n_train: usize,
    n_test: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    c_index: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    auroc: Option<f64>,
}

/// Shuffled train/test split with `fraction` of the items held out.
fn split<T: Clone>(items: &[T], fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((items.len() as f64) * fraction).round() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    (pick(&order[n_test..]), pick(&order[..n_test]))
}

pub fn fit(file: &FitFile, out: &Path) -> Result<(), CliError> {
    let cohort = file.cohort.load()?;
    let hash = cohort.schema.hash();
    fs::create_dir_all(out)?;
    let name = match file.kind {
        ModelKind::Graft => "graft",
        ModelKind::Waitlist => "waitlist",
        ModelKind::Acceptance => "acceptance",
    };
    let metrics = match file.kind {
        ModelKind::Graft | ModelKind::Waitlist => {
            let samples: Vec<SurvivalSample> = if file.kind == ModelKind::Graft {
                cohort.graft_samples(file.samples, file.max_follow_up_days, file.seed)?
            } else {
                cohort.waitlist_samples(cohort.effective_horizon(), &Default::default())
            };
            let (train, test) = split(&samples, file.holdout_fraction, file.seed);
            let model = fit_cox(&train, &file.survival)
                .map_err(|e| CliError::Runtime(format!("fitting {name} model: {e}")))?
                .with_schema_hash(hash);
            let scores = test.iter().map(|s| model.risk_score(&s.covariates)).collect::<Result<Vec<_>, _>>();
            let c_index = scores.ok().and_then(|s| concordance_index(&s, &test).ok());
            write_json(&out.join(format!("{name}_model.json")), &model)?;
            FitMetrics { kind: file.kind, n_train: train.len(), n_test: test.len(), c_index, auroc: None }
        }
        ModelKind::Acceptance => {
            let (features, labels) = cohort.acceptance_samples(file.samples, file.seed)?;
            let pairs: Vec<(Vec<f64>, bool)> = features.into_iter().zip(labels).collect();
            let (train, test) = split(&pairs, file.holdout_fraction, file.seed);
            let (x, y): (Vec<_>, Vec<_>) = train.into_iter().unzip();
            let model = fit_logistic(&x, &y, file.logistic_l2, file.logistic_iters)
                .map_err(|e| CliError::Runtime(format!("fitting acceptance model: {e}")))?
                .with_schema_hash(hash);
            let scores = test.iter().map(|(f, _)| model.probability(f)).collect::<Result<Vec<_>, _>>();
            let labels: Vec<bool> = test.iter().map(|p| p.1).collect();
            let auc = scores.ok().and_then(|s| auroc(&s, &labels).ok());
            write_json(&out.join("acceptance_model.json"), &model)?;
            FitMetrics { kind: file.kind, n_train: x.len(), n_test: test.len(), c_index: None, auroc: auc }
        }
    };
    write_json(&out.join(format!("{name}_metrics.json")), &metrics)?;
    println!("{}", serde_json::to_string(&metrics)?);
    Ok(())
}

fn load_inputs(cohort: &crate::config::CohortSource, models: &crate::config::ModelSource) -> Result<(Cohort, Models), CliError> {
    let cohort = cohort.load()?;
    let models = models.load(&cohort)?;
    Ok((cohort, models))
}

fn write_replications(path: &Path, rep: &Replication) -> Result<(), CliError> {
    let mut f = create(path)?;
    writeln!(f, "seed,total_life_years,transplants")?;
    for r in &rep.runs {
        writeln!(f, "{},{},{}", r.seed, r.total_life_years, r.transplants)?;
    }
    Ok(())
}

pub fn simulate(file: &SimulateFile, out: &Path) -> Result<(), CliError> {
    let (cohort, models) = load_inputs(&file.cohort, &file.models)?;
    let config = file.run.sim_config(file.policy.clone());
    fs::create_dir_all(out)?;
    let first = run(&config, &cohort, &models.survival, models.predictor())?;
    let rep = replicate(&config, &cohort, &models.survival, models.predictor())?;
    first.save_transplants_csv(&out.join("transplants.csv"))?;
    write_replications(&out.join("replications.csv"), &rep)?;
    let summary = serde_json::json!({
        "config": config,
        "first_run": first.summary(),
        "replications": rep.summary,
    });
    write_json(&out.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string(&rep.summary)?);
    Ok(())
}

pub fn compare(file: &CompareFile, out: &Path) -> Result<(), CliError> {
    let (cohort, models) = load_inputs(&file.cohort, &file.models)?;
    fs::create_dir_all(out)?;
    let mut f = create(&out.join("compare.csv"))?;
    writeln!(f, "policy,mean,std,n")?;
    let mut rows = Vec::new();
    for named in &file.policies {
        let config = file.run.sim_config(named.policy.clone());
        let rep = replicate(&config, &cohort, &models.survival, models.predictor())?;
        writeln!(f, "{},{},{},{}", named.name, rep.summary.mean, rep.summary.std, rep.summary.n)?;
        log::info!("{}: mean {:.2} std {:.2}", named.name, rep.summary.mean, rep.summary.std);
        rows.push(serde_json::json!({ "policy": named.name, "summary": rep.summary, "runs": rep.runs }));
    }
    write_json(&out.join("compare.json"), &rows)?;
    Ok(())
}

/// Run settings and policy for one sweep value.
pub fn sweep_point(
    run: &RunSettings,
    policy: &PolicySpec,
    parameter: SweepParameter,
    value: f64,
) -> Result<(RunSettings, PolicySpec), CliError> {
    let (mut run, mut policy) = (run.clone(), policy.clone());
    match parameter {
        SweepParameter::Alpha => run.acceptance.exponent_alpha = value,
        SweepParameter::MaxDistance => policy.max_distance_nm = Some(value),
        SweepParameter::BatchB => {
            if value.fract() != 0.0 || value < 1.0 {
                return Err(CliError::Config(format!("batch size must be a positive integer, got {value}")));
            }
            run.batch_size = value as usize;
        }
    }
    Ok((run, policy))
}

pub fn sweep(file: &SweepFile, out: &Path) -> Result<(), CliError> {
    let (cohort, models) = load_inputs(&file.cohort, &file.models)?;
    fs::create_dir_all(out)?;
    let mut f = create(&out.join("sweep.csv"))?;
    writeln!(f, "value,mean,std,delta_vs_first")?;
    let mut first = None;
    for &value in &file.values {
        let (run, policy) = sweep_point(&file.run, &file.policy, file.parameter, value)?;
        let rep = replicate(&run.sim_config(policy), &cohort, &models.survival, models.predictor())?;
        let base = *first.get_or_insert(rep.summary.mean);
        writeln!(f, "{value},{},{},{}", rep.summary.mean, rep.summary.std, rep.summary.mean - base)?;
    }
    Ok(())
}

pub fn tune(file: &TuneFile, out: &Path) -> Result<(), CliError> {
    let training = file.training_cohorts.iter().map(|c| c.load()).collect::<Result<Vec<_>, _>>()?;
    let models = file.models.load(&training[0])?;
    let survival: &SurvivalModels = &models.survival;
    let result = tune_potentials(&training, survival, &file.base_policy, &file.tune)?;
    fs::create_dir_all(out)?;
    write_json(&out.join("tune.json"), &result)?;
    if let Some(run) = &file.run {
        let mut f = create(&out.join("evaluation.csv"))?;
        writeln!(f, "cohort,myopic_mean,myopic_std,tuned_mean,tuned_std")?;
        for (i, source) in file.evaluation_cohorts.iter().enumerate() {
            let cohort = source.load()?;
            let tuned = PolicySpec { potential_theta: result.best_theta, ..file.base_policy.clone() };
            let myopic = PolicySpec { max_distance_nm: file.base_policy.max_distance_nm, ..PolicySpec::myopic() };
            let a = replicate(&run.sim_config(myopic), &cohort, survival, models.predictor())?;
            let b = replicate(&run.sim_config(tuned), &cohort, survival, models.predictor())?;
            writeln!(f, "{i},{},{},{},{}", a.summary.mean, a.summary.std, b.summary.mean, b.summary.std)?;
        }
    }
    println!(
        "{}",
        serde_json::json!({ "best_theta": result.best_theta, "best_score": result.best_score })
    );
    Ok(())
}
