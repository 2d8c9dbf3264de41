//! Subcommand implementations. Each writes one directory under the output root.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use hmc_smoother::diagnostics::{
    approx_posterior_moments, ensemble_moments, kl_estimate, linear_posterior_moments, reduced_posterior_moments, rmse_series,
    schott_statistic, CovTestReport, SchottForm,
};
use hmc_smoother::hmc::{export_ensemble, import_ensemble, tune_step_size, HmcConfig, TuneReport};
use hmc_smoother::rom::{PodBasis, RomProblem};
use nalgebra::DVector;
use serde::Serialize;
use serde_json::json;

use crate::artifacts::{read_rows, read_vector, RunDir, RunManifest};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::experiment::{assimilate, prepare_target, streams, Experiment, MinimizeSummary, Mode, Outcome, StageTiming};

pub const TRUTH_DIR: &str = "truth";
pub const OBS_DIR: &str = "obs";
pub const DIAGNOSE_DIR: &str = "diagnose";

fn elapsed(t: Instant, stage: &str) -> StageTiming {
    StageTiming {
        stage: stage.into(),
        seconds: t.elapsed().as_secs_f64(),
    }
}

pub fn cmd_generate_truth(cfg: &ExperimentConfig, out: &Path) -> CliResult<RunManifest> {
    let t = Instant::now();
    let exp = Experiment::new(cfg)?;
    let x0 = exp.truth_x0()?;
    let traj = exp.truth_trajectory(&x0)?;
    let xb = exp.background(&x0)?;
    let mut run = RunDir::create(&out.join(TRUTH_DIR))?;
    run.write_vector("truth_x0.bin", &x0, "true initial state", cfg.seed)?;
    run.write_rows("trajectory.bin", &traj, "true states at observation times", cfg.seed)?;
    run.write_vector("background.bin", &xb, "background initial state", cfg.seed)?;
    run.finish("generate-truth", None, &cfg.hash(), cfg.seed, vec![elapsed(t, "generate-truth")])
}

pub fn cmd_observe(cfg: &ExperimentConfig, out: &Path) -> CliResult<RunManifest> {
    let t = Instant::now();
    let exp = Experiment::new(cfg)?;
    let traj = read_rows(&out.join(TRUTH_DIR).join("trajectory.bin"))?;
    check_dims(&traj, exp.dim(), "truth trajectory")?;
    if traj.len() != exp.n_intervals() + 1 {
        return Err(CliError::Input(format!(
            "truth trajectory has {} states, window needs {}",
            traj.len(),
            exp.n_intervals() + 1
        )));
    }
    let ys = exp.observe(&traj)?;
    let mut run = RunDir::create(&out.join(OBS_DIR))?;
    run.write_rows("observations.bin", &ys, "observations, one observation time per row", cfg.seed)?;
    run.finish("observe", None, &cfg.hash(), cfg.seed, vec![elapsed(t, "observe")])
}

fn check_dims(rows: &[DVector<f64>], dim: usize, what: &str) -> CliResult<()> {
    match rows.iter().find(|r| r.len() != dim) {
        Some(r) => Err(CliError::Input(format!("{what}: expected dimension {dim}, found {}", r.len()))),
        None => Ok(()),
    }
}

/// Truth and window rebuilt from the files of `generate-truth` and `observe`.
pub struct LoadedTwin {
    pub experiment: Experiment,
    pub truth_x0: DVector<f64>,
    pub background: DVector<f64>,
    pub window: Arc<hmc_smoother::fourdvar::AssimilationWindow>,
}

pub fn load_twin(cfg: &ExperimentConfig, out: &Path) -> CliResult<LoadedTwin> {
    let exp = Experiment::new(cfg)?;
    let truth_x0 = read_vector(&out.join(TRUTH_DIR).join("truth_x0.bin"))?;
    let background = read_vector(&out.join(TRUTH_DIR).join("background.bin"))?;
    check_dims(&[truth_x0.clone(), background.clone()], exp.dim(), "truth files")?;
    let ys = read_rows(&out.join(OBS_DIR).join("observations.bin"))?;
    let window = Arc::new(exp.window(&background, &ys)?);
    Ok(LoadedTwin {
        experiment: exp,
        truth_x0,
        background,
        window,
    })
}

pub fn run_dir(out: &Path, mode: Mode) -> PathBuf {
    out.join(mode.as_str())
}

#[derive(Serialize)]
struct AssimilationReport<'a> {
    mode: &'a str,
    dim: usize,
    fourdvar: Option<&'a MinimizeSummary>,
    start_minimization: Option<&'a MinimizeSummary>,
    nred: Option<usize>,
    acceptance_rate: Option<f64>,
    proposals: Option<usize>,
    refreshes: Option<usize>,
    gradient_checks: Option<&'a [f64]>,
    ensemble_size: Option<usize>,
    hmc: Option<&'a HmcConfig>,
    rmse_initial: f64,
}

pub fn cmd_assimilate(cfg: &ExperimentConfig, out: &Path, mode: Mode) -> CliResult<RunManifest> {
    let twin = load_twin(cfg, out)?;
    let mut timings = Vec::new();
    let outcome = assimilate(&twin.window, cfg, mode, &mut timings)?;
    let mut run = RunDir::create(&run_dir(out, mode))?;
    let rmse0 = |x: &DVector<f64>| (x - &twin.truth_x0).norm() / (x.len() as f64).sqrt();
    match &outcome {
        Outcome::Analysis(a) => {
            run.write_vector("analysis.bin", &a.analysis, "analysis initial state", cfg.seed)?;
            if let Some(b) = &a.basis {
                write_basis(&mut run, b, cfg.seed)?;
            }
            run.write_json(
                "report.json",
                &AssimilationReport {
                    mode: mode.as_str(),
                    dim: a.analysis.len(),
                    fourdvar: Some(&a.summary),
                    start_minimization: None,
                    nred: a.basis.as_ref().map(|b| b.nred()),
                    acceptance_rate: None,
                    proposals: None,
                    refreshes: None,
                    gradient_checks: None,
                    ensemble_size: None,
                    hmc: None,
                    rmse_initial: rmse0(&a.analysis),
                },
            )?;
        }
        Outcome::Ensemble(e) => {
            let basis = e.final_basis.as_ref();
            export_ensemble(&run.path().join("ensemble.bin"), &e.chain, &e.hmc, basis)?;
            run.register("ensemble.bin");
            run.register("ensemble.json");
            let mean = e.chain.mean();
            run.write_vector("mean.bin", &mean, "ensemble mean initial state", cfg.seed)?;
            run.write_vector("start.bin", &e.start_full, "chain start", cfg.seed)?;
            if let Some(b) = basis {
                write_basis(&mut run, b, cfg.seed)?;
            }
            let mut log = String::new();
            for rec in &e.chain.accept_log {
                writeln!(log, "{}", serde_json::to_string(rec).expect("record serializes")).expect("string write");
            }
            run.write_bytes("accept_log.jsonl", log.as_bytes())?;
            run.write_json(
                "report.json",
                &AssimilationReport {
                    mode: mode.as_str(),
                    dim: mean.len(),
                    fourdvar: Some(&e.fourdvar),
                    start_minimization: Some(&e.start_minimization),
                    nred: basis.map(|b| b.nred()),
                    acceptance_rate: Some(e.chain.acceptance_rate),
                    proposals: Some(e.chain.accept_log.len()),
                    refreshes: Some(e.chain.refreshes),
                    gradient_checks: Some(&e.chain.gradient_checks),
                    ensemble_size: Some(e.chain.full_samples.len()),
                    hmc: Some(&e.hmc),
                    rmse_initial: rmse0(&mean),
                },
            )?;
        }
    }
    run.finish("assimilate", Some(mode.as_str()), &cfg.hash(), cfg.seed, timings)
}

fn write_basis(run: &mut RunDir, basis: &PodBasis, seed: u64) -> CliResult<()> {
    basis.export(&run.path().join("basis.bin"), Some(seed))?;
    run.register("basis.bin");
    run.register("basis.json");
    Ok(())
}

pub fn cmd_tune_step(cfg: &ExperimentConfig, out: &Path, mode: Mode) -> CliResult<RunManifest> {
    let Some(hmc) = mode.hmc_config(cfg) else {
        return Err(CliError::Config(format!("at '--mode': tune-step needs a sampler mode, got {mode}")));
    };
    let twin = load_twin(cfg, out)?;
    let mut timings = Vec::new();
    let prepared = prepare_target(&twin.window, cfg, mode, &mut timings)?;
    let t = Instant::now();
    let pilot = HmcConfig {
        stream_id: streams::TUNE,
        ..hmc
    };
    let report: TuneReport = tune_step_size(
        prepared.target.as_ref(),
        &prepared.start,
        &pilot,
        cfg.tune.band,
        cfg.tune.n_proposals,
        cfg.tune.max_trials,
    )?;
    timings.push(elapsed(t, "tune"));
    let mut run = RunDir::create(&out.join(format!("tune-{}", mode.as_str())))?;
    run.write_json(
        "tune.json",
        &json!({
            "mode": mode.as_str(),
            "n_steps": pilot.n_steps,
            "band": cfg.tune.band,
            "step_size": report.step_size,
            "rejection_rate": report.rejection_rate,
            "trials": report.trials,
        }),
    )?;
    run.finish("tune-step", Some(mode.as_str()), &cfg.hash(), cfg.seed, timings)
}

/// One assimilation run as read back for diagnosis.
pub struct LoadedRun {
    pub name: String,
    pub dir: PathBuf,
    pub manifest: RunManifest,
    /// Digest of the manifest's file list; unlike the manifest itself it excludes timings.
    pub content_sha256: String,
    pub mode: Mode,
    pub analysis: DVector<f64>,
    pub ensemble: Option<Vec<DVector<f64>>>,
    pub basis: Option<PodBasis>,
}

pub fn load_run(dir: &Path) -> CliResult<LoadedRun> {
    let manifest = RunManifest::load(dir)?;
    let listing: String = manifest.files.iter().map(|f| format!("{}  {}\n", f.sha256, f.path)).collect();
    let content_sha256 = crate::artifacts::sha256_hex(listing.as_bytes());
    let mode = manifest
        .mode
        .as_deref()
        .and_then(Mode::parse)
        .ok_or_else(|| CliError::Input(format!("{}: not an assimilation run", dir.display())))?;
    let basis_path = dir.join("basis.bin");
    let basis = if basis_path.exists() {
        Some(PodBasis::import(&basis_path)?)
    } else {
        None
    };
    let (analysis, ensemble) = if mode.is_sampler() {
        let (samples, _) = import_ensemble(&dir.join("ensemble.bin"))?;
        (read_vector(&dir.join("mean.bin"))?, Some(samples))
    } else {
        (read_vector(&dir.join("analysis.bin"))?, None)
    };
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Ok(LoadedRun {
        name,
        dir: dir.to_path_buf(),
        manifest,
        content_sha256,
        mode,
        analysis,
        ensemble,
        basis,
    })
}

fn schott_record(reference: &LoadedRun, run: &LoadedRun, form: SchottForm, alpha: f64) -> CliResult<CovTestReport> {
    let a = ensemble_moments(reference.ensemble.as_ref().expect("ensemble run"))?;
    let b = ensemble_moments(run.ensemble.as_ref().expect("ensemble run"))?;
    let n1 = reference.ensemble.as_ref().map_or(0, Vec::len);
    let n2 = run.ensemble.as_ref().map_or(0, Vec::len);
    Ok(schott_statistic(a.cov.matrix(), b.cov.matrix(), n1, n2, alpha, form)?)
}

/// RMSE series, moment comparisons, covariance tests and KL estimates for
/// the given runs. The first ensemble run is the reference of every test.
pub fn cmd_diagnose(cfg: &ExperimentConfig, out: &Path, run_dirs: &[PathBuf]) -> CliResult<RunManifest> {
    if run_dirs.is_empty() {
        return Err(CliError::Input("diagnose needs at least one run directory".into()));
    }
    let t = Instant::now();
    let twin = load_twin(cfg, out)?;
    let exp = &twin.experiment;
    let runs = run_dirs.iter().map(|d| load_run(d)).collect::<CliResult<Vec<_>>>()?;
    for r in &runs {
        if r.analysis.len() != exp.dim() {
            return Err(CliError::Input(format!(
                "{}: dimension {} does not match the experiment ({})",
                r.dir.display(),
                r.analysis.len(),
                exp.dim()
            )));
        }
    }

    let mut records: Vec<serde_json::Value> = Vec::new();
    for r in &runs {
        records.push(json!({
            "record": "run",
            "name": r.name,
            "mode": r.mode.as_str(),
            "content_sha256": r.content_sha256,
            "ensemble_size": r.ensemble.as_ref().map(Vec::len),
        }));
    }

    let model = exp.model.as_ref();
    let n = exp.n_intervals();
    let mut columns: Vec<(String, Vec<f64>)> = vec![
        ("truth".into(), rmse_series(&twin.truth_x0, &twin.truth_x0, model, n)?),
        ("background".into(), rmse_series(&twin.background, &twin.truth_x0, model, n)?),
    ];
    for r in &runs {
        let series = rmse_series(&r.analysis, &twin.truth_x0, model, n)?;
        records.push(json!({"record": "rmse", "run": r.name, "series": series}));
        columns.push((r.name.clone(), series));
    }

    let linear = model.linear_operator().is_some();
    for r in runs.iter().filter(|r| r.ensemble.is_some()) {
        let ens = r.ensemble.as_ref().expect("filtered");
        let m = ensemble_moments(ens)?;
        if linear {
            let analytic = match (r.mode, &r.basis) {
                (Mode::HmcApprox, Some(b)) => approx_posterior_moments(&twin.window, b)?,
                (Mode::HmcReduced, Some(b)) => {
                    let rom = RomProblem::new(twin.window.clone(), Arc::new(b.clone()))?;
                    let red = reduced_posterior_moments(&rom)?;
                    let v = b.v();
                    hmc_smoother::diagnostics::PosteriorMoments {
                        mean: v * &red.mean,
                        cov: hmc_smoother::state::CovarianceOperator::from_symmetrized(v * red.cov.matrix() * v.transpose())?,
                        variant: red.variant,
                    }
                }
                _ => linear_posterior_moments(&twin.window)?,
            };
            let comparison = compare_moments(ens, &m, &analytic);
            records.push(json!({
                "record": "moments",
                "run": r.name,
                "analytic": analytic.variant,
                "max_mean_z": comparison.max_mean_z,
                "cov_frobenius_rel": comparison.cov_frobenius_rel,
            }));
        }
        if let Some(b) = &r.basis {
            let rom = RomProblem::new(twin.window.clone(), Arc::new(b.clone()))?;
            records.push(json!({"record": "kl_estimate", "run": r.name, "value": kl_estimate(&rom, ens)?}));
        }
    }

    let ensembles: Vec<&LoadedRun> = runs.iter().filter(|r| r.ensemble.is_some()).collect();
    if let Some((reference, rest)) = ensembles.split_first() {
        let others: Vec<&LoadedRun> = if rest.is_empty() { vec![reference] } else { rest.to_vec() };
        for run in others {
            for form in [SchottForm::BiasCorrected, SchottForm::AsPrinted] {
                let report = schott_record(reference, run, form, cfg.diagnose.alpha)?;
                records.push(json!({"record": "schott", "reference": reference.name, "run": run.name, "report": report}));
            }
        }
    }

    let mut report = String::new();
    for r in &records {
        writeln!(report, "{}", serde_json::to_string(r).expect("record serializes")).expect("string write");
    }
    let mut csv = String::from("time");
    for (name, _) in &columns {
        write!(csv, ",{name}").expect("string write");
    }
    csv.push('\n');
    for k in 0..=n {
        write!(csv, "{k}").expect("string write");
        for (_, s) in &columns {
            write!(csv, ",{:.17e}", s[k]).expect("string write");
        }
        csv.push('\n');
    }
    let mut timing = String::from("run,mode,prepare_seconds,sample_seconds,samples,seconds_per_sample\n");
    for r in &runs {
        let sample = r.manifest.timing("sample").unwrap_or(0.0);
        let prepare = r.manifest.total_seconds() - sample;
        let count = r.ensemble.as_ref().map_or(0, Vec::len);
        let per = if count > 0 { sample / count as f64 } else { 0.0 };
        writeln!(timing, "{},{},{prepare:.6},{sample:.6},{count},{per:.6}", r.name, r.mode).expect("string write");
    }

    let mut dir = RunDir::create(&out.join(DIAGNOSE_DIR))?;
    dir.write_bytes("report.jsonl", report.as_bytes())?;
    dir.write_bytes("rmse.csv", csv.as_bytes())?;
    dir.write_bytes("timing.csv", timing.as_bytes())?;
    dir.finish("diagnose", None, &cfg.hash(), cfg.seed, vec![elapsed(t, "diagnose")])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentComparison {
    /// Largest componentwise `|mean_ens − mean| / (sd / √N)`.
    pub max_mean_z: f64,
    /// `‖S − A‖_F / ‖A‖_F`.
    pub cov_frobenius_rel: f64,
}

pub fn compare_moments(
    samples: &[DVector<f64>],
    ens: &hmc_smoother::diagnostics::PosteriorMoments,
    analytic: &hmc_smoother::diagnostics::PosteriorMoments,
) -> MomentComparison {
    let a = analytic.cov.matrix();
    let nens = samples.len() as f64;
    let max_mean_z = (0..ens.mean.len())
        .map(|i| {
            let se = (a[(i, i)].max(0.0) / nens).sqrt();
            let d = (ens.mean[i] - analytic.mean[i]).abs();
            if se > 0.0 {
                d / se
            } else if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max);
    let cov_frobenius_rel = (ens.cov.matrix() - a).norm() / a.norm();
    MomentComparison {
        max_mean_z,
        cov_frobenius_rel,
    }
}

