use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use drc_core::adaptive::MarginBasis;
use drc_core::em::{em_fit, EmConfig};
use drc_core::imitation::{agreement_rate, fit_imitator, ImitatorModel, ImitatorTrainConfig};
use drc_core::model::{FeatureMatrix, ProblemDims};
use drc_core::seed::{derive_rng, derive_seed, stage};
use drc_core::sim::experiment::{
    parse_methods, run_experiment, run_pretrained, DataSource, ExperimentConfig, SweepResult, SweepSpec,
};
use drc_core::sim::io::{
    create_file, open_file, read_annotations, read_confusions, read_labels, write_annotations, write_confusions,
    write_ds_params, write_labels, write_sweep_csv, write_sweep_json,
};
use drc_core::sim::libsvm::{parse_libsvm, write_libsvm, LibsvmData};
use drc_core::sim::pool::{gen_annotations, gen_dataset, gen_workers, SyntheticDataSpec, WorkerPoolSpec};
use drc_core::sim::theorems::{theorem_suite, TheoremSuiteConfig, MIN_INSTANCES};

use crate::config::Resolved;
use crate::CliError;

pub const WORKERS_FILE: &str = "workers.txt";
pub const ANNOTATIONS_FILE: &str = "annotations.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const FEATURES_FILE: &str = "features.libsvm";
pub const MODEL_FILE: &str = "ds_model.txt";

pub fn imitator_file(worker: usize) -> String {
    format!("imitator_{}.bin", worker + 1)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))
}

fn finish<W: Write>(mut w: W, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn to_usage(e: drc_core::Error) -> CliError {
    CliError::usage(e.to_string())
}

fn print_json(value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::runtime(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn read_features(path: &Path) -> Result<LibsvmData, CliError> {
    parse_libsvm(open_file(path)?).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn em_config(r: &Resolved) -> Result<EmConfig, CliError> {
    let cfg = EmConfig { max_iters: r.get("em-max-iters")?, tol: r.get("em-tol")?, smoothing: r.get("em-smoothing")? };
    cfg.validate().map_err(to_usage)?;
    Ok(cfg)
}

fn imitator_config(r: &Resolved, seed: u64) -> Result<ImitatorTrainConfig, CliError> {
    let cfg = ImitatorTrainConfig {
        epochs: r.get("epochs")?,
        learning_rate: r.get("learning-rate")?,
        l2: r.get("l2")?,
        seed,
    };
    cfg.validate().map_err(to_usage)?;
    Ok(cfg)
}

pub fn gen(r: &Resolved, json: bool) -> Result<(), CliError> {
    let seed: u64 = r.get("seed")?;
    let (m, k, n, d): (usize, usize, usize, usize) = (r.get("m")?, r.get("k")?, r.get("n")?, r.get("d")?);
    let (accuracy_low, accuracy_high) = r.range("acc")?;
    let observe: f64 = r.get("observe")?;
    let separation: f64 = r.get("separation")?;
    let pool = WorkerPoolSpec { m, k, accuracy_low, accuracy_high, seed };
    pool.validate().map_err(to_usage)?;
    if !(observe > 0.0 && observe <= 1.0) {
        return Err(CliError::usage(format!("observe must lie in (0, 1], got {observe}")));
    }
    let data_spec = SyntheticDataSpec { n, k, d, separation, seed };
    if n == 0 || d == 0 || !(separation > 0.0 && separation.is_finite()) {
        return Err(CliError::usage("need n >= 1, d >= 1 and a positive separation"));
    }

    let data = gen_dataset(&data_spec)?;
    let workers = gen_workers(&pool)?;
    let ann = gen_annotations(&data.labels, &workers, observe, &mut derive_rng(seed, &[stage::TRAIN_ANNOTATIONS]))?;

    let dir = PathBuf::from(r.raw("out-dir"));
    create_dir(&dir)?;
    let mut written = Vec::new();
    let path = dir.join(WORKERS_FILE);
    let mut w = create_file(&path)?;
    write_confusions(&mut w, None, &workers)?;
    finish(w, &path)?;
    written.push(path);

    let path = dir.join(ANNOTATIONS_FILE);
    let mut w = create_file(&path)?;
    write_annotations(&mut w, &ann)?;
    finish(w, &path)?;
    written.push(path);

    let path = dir.join(LABELS_FILE);
    let mut w = create_file(&path)?;
    write_labels(&mut w, &data.labels)?;
    finish(w, &path)?;
    written.push(path);

    if r.flag("with-features")? {
        let path = dir.join(FEATURES_FILE);
        let mut w = create_file(&path)?;
        let libsvm = LibsvmData {
            features: data.features,
            labels: data.labels,
            label_values: (1..=k).map(|c| c as f64).collect(),
        };
        write_libsvm(&mut w, &libsvm).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        finish(w, &path)?;
        written.push(path);
    }

    let files: Vec<String> = written.iter().map(|p| p.display().to_string()).collect();
    if json {
        print_json(&json!({ "files": files, "annotations": ann.len(), "workers": m, "items": n, "classes": k }))
    } else {
        for f in &files {
            println!("wrote {f}");
        }
        println!("{} annotations from {m} workers on {n} items", ann.len());
        Ok(())
    }
}

pub fn train(r: &Resolved, json: bool) -> Result<(), CliError> {
    let ann_path = r.path("annotations").ok_or_else(|| CliError::usage("train needs --annotations"))?;
    let want_imitators = r.flag("imitators")?;
    let features_path = r.path("features");
    if want_imitators && features_path.is_none() {
        return Err(CliError::usage("imitators requested but no --features file given (or pass --imitators false)"));
    }
    let seed: u64 = r.get("seed")?;
    let em_cfg = em_config(r)?;
    let im_cfg = imitator_config(r, derive_seed(seed, &[stage::IMITATORS]))?;
    let features = features_path.map(read_features).transpose()?;

    let m_opt: Option<usize> = r.opt("m")?;
    let k_opt: Option<usize> = r.opt("k")?;
    let n_opt = features.as_ref().map(|f| f.features.n());
    let ann = read_annotations(open_file(ann_path)?, (m_opt, n_opt, k_opt))
        .map_err(|e| CliError::runtime(format!("{}: {e}", ann_path.display())))?;
    let ann = match (k_opt, &features) {
        // the feature file may know about classes nobody reported
        (None, Some(f)) if f.k() > ann.k() => {
            drc_core::model::AnnotationMatrix::from_triples(ann.m(), ann.n(), f.k(), ann.iter())?
        }
        _ => ann,
    };
    let d = features.as_ref().map_or(1, |f| f.features.d().max(1));
    let dims = ProblemDims::new(ann.n(), ann.m(), ann.k(), d).map_err(to_usage)?;
    let fit = em_fit::<f64>(&ann, dims, &em_cfg)?;

    let dir = PathBuf::from(r.raw("out-dir"));
    create_dir(&dir)?;
    let model_path = dir.join(MODEL_FILE);
    let mut w = create_file(&model_path)?;
    write_ds_params(&mut w, &fit.params)?;
    finish(w, &model_path)?;

    let mut table = Vec::new();
    if let Some(f) = &features {
        if want_imitators {
            let x: &FeatureMatrix<f64> = &f.features;
            let imitators: Vec<ImitatorModel<f64>> =
                (0..ann.m()).into_par_iter().map(|i| fit_imitator(x, &ann, i, &im_cfg)).collect::<Result<_, _>>()?;
            for (i, im) in imitators.iter().enumerate() {
                let path = dir.join(imitator_file(i));
                let mut w = create_file(&path)?;
                im.write_to(&mut w).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
                finish(w, &path)?;
                let count = ann.worker(i).len();
                let agreement = if count > 0 { Some(agreement_rate(im, x, &ann, i)?) } else { None };
                table.push((i + 1, count, agreement, im.is_fallback()));
            }
        }
    }
    let rated: Vec<f64> = table.iter().filter_map(|t| t.2).collect();
    let mean_agreement = (!rated.is_empty()).then(|| rated.iter().sum::<f64>() / rated.len() as f64);
    let loglik = fit.log_likelihood.last().copied().unwrap_or(f64::NAN);

    if json {
        let workers: Vec<_> = table
            .iter()
            .map(|&(w, c, a, fb)| json!({ "worker": w, "annotations": c, "agreement": a, "fallback": fb }))
            .collect();
        return print_json(&json!({
            "model": model_path.display().to_string(),
            "em_iterations": fit.objective.len(),
            "em_converged": fit.converged,
            "log_likelihood": loglik,
            "workers": workers,
            "mean_agreement": mean_agreement,
        }));
    }
    println!("wrote {}", model_path.display());
    println!("EM: {} iterations, converged: {}, log-likelihood {loglik:.6}", fit.objective.len(), fit.converged);
    if !table.is_empty() {
        println!("{:>8} {:>12} {:>10} {:>9}", "worker", "annotations", "agreement", "fallback");
        for (w, c, a, fb) in &table {
            let a = a.map_or("-".to_string(), |v| format!("{v:.4}"));
            println!("{w:>8} {c:>12} {a:>10} {:>9}", if *fb { "yes" } else { "no" });
        }
        if let Some(mean) = mean_agreement {
            println!("mean agreement {mean:.4}");
        }
    }
    Ok(())
}

fn sweep_spec(r: &Resolved) -> Result<SweepSpec, CliError> {
    let spec = SweepSpec {
        methods: parse_methods(r.raw("methods"))?,
        pi_grid: r.list("pi")?,
        rho_grid: r.list("rho")?,
        lambda_grid: r.list("lambda")?,
        base_pi: r.get("base-pi")?,
        margin_basis: match r.raw("aws-margin") {
            "likelihood" => MarginBasis::Likelihood,
            "posterior" => MarginBasis::Posterior,
            other => {
                return Err(CliError::usage(format!("aws-margin must be 'likelihood' or 'posterior', found '{other}'")))
            }
        },
        replicates: r.get("replicates")?,
        master_seed: r.get("seed")?,
    };
    spec.validate()?;
    Ok(spec)
}

fn eval_pretrained(r: &Resolved, spec: &SweepSpec, dir: &Path) -> Result<SweepResult, CliError> {
    let params = read_confusions(open_file(&dir.join(MODEL_FILE))?)?.into_params()?;
    let workers_path =
        r.path("workers").ok_or_else(|| CliError::usage("--model-dir needs --workers to simulate worker answers"))?;
    let workers = read_confusions(open_file(workers_path)?)?.confusions;
    let features_path =
        r.path("features").ok_or_else(|| CliError::usage("--model-dir needs --features for the evaluation items"))?;
    let data = read_features(features_path)?;
    let truth = match r.path("labels") {
        Some(p) => read_labels(open_file(p)?)?,
        None => data
            .labels
            .iter()
            .map(|&c| {
                let v = data.label_values[c];
                if v >= 1.0 && v.fract() == 0.0 {
                    Ok(v as usize - 1)
                } else {
                    Err(CliError::runtime(format!(
                        "{}: label {v} is not a 1-based class id; pass --labels",
                        features_path.display()
                    )))
                }
            })
            .collect::<Result<_, _>>()?,
    };
    let mut imitators = Vec::with_capacity(params.m());
    for i in 0..params.m() {
        let path = dir.join(imitator_file(i));
        let mut src = open_file(&path)?;
        imitators.push(
            ImitatorModel::read_from(&mut src).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?,
        );
    }
    Ok(run_pretrained(spec, &params, &imitators, &workers, &data.features, &truth)?)
}

pub fn eval(r: &Resolved, json: bool) -> Result<(), CliError> {
    let spec = sweep_spec(r)?;
    let model_dir = r.path("model-dir");
    let end_to_end = r.flag("end-to-end")?;
    if end_to_end && model_dir.is_some() {
        return Err(CliError::usage("--end-to-end and --model-dir are mutually exclusive"));
    }
    let result = match model_dir {
        Some(dir) => eval_pretrained(r, &spec, dir)?,
        None => {
            let data = match r.path("data") {
                Some(p) => DataSource::Libsvm(p.to_path_buf()),
                None => DataSource::Synthetic {
                    n: r.get("n")?,
                    k: r.get("k")?,
                    d: r.get("d")?,
                    separation: r.get("separation")?,
                },
            };
            let (accuracy_low, accuracy_high) = r.range("acc")?;
            let cfg = ExperimentConfig {
                data,
                m: r.get("m")?,
                accuracy_low,
                accuracy_high,
                train_observe: r.get("observe")?,
                train_fraction: r.get("split")?,
                em: em_config(r)?,
                imitator: imitator_config(r, 0)?,
                sweep: spec,
            };
            let result = run_experiment(&cfg)?;
            eprintln!("mean imitator agreement {:.4}", result.mean_agreement());
            result
        }
    };

    if let Some(path) = r.path("json-out") {
        let mut w = create_file(path)?;
        write_sweep_json(&mut w, &result)?;
        finish(w, path)?;
    }
    match r.path("out") {
        Some(path) => {
            let mut w = create_file(path)?;
            write_sweep_csv(&mut w, &result)?;
            finish(w, path)?;
        }
        None if !json => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write_sweep_csv(&mut lock, &result)?;
            finish(lock, Path::new("<stdout>"))?;
        }
        None => {}
    }
    if json {
        let value = serde_json::to_value(&result).map_err(|e| CliError::runtime(e.to_string()))?;
        print_json(&value)?;
    }
    Ok(())
}

pub fn verify(r: &Resolved, json: bool) -> Result<(), CliError> {
    let cfg = TheoremSuiteConfig { instances: r.get("instances")?, seed: r.get("seed")?, tolerance: r.get("tol")? };
    if cfg.instances < MIN_INSTANCES {
        return Err(CliError::usage(format!("--instances must be at least {MIN_INSTANCES}")));
    }
    let report = theorem_suite(&cfg).map_err(to_usage)?;
    if json {
        let value = serde_json::to_value(&report).map_err(|e| CliError::runtime(e.to_string()))?;
        print_json(&value)?;
    } else {
        print!("{}", report.render());
    }
    if report.passed {
        Ok(())
    } else {
        Err(CliError::runtime("estimator identity check failed"))
    }
}
