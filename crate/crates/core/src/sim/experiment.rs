//! Accuracy-versus-cost sweeps over the aggregation methods.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{run_adaptive, AdaptiveConfig, EtaMode, MarginBasis};
use crate::em::{em_fit, EmConfig};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_dm, estimate_dr, estimate_is, estimate_iw, sample_workers, SampleRealization, SamplingPlan,
};
use crate::imitation::{agreement_rate, fit_imitator, ImitatorModel, ImitatorTrainConfig};
use crate::model::{ConfusionMatrix, DsParams, FeatureMatrix, ProblemDims, ScoreModel, SoftAnnotation};
use crate::seed::{derive_rng, derive_seed, stage};
use crate::sim::libsvm::parse_libsvm;
use crate::sim::pool::{
    draw_categorical, gen_annotations, gen_dataset, gen_workers, LabelledData, SyntheticDataSpec, WorkerPoolSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Iw,
    Is,
    Dm,
    DrDs,
    DrMv,
    Mv,
    DrcAis,
    DrcAws,
    DrcAwsAis,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Iw,
        Method::Is,
        Method::Dm,
        Method::DrDs,
        Method::DrMv,
        Method::Mv,
        Method::DrcAis,
        Method::DrcAws,
        Method::DrcAwsAis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Iw => "IW",
            Method::Is => "IS",
            Method::Dm => "DM",
            Method::DrDs => "DR-DS",
            Method::DrMv => "DR-MV",
            Method::Mv => "MV",
            Method::DrcAis => "DRC-AIS",
            Method::DrcAws => "DRC-AWS",
            Method::DrcAwsAis => "DRC-AWS-AIS",
        }
    }

    pub fn valid_names() -> String {
        Method::ALL.map(Method::name).join(", ")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(t))
            .ok_or_else(|| Error::Config(format!("unknown method '{t}'; valid methods: {}", Method::valid_names())))
    }
}

/// Parses a comma-separated method list.
pub fn parse_methods(s: &str) -> Result<Vec<Method>> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(str::parse).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic { n: usize, k: usize, d: usize, separation: f64 },
    Libsvm(PathBuf),
}

/// Which methods to run, over which grids, how many times.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub methods: Vec<Method>,
    /// Uniform inclusion probabilities for the non-adaptive methods.
    pub pi_grid: Vec<f64>,
    pub rho_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    /// Inclusion probability used by DRC-AIS on escalated items.
    pub base_pi: f64,
    /// Margin used to score workers in the AWS methods.
    pub margin_basis: MarginBasis,
    pub replicates: usize,
    pub master_seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            methods: vec![Method::Iw, Method::Is, Method::Dm, Method::DrDs],
            pi_grid: vec![0.05, 0.1, 0.2, 0.5, 1.0],
            rho_grid: vec![0.9, 0.99, 0.9999, 0.999999, 0.99999999, 0.9999999999, 0.999999999999],
            lambda_grid: vec![1.0, 2.0, 5.0, 10.0],
            base_pi: 0.2,
            margin_basis: MarginBasis::Likelihood,
            replicates: 20,
            master_seed: 2024,
        }
    }
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return config_err("no methods selected");
        }
        if self.replicates == 0 {
            return config_err("replicates must be at least 1");
        }
        let uses = |f: &dyn Fn(Method) -> bool| self.methods.iter().any(|&m| f(m));
        let check = |name: &str, grid: &[f64], ok: &dyn Fn(f64) -> bool, range: &str| -> Result<()> {
            if grid.is_empty() {
                return config_err(format!("{name} grid is empty"));
            }
            match grid.iter().find(|&&v| !ok(v)) {
                Some(v) => config_err(format!("{name} value {v} outside {range}")),
                None => Ok(()),
            }
        };
        let prob = |v: f64| v > 0.0 && v <= 1.0;
        if uses(&|m| !matches!(m, Method::DrcAis | Method::DrcAws | Method::DrcAwsAis)) {
            check("pi", &self.pi_grid, &prob, "(0, 1]")?;
        }
        if uses(&|m| matches!(m, Method::DrcAis | Method::DrcAwsAis)) {
            check("rho", &self.rho_grid, &|v| (0.0..=1.0).contains(&v), "[0, 1]")?;
        }
        if uses(&|m| matches!(m, Method::DrcAws | Method::DrcAwsAis)) {
            check("lambda", &self.lambda_grid, &|v| v > 0.0 && v.is_finite(), "(0, inf)")?;
        }
        if uses(&|m| m == Method::DrcAis) && !prob(self.base_pi) {
            return config_err(format!("base_pi {} outside (0, 1]", self.base_pi));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub m: usize,
    pub accuracy_low: f64,
    pub accuracy_high: f64,
    /// Probability that a worker labels a training item.
    pub train_observe: f64,
    /// Fraction of items used for training; the rest are test items.
    pub train_fraction: f64,
    pub em: EmConfig,
    /// `seed` is ignored; imitator seeds derive from the master seed.
    pub imitator: ImitatorTrainConfig,
    pub sweep: SweepSpec,
}

/// Chosen so that the imitators are useful but not sufficient on their own
/// on the default pool: the direct method alone lands a few points below the
/// all-workers accuracy.
pub const DEFAULT_SEPARATION: f64 = 1.2;

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synthetic { n: 2000, k: 5, d: 10, separation: DEFAULT_SEPARATION },
            m: 50,
            accuracy_low: 0.8,
            accuracy_high: 1.0,
            train_observe: 0.3,
            train_fraction: 0.5,
            em: EmConfig::default(),
            imitator: ImitatorTrainConfig::default(),
            sweep: SweepSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if let DataSource::Synthetic { n, k, d, separation } = self.data {
            if n < 2 || k < 2 || d == 0 {
                return config_err("synthetic data needs n >= 2, k >= 2 and d >= 1");
            }
            if !(separation > 0.0 && separation.is_finite()) {
                return config_err(format!("separation must be positive, got {separation}"));
            }
        }
        if self.m < 2 {
            return config_err("need at least two workers");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return config_err(format!("split fraction {} outside (0, 1)", self.train_fraction));
        }
        if !(self.train_observe > 0.0 && self.train_observe <= 1.0) {
            return config_err(format!("train observe probability {} outside (0, 1]", self.train_observe));
        }
        self.em.validate().map_err(to_config)?;
        self.imitator.validate().map_err(to_config)?;
        self.sweep.validate()?;
        self.pool_spec(0, self.classes_hint()).validate().map_err(to_config)
    }

    fn classes_hint(&self) -> usize {
        match self.data {
            DataSource::Synthetic { k, .. } => k,
            // checked again once the file is read
            DataSource::Libsvm(_) => 2,
        }
    }

    fn pool_spec(&self, replicate: usize, k: usize) -> WorkerPoolSpec {
        WorkerPoolSpec {
            m: self.m,
            k,
            accuracy_low: self.accuracy_low,
            accuracy_high: self.accuracy_high,
            seed: derive_seed(self.sweep.master_seed, &[stage::WORKERS, replicate as u64]),
        }
    }

    fn load_data(&self) -> Result<LabelledData> {
        match &self.data {
            DataSource::Synthetic { n, k, d, separation } => gen_dataset(&SyntheticDataSpec {
                n: *n,
                k: *k,
                d: *d,
                separation: *separation,
                seed: self.sweep.master_seed,
            }),
            DataSource::Libsvm(path) => {
                let file = std::fs::File::open(path)
                    .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
                let parsed = parse_libsvm(std::io::BufReader::new(file))?;
                let k = parsed.k();
                if k < 2 {
                    return Err(Error::Input(format!("{} holds a single class", path.display())));
                }
                Ok(LabelledData { features: parsed.features, labels: parsed.labels, k })
            }
        }
    }
}

fn to_config(e: Error) -> Error {
    match e {
        Error::Input(msg) => Error::Config(msg),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub param_name: String,
    pub param_value: f64,
    pub replicate: usize,
    pub cost_per_item: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateDiagnostics {
    pub replicate: usize,
    pub train_items: usize,
    pub test_items: usize,
    /// Mean over workers with training annotations of their imitator's
    /// agreement rate on those annotations.
    pub mean_agreement: f64,
    pub fallback_imitators: usize,
    pub em_iterations: usize,
    pub em_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub diagnostics: Vec<ReplicateDiagnostics>,
}

impl SweepResult {
    pub fn rows_for<'a>(&'a self, method: Method) -> impl Iterator<Item = &'a SweepRow> + 'a {
        self.rows.iter().filter(move |r| r.method == method.name())
    }

    pub fn mean_agreement(&self) -> f64 {
        let n = self.diagnostics.len().max(1) as f64;
        self.diagnostics.iter().map(|d| d.mean_agreement).sum::<f64>() / n
    }
}

#[derive(Debug, Clone, Copy)]
enum CellKind {
    Uniform { pi: f64 },
    Adaptive(AdaptiveConfig<f64>),
}

#[derive(Debug, Clone)]
struct Cell {
    method: Method,
    param_name: String,
    param_value: f64,
    kind: CellKind,
    /// Sampling stream. Cells whose sampling plan does not depend on `rho`
    /// share one stream, so changing `rho` only changes routing.
    point: [u64; 2],
}

const FAMILY_PI: u64 = 0;
const FAMILY_RHO: u64 = 1;
const FAMILY_LAMBDA: u64 = 2;
const FAMILY_RHO_LAMBDA: u64 = 3;

fn build_cells(spec: &SweepSpec) -> Vec<Cell> {
    let adaptive = |ais, aws, rho, lambda, eta_mode| {
        CellKind::Adaptive(AdaptiveConfig {
            ais,
            aws,
            rho,
            lambda,
            base_pi: spec.base_pi,
            eta_mode,
            margin_basis: spec.margin_basis,
        })
    };
    let mut cells = Vec::new();
    for &method in &spec.methods {
        match method {
            Method::DrcAis => {
                for &rho in &spec.rho_grid {
                    cells.push(Cell {
                        method,
                        param_name: "rho".into(),
                        param_value: rho,
                        kind: adaptive(true, false, rho, 1.0, EtaMode::Unclipped),
                        point: [FAMILY_RHO, 0],
                    });
                }
            }
            Method::DrcAws => {
                for (i, &lambda) in spec.lambda_grid.iter().enumerate() {
                    cells.push(Cell {
                        method,
                        param_name: "lambda".into(),
                        param_value: lambda,
                        kind: adaptive(false, true, 0.0, lambda, EtaMode::Automatic),
                        point: [FAMILY_LAMBDA, i as u64],
                    });
                }
            }
            Method::DrcAwsAis => {
                for (a, &lambda) in spec.lambda_grid.iter().enumerate() {
                    for &rho in &spec.rho_grid {
                        cells.push(Cell {
                            method,
                            param_name: format!("rho@lambda={lambda}"),
                            param_value: rho,
                            kind: adaptive(true, true, rho, lambda, EtaMode::Automatic),
                            point: [FAMILY_RHO_LAMBDA, a as u64],
                        });
                    }
                }
            }
            _ => {
                for (i, &pi) in spec.pi_grid.iter().enumerate() {
                    cells.push(Cell {
                        method,
                        param_name: "pi".into(),
                        param_value: pi,
                        kind: CellKind::Uniform { pi },
                        point: [FAMILY_PI, i as u64],
                    });
                }
            }
        }
    }
    cells
}

/// Everything needed to evaluate test items in one replicate.
pub struct ReplicateSetup<'a> {
    pub params: DsParams<f64>,
    pub imitators: Vec<ImitatorModel<f64>>,
    /// True confusion matrices used to simulate worker answers.
    pub workers: Vec<ConfusionMatrix<f64>>,
    pub features: &'a FeatureMatrix<f64>,
    pub truth: &'a [usize],
    /// Rows of `features` / entries of `truth` that are test items.
    pub test_items: Vec<usize>,
}

/// Lazily drawn worker answers for one (replicate, item). Each worker's
/// answer is a pure function of the seed path, and is drawn at most once.
struct LabelCache<'a> {
    seed: u64,
    replicate: u64,
    item: u64,
    truth: usize,
    workers: &'a [ConfusionMatrix<f64>],
    labels: Vec<Option<usize>>,
}

impl LabelCache<'_> {
    fn get(&mut self, worker: usize) -> usize {
        if let Some(l) = self.labels[worker] {
            return l;
        }
        let mut rng = derive_rng(self.seed, &[stage::TEST_LABELS, self.replicate, self.item, worker as u64]);
        let l = draw_categorical(&self.workers[worker].column(self.truth), &mut rng);
        self.labels[worker] = Some(l);
        l
    }
}

fn poll_uniform<R: rand::Rng>(
    m: usize,
    pi: f64,
    rng: &mut R,
    cache: &mut LabelCache<'_>,
) -> Result<(SamplingPlan<f64>, SampleRealization)> {
    let plan = SamplingPlan::uniform(m, pi)?;
    let picked = sample_workers(&plan, rng);
    let real = SampleRealization::new(picked.into_iter().map(|i| (i, cache.get(i))))?;
    Ok((plan, real))
}

struct Evaluator<'a> {
    seed: u64,
    replicate: u64,
    setup: &'a ReplicateSetup<'a>,
    ds: ScoreModel<f64>,
    mv: ScoreModel<f64>,
    cells: &'a [Cell],
}

impl Evaluator<'_> {
    fn item(&self, j: usize) -> Result<Vec<(bool, usize)>> {
        let setup = self.setup;
        let m = setup.workers.len();
        let x = setup.features.row(j);
        let softs: Vec<SoftAnnotation<f64>> = setup.imitators.iter().map(|im| im.imitate(x)).collect::<Result<_>>()?;
        let truth = setup.truth[j];
        let mut cache = LabelCache {
            seed: self.seed,
            replicate: self.replicate,
            item: j as u64,
            truth,
            workers: &setup.workers,
            labels: vec![None; m],
        };
        let mut out = Vec::with_capacity(self.cells.len());
        for cell in self.cells {
            let mut rng =
                derive_rng(self.seed, &[stage::SAMPLING, self.replicate, j as u64, cell.point[0], cell.point[1]]);
            let est = match cell.kind {
                CellKind::Uniform { pi } => {
                    let mut uniform = || poll_uniform(m, pi, &mut rng, &mut cache);
                    match cell.method {
                        Method::Iw => {
                            let labels: Vec<usize> = (0..m).map(|i| cache.get(i)).collect();
                            estimate_iw(&self.ds, &labels)?
                        }
                        Method::Dm => estimate_dm(&self.ds, &softs)?,
                        Method::Is => {
                            let (plan, real) = uniform()?;
                            estimate_is(&self.ds, &real, &plan)?
                        }
                        Method::Mv => {
                            let (plan, real) = uniform()?;
                            estimate_is(&self.mv, &real, &plan)?
                        }
                        Method::DrDs => {
                            let (plan, real) = uniform()?;
                            estimate_dr(&self.ds, &softs, &real, &plan)?
                        }
                        Method::DrMv => {
                            let (plan, real) = uniform()?;
                            estimate_dr(&self.mv, &softs, &real, &plan)?
                        }
                        _ => unreachable!("adaptive methods use adaptive cells"),
                    }
                }
                CellKind::Adaptive(cfg) => {
                    run_adaptive(&setup.params, &self.ds, &softs, |i| Ok(cache.get(i)), &cfg, &mut rng)?.estimate
                }
            };
            out.push((est.chosen == truth, est.realized_cost));
        }
        Ok(out)
    }
}

/// Scores every cell on every test item of one replicate.
fn evaluate_replicate(
    seed: u64,
    replicate: usize,
    setup: &ReplicateSetup<'_>,
    cells: &[Cell],
) -> Result<Vec<SweepRow>> {
    if setup.test_items.is_empty() {
        return Err(Error::Input("no test items".into()));
    }
    let eval = Evaluator {
        seed,
        replicate: replicate as u64,
        setup,
        ds: ScoreModel::dawid_skene(&setup.params),
        mv: ScoreModel::majority_vote(setup.params.k(), setup.params.m()),
        cells,
    };
    let per_item: Vec<Vec<(bool, usize)>> =
        setup.test_items.par_iter().map(|&j| eval.item(j)).collect::<Result<_>>()?;
    let n_test = setup.test_items.len() as f64;
    Ok(cells
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let (hits, cost) =
                per_item.iter().fold((0usize, 0usize), |(h, k), item| (h + item[c].0 as usize, k + item[c].1));
            SweepRow {
                method: cell.method.name().to_string(),
                param_name: cell.param_name.clone(),
                param_value: cell.param_value,
                replicate,
                cost_per_item: cost as f64 / n_test,
                accuracy: hits as f64 / n_test,
            }
        })
        .collect())
}

/// Full pipeline: per replicate, split, simulate a worker pool and training
/// annotations, fit Dawid-Skene parameters and imitators, then evaluate every
/// method on the test items.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let data = cfg.load_data()?;
    let n = data.features.n();
    let n_train = ((n as f64) * cfg.train_fraction).round() as usize;
    if n_train == 0 || n_train >= n {
        return config_err(format!("split fraction {} leaves an empty side of {n} items", cfg.train_fraction));
    }
    cfg.pool_spec(0, data.k).validate().map_err(to_config)?;
    let seed = cfg.sweep.master_seed;
    let cells = build_cells(&cfg.sweep);
    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    for r in 0..cfg.sweep.replicates {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut derive_rng(seed, &[stage::SPLIT, r as u64]));
        let (train, test) = order.split_at(n_train);
        let mut train = train.to_vec();
        train.sort_unstable();
        let mut test_items = test.to_vec();
        test_items.sort_unstable();

        let workers = gen_workers(&cfg.pool_spec(r, data.k))?;
        let train_truth: Vec<usize> = train.iter().map(|&j| data.labels[j]).collect();
        let mut ann_rng = derive_rng(seed, &[stage::TRAIN_ANNOTATIONS, r as u64]);
        let ann = gen_annotations(&train_truth, &workers, cfg.train_observe, &mut ann_rng)?;
        let train_x = data.features.select(&train);

        let dims = ProblemDims::new(n_train, cfg.m, data.k, data.features.d())?;
        let fit = em_fit::<f64>(&ann, dims, &cfg.em)?;
        let im_cfg = ImitatorTrainConfig { seed: derive_seed(seed, &[stage::IMITATORS, r as u64]), ..cfg.imitator };
        let imitators: Vec<ImitatorModel<f64>> =
            (0..cfg.m).into_par_iter().map(|i| fit_imitator(&train_x, &ann, i, &im_cfg)).collect::<Result<_>>()?;

        let mut agreements = Vec::new();
        for (i, im) in imitators.iter().enumerate() {
            if !ann.worker(i).is_empty() {
                agreements.push(agreement_rate(im, &train_x, &ann, i)?);
            }
        }
        let mean_agreement =
            if agreements.is_empty() { 0.0 } else { agreements.iter().sum::<f64>() / agreements.len() as f64 };
        diagnostics.push(ReplicateDiagnostics {
            replicate: r,
            train_items: n_train,
            test_items: test_items.len(),
            mean_agreement,
            fallback_imitators: imitators.iter().filter(|im| im.is_fallback()).count(),
            em_iterations: fit.objective.len(),
            em_converged: fit.converged,
        });

        let setup = ReplicateSetup {
            params: fit.params,
            imitators,
            workers,
            features: &data.features,
            truth: &data.labels,
            test_items,
        };
        rows.extend(evaluate_replicate(seed, r, &setup, &cells)?);
    }
    Ok(SweepResult { rows, diagnostics })
}

/// Evaluation with parameters and imitators trained elsewhere: every item in
/// `features` is a test item and worker answers are simulated from
/// `workers` afresh in each replicate.
pub fn run_pretrained(
    spec: &SweepSpec,
    params: &DsParams<f64>,
    imitators: &[ImitatorModel<f64>],
    workers: &[ConfusionMatrix<f64>],
    features: &FeatureMatrix<f64>,
    truth: &[usize],
) -> Result<SweepResult> {
    spec.validate()?;
    let (m, k) = (params.m(), params.k());
    if imitators.len() != m || workers.len() != m {
        return config_err(format!(
            "model has {m} workers but {} imitators and {} simulated workers were given",
            imitators.len(),
            workers.len()
        ));
    }
    if workers.iter().any(|w| w.k() != k) || imitators.iter().any(|im| im.k() != k) {
        return config_err(format!("all models must have {k} classes"));
    }
    if let Some(im) = imitators.iter().find(|im| im.d() != 0 && im.d() != features.d()) {
        return config_err(format!("imitator expects {} features, data has {}", im.d(), features.d()));
    }
    if truth.len() != features.n() {
        return config_err(format!("{} labels for {} feature rows", truth.len(), features.n()));
    }
    if let Some(&y) = truth.iter().find(|&&y| y >= k) {
        return config_err(format!("true label {} outside 1..={k}", y + 1));
    }
    let cells = build_cells(spec);
    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    for r in 0..spec.replicates {
        let setup = ReplicateSetup {
            params: params.clone(),
            imitators: imitators.to_vec(),
            workers: workers.to_vec(),
            features,
            truth,
            test_items: (0..features.n()).collect(),
        };
        rows.extend(evaluate_replicate(spec.master_seed, r, &setup, &cells)?);
        diagnostics.push(ReplicateDiagnostics {
            replicate: r,
            train_items: 0,
            test_items: features.n(),
            mean_agreement: f64::NAN,
            fallback_imitators: imitators.iter().filter(|im| im.is_fallback()).count(),
            em_iterations: 0,
            em_converged: true,
        });
    }
    Ok(SweepResult { rows, diagnostics })
}
