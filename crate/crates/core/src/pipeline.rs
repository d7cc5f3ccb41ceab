//! End-to-end pipeline: measure → denoise → fit → resample → evaluate.
//!
//! The in-memory stages ([`measure`], [`post_process`], ...) are what the CLI
//! drives; the `cmd_*` functions wrap them with CSV/JSON artifacts in an output
//! directory so each stage can be rerun on its own. Only [`measure`] takes the
//! real data; [`post_process`] and its parts see the synthetic data and the
//! measured answers alone.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::denoiser::{denoise, DenoiseMode, DenoiseOptions, DenoiseResult};
use crate::error::{Error, Result};
use crate::evaluator::{correlation_matrix, evaluate, MetricOptions, MetricReport};
use crate::mechanisms::{MechanismKind, MechanismSpec, PrivacyAccount};
use crate::projector::{fit_dual, CenteredQueries, DualSolution, OptimizerConfig};
use crate::resampler::{compute_weights, resample_indices, ResampleMethod, ResampleWeights};
use crate::tabular::{load_csv, support, Dataset, Preprocessor, RawTable, Schema};
use crate::workload::{
    build_moment_workload, evaluate_queries, query_matrix, select_features, sensitivity,
    AnswerVector, QueryWorkload,
};

/// `δ_post` as a literal or the rule `"1/n^2"` resolved against the measured row count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeltaPost {
    Value(f64),
    Rule(String),
}

impl DeltaPost {
    pub fn resolve(&self, n: usize) -> Result<f64> {
        match self {
            DeltaPost::Value(v) => Ok(*v),
            DeltaPost::Rule(r) => match r.replace(' ', "").as_str() {
                "1/n^2" | "1/n²" | "1/n**2" => Ok(1.0 / (n as f64 * n as f64)),
                "1/n" => Ok(1.0 / n as f64),
                other => Err(Error::InvalidArgument(format!(
                    "unknown delta_post rule `{other}`"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MechanismConfig {
    pub kind: MechanismKind,
    pub eps_post: f64,
    /// Defaults to `1/n^2` for the Gaussian mechanism and 0 for Laplace.
    pub delta_post: Option<DeltaPost>,
    pub seed: u64,
}

impl Default for MechanismConfig {
    fn default() -> Self {
        MechanismConfig {
            kind: MechanismKind::Gaussian,
            eps_post: 1.0,
            delta_post: None,
            seed: 0,
        }
    }
}

impl MechanismConfig {
    pub fn resolve_delta(&self, n: usize) -> Result<f64> {
        match (&self.delta_post, self.kind) {
            (Some(d), _) => d.resolve(n),
            (None, MechanismKind::Gaussian) => DeltaPost::Rule("1/n^2".into()).resolve(n),
            (None, MechanismKind::Laplace) => Ok(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    /// Number of features (target included) picked by correlation with the target.
    pub num_features: usize,
    /// Explicit feature names; overrides `num_features`.
    pub features: Option<Vec<String>>,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            num_features: 5,
            features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiseConfig {
    /// Defaults to l1 for Laplace answers and l2 for Gaussian answers.
    pub mode: Option<DenoiseMode>,
    pub options: DenoiseOptions,
    /// `p_star` is left out of the artifact above this support size.
    pub max_p_star_in_artifact: usize,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        DenoiseConfig {
            mode: None,
            options: DenoiseOptions::default(),
            max_p_star_in_artifact: 10_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResampleConfig {
    /// Defaults to the synthetic sample size.
    pub n_out: Option<usize>,
    pub method: ResampleMethod,
    pub seed: u64,
    pub emit_weights: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

/// Privacy cost of the generator that produced the synthetic data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpstreamCharge {
    pub epsilon: f64,
    pub delta: f64,
}

fn default_split() -> Option<SplitConfig> {
    Some(SplitConfig::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub real_csv: Option<PathBuf>,
    pub synthetic_csv: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub schema: Option<PathBuf>,
    #[serde(default)]
    pub target: Option<String>,
    /// Real rows are split into a measured part and a holdout used only for F1.
    /// `null` measures on all real rows and scores F1 on them too.
    #[serde(default = "default_split")]
    pub split: Option<SplitConfig>,
    #[serde(default)]
    pub mechanism: MechanismConfig,
    #[serde(default)]
    pub workload: WorkloadConfig,
    #[serde(default)]
    pub denoise: DenoiseConfig,
    #[serde(default)]
    pub projector: OptimizerConfig,
    #[serde(default)]
    pub resample: ResampleConfig,
    #[serde(default)]
    pub metrics: MetricOptions,
    #[serde(default)]
    pub upstream: Option<UpstreamCharge>,
}

impl PipelineConfig {
    /// Minimal config with every stage at its default.
    pub fn new(synthetic_csv: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            real_csv: None,
            synthetic_csv: synthetic_csv.into(),
            output_dir: output_dir.into(),
            schema: None,
            target: None,
            split: default_split(),
            mechanism: MechanismConfig::default(),
            workload: WorkloadConfig::default(),
            denoise: DenoiseConfig::default(),
            projector: OptimizerConfig::default(),
            resample: ResampleConfig::default(),
            metrics: MetricOptions::default(),
            upstream: None,
        }
    }

    /// Parses a JSON config; relative paths resolve against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|source| {
            PipelineError::config(Error::Io {
                path: path.to_path_buf(),
                source,
            })
        })?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::config(e.into()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.real_csv.iter_mut().for_each(fix);
        cfg.schema.iter_mut().for_each(fix);
        fix(&mut cfg.synthetic_csv);
        fix(&mut cfg.output_dir);
        Ok(cfg)
    }

    fn require_real(&self) -> Result<&Path> {
        self.real_csv
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("config has no `real_csv`".into()))
    }

    /// Checks the fields every stage depends on.
    pub fn validate(&self, needs_real: bool) -> Result<()> {
        let exists = |p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::Io {
                    path: p.to_path_buf(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
                })
            }
        };
        exists(&self.synthetic_csv)?;
        if needs_real {
            exists(self.require_real()?)?;
        }
        if let Some(s) = &self.schema {
            exists(s)?;
        }
        if !(self.mechanism.eps_post > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "eps_post {} must be positive",
                self.mechanism.eps_post
            )));
        }
        if self.workload.num_features == 0 && self.workload.features.is_none() {
            return Err(Error::InvalidArgument(
                "workload needs at least one feature".into(),
            ));
        }
        if let Some(split) = &self.split {
            if !(split.train_fraction > 0.0 && split.train_fraction < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "train_fraction {} must lie in (0,1)",
                    split.train_fraction
                )));
            }
        }
        if self.metrics.bins == 0 {
            return Err(Error::InvalidArgument(
                "metrics.bins must be at least 1".into(),
            ));
        }
        if self.resample.n_out == Some(0) {
            return Err(Error::InvalidArgument(
                "resample.n_out must be at least 1".into(),
            ));
        }
        let p = &self.projector;
        if !(p.gamma >= 0.0) || !(p.step_size > 0.0) || p.epochs == 0 || p.batch_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "invalid projector settings {p:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Measure,
    Denoise,
    Fit,
    Resample,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Measure => "measure",
            Stage::Denoise => "denoise",
            Stage::Fit => "fit",
            Stage::Resample => "resample",
            Stage::Evaluate => "evaluate",
        };
        f.write_str(s)
    }
}

/// An error tagged with the stage it came from.
#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl PipelineError {
    pub fn config(source: Error) -> Self {
        PipelineError {
            stage: Stage::Config,
            source,
        }
    }

    /// 1 for configuration problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self.stage {
            Stage::Config => 1,
            _ => 2,
        }
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|source| PipelineError { stage, source })
    }
}

/// Noisy answers and everything needed to post-process against them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    /// Column names of the table the workload indexes into.
    pub header: Vec<String>,
    pub workload: QueryWorkload,
    pub answers: AnswerVector,
    pub mechanism: MechanismSpec,
    pub n_real: usize,
    pub ledger: PrivacyAccount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerTotal {
    pub epsilon: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerArtifact {
    #[serde(flatten)]
    pub account: PrivacyAccount,
    pub total: LedgerTotal,
}

impl From<&PrivacyAccount> for LedgerArtifact {
    fn from(account: &PrivacyAccount) -> Self {
        let (epsilon, delta) = account.totals();
        LedgerArtifact {
            account: account.clone(),
            total: LedgerTotal { epsilon, delta },
        }
    }
}

/// Picks the workload on the synthetic data (no privacy cost).
pub fn select_workload(syn: &Dataset, cfg: &WorkloadConfig) -> Result<QueryWorkload> {
    let features = match &cfg.features {
        Some(names) => names
            .iter()
            .map(|n| {
                syn.column_index(n).ok_or_else(|| {
                    Error::SchemaMismatch(format!("workload feature `{n}` not in data"))
                })
            })
            .collect::<Result<Vec<_>>>()?,
        None => {
            let target = syn.target_index().ok_or_else(|| {
                Error::InvalidArgument(
                    "feature selection by correlation needs a target column".into(),
                )
            })?;
            select_features(syn, target, cfg.num_features)?
        }
    };
    build_moment_workload(&features)
}

/// The single access to the real data: exact answers privatized once.
pub fn measure(
    real: &Dataset,
    workload: &QueryWorkload,
    mech: &MechanismConfig,
    upstream: Option<UpstreamCharge>,
) -> Result<Measurement> {
    let n = real.n();
    let delta_post = mech.resolve_delta(n)?;
    let sens = sensitivity(workload, n, MechanismSpec::norm(mech.kind))?;
    let spec = MechanismSpec::calibrate(mech.kind, mech.eps_post, delta_post, sens, mech.seed)?;
    let exact = evaluate_queries(workload, real)?;
    let answers = spec.privatize(&exact)?;
    let mut ledger = PrivacyAccount::new();
    if let Some(u) = upstream {
        ledger.charge("synthetic-data generator", u.epsilon, u.delta)?;
    }
    ledger.charge("utility-measure release", spec.eps_post, spec.delta_post)?;
    Ok(Measurement {
        header: real.names().iter().map(|s| s.to_string()).collect(),
        workload: workload.clone(),
        answers,
        mechanism: spec,
        n_real: n,
        ledger,
    })
}

fn check_header(m: &Measurement, syn: &Dataset) -> Result<()> {
    let names: Vec<&str> = syn.names();
    if names != m.header.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::SchemaMismatch(format!(
            "synthetic header {names:?} differs from measured header {:?}",
            m.header
        )));
    }
    Ok(())
}

pub fn denoise_stage(syn: &Dataset, m: &Measurement, cfg: &DenoiseConfig) -> Result<DenoiseResult> {
    check_header(m, syn)?;
    let supp = support(syn)?;
    let qm = query_matrix(&m.workload, &supp)?;
    let mode = cfg
        .mode
        .unwrap_or(DenoiseMode::for_mechanism(m.mechanism.kind));
    denoise(&qm, &m.answers, mode, &cfg.options)
}

/// Batch size clamped to the number of synthetic records.
pub fn effective_optimizer(cfg: &OptimizerConfig, n: usize) -> OptimizerConfig {
    let mut c = cfg.clone();
    if c.batch_size > n {
        log::warn!(
            "batch size {} exceeds {n} synthetic records; clamping",
            c.batch_size
        );
        c.batch_size = n;
    }
    c
}

pub fn fit_stage(
    syn: &Dataset,
    workload: &QueryWorkload,
    a_star: &AnswerVector,
    cfg: &OptimizerConfig,
) -> Result<(CenteredQueries, DualSolution)> {
    let cq = CenteredQueries::from_records(workload, syn, a_star)?;
    let sol = fit_dual(&cq, &effective_optimizer(cfg, syn.n()))?;
    Ok((cq, sol))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostProcessed {
    pub denoised: DenoiseResult,
    pub dual: DualSolution,
    pub centered: CenteredQueries,
    pub weights: ResampleWeights,
    pub indices: Vec<usize>,
    pub post: Dataset,
}

/// Denoise, fit the dual, and resample, using only `syn` and the measurement.
pub fn post_process(
    syn: &Dataset,
    m: &Measurement,
    cfg: &PipelineConfig,
) -> Result<PostProcessed, PipelineError> {
    let denoised = denoise_stage(syn, m, &cfg.denoise).at(Stage::Denoise)?;
    let (centered, dual) =
        fit_stage(syn, &m.workload, &denoised.a_star, &cfg.projector).at(Stage::Fit)?;
    let weights = compute_weights(&centered, &dual.lambda).at(Stage::Resample)?;
    let n_out = cfg.resample.n_out.unwrap_or(syn.n());
    let indices = resample_indices(
        &weights.weights,
        n_out,
        cfg.resample.seed,
        cfg.resample.method,
    )
    .at(Stage::Resample)?;
    let post = syn.select_rows(&indices).at(Stage::Resample)?;
    Ok(PostProcessed {
        denoised,
        dual,
        centered,
        weights,
        indices,
        post,
    })
}

// ---------------------------------------------------------------------------
// File-level commands

pub const MEASURE_FILE: &str = "measure.json";
pub const LEDGER_FILE: &str = "ledger.json";
pub const DENOISE_FILE: &str = "denoise.json";
pub const DUAL_FILE: &str = "dual.json";
pub const RESAMPLE_FILE: &str = "resample.json";
pub const WEIGHTS_FILE: &str = "weights.json";
pub const POST_FILE: &str = "post.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const RUN_LOG_FILE: &str = "run.log";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseArtifact {
    pub mode: DenoiseMode,
    pub a_star: AnswerVector,
    pub objective_value: f64,
    pub initial_objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warning: Option<String>,
    pub support_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_star: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleArtifact {
    pub n_out: usize,
    pub method: ResampleMethod,
    pub seed: u64,
    pub weights_digest: String,
    /// Largest |q_k(P_post) − a*_k| under the exact tilted weights.
    pub max_constraint_violation: f64,
    /// KL(P_post ‖ P_syn) under the exact tilted weights.
    pub kl_to_synthetic: f64,
}

/// Loaded synthetic data plus the preprocessor fitted on it.
pub struct SyntheticInputs {
    pub raw: RawTable,
    pub dataset: Dataset,
    pub preprocessor: Preprocessor,
    schema: Option<Schema>,
    target: Option<String>,
}

impl SyntheticInputs {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let schema = cfg
            .schema
            .as_deref()
            .map(Schema::from_json_file)
            .transpose()?;
        let mut raw = load_csv(&cfg.synthetic_csv, schema.as_ref())?;
        let target = cfg
            .target
            .clone()
            .or_else(|| raw.target_name().map(str::to_string));
        if let Some(t) = &target {
            raw.set_target(t)?;
        }
        let preprocessor = Preprocessor::fit(&raw)?;
        let dataset = preprocessor.apply(&raw)?;
        Ok(SyntheticInputs {
            raw,
            dataset,
            preprocessor,
            schema,
            target,
        })
    }

    /// Loads another table with the same schema and normalization.
    pub fn load_compatible(&self, path: &Path) -> Result<Dataset> {
        let mut raw = load_csv(path, self.schema.as_ref())?;
        if let Some(t) = &self.target {
            raw.set_target(t)?;
        }
        self.preprocessor.apply(&raw)
    }
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value)?;
    fs::write(&path, text + "\n").map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn read_json<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<T> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path).map_err(|source| Error::Io { path, source })?;
    Ok(serde_json::from_str(&text)?)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn log_event(dir: &Path, msg: &str) {
    let ts = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    if let Ok(mut f) = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join(RUN_LOG_FILE))
    {
        let _ = writeln!(f, "{ts:.3} {msg}");
    }
}

fn load_real(cfg: &PipelineConfig, syn: &SyntheticInputs) -> Result<(Dataset, Option<Dataset>)> {
    let real = syn.load_compatible(cfg.require_real()?)?;
    Ok(match &cfg.split {
        Some(s) => {
            let (train, test) = real.split_real(s.train_fraction, s.seed)?;
            (train, Some(test))
        }
        None => (real, None),
    })
}

/// Writes `measure.json` and `ledger.json`.
pub fn cmd_measure(cfg: &PipelineConfig) -> Result<Measurement, PipelineError> {
    cfg.validate(true).at(Stage::Config)?;
    ensure_dir(&cfg.output_dir).at(Stage::Config)?;
    let syn = SyntheticInputs::load(cfg).at(Stage::Measure)?;
    let workload = select_workload(&syn.dataset, &cfg.workload).at(Stage::Measure)?;
    let m = {
        let (real, _) = load_real(cfg, &syn).at(Stage::Measure)?;
        measure(&real, &workload, &cfg.mechanism, cfg.upstream).at(Stage::Measure)?
    };
    write_json(&cfg.output_dir, MEASURE_FILE, &m).at(Stage::Measure)?;
    write_json(
        &cfg.output_dir,
        LEDGER_FILE,
        &LedgerArtifact::from(&m.ledger),
    )
    .at(Stage::Measure)?;
    log_event(&cfg.output_dir, "measure done");
    Ok(m)
}

fn denoise_artifact(
    syn: &Dataset,
    m: &Measurement,
    cfg: &PipelineConfig,
) -> Result<DenoiseArtifact> {
    let res = denoise_stage(syn, m, &cfg.denoise)?;
    let support_size = res.p_star.len();
    Ok(DenoiseArtifact {
        mode: cfg
            .denoise
            .mode
            .unwrap_or(DenoiseMode::for_mechanism(m.mechanism.kind)),
        a_star: res.a_star,
        objective_value: res.objective_value,
        initial_objective: res.initial_objective,
        iterations: res.iterations,
        converged: res.converged,
        warning: res.warning,
        support_size,
        p_star: (support_size <= cfg.denoise.max_p_star_in_artifact).then_some(res.p_star),
    })
}

/// Reads `measure.json`, writes `denoise.json`.
pub fn cmd_denoise(cfg: &PipelineConfig) -> Result<DenoiseArtifact, PipelineError> {
    cfg.validate(false).at(Stage::Config)?;
    let syn = SyntheticInputs::load(cfg).at(Stage::Denoise)?;
    let m: Measurement = read_json(&cfg.output_dir, MEASURE_FILE).at(Stage::Denoise)?;
    let art = denoise_artifact(&syn.dataset, &m, cfg).at(Stage::Denoise)?;
    write_json(&cfg.output_dir, DENOISE_FILE, &art).at(Stage::Denoise)?;
    log_event(&cfg.output_dir, "denoise done");
    Ok(art)
}

/// Reads `measure.json` and `denoise.json`, writes `dual.json`.
pub fn cmd_fit(cfg: &PipelineConfig) -> Result<DualSolution, PipelineError> {
    cfg.validate(false).at(Stage::Config)?;
    let syn = SyntheticInputs::load(cfg).at(Stage::Fit)?;
    let m: Measurement = read_json(&cfg.output_dir, MEASURE_FILE).at(Stage::Fit)?;
    let d: DenoiseArtifact = read_json(&cfg.output_dir, DENOISE_FILE).at(Stage::Fit)?;
    check_header(&m, &syn.dataset).at(Stage::Fit)?;
    let (_, sol) =
        fit_stage(&syn.dataset, &m.workload, &d.a_star, &cfg.projector).at(Stage::Fit)?;
    write_json(&cfg.output_dir, DUAL_FILE, &sol).at(Stage::Fit)?;
    log_event(&cfg.output_dir, "fit done");
    Ok(sol)
}

/// Exact constraint violation and KL of the tilted record weights.
pub fn tilt_diagnostics(cq: &CenteredQueries, weights: &ResampleWeights) -> (f64, f64) {
    let k = cq.k();
    let mut gap = vec![0.0; k];
    for (i, &w) in weights.weights.iter().enumerate() {
        for (g, q) in gap.iter_mut().zip(cq.row(i)) {
            *g += w * q;
        }
    }
    let viol = gap.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let kl = weights
        .weights
        .iter()
        .zip(cq.weights())
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, r)| w * (w / r).ln())
        .sum();
    (viol, kl)
}

/// Reads the upstream artifacts, writes `post.csv`, `resample.json` and
/// (optionally) `weights.json`.
pub fn cmd_resample(cfg: &PipelineConfig) -> Result<ResampleArtifact, PipelineError> {
    cfg.validate(false).at(Stage::Config)?;
    let syn = SyntheticInputs::load(cfg).at(Stage::Resample)?;
    let m: Measurement = read_json(&cfg.output_dir, MEASURE_FILE).at(Stage::Resample)?;
    let d: DenoiseArtifact = read_json(&cfg.output_dir, DENOISE_FILE).at(Stage::Resample)?;
    let sol: DualSolution = read_json(&cfg.output_dir, DUAL_FILE).at(Stage::Resample)?;
    check_header(&m, &syn.dataset).at(Stage::Resample)?;
    let cq =
        CenteredQueries::from_records(&m.workload, &syn.dataset, &d.a_star).at(Stage::Resample)?;
    let weights = compute_weights(&cq, &sol.lambda).at(Stage::Resample)?;
    let n_out = cfg.resample.n_out.unwrap_or(syn.dataset.n());
    let idx = resample_indices(
        &weights.weights,
        n_out,
        cfg.resample.seed,
        cfg.resample.method,
    )
    .at(Stage::Resample)?;
    write_resample_outputs(cfg, &syn, &cq, &weights, &idx).at(Stage::Resample)
}

fn write_resample_outputs(
    cfg: &PipelineConfig,
    syn: &SyntheticInputs,
    cq: &CenteredQueries,
    weights: &ResampleWeights,
    idx: &[usize],
) -> Result<ResampleArtifact> {
    syn.raw
        .select_rows(idx)?
        .write_csv_file(&cfg.output_dir.join(POST_FILE))?;
    if cfg.resample.emit_weights {
        write_json(&cfg.output_dir, WEIGHTS_FILE, &weights.weights)?;
    }
    let (max_constraint_violation, kl_to_synthetic) = tilt_diagnostics(cq, weights);
    let art = ResampleArtifact {
        n_out: idx.len(),
        method: cfg.resample.method,
        seed: cfg.resample.seed,
        weights_digest: weights.digest(),
        max_constraint_violation,
        kl_to_synthetic,
    };
    write_json(&cfg.output_dir, RESAMPLE_FILE, &art)?;
    log_event(&cfg.output_dir, "resample done");
    Ok(art)
}

/// Evaluates `syn` and `post` (default: `output_dir/post.csv`) against the real data;
/// writes `metrics.json` and the correlation-misalignment CSVs.
pub fn cmd_evaluate(
    cfg: &PipelineConfig,
    post_csv: Option<&Path>,
) -> Result<MetricReport, PipelineError> {
    cfg.validate(true).at(Stage::Config)?;
    ensure_dir(&cfg.output_dir).at(Stage::Config)?;
    let syn = SyntheticInputs::load(cfg).at(Stage::Evaluate)?;
    let post_path = post_csv
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join(POST_FILE));
    let post = syn.load_compatible(&post_path).at(Stage::Evaluate)?;
    let (real, holdout) = load_real(cfg, &syn).at(Stage::Evaluate)?;
    evaluate_and_write(cfg, &real, holdout.as_ref(), &syn.dataset, &post).at(Stage::Evaluate)
}

fn evaluate_and_write(
    cfg: &PipelineConfig,
    real: &Dataset,
    holdout: Option<&Dataset>,
    syn: &Dataset,
    post: &Dataset,
) -> Result<MetricReport> {
    let report = evaluate(real, holdout, syn, post, &cfg.metrics)?;
    write_json(&cfg.output_dir, METRICS_FILE, &report)?;
    let names = real.names();
    let cr = correlation_matrix(real)?;
    for (label, data) in [("syn", syn), ("post", post)] {
        let csv = cr.misalignment_csv(&correlation_matrix(data)?, &names);
        let path = cfg
            .output_dir
            .join(format!("corr_misalignment_{label}.csv"));
        fs::write(&path, csv).map_err(|source| Error::Io { path, source })?;
    }
    log_event(&cfg.output_dir, "evaluate done");
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub measurement: Measurement,
    pub denoise: DenoiseArtifact,
    pub dual: DualSolution,
    pub resample: ResampleArtifact,
    pub metrics: MetricReport,
    pub ledger: LedgerArtifact,
}

/// All stages in order. The real data are read for the measurement and, outside
/// the privacy boundary, again for evaluation.
pub fn cmd_run(cfg: &PipelineConfig) -> Result<RunSummary, PipelineError> {
    cfg.validate(true).at(Stage::Config)?;
    ensure_dir(&cfg.output_dir).at(Stage::Config)?;
    log_event(&cfg.output_dir, "run started");
    let m = cmd_measure(cfg)?;
    let syn = SyntheticInputs::load(cfg).at(Stage::Denoise)?;

    let denoise = denoise_artifact(&syn.dataset, &m, cfg).at(Stage::Denoise)?;
    write_json(&cfg.output_dir, DENOISE_FILE, &denoise).at(Stage::Denoise)?;
    log_event(&cfg.output_dir, "denoise done");

    let (cq, dual) =
        fit_stage(&syn.dataset, &m.workload, &denoise.a_star, &cfg.projector).at(Stage::Fit)?;
    write_json(&cfg.output_dir, DUAL_FILE, &dual).at(Stage::Fit)?;
    log_event(&cfg.output_dir, "fit done");

    let weights = compute_weights(&cq, &dual.lambda).at(Stage::Resample)?;
    let n_out = cfg.resample.n_out.unwrap_or(syn.dataset.n());
    let idx = resample_indices(
        &weights.weights,
        n_out,
        cfg.resample.seed,
        cfg.resample.method,
    )
    .at(Stage::Resample)?;
    let resample = write_resample_outputs(cfg, &syn, &cq, &weights, &idx).at(Stage::Resample)?;
    let post = syn.dataset.select_rows(&idx).at(Stage::Resample)?;

    let (real, holdout) = load_real(cfg, &syn).at(Stage::Evaluate)?;
    let metrics = evaluate_and_write(cfg, &real, holdout.as_ref(), &syn.dataset, &post)
        .at(Stage::Evaluate)?;

    let ledger = LedgerArtifact::from(&m.ledger);
    write_json(&cfg.output_dir, LEDGER_FILE, &ledger).at(Stage::Evaluate)?;
    log_event(&cfg.output_dir, "run finished");
    Ok(RunSummary {
        measurement: m,
        denoise,
        dual,
        resample,
        metrics,
        ledger,
    })
}
