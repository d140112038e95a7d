//! Experiment configuration, orchestration and metrics output.
//!
//! An experiment is one JSON file. Missing sections take defaults; a few
//! defaults depend on the dataset family, the noise setting and the method
//! and are filled in by [`ExperimentConfig::resolve`]. The resolved config is
//! echoed into `summary.json`, so a run can be repeated from its own output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentOp, AugmentPolicy};
use crate::data::{
    generate_synthetic_split, inject_noise, load_csv, load_idx, partition_iid, partition_noniid,
    ClientShard, LabeledDataset, NoiseKind, NoiseSpec, SYNTHETIC_CLUSTER_STD,
};
use crate::error::{invalid_input, Error, Result};
use crate::federation::{
    final_accuracy, run_federation, CoteachingConfig, FedConfig, Method, RoundMetrics,
    TrainerParams,
};
use crate::losses::{DistillKind, LsrHyperParams, SymCeParams};
use crate::model::{forward_batch, ModelParams};
use crate::numerics::argmax;

/// Fraction of test samples whose arg-max logit equals the true label.
/// Ties go to the lowest class index.
pub fn evaluate(params: &ModelParams, test: &LabeledDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(invalid_input("empty test set"));
    }
    const CHUNK: usize = 512;
    let d = test.dim();
    let mut correct = 0usize;
    for (c, labels) in test.true_labels().chunks(CHUNK).enumerate() {
        let start = c * CHUNK * d;
        let xs = &test.features()[start..start + labels.len() * d];
        let logits = forward_batch(params, xs)?;
        correct += logits
            .iter_rows()
            .zip(labels)
            .filter(|(row, &y)| argmax(row) == y)
            .count();
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Benchmark family whose hyperparameter defaults apply. Synthetic data uses
/// the Fashion-MNIST row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFamily {
    Mnist,
    FashionMnist,
    Cifar10,
}

impl DatasetFamily {
    /// Default warm-up length `t_w` in rounds.
    pub fn warmup_rounds(self) -> usize {
        match self {
            DatasetFamily::Mnist => 10,
            DatasetFamily::FashionMnist => 20,
            DatasetFamily::Cifar10 => 40,
        }
    }

    /// Default distillation weight `γ` for a noise setting. Ratios between
    /// grid points take the nearest grid value; clean data uses the lowest
    /// symmetric entry.
    pub fn default_gamma(self, kind: NoiseKind, ratio: f64) -> f64 {
        const SYM: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];
        const PAIR: [f64; 3] = [0.2, 0.3, 0.4];
        let (sym, pair): ([f64; 5], [f64; 3]) = match self {
            DatasetFamily::Mnist => ([0.15, 0.2, 0.25, 0.3, 0.8], [0.4, 0.6, 1.0]),
            DatasetFamily::FashionMnist => ([0.15, 0.2, 0.25, 0.3, 0.6], [0.4, 0.6, 1.0]),
            DatasetFamily::Cifar10 => ([0.1, 0.2, 0.25, 0.3, 0.6], [0.3, 0.6, 0.8]),
        };
        let nearest = |grid: &[f64]| {
            (0..grid.len())
                .min_by(|&a, &b| (grid[a] - ratio).abs().total_cmp(&(grid[b] - ratio).abs()))
                .unwrap_or(0)
        };
        match kind {
            NoiseKind::Symmetric => sym[nearest(&SYM)],
            NoiseKind::Pairwise => pair[nearest(&PAIR)],
            NoiseKind::None => sym[0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Gaussian clusters around random unit centers.
    Synthetic {
        #[serde(default = "default_classes")]
        num_classes: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_n_train")]
        n_train: usize,
        #[serde(default = "default_n_test")]
        n_test: usize,
    },
    /// IDX image files; pixels are scaled to `[0, 1]`.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default = "default_classes")]
        num_classes: usize,
        #[serde(default = "default_family")]
        family: DatasetFamily,
    },
    /// CSV rows `label,f1,f2,..`.
    Csv {
        train: PathBuf,
        test: PathBuf,
        num_classes: usize,
        #[serde(default = "default_family")]
        family: DatasetFamily,
    },
}

fn default_classes() -> usize {
    10
}
fn default_dim() -> usize {
    32
}
fn default_n_train() -> usize {
    10_000
}
fn default_n_test() -> usize {
    2_000
}
fn default_family() -> DatasetFamily {
    DatasetFamily::FashionMnist
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic {
            num_classes: default_classes(),
            dim: default_dim(),
            n_train: default_n_train(),
            n_test: default_n_test(),
        }
    }
}

impl DatasetSpec {
    pub fn family(&self) -> DatasetFamily {
        match self {
            DatasetSpec::Synthetic { .. } => DatasetFamily::FashionMnist,
            DatasetSpec::Idx { family, .. } | DatasetSpec::Csv { family, .. } => *family,
        }
    }

    fn is_image(&self) -> bool {
        matches!(self, DatasetSpec::Idx { .. })
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DatasetSpec::Synthetic { .. } => {}
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => {
                fix(train_images);
                fix(train_labels);
                fix(test_images);
                fix(test_labels);
            }
            DatasetSpec::Csv { train, test, .. } => {
                fix(train);
                fix(test);
            }
        }
    }

    /// Loads (or generates) the train and test sets. Synthetic data draws
    /// its clusters from `seed`.
    pub fn load(&self, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
        match self {
            DatasetSpec::Synthetic {
                num_classes,
                dim,
                n_train,
                n_test,
            } => generate_synthetic_split(*n_train, *n_test, *num_classes, *dim, seed),
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                num_classes,
                ..
            } => Ok((
                load_idx(train_images, train_labels, *num_classes)?,
                load_idx(test_images, test_labels, *num_classes)?,
            )),
            DatasetSpec::Csv {
                train,
                test,
                num_classes,
                ..
            } => Ok((load_csv(train, *num_classes)?, load_csv(test, *num_classes)?)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub kind: NoiseKind,
    pub ratio: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Symmetric,
            ratio: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionSpec {
    Iid,
    Noniid { classes_per_client: usize },
}

impl Default for PartitionSpec {
    fn default() -> Self {
        PartitionSpec::Iid
    }
}

impl PartitionSpec {
    pub fn apply(&self, ds: &LabeledDataset, num_clients: usize, seed: u64) -> Result<Vec<ClientShard>> {
        match *self {
            PartitionSpec::Iid => partition_iid(ds, num_clients, seed),
            PartitionSpec::Noniid { classes_per_client } => {
                partition_noniid(ds, num_clients, classes_per_client, seed)
            }
        }
    }
}

/// Federation settings; unset entries take family-dependent defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationSection {
    pub num_clients: Option<usize>,
    pub clients_per_round: Option<usize>,
    pub rounds: Option<usize>,
    pub local_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub method: Option<Method>,
    pub warmup_rounds: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub workers: Option<usize>,
    pub fixed_lambda: Option<f64>,
    pub augment: Option<AugmentPolicy>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LsrSection {
    pub temperature: Option<f64>,
    pub distill_temperature: Option<f64>,
    pub gamma: Option<f64>,
    pub entropy_weight: Option<f64>,
    pub distill: Option<DistillKind>,
    pub clamp_lo: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoteachingSection {
    /// Defaults to the injected noise ratio.
    pub tau: Option<f64>,
    pub t_k: Option<usize>,
    pub epoch_indexed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub noise: NoiseSection,
    pub partition: PartitionSpec,
    pub federation: FederationSection,
    pub lsr: LsrSection,
    pub sym_ce: SymCeParams,
    pub coteaching: CoteachingSection,
    pub seed: u64,
    /// Output directory; `out` when unset.
    pub output: Option<PathBuf>,
}

/// Default augmentation: a ±30° rotation for MNIST-like images, a random
/// horizontal flip plus light jitter for CIFAR-like images, and jitter at
/// the within-class spread for flat synthetic features.
pub fn default_augment(family: DatasetFamily, image: bool) -> AugmentPolicy {
    match (image, family) {
        (false, _) => AugmentPolicy::new(vec![AugmentOp::FeatureJitter {
            sigma: SYNTHETIC_CLUSTER_STD,
        }]),
        (true, DatasetFamily::Cifar10) => AugmentPolicy::new(vec![
            AugmentOp::HorizontalFlip { prob: 0.5 },
            AugmentOp::FeatureJitter { sigma: IMAGE_JITTER },
        ]),
        (true, _) => AugmentPolicy::new(vec![AugmentOp::Rotation { max_degrees: 30.0 }]),
    }
}

/// Jitter added after flipping CIFAR-like images.
pub const IMAGE_JITTER: f64 = 0.05;

impl ExperimentConfig {
    /// Parses JSON; unknown keys are rejected with their line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset.resolve_paths(base);
        Ok(cfg)
    }

    /// Fills every unset entry with its default.
    pub fn resolve(&self) -> Self {
        let mut out = self.clone();
        let family = self.dataset.family();
        let method = self.federation.method.unwrap_or(Method::Lsr);
        let plus = method == Method::LsrPlus;
        let base = FedConfig::default();
        let f = &self.federation;
        let rounds = f.rounds.unwrap_or(base.rounds);
        let warmup = f.warmup_rounds.unwrap_or_else(|| {
            if plus {
                (rounds as f64 * 0.2).round() as usize
            } else {
                family.warmup_rounds().min(rounds)
            }
        });
        out.federation = FederationSection {
            num_clients: Some(f.num_clients.unwrap_or(base.num_clients)),
            clients_per_round: Some(f.clients_per_round.unwrap_or(base.clients_per_round)),
            rounds: Some(rounds),
            local_epochs: Some(f.local_epochs.unwrap_or(base.local_epochs)),
            batch_size: Some(f.batch_size.unwrap_or(base.batch_size)),
            lr: Some(f.lr.unwrap_or(base.lr)),
            method: Some(method),
            warmup_rounds: Some(warmup),
            hidden: Some(f.hidden.clone().unwrap_or(base.hidden)),
            workers: Some(f.workers.unwrap_or(base.workers)),
            fixed_lambda: f.fixed_lambda,
            augment: Some(
                f.augment
                    .clone()
                    .unwrap_or_else(|| default_augment(family, self.dataset.is_image())),
            ),
        };
        let l = &self.lsr;
        let hp = LsrHyperParams::default();
        let noise = self.noise;
        out.lsr = LsrSection {
            temperature: Some(l.temperature.unwrap_or(hp.temperature)),
            distill_temperature: Some(l.distill_temperature.unwrap_or(hp.distill_temperature)),
            gamma: Some(l.gamma.unwrap_or_else(|| {
                if plus {
                    0.4
                } else {
                    family.default_gamma(noise.kind, noise.ratio)
                }
            })),
            entropy_weight: Some(l.entropy_weight.unwrap_or(if plus { 0.6 } else { 0.0 })),
            distill: Some(l.distill.unwrap_or(match self.partition {
                PartitionSpec::Iid => DistillKind::Js,
                PartitionSpec::Noniid { .. } => DistillKind::L1,
            })),
            clamp_lo: Some(l.clamp_lo.unwrap_or(hp.clamp_lo)),
        };
        let c = &self.coteaching;
        let ct = CoteachingConfig::default();
        let tau = match noise.kind {
            NoiseKind::None => 0.0,
            _ => noise.ratio,
        };
        out.coteaching = CoteachingSection {
            tau: Some(c.tau.unwrap_or(tau)),
            t_k: Some(c.t_k.unwrap_or(ct.t_k)),
            epoch_indexed: Some(c.epoch_indexed.unwrap_or(ct.epoch_indexed)),
        };
        out.output = Some(self.output.clone().unwrap_or_else(|| PathBuf::from("out")));
        out
    }

    /// Federation settings after [`Self::resolve`].
    pub fn fed_config(&self) -> FedConfig {
        let r = self.resolve();
        let f = r.federation;
        FedConfig {
            num_clients: f.num_clients.unwrap_or_default(),
            clients_per_round: f.clients_per_round.unwrap_or_default(),
            rounds: f.rounds.unwrap_or_default(),
            local_epochs: f.local_epochs.unwrap_or_default(),
            batch_size: f.batch_size.unwrap_or_default(),
            lr: f.lr.unwrap_or_default(),
            method: f.method.unwrap_or(Method::Lsr),
            warmup_rounds: f.warmup_rounds.unwrap_or_default(),
            hidden: f.hidden.unwrap_or_default(),
            workers: f.workers.unwrap_or_default(),
            fixed_lambda: f.fixed_lambda,
            augment: f.augment.unwrap_or_default(),
        }
    }

    /// Loss settings after [`Self::resolve`].
    pub fn trainer_params(&self) -> TrainerParams {
        let r = self.resolve();
        let (l, c) = (r.lsr, r.coteaching);
        let d = LsrHyperParams::default();
        TrainerParams {
            lsr: LsrHyperParams {
                temperature: l.temperature.unwrap_or(d.temperature),
                distill_temperature: l.distill_temperature.unwrap_or(d.distill_temperature),
                gamma: l.gamma.unwrap_or(d.gamma),
                entropy_weight: l.entropy_weight.unwrap_or(d.entropy_weight),
                distill: l.distill.unwrap_or(d.distill),
                clamp_lo: l.clamp_lo.unwrap_or(d.clamp_lo),
            },
            sym_ce: r.sym_ce,
            coteaching: CoteachingConfig {
                tau: c.tau.unwrap_or_default(),
                t_k: c.t_k.unwrap_or_default(),
                epoch_indexed: c.epoch_indexed.unwrap_or_default(),
            },
        }
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec::new(self.noise.kind, self.noise.ratio, self.seed)
    }

    /// Checks every nested invariant without loading data.
    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.noise_spec().validate().map_err(wrap)?;
        self.fed_config().validate().map_err(wrap)?;
        let hp = self.trainer_params();
        hp.lsr.validate().map_err(wrap)?;
        hp.sym_ce.validate().map_err(wrap)?;
        hp.coteaching.validate().map_err(wrap)?;
        if let PartitionSpec::Noniid { classes_per_client } = self.partition {
            if classes_per_client == 0 {
                return Err(Error::Config("classes_per_client must be >= 1".into()));
            }
        }
        let method = self.fed_config().method;
        if method.uses_augmentation() && !self.dataset.is_image() {
            let cfg = self.fed_config();
            cfg.augment.check_layout(None).map_err(wrap)?;
        }
        Ok(())
    }
}

/// Overrides taken from the command line; set fields win over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub method: Option<Method>,
    pub noise_kind: Option<NoiseKind>,
    pub noise_ratio: Option<f64>,
    pub output: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.method {
            cfg.federation.method = Some(m);
        }
        if let Some(k) = self.noise_kind {
            cfg.noise.kind = k;
        }
        if let Some(r) = self.noise_ratio {
            cfg.noise.ratio = r;
        }
        if let Some(o) = &self.output {
            cfg.output = Some(o.clone());
        }
        if let Some(w) = self.workers {
            cfg.federation.workers = Some(w);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub final_acc_last10_mean: Option<f64>,
    pub best_acc: Option<f64>,
    pub config_echo: ExperimentConfig,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub metrics: Vec<RoundMetrics>,
    pub summary: Summary,
}

/// Runs the data → noise → partition → federation pipeline in memory.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let resolved = cfg.resolve();
    let fed = resolved.fed_config();
    let hp = resolved.trainer_params();
    let (train, test) = resolved.dataset.load(resolved.seed)?;
    let noisy = inject_noise(&train, &resolved.noise_spec())?;
    let shards = resolved
        .partition
        .apply(&noisy, fed.num_clients, resolved.seed)?;
    log::info!(
        "{} on {} samples, observed noise {:.3}, {} rounds",
        fed.method,
        noisy.len(),
        noisy.noise_rate(),
        fed.rounds
    );
    let run = run_federation(&fed, &hp, &noisy, &shards, &test, resolved.seed)?;
    let best = run
        .metrics
        .iter()
        .map(|m| m.test_accuracy)
        .max_by(f64::total_cmp);
    let summary = Summary {
        final_acc_last10_mean: final_accuracy(&run.metrics),
        best_acc: best,
        seed: resolved.seed,
        config_echo: resolved,
    };
    Ok(ExperimentOutcome {
        metrics: run.metrics,
        summary,
    })
}

/// Renders the metrics CSV.
pub fn metrics_csv(metrics: &[RoundMetrics]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["round", "test_accuracy", "mean_train_loss", "gamma_t", "selected_clients"])?;
    for m in metrics {
        let clients: Vec<String> = m.selected_clients.iter().map(|c| c.to_string()).collect();
        w.write_record([
            m.round.to_string(),
            m.test_accuracy.to_string(),
            m.mean_train_loss.to_string(),
            m.gamma_t.to_string(),
            clients.join(";"),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Runs one experiment and writes `metrics.csv` and `summary.json` into the
/// configured output directory.
pub fn run_and_write(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let outcome = run_pipeline(cfg)?;
    let dir = outcome
        .summary
        .config_echo
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from("out"));
    write_atomic(&dir.join("metrics.csv"), metrics_csv(&outcome.metrics)?.as_bytes())?;
    let mut json = serde_json::to_string_pretty(&outcome.summary)?;
    json.push('\n');
    write_atomic(&dir.join("summary.json"), json.as_bytes())?;
    Ok(outcome)
}

/// Exit code for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        _ => 1,
    }
}

/// Loads, overrides, runs and writes one experiment; returns the process
/// exit code and reports failures on stderr.
pub fn run_experiment(config_path: impl AsRef<Path>, overrides: &Overrides) -> i32 {
    let result = ExperimentConfig::from_file(config_path).and_then(|mut cfg| {
        overrides.apply(&mut cfg);
        run_and_write(&cfg)
    });
    match result {
        Ok(outcome) => {
            match outcome.summary.final_acc_last10_mean {
                Some(acc) => println!("final accuracy (last 10 rounds): {acc:.4}"),
                None => println!("no rounds run"),
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: Method,
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub std: f64,
    pub per_seed: Vec<f64>,
}

/// Runs every `(method, seed)` pair and tabulates the final accuracy per
/// method, in input order. Each run writes its own files under
/// `out/<method>/seed_<seed>/`; the table goes to `out/comparison.csv` and
/// `out/comparison.json`.
pub fn compare_methods(
    base: &ExperimentConfig,
    methods: &[Method],
    seeds: &[u64],
    out: &Path,
) -> Result<Vec<MethodRow>> {
    if methods.is_empty() || seeds.is_empty() {
        return Err(Error::Config("need at least one method and one seed".into()));
    }
    let mut rows = Vec::with_capacity(methods.len());
    for &method in methods {
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = base.clone();
            Overrides {
                seed: Some(seed),
                method: Some(method),
                output: Some(out.join(method.name()).join(format!("seed_{seed}"))),
                ..Default::default()
            }
            .apply(&mut cfg);
            let outcome = run_and_write(&cfg)?;
            per_seed.push(outcome.summary.final_acc_last10_mean.unwrap_or(f64::NAN));
        }
        let n = per_seed.len() as f64;
        let mean = per_seed.iter().sum::<f64>() / n;
        let std = (per_seed.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        rows.push(MethodRow {
            method,
            mean,
            std,
            per_seed,
        });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "mean", "std", "seeds"])?;
    for r in &rows {
        w.write_record([
            r.method.name().to_string(),
            r.mean.to_string(),
            r.std.to_string(),
            r.per_seed.len().to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(&out.join("comparison.csv"), &bytes)?;
    write_atomic(
        &out.join("comparison.json"),
        serde_json::to_string_pretty(&rows)?.as_bytes(),
    )?;
    Ok(rows)
}
