//! Federated rounds: client sampling, local training and FedAvg aggregation.
//!
//! Every source of randomness inside a round is keyed by
//! `(seed, Local, round, client, purpose, ..)`, so clients can train on any
//! number of threads and still reproduce the sequential run bit for bit.
//! Round indices start at 0.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentPolicy;
use crate::data::{ClientShard, LabeledDataset};
use crate::error::{invalid_input, invalid_param, Result};
use crate::harness::evaluate;
use crate::losses::{
    ce_loss, ce_per_sample, lsr_cls_loss, lsr_cls_per_sample, lsr_plus_loss, lsr_total_loss,
    small_loss_select, symmetric_ce_loss, symmetric_ce_lsr_loss, LossOutput, LsrHyperParams,
    SymCeParams,
};
use crate::model::{forward_tape, init_params, init_params_from, ModelParams};
use crate::numerics::{sample_mix_weight, LogitBatch, Purpose, RngStream};

/// Local training method run by every selected client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Plain cross-entropy.
    FedavgCe,
    Lsr,
    /// LSR plus entropy regularization of both heads.
    LsrPlus,
    SymCe,
    Coteaching,
    /// Co-teaching that selects and trains on the sharpened MixUp prediction.
    CoteachingLsr,
    /// Symmetric CE on mixed logits plus self-distillation.
    SymCeLsr,
    /// Cross-entropy on original and augmented samples, no MixUp or
    /// distillation.
    CeAugmented,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::FedavgCe,
        Method::Lsr,
        Method::LsrPlus,
        Method::SymCe,
        Method::Coteaching,
        Method::CoteachingLsr,
        Method::SymCeLsr,
        Method::CeAugmented,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::FedavgCe => "fedavg_ce",
            Method::Lsr => "lsr",
            Method::LsrPlus => "lsr_plus",
            Method::SymCe => "sym_ce",
            Method::Coteaching => "coteaching",
            Method::CoteachingLsr => "coteaching_lsr",
            Method::SymCeLsr => "sym_ce_lsr",
            Method::CeAugmented => "ce_augmented",
        }
    }

    /// Methods that keep two peer networks.
    pub fn is_pair(self) -> bool {
        matches!(self, Method::Coteaching | Method::CoteachingLsr)
    }

    /// Methods that use the augmented view.
    pub fn uses_augmentation(self) -> bool {
        !matches!(self, Method::FedavgCe | Method::SymCe | Method::Coteaching)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                format!("unknown method {s:?}, expected one of {}", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedConfig {
    /// Total clients `N`.
    pub num_clients: usize,
    pub clients_per_round: usize,
    pub rounds: usize,
    /// Local epochs `E`.
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub method: Method,
    /// Warm-up rounds `t_w` of the distillation weight.
    pub warmup_rounds: usize,
    /// Hidden layer widths of the MLP.
    pub hidden: Vec<usize>,
    /// Threads used for client training; 0 uses every available core.
    /// Results do not depend on this value.
    pub workers: usize,
    /// Replaces the per-batch `Beta(1, 1)` mix weight when set.
    pub fixed_lambda: Option<f64>,
    pub augment: AugmentPolicy,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            num_clients: 100,
            clients_per_round: 5,
            rounds: 100,
            local_epochs: 5,
            batch_size: 60,
            lr: 0.15,
            method: Method::FedavgCe,
            warmup_rounds: 20,
            hidden: vec![128, 64],
            workers: 0,
            fixed_lambda: None,
            augment: AugmentPolicy::identity(),
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(invalid_param("num_clients must be >= 1"));
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.num_clients {
            return Err(invalid_param(format!(
                "clients_per_round must lie in [1, {}], got {}",
                self.num_clients, self.clients_per_round
            )));
        }
        if self.local_epochs == 0 {
            return Err(invalid_param("local_epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid_param("batch_size must be >= 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(invalid_param(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.warmup_rounds > self.rounds {
            return Err(invalid_param(format!(
                "warmup_rounds {} exceeds rounds {}",
                self.warmup_rounds, self.rounds
            )));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(invalid_param("hidden needs at least one positive width"));
        }
        if let Some(l) = self.fixed_lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(invalid_param(format!("fixed_lambda {l} outside [0, 1]")));
            }
        }
        self.augment.validate()
    }

    /// Layer sizes `[d, hidden.., M]`.
    pub fn layer_sizes(&self, input_dim: usize, num_classes: usize) -> Vec<usize> {
        let mut sizes = vec![input_dim];
        sizes.extend(&self.hidden);
        sizes.push(num_classes);
        sizes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoteachingConfig {
    /// Assumed noise ratio `τ`.
    pub tau: f64,
    /// Length `T_k` of the keep-ratio ramp.
    pub t_k: usize,
    /// Advance the ramp per local epoch instead of per round.
    pub epoch_indexed: bool,
}

impl Default for CoteachingConfig {
    fn default() -> Self {
        Self {
            tau: 0.0,
            t_k: 10,
            epoch_indexed: false,
        }
    }
}

impl CoteachingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.tau) {
            return Err(invalid_param(format!("tau must lie in [0, 1), got {}", self.tau)));
        }
        Ok(())
    }

    /// `R(t) = 1 − min(τ · t / T_k, τ)`.
    pub fn keep_ratio(&self, t: usize) -> f64 {
        if self.t_k == 0 {
            return 1.0 - self.tau;
        }
        1.0 - (self.tau * t as f64 / self.t_k as f64).min(self.tau)
    }
}

/// Loss hyperparameters shared by all trainers.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainerParams {
    pub lsr: LsrHyperParams,
    pub sym_ce: SymCeParams,
    pub coteaching: CoteachingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub test_accuracy: f64,
    pub mean_train_loss: f64,
    pub gamma_t: f64,
    pub selected_clients: Vec<usize>,
}

/// `k` distinct client ids drawn uniformly without replacement, ascending.
pub fn select_clients(n: usize, k: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    if k > n {
        return Err(invalid_param(format!("cannot select {k} of {n} clients")));
    }
    let mut ids = index::sample(rng, n, k).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// `γ_t = γ · min(t / t_w, 1)`; `t_w = 0` disables the warm-up.
pub fn gamma_schedule(t: usize, t_w: usize, gamma: f64) -> f64 {
    if t_w == 0 {
        return gamma;
    }
    gamma * (t as f64 / t_w as f64).min(1.0)
}

/// Sample-size weighted average `Σ (n_k / n) · w_k`.
///
/// The pairs are put in a canonical order and the mean is accumulated as
/// offsets from the first model, so the result does not depend on input
/// order and identical models come back unchanged.
pub fn aggregate(models: &[ModelParams], sizes: &[usize]) -> Result<ModelParams> {
    if models.is_empty() {
        return Err(invalid_input("nothing to aggregate"));
    }
    if models.len() != sizes.len() {
        return Err(invalid_input(format!(
            "{} models with {} sizes",
            models.len(),
            sizes.len()
        )));
    }
    if sizes.contains(&0) {
        return Err(invalid_input("client sizes must be positive"));
    }
    if models.iter().any(|m| !m.same_shape(&models[0])) {
        return Err(invalid_input("models differ in shape"));
    }
    let mut order: Vec<usize> = (0..models.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (models[a].flat(), models[b].flat());
        fa.iter()
            .zip(fb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
            .then(sizes[a].cmp(&sizes[b]))
    });
    let total: f64 = sizes.iter().map(|&n| n as f64).sum();
    let base = &models[order[0]];
    let mut out = base.clone();
    for &k in &order[1..] {
        let w = sizes[k] as f64 / total;
        for ((o, &x), &x0) in out.flat_mut().iter_mut().zip(models[k].flat()).zip(base.flat()) {
            *o += w * (x - x0);
        }
    }
    Ok(out)
}

/// Parameters after local training and the mean batch loss seen on the way
/// (0 when no batch ran).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub params: ModelParams,
    pub mean_loss: f64,
}

/// Stream rooting one client's local training in one round.
pub fn local_stream(seed: u64, round: usize, client: usize) -> RngStream {
    RngStream::new(seed, &[Purpose::Local.into(), round as u64, client as u64])
}

fn gather(ds: &LabeledDataset, idx: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let mut xs = Vec::with_capacity(idx.len() * ds.dim());
    for &i in idx {
        xs.extend_from_slice(ds.sample(i));
    }
    let labels = idx.iter().map(|&i| ds.observed_labels()[i]).collect();
    (xs, labels)
}

/// Augmented copies of the batch; sample `i` in epoch `e` draws from
/// `rng / [Augment, e, i]`.
fn augment_batch(
    ds: &LabeledDataset,
    idx: &[usize],
    policy: &AugmentPolicy,
    rng: &RngStream,
    epoch: usize,
) -> Result<Vec<f64>> {
    if policy.is_identity() {
        return Ok(gather(ds, idx).0);
    }
    let mut out = Vec::with_capacity(idx.len() * ds.dim());
    for &i in idx {
        let sub = rng.derive_path(&[Purpose::Augment.into(), epoch as u64, i as u64]);
        out.extend(policy.apply(ds.sample(i), ds.image_shape(), &sub)?);
    }
    Ok(out)
}

fn mix_weight(cfg: &FedConfig, rng: &RngStream, epoch: usize, batch: usize) -> f64 {
    match cfg.fixed_lambda {
        Some(l) => l,
        None => sample_mix_weight(
            &mut rng.derive_path(&[Purpose::MixWeight.into(), epoch as u64, batch as u64]),
        ),
    }
}

/// Calls `step(epoch, batch_number, indices)` for every minibatch of `E`
/// epochs; epoch `e` shuffles with `rng / [Shuffle, e]`. Returns the mean of
/// the step losses.
fn run_epochs(
    shard: &ClientShard,
    cfg: &FedConfig,
    rng: &RngStream,
    mut step: impl FnMut(usize, usize, &[usize]) -> Result<f64>,
) -> Result<f64> {
    if shard.indices.is_empty() {
        return Err(invalid_input(format!("client {} has no samples", shard.client_id)));
    }
    if cfg.batch_size > shard.n_k() {
        log::warn!(
            "batch size {} exceeds client {}'s {} samples; using full batches",
            cfg.batch_size,
            shard.client_id,
            shard.n_k()
        );
    }
    let (mut total, mut count) = (0.0, 0usize);
    let mut order = shard.indices.clone();
    for epoch in 0..cfg.local_epochs {
        order.copy_from_slice(&shard.indices);
        order.shuffle(&mut rng.derive_path(&[Purpose::Shuffle.into(), epoch as u64]));
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            total += step(epoch, b, chunk)?;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

fn single_head_train(
    global: &ModelParams,
    ds: &LabeledDataset,
    shard: &ClientShard,
    cfg: &FedConfig,
    rng: &RngStream,
    loss: impl Fn(&LogitBatch, &[usize]) -> Result<LossOutput>,
) -> Result<LocalUpdate> {
    let mut params = global.clone();
    let mean_loss = run_epochs(shard, cfg, rng, |_, _, idx| {
        let (xs, y) = gather(ds, idx);
        let tape = forward_tape(&params, &xs)?;
        let out = loss(tape.logits(), &y)?;
        let grads = tape.backward(&params, &out.adjoint_o1)?;
        params.sgd_step_in_place(&grads, cfg.lr)?;
        Ok(out.scalar)
    })?;
    Ok(LocalUpdate { params, mean_loss })
}

/// FedAvg baseline: minibatch SGD on cross-entropy.
pub fn local_train_ce(
    global: &ModelParams,
    ds: &LabeledDataset,
    shard: &ClientShard,
    cfg: &FedConfig,
    rng: &RngStream,
) -> Result<LocalUpdate> {
    single_head_train(global, ds, shard, cfg, rng, ce_loss)
}

/// Minibatch SGD on symmetric cross-entropy.
pub fn local_train_symce(
    global: &ModelParams,
    ds: &LabeledDataset,
    shard: &ClientShard,
    cfg: &FedConfig,
    sp: &SymCeParams,
    rng: &RngStream,
) -> Result<LocalUpdate> {
    single_head_train(global, ds, shard, cfg, rng, |o, y| symmetric_ce_loss(o, y, sp))
}

/// Cross-entropy on each batch stacked with its augmented copy.
pub fn local_train_ce_augmented(
    global: &ModelParams,
    ds: &LabeledDataset,
    shard: &ClientShard,
    cfg: &FedConfig,
    rng: &RngStream,
) -> Result<LocalUpdate> {
    let mut params = global.clone();
    let mean_loss = run_epochs(shard, cfg, rng, |epoch, _, idx| {
        let (mut xs, y) = gather(ds, idx);
        xs.extend(augment_batch(ds, idx, &cfg.augment, rng, epoch)?);
        let labels: Vec<usize> = y.iter().chain(&y).copied().collect();
        let tape = forward_tape(&params, &xs)?;
        let out = ce_loss(tape.logits(), &labels)?;
        let grads = tape.backward(&params, &out.adjoint_o1)?;
        params.sgd_step_in_place(&grads, cfg.lr)?;
        Ok(out.scalar)
    })?;
    Ok(LocalUpdate { params, mean_loss })
}

/// Objective of the two-view trainer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualObjective {
    Lsr,
    LsrPlus,
    SymCeLsr,
}

/// Local self-regularization: both views go through one forward pass, the
/// objective is evaluated on the two logit heads and one SGD step is taken
/// per batch.
#[allow(clippy::too_many_arguments)]
pub fn local_train_lsr(
    global: &ModelParams,
    ds: &LabeledDataset,
    shard: &ClientShard,
    cfg: &FedConfig,
    params_hp: &TrainerParams,
    objective: DualObjective,
    gamma_t: f64,
    rng: &RngStream,
) -> Result<LocalUpdate> {
    let hp = &params_hp.lsr;
    let mut params = global.clone();
    let mean_loss = run_epochs(shard, cfg, rng, |epoch, b, idx| {
        let (mut xs, y) = gather(ds, idx);
        xs.extend(augment_batch(ds, idx, &cfg.augment, rng, epoch)?);
        let lambda = mix_weight(cfg, rng, epoch, b);
        let tape = forward_tape(&params, &xs)?;
        let (o1, o2) = tape.logits().split_at_row(idx.len());
        let out = match objective {
            DualObjective::Lsr => lsr_total_loss(&o1, &o2, &y, lambda, gamma_t, hp)?,
            DualObjective::LsrPlus => lsr_plus_loss(&o1, &o2, &y, lambda, gamma_t, hp)?,
            DualObjective::SymCeLsr => {
                symmetric_ce_lsr_loss(&o1, &o2, &y, lambda, gamma_t, hp, &params_hp.sym_ce)?
            }
        };
        let adjoint = out.adjoint_o1.concat(&out.adjoint_o2)?;
        let grads = tape.backward(&params, &adjoint)?;
        params.sgd_step_in_place(&grads, cfg.lr)?;
        Ok(out.scalar)
    })?;
    Ok(LocalUpdate { params, mean_loss })
}

fn gather_rows(o: &LogitBatch, rows: &[usize]) -> LogitBatch {
    let m = o.classes();
    let mut data = Vec::with_capacity(rows.len() * m);
    for &r in rows {
        data.extend_from_slice(o.row(r));
    }
    LogitBatch::new(data, m).expect("rows of a valid batch")
}

fn scatter_rows(src: &LogitBatch, rows: &[usize], offset: usize, dst: &mut LogitBatch) {
    for (k, &r) in rows.iter().enumerate() {
        dst.row_mut(offset + r).copy_from_slice(src.row(k));
    }
}

/// Co-teaching on one client. Each network ranks the batch by its own
/// per-sample loss, keeps the `R(t)` smallest, and its peer steps on that
/// subset. With `sharpen` set the ranking and the step both use the sharpened
/// MixUp prediction of the original and augmented views.
#[allow(clippy::too_many_arguments)]
pub fn local_train_coteaching(
    global: (&ModelParams, &ModelParams),
    ds: &LabeledDataset,
    shard: &ClientShard,
    cfg: &FedConfig,
    params_hp: &TrainerParams,
    round: usize,
    sharpen: bool,
    rng: &RngStream,
) -> Result<(LocalUpdate, LocalUpdate)> {
    let ct = &params_hp.coteaching;
    ct.validate()?;
    let hp = &params_hp.lsr;
    let mut nets = [global.0.clone(), global.1.clone()];
    let mut losses = [0.0f64; 2];
    let mut steps = [0usize; 2];
    run_epochs(shard, cfg, rng, |epoch, b, idx| {
        let t = if ct.epoch_indexed {
            round * cfg.local_epochs + epoch
        } else {
            round
        };
        let keep = ct.keep_ratio(t);
        let (mut xs, y) = gather(ds, idx);
        let rows = idx.len();
        let lambda = if sharpen {
            xs.extend(augment_batch(ds, idx, &cfg.augment, rng, epoch)?);
            mix_weight(cfg, rng, epoch, b)
        } else {
            1.0
        };
        let tapes = [forward_tape(&nets[0], &xs)?, forward_tape(&nets[1], &xs)?];
        let heads: Vec<(LogitBatch, LogitBatch)> = tapes
            .iter()
            .map(|tape| tape.logits().split_at_row(rows))
            .collect();
        let mut picks = Vec::with_capacity(2);
        for (o1, o2) in &heads {
            let per = if sharpen {
                lsr_cls_per_sample(o1, o2, &y, lambda, hp)?
            } else {
                ce_per_sample(o1, &y)?
            };
            picks.push(small_loss_select(&per, keep)?);
        }
        for net in 0..2 {
            // each network trains on the samples its peer found small-loss
            let chosen = &picks[1 - net];
            if chosen.is_empty() {
                log::warn!("empty small-loss set on client {}; step skipped", shard.client_id);
                continue;
            }
            let labels: Vec<usize> = chosen.iter().map(|&r| y[r]).collect();
            let (o1, o2) = &heads[net];
            let sub1 = gather_rows(o1, chosen);
            let mut adjoint = LogitBatch::zeros(tapes[net].rows(), o1.classes());
            let scalar = if sharpen {
                let sub2 = gather_rows(o2, chosen);
                let out = lsr_cls_loss(&sub1, &sub2, &labels, lambda, hp)?;
                scatter_rows(&out.adjoint_o1, chosen, 0, &mut adjoint);
                scatter_rows(&out.adjoint_o2, chosen, rows, &mut adjoint);
                out.scalar
            } else {
                let out = ce_loss(&sub1, &labels)?;
                scatter_rows(&out.adjoint_o1, chosen, 0, &mut adjoint);
                out.scalar
            };
            let grads = tapes[net].backward(&nets[net], &adjoint)?;
            nets[net].sgd_step_in_place(&grads, cfg.lr)?;
            losses[net] += scalar;
            steps[net] += 1;
        }
        Ok(0.0)
    })?;
    let mean = |net: usize| if steps[net] == 0 { 0.0 } else { losses[net] / steps[net] as f64 };
    let [a, b] = nets;
    Ok((
        LocalUpdate { params: a, mean_loss: mean(0) },
        LocalUpdate { params: b, mean_loss: mean(1) },
    ))
}

/// Server-side model: one network, or the two Co-teaching peers.
#[derive(Debug, Clone, PartialEq)]
pub enum GlobalModel {
    Single(ModelParams),
    Pair(ModelParams, ModelParams),
}

impl GlobalModel {
    /// The single network, or the first peer.
    pub fn primary(&self) -> &ModelParams {
        match self {
            GlobalModel::Single(p) | GlobalModel::Pair(p, _) => p,
        }
    }
}

/// A federation in progress. Call [`Federation::step`] once per round.
pub struct Federation<'a> {
    cfg: FedConfig,
    hp: TrainerParams,
    train: &'a LabeledDataset,
    test: &'a LabeledDataset,
    shards: &'a [ClientShard],
    seed: u64,
    global: GlobalModel,
    round: usize,
    pool: rayon::ThreadPool,
}

impl<'a> Federation<'a> {
    /// Validates the setup and initializes the global model from `seed`.
    pub fn new(
        cfg: FedConfig,
        hp: TrainerParams,
        train: &'a LabeledDataset,
        shards: &'a [ClientShard],
        test: &'a LabeledDataset,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        hp.lsr.validate()?;
        hp.sym_ce.validate()?;
        hp.coteaching.validate()?;
        if shards.len() != cfg.num_clients {
            return Err(invalid_input(format!(
                "{} shards for {} clients",
                shards.len(),
                cfg.num_clients
            )));
        }
        if let Some(s) = shards.iter().find(|s| s.indices.is_empty()) {
            return Err(invalid_input(format!("client {} has no samples", s.client_id)));
        }
        if test.dim() != train.dim() || test.num_classes() != train.num_classes() {
            return Err(invalid_input("test set does not match the training set layout"));
        }
        if cfg.method.uses_augmentation() {
            cfg.augment.check_layout(train.image_shape())?;
        }
        let sizes = cfg.layer_sizes(train.dim(), train.num_classes());
        let first = init_params(&sizes, seed)?;
        let global = if cfg.method.is_pair() {
            let mut peer = RngStream::new(seed, &[Purpose::Init.into(), Purpose::Peer.into()]);
            GlobalModel::Pair(first, init_params_from(&sizes, &mut peer)?)
        } else {
            GlobalModel::Single(first)
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| invalid_param(format!("cannot start worker pool: {e}")))?;
        Ok(Self {
            cfg,
            hp,
            train,
            test,
            shards,
            seed,
            global,
            round: 0,
            pool,
        })
    }

    pub fn global(&self) -> &GlobalModel {
        &self.global
    }

    /// Index of the next round.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn is_done(&self) -> bool {
        self.round >= self.cfg.rounds
    }

    /// Runs one round: select, train locally, aggregate, evaluate.
    pub fn step(&mut self) -> Result<RoundMetrics> {
        let t = self.round;
        let cfg = &self.cfg;
        let mut select_rng = RngStream::new(self.seed, &[Purpose::Select.into(), t as u64]);
        let selected = select_clients(cfg.num_clients, cfg.clients_per_round, &mut select_rng)?;
        let gamma_t = gamma_schedule(t, cfg.warmup_rounds, self.hp.lsr.gamma);
        let sizes: Vec<usize> = selected.iter().map(|&c| self.shards[c].n_k()).collect();

        let (global, hp, train, shards, seed) =
            (&self.global, &self.hp, self.train, self.shards, self.seed);
        let updates: Vec<Vec<LocalUpdate>> = self.pool.install(|| {
            selected
                .par_iter()
                .map(|&c| {
                    let rng = local_stream(seed, t, c);
                    let shard = &shards[c];
                    train_client(global, train, shard, cfg, hp, t, gamma_t, &rng)
                })
                .collect::<Result<_>>()
        })?;

        let mean_train_loss = {
            let all: Vec<f64> = updates.iter().flatten().map(|u| u.mean_loss).collect();
            all.iter().sum::<f64>() / all.len() as f64
        };
        let collect = |net: usize| -> Vec<ModelParams> {
            updates.iter().map(|u| u[net].params.clone()).collect()
        };
        self.global = match self.global {
            GlobalModel::Single(_) => GlobalModel::Single(aggregate(&collect(0), &sizes)?),
            GlobalModel::Pair(..) => GlobalModel::Pair(
                aggregate(&collect(0), &sizes)?,
                aggregate(&collect(1), &sizes)?,
            ),
        };
        let test_accuracy = match &self.global {
            GlobalModel::Single(p) => evaluate(p, self.test)?,
            GlobalModel::Pair(a, b) => 0.5 * (evaluate(a, self.test)? + evaluate(b, self.test)?),
        };
        self.round += 1;
        Ok(RoundMetrics {
            round: t,
            test_accuracy,
            mean_train_loss,
            gamma_t,
            selected_clients: selected,
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn train_client(
    global: &GlobalModel,
    ds: &LabeledDataset,
    shard: &ClientShard,
    cfg: &FedConfig,
    hp: &TrainerParams,
    round: usize,
    gamma_t: f64,
    rng: &RngStream,
) -> Result<Vec<LocalUpdate>> {
    fn single(g: &GlobalModel) -> Result<&ModelParams> {
        match g {
            GlobalModel::Single(p) => Ok(p),
            GlobalModel::Pair(..) => Err(invalid_input("single-network method on a peer pair")),
        }
    }
    Ok(match cfg.method {
        Method::FedavgCe => vec![local_train_ce(single(global)?, ds, shard, cfg, rng)?],
        Method::SymCe => vec![local_train_symce(single(global)?, ds, shard, cfg, &hp.sym_ce, rng)?],
        Method::CeAugmented => vec![local_train_ce_augmented(single(global)?, ds, shard, cfg, rng)?],
        Method::Lsr | Method::LsrPlus | Method::SymCeLsr => {
            let objective = match cfg.method {
                Method::Lsr => DualObjective::Lsr,
                Method::LsrPlus => DualObjective::LsrPlus,
                _ => DualObjective::SymCeLsr,
            };
            vec![local_train_lsr(single(global)?, ds, shard, cfg, hp, objective, gamma_t, rng)?]
        }
        Method::Coteaching | Method::CoteachingLsr => {
            let GlobalModel::Pair(a, b) = global else {
                return Err(invalid_input("co-teaching needs a peer pair"));
            };
            let sharpen = cfg.method == Method::CoteachingLsr;
            let (ua, ub) = local_train_coteaching((a, b), ds, shard, cfg, hp, round, sharpen, rng)?;
            vec![ua, ub]
        }
    })
}

/// Metrics of every round plus the final server model.
#[derive(Debug, Clone)]
pub struct FederationRun {
    pub metrics: Vec<RoundMetrics>,
    pub global: GlobalModel,
}

impl FederationRun {
    /// Mean test accuracy over the last 10 rounds (fewer if the run is
    /// shorter); `None` for an empty run.
    pub fn final_accuracy(&self) -> Option<f64> {
        final_accuracy(&self.metrics)
    }
}

/// Mean test accuracy over the last 10 rounds.
pub fn final_accuracy(metrics: &[RoundMetrics]) -> Option<f64> {
    if metrics.is_empty() {
        return None;
    }
    let tail = &metrics[metrics.len().saturating_sub(10)..];
    Some(tail.iter().map(|m| m.test_accuracy).sum::<f64>() / tail.len() as f64)
}

/// Runs all configured rounds.
pub fn run_federation(
    cfg: &FedConfig,
    hp: &TrainerParams,
    train: &LabeledDataset,
    shards: &[ClientShard],
    test: &LabeledDataset,
    seed: u64,
) -> Result<FederationRun> {
    let mut fed = Federation::new(cfg.clone(), *hp, train, shards, test, seed)?;
    let mut metrics = Vec::with_capacity(cfg.rounds);
    while !fed.is_done() {
        let m = fed.step()?;
        log::debug!("round {} accuracy {:.4}", m.round, m.test_accuracy);
        metrics.push(m);
    }
    Ok(FederationRun {
        metrics,
        global: fed.global,
    })
}
