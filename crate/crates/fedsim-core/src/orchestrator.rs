//! The federated communication-round loop.
//!
//! A run is a pure function of [`SimConfig`]: data generation, the
//! partition, the malicious roster, model initialization, per-round client
//! sampling and per-client training all draw from independent RNG streams
//! derived from the run seed, so results are bit-identical regardless of
//! execution order or thread count.
//!
//! Each round: sample clients without replacement; benign clients train
//! locally (defended or baseline), label-flip attackers train on poisoned
//! shards, and update-poisoning attackers craft their vector from the
//! round's benign updates after a barrier; the configured aggregator
//! produces the next global model. A *shadow* clean model — the unweighted
//! mean of this round's benign sampled updates applied to the same
//! starting point as the real aggregate — is computed each round as
//! simulator-only ground truth: the global that would have resulted had
//! the attackers been removed from aggregation. Both models are evaluated
//! on the held-out test set every round.

use alloc::vec;
use alloc::vec::Vec;

use crate::aggregation::{self, AggConfig};
use crate::attacks::{craft_poisoned_delta, label_flip_update, AttackConfig, AttackKind, Update};
use crate::data::{
    dirichlet_partition, generate_synthetic, ClientDataset, Dataset, PartitionConfig,
    SyntheticSpec,
};
use crate::defender::{local_train_epoch, DefenderConfig, TrainContext};
use crate::error::{Error, Result};
use crate::nn::{forward, MlpParams, ModelShape, OptimizerState, SgdHyper};
use crate::rng::{derive_seed, Rng};

/// Stream tags separating the run's independent RNG streams.
mod tag {
    pub const DATA: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const ROSTER: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SAMPLE: u64 = 5;
    pub const CLIENT: u64 = 6;
    pub const SURFACE: u64 = 7;
}

/// Ground-truth split of the client population.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientRoster {
    /// Ascending client ids.
    pub benign_ids: Vec<u32>,
    /// Ascending client ids; disjoint from `benign_ids`.
    pub malicious_ids: Vec<u32>,
}

impl ClientRoster {
    /// Seeded shuffle of `0..num_clients`; the first
    /// `floor(attacker_ratio * num_clients)` shuffled ids are malicious
    /// for the whole run. The floor is taken with a tiny upward nudge so
    /// ratios like 0.29 * 100 land on the intended integer.
    pub fn build(num_clients: usize, attacker_ratio: f64, rng: &mut Rng) -> Result<ClientRoster> {
        if num_clients == 0 {
            return Err(Error::config("num_clients must be positive"));
        }
        if !(0.0..1.0).contains(&attacker_ratio) {
            return Err(Error::config("attacker_ratio must be in [0, 1)"));
        }
        let n_mal = libm::floor(attacker_ratio * num_clients as f64 + 1e-9) as usize;
        let mut ids: Vec<u32> = (0..num_clients as u32).collect();
        rng.shuffle(&mut ids);
        let mut malicious_ids: Vec<u32> = ids[..n_mal].to_vec();
        let mut benign_ids: Vec<u32> = ids[n_mal..].to_vec();
        malicious_ids.sort_unstable();
        benign_ids.sort_unstable();
        Ok(ClientRoster {
            benign_ids,
            malicious_ids,
        })
    }

    pub fn is_malicious(&self, id: u32) -> bool {
        self.malicious_ids.binary_search(&id).is_ok()
    }
}

/// Full simulation configuration; a run is a deterministic function of
/// this value.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub num_clients: usize,
    pub rounds: u32,
    /// Fraction of clients sampled per round (*ceil*, without replacement).
    pub sample_fraction: f64,
    /// Fraction of clients that are malicious (*floor*).
    pub attacker_ratio: f64,
    /// Dirichlet concentration of the non-IID partition.
    pub beta: f64,
    pub attack: AttackConfig,
    pub aggregator: AggConfig,
    pub defender: DefenderConfig,
    pub model: ModelShape,
    pub data: SyntheticSpec,
    pub optim: SgdHyper,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let data = SyntheticSpec::default();
        SimConfig {
            num_clients: 20,
            rounds: 100,
            sample_fraction: 0.5,
            attacker_ratio: 0.2,
            beta: 0.5,
            attack: AttackConfig::default(),
            aggregator: AggConfig::default(),
            defender: DefenderConfig::default(),
            model: ModelShape {
                input_dim: data.input_dim,
                hidden1: 32,
                hidden2: 32,
                num_classes: data.num_classes,
            },
            data,
            optim: SgdHyper::default(),
            batch_size: 64,
            local_epochs: 1,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::config("num_clients must be positive"));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds must be positive"));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(Error::config("sample_fraction must be in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.attacker_ratio) {
            return Err(Error::config("attacker_ratio must be in [0, 1)"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::config("beta must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.local_epochs == 0 {
            return Err(Error::config("local_epochs must be positive"));
        }
        self.model.validate()?;
        self.data.validate()?;
        self.attack.validate()?;
        self.aggregator.validate()?;
        self.optim.validate()?;
        self.defender.validate(self.batch_size)?;
        if self.model.input_dim != self.data.input_dim {
            return Err(Error::DimensionMismatch {
                what: "model input dim",
                expected: self.data.input_dim,
                found: self.model.input_dim,
            });
        }
        if self.model.num_classes != self.data.num_classes {
            return Err(Error::DimensionMismatch {
                what: "model classes",
                expected: self.data.num_classes,
                found: self.model.num_classes,
            });
        }
        Ok(())
    }

    /// Clients sampled per round: `ceil(sample_fraction * num_clients)`,
    /// computed with a tiny downward nudge against representation error
    /// and clamped to `[1, num_clients]`.
    pub fn sampled_per_round(&self) -> usize {
        let m = libm::ceil(self.sample_fraction * self.num_clients as f64 - 1e-9) as usize;
        m.clamp(1, self.num_clients)
    }
}

/// Per-round metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: u32,
    /// Test accuracy of the deployed (possibly corrupted) global model.
    pub acc_global: f64,
    /// Test accuracy of the clean shadow model.
    pub acc_clean: f64,
    /// Fraction of sampled malicious clients the aggregator excluded;
    /// `None` for rules without a kept set (or no aggregation this round).
    pub recall: Option<f64>,
    /// Mean prediction cosine between benign sampled local models and the
    /// new corrupted global; `None` when no benign client was sampled.
    pub sim_corrupted: Option<f64>,
    /// Same against the clean shadow global.
    pub sim_clean: Option<f64>,
    /// Sampled client ids, ascending.
    pub sampled: Vec<u32>,
    /// How many of the sampled clients are malicious.
    pub n_malicious: usize,
}

/// Aggregate accuracy of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    /// Mean corrupted-global accuracy over the final five rounds.
    pub last5_accuracy: f64,
    /// Mean of the five highest corrupted-global accuracies.
    pub best5_accuracy: f64,
}

/// Per-class similarity pair (clean, corrupted) for one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassSim {
    pub clean: f64,
    pub corrupted: f64,
}

/// Everything a run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub rounds: Vec<RoundReport>,
    pub summary: RunSummary,
    /// Final deployed global parameters.
    pub final_global: MlpParams,
    /// Final clean-shadow parameters.
    pub final_clean: MlpParams,
    /// `[round][class]` similarity pairs (empty rows when no benign client
    /// was sampled that round).
    pub per_class_sims: Vec<Vec<ClassSim>>,
    /// The held-out test set (for post-hoc surface scans).
    pub test: Dataset,
    /// The per-client shards (for dataset export).
    pub shards: Vec<ClientDataset>,
    pub roster: ClientRoster,
}

/// One client's work order for a round. `execute` is self-contained so
/// jobs can run on any thread; the result depends only on the job value.
#[derive(Debug, Clone, Copy)]
pub struct ClientJob<'a> {
    pub client: &'a ClientDataset,
    pub global: &'a MlpParams,
    pub defender: &'a DefenderConfig,
    pub optim: &'a SgdHyper,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub round: u32,
    /// Train on a label-flipped copy of the shard with the defense off.
    pub flip_labels: bool,
    /// Pre-derived RNG seed for this (round, client) pair.
    pub seed: u64,
}

impl ClientJob<'_> {
    pub fn execute(&self) -> Result<Update> {
        let mut rng = Rng::from_seed(self.seed);
        let ctx = TrainContext {
            defender: self.defender,
            optim: self.optim,
            batch_size: self.batch_size,
            local_epochs: self.local_epochs,
            round: self.round,
        };
        if self.flip_labels {
            label_flip_update(self.client, self.global, &ctx, &mut rng)
        } else {
            let mut opt = OptimizerState::zeros(self.global.shape);
            local_train_epoch(self.client, self.global, &ctx, &mut opt, &mut rng)
        }
    }
}

/// Executes a round's independent client jobs. Implementations must return
/// one update per job, in job order; they may run jobs concurrently.
pub trait ClientRunner {
    fn run_round(&self, jobs: &[ClientJob<'_>]) -> Result<Vec<Update>>;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct SerialRunner;

impl ClientRunner for SerialRunner {
    fn run_round(&self, jobs: &[ClientJob<'_>]) -> Result<Vec<Update>> {
        jobs.iter().map(ClientJob::execute).collect()
    }
}

/// Unweighted mean over the benign subset of the round's updates — the
/// clean shadow's aggregation rule. Returns `None` (shadow keeps its
/// parameters) when no benign update exists.
pub fn shadow_clean_aggregate(
    updates: &[Update],
    roster: &ClientRoster,
) -> Result<Option<Vec<f64>>> {
    let benign: Vec<Update> = updates
        .iter()
        .filter(|u| !roster.is_malicious(u.client_id))
        .cloned()
        .collect();
    if benign.is_empty() {
        return Ok(None);
    }
    Ok(Some(aggregation::fedavg_unweighted(&benign)?.global_delta))
}

/// Fraction of test samples the model classifies correctly.
pub fn accuracy(params: &MlpParams, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    let trace = forward(params, &data.inputs)?;
    let c = params.shape.num_classes;
    let mut correct = 0usize;
    for (i, &y) in data.labels.iter().enumerate() {
        if crate::nn::argmax(&trace.main_probs[i * c..(i + 1) * c]) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = libm::sqrt(a.iter().map(|x| x * x).sum());
    let nb: f64 = libm::sqrt(b.iter().map(|x| x * x).sum());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Mean over the dataset of the cosine similarity between the two models'
/// main-head probability vectors.
pub fn model_similarity(a: &MlpParams, b: &MlpParams, data: &Dataset) -> Result<f64> {
    model_similarity_by_class(a, b, data).map(|(overall, _)| overall)
}

/// As [`model_similarity`], plus the per-true-class means. Classes absent
/// from the dataset report 0.
pub fn model_similarity_by_class(
    a: &MlpParams,
    b: &MlpParams,
    data: &Dataset,
) -> Result<(f64, Vec<f64>)> {
    if a.shape != b.shape {
        return Err(Error::config("model shapes differ"));
    }
    if data.is_empty() {
        return Err(Error::Empty("similarity dataset"));
    }
    let ta = forward(a, &data.inputs)?;
    let tb = forward(b, &data.inputs)?;
    let c = a.shape.num_classes;
    let mut sums = vec![0.0; c];
    let mut counts = vec![0usize; c];
    let mut total = 0.0;
    for (i, &y) in data.labels.iter().enumerate() {
        let row = i * c..(i + 1) * c;
        let s = cosine(&ta.main_probs[row.clone()], &tb.main_probs[row]);
        total += s;
        sums[y] += s;
        counts[y] += 1;
    }
    let per_class: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect();
    Ok((total / data.len() as f64, per_class))
}

/// Accuracy over a 2-D slice of parameter space: two seeded random
/// directions, filter-normalized per layer (each layer block of the
/// direction is rescaled to that layer's parameter norm; zero-norm layers
/// get a zero block), evaluated on the `steps x steps` grid spanning
/// `[-radius, radius]^2`. Row-major: entry `[i * steps + j]` is the
/// accuracy at `(a_i, b_j)`.
pub fn accuracy_surface(
    params: &MlpParams,
    test: &Dataset,
    grid_radius: f64,
    grid_steps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if grid_steps < 2 {
        return Err(Error::config("grid_steps must be at least 2"));
    }
    if !(grid_radius >= 0.0) {
        return Err(Error::config("grid_radius must be non-negative"));
    }
    let mut rng = Rng::derived(seed, &[tag::SURFACE]);
    let mut dirs = [MlpParams::zeros(params.shape), MlpParams::zeros(params.shape)];
    for dir in &mut dirs {
        let mut blocks = dir.blocks_mut();
        for (block, pblock) in blocks.iter_mut().zip(params.blocks()) {
            for v in block.iter_mut() {
                *v = rng.normal();
            }
            let pnorm: f64 = libm::sqrt(pblock.iter().map(|x| x * x).sum());
            let dnorm: f64 = libm::sqrt(block.iter().map(|x| x * x).sum());
            let scale = if pnorm == 0.0 || dnorm == 0.0 {
                0.0
            } else {
                pnorm / dnorm
            };
            for v in block.iter_mut() {
                *v *= scale;
            }
        }
    }
    let fx = dirs[0].flatten();
    let fy = dirs[1].flatten();
    let span = (grid_steps - 1) as f64;
    let mut out = Vec::with_capacity(grid_steps * grid_steps);
    for i in 0..grid_steps {
        let a = grid_radius * (2.0 * i as f64 - span) / span;
        for j in 0..grid_steps {
            let b = grid_radius * (2.0 * j as f64 - span) / span;
            let mut p = params.clone();
            p.add_scaled(&fx, a)?;
            p.add_scaled(&fy, b)?;
            out.push(accuracy(&p, test)?);
        }
    }
    Ok(out)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Last-5 / best-5 averages over the corrupted-global accuracy series.
pub fn summarize(rounds: &[RoundReport]) -> Result<RunSummary> {
    if rounds.is_empty() {
        return Err(Error::Empty("round reports"));
    }
    let accs: Vec<f64> = rounds.iter().map(|r| r.acc_global).collect();
    let w = accs.len().min(5);
    let last5 = mean(&accs[accs.len() - w..]);
    let mut sorted = accs;
    sorted.sort_by(f64::total_cmp);
    let best5 = mean(&sorted[sorted.len() - w..]);
    Ok(RunSummary {
        last5_accuracy: last5,
        best5_accuracy: best5,
    })
}

/// Runs the simulation with the given client runner. See [`run`].
pub fn run_with_runner<R: ClientRunner>(config: &SimConfig, runner: &R) -> Result<RunOutput> {
    config.validate()?;
    let seed = config.seed;

    let mut data_rng = Rng::derived(seed, &[tag::DATA]);
    let (train, test) = generate_synthetic(&config.data, &mut data_rng)?;

    let mut part_rng = Rng::derived(seed, &[tag::PARTITION]);
    let partition = PartitionConfig {
        num_clients: config.num_clients,
        beta: config.beta,
    };
    let mut shards = dirichlet_partition(&train, &partition, &mut part_rng)?;

    let mut roster_rng = Rng::derived(seed, &[tag::ROSTER]);
    let roster = ClientRoster::build(config.num_clients, config.attacker_ratio, &mut roster_rng)?;
    for shard in &mut shards {
        shard.malicious = roster.is_malicious(shard.client_id);
    }

    let mut init_rng = Rng::derived(seed, &[tag::INIT]);
    let mut global = MlpParams::seeded_init(config.model, &mut init_rng);
    let mut clean = global.clone();

    let m = config.sampled_per_round();
    let scenario2 = config.attack.kind.needs_benign_updates();
    let mut reports = Vec::with_capacity(config.rounds as usize);
    let mut per_class_sims = Vec::with_capacity(config.rounds as usize);

    for t in 0..config.rounds {
        let mut sample_rng = Rng::derived(seed, &[tag::SAMPLE, t as u64]);
        let sampled: Vec<u32> = sample_rng
            .sample_distinct(config.num_clients, m)
            .into_iter()
            .map(|i| i as u32)
            .collect();
        let malicious_sampled: Vec<u32> = sampled
            .iter()
            .copied()
            .filter(|&id| roster.is_malicious(id))
            .collect();

        // Jobs that train on real data: benign clients always; malicious
        // clients when the attack poisons data (label flip) or nothing.
        let mut jobs: Vec<ClientJob<'_>> = Vec::new();
        for &id in &sampled {
            let is_mal = roster.is_malicious(id);
            if is_mal && scenario2 {
                continue; // crafted after the benign barrier
            }
            jobs.push(ClientJob {
                client: &shards[id as usize],
                global: &global,
                defender: &config.defender,
                optim: &config.optim,
                batch_size: config.batch_size,
                local_epochs: config.local_epochs,
                round: t,
                flip_labels: is_mal && config.attack.kind == AttackKind::LabelFlip,
                seed: derive_seed(seed, &[tag::CLIENT, t as u64, id as u64]),
            });
        }
        let mut updates = runner.run_round(&jobs)?;

        let benign_updates: Vec<Update> = updates
            .iter()
            .filter(|u| !roster.is_malicious(u.client_id))
            .cloned()
            .collect();

        // Barrier: update-poisoning attackers observe the benign updates.
        // With none to observe they contribute nothing this round.
        if scenario2 && !malicious_sampled.is_empty() && !benign_updates.is_empty() {
            if let Some(crafted) = craft_poisoned_delta(&config.attack, &benign_updates)? {
                for &id in &malicious_sampled {
                    updates.push(Update {
                        client_id: id,
                        round: t,
                        weight: shards[id as usize].data.len() as f64,
                        delta: crafted.clone(),
                    });
                }
            }
        }

        let global_start = global.clone();
        let mut recall = None;
        if !updates.is_empty() {
            let result = aggregation::aggregate(&config.aggregator, &updates)?;
            global.add_scaled(&result.global_delta, 1.0)?;
            recall = aggregation::detection_recall(&result, &malicious_sampled);
        }
        // The clean shadow branches off this round's starting point; with
        // no benign update it retains its previous value.
        if let Some(clean_delta) = shadow_clean_aggregate(&updates, &roster)? {
            clean = global_start.clone();
            clean.add_scaled(&clean_delta, 1.0)?;
        }

        let acc_global = accuracy(&global, &test)?;
        let acc_clean = accuracy(&clean, &test)?;

        // Prediction similarity of benign sampled locals against the two
        // new globals.
        let mut sim_corrupted = None;
        let mut sim_clean = None;
        let mut class_row: Vec<ClassSim> = Vec::new();
        if !benign_updates.is_empty() {
            let c = config.model.num_classes;
            let mut tot_cor = 0.0;
            let mut tot_cln = 0.0;
            let mut cls_cor = vec![0.0; c];
            let mut cls_cln = vec![0.0; c];
            for u in &benign_updates {
                let mut local = global_start.clone();
                local.add_scaled(&u.delta, 1.0)?;
                let (o_cor, p_cor) = model_similarity_by_class(&local, &global, &test)?;
                let (o_cln, p_cln) = model_similarity_by_class(&local, &clean, &test)?;
                tot_cor += o_cor;
                tot_cln += o_cln;
                for k in 0..c {
                    cls_cor[k] += p_cor[k];
                    cls_cln[k] += p_cln[k];
                }
            }
            let nb = benign_updates.len() as f64;
            sim_corrupted = Some(tot_cor / nb);
            sim_clean = Some(tot_cln / nb);
            class_row = (0..c)
                .map(|k| ClassSim {
                    clean: cls_cln[k] / nb,
                    corrupted: cls_cor[k] / nb,
                })
                .collect();
        }

        reports.push(RoundReport {
            round: t,
            acc_global,
            acc_clean,
            recall,
            sim_corrupted,
            sim_clean,
            sampled,
            n_malicious: malicious_sampled.len(),
        });
        per_class_sims.push(class_row);
    }

    let summary = summarize(&reports)?;
    Ok(RunOutput {
        rounds: reports,
        summary,
        final_global: global,
        final_clean: clean,
        per_class_sims,
        test,
        shards,
        roster,
    })
}

/// Runs the simulation serially. The result is identical for any
/// [`ClientRunner`].
pub fn run(config: &SimConfig) -> Result<RunOutput> {
    run_with_runner(config, &SerialRunner)
}

/// The calibrated desk-scale fixture: the default configuration at 40
/// rounds. Accuracy-sensitive tests pin their expectations to this exact
/// configuration.
pub fn desk_config() -> SimConfig {
    SimConfig {
        rounds: 40,
        ..SimConfig::default()
    }
}
