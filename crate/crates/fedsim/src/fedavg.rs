//! FedAvg orchestration.
//!
//! Each round: draw the participant set, train every selected client from the
//! identical broadcast model, and average the uploaded parameter vectors
//! weighted by local sample count. Clients with no data stay selected but
//! contribute weight zero. Local training runs in parallel; results reduce in
//! ascending client-index order so 64-bit outputs do not depend on thread
//! scheduling.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{kmeans, ClusterModel};
use crate::datasets::BoundWorld;
use crate::error::{Error, Result};
use crate::learner::{
    evaluate, init_params, local_train, ClientDataset, MlpArchitecture, ModelParams, TrainSpec,
};
use crate::rng::{round_payload, stream, Domain};
use crate::selection::{select, SelectedSet, SelectionPolicy};

/// Selection policy described by configuration; materialized once per run.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    /// Cluster users by location metadata into `clusters` groups, or reuse a
    /// stored model, then pick one member per group each round.
    Cluster { clusters: usize, stored: Option<ClusterModel> },
    /// Uniform sample of `sample_size` users without replacement.
    Random { sample_size: usize },
}

impl PolicySpec {
    /// Short name used in metric rows and file names.
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Cluster { .. } => "cluster",
            PolicySpec::Random { .. } => "random",
        }
    }
}

/// Parameters of one federated run.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub rounds: u64,
    pub train_spec: TrainSpec,
    pub policy: PolicySpec,
    pub eval_every: u64,
    pub seed: u64,
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 {
            return Err(Error::config("rounds must be at least 1"));
        }
        if self.eval_every < 1 {
            return Err(Error::config("eval_every must be at least 1"));
        }
        self.train_spec.validate()
    }
}

/// Metrics of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub selected: SelectedSet,
    /// Weighted mean loss over the selected clients' data at the
    /// post-aggregation model (weights `D_k / sum D`).
    pub train_loss: f64,
    /// Accuracy on the held-out test set, carried forward between
    /// evaluations.
    pub test_accuracy: f64,
    /// Distinct labels in the union of the selected clients' data.
    pub distinct_labels: u32,
    pub wall_time_s: f64,
}

/// One client's uploaded update.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client: usize,
    pub params: ModelParams,
    /// Aggregation weight `n_k` (local sample count).
    pub weight: u64,
}

/// Weighted coordinate-wise mean of the updates (weights `n_k`), summed in
/// ascending client-index order. Zero-weight updates are skipped; if every
/// weight is zero the round has no effective participants.
pub fn aggregate(updates: &[ClientUpdate], round: u64) -> Result<ModelParams> {
    let mut effective: Vec<&ClientUpdate> = updates.iter().filter(|u| u.weight > 0).collect();
    if effective.is_empty() {
        return Err(Error::NoEffectiveParticipants { round });
    }
    effective.sort_by_key(|u| u.client);
    let arch = effective[0].params.arch;
    for u in &effective {
        if u.params.arch != arch {
            return Err(Error::dimension("mismatched architectures in aggregation".to_string()));
        }
    }
    if effective.len() == 1 {
        return Ok(effective[0].params.clone());
    }

    let total: u64 = effective.iter().map(|u| u.weight).sum();
    let mut acc = vec![0.0; effective[0].params.values.len()];
    for u in &effective {
        let w = u.weight as f64;
        for (a, v) in acc.iter_mut().zip(&u.params.values) {
            *a += w * v;
        }
    }
    let inv = 1.0 / total as f64;
    for a in &mut acc {
        *a *= inv;
    }
    Ok(ModelParams { arch, values: acc })
}

/// Outcome of one round, before test evaluation.
#[derive(Debug)]
pub struct RoundOutcome {
    pub params: ModelParams,
    pub selected: SelectedSet,
    pub train_loss: f64,
    pub distinct_labels: u32,
    pub wall_time_s: f64,
}

/// Runs one FedAvg round: select, broadcast, locally train in parallel,
/// aggregate with weights `n_k = D_k`, and measure the train loss of the
/// aggregated model on the selected clients' data.
///
/// Broadcast consistency holds by construction: every client trains from the
/// one shared `global` borrow. Updates reduce into ascending client-index
/// order inside `aggregate`, so results do not depend on thread scheduling.
pub fn run_round(
    global: &ModelParams,
    bound: &BoundWorld<'_>,
    config: &FederationConfig,
    policy: &SelectionPolicy,
    round: u64,
) -> Result<RoundOutcome> {
    let started = Instant::now();
    let mut selection_rng = stream(config.seed, Domain::Selection, round_payload(round, policy_tag(policy)));
    let selected = select(policy, round, &mut selection_rng);

    let clients: Vec<(usize, ClientDataset)> = selected
        .indices
        .par_iter()
        .map(|&k| bound.client_dataset(k).map(|ds| (k, ds)))
        .collect::<Result<_>>()?;

    let updates: Vec<ClientUpdate> = clients
        .par_iter()
        .map(|(k, data)| {
            let mut rng = stream(config.seed, Domain::LocalTrain, round_payload(round, *k as u64));
            let update = local_train(global, data, &config.train_spec, &mut rng)?;
            Ok(ClientUpdate { client: *k, params: update.params, weight: data.len() as u64 })
        })
        .collect::<Result<_>>()?;

    let new_global = aggregate(&updates, round)?;

    // Eq.-style train loss: weighted mean of per-client mean losses,
    // accumulated in selection order.
    let losses: Vec<(f64, u64)> = clients
        .par_iter()
        .filter(|(_, data)| !data.is_empty())
        .map(|(_, data)| evaluate(&new_global, data).map(|(loss, _)| (loss, data.len() as u64)))
        .collect::<Result<_>>()?;
    let total: u64 = losses.iter().map(|&(_, n)| n).sum();
    let train_loss =
        losses.iter().map(|&(loss, n)| loss * n as f64).sum::<f64>() / total as f64;
    if !train_loss.is_finite() {
        return Err(Error::Runtime(format!("training diverged at round {round}: non-finite loss")));
    }

    let distinct_labels = selected
        .indices
        .iter()
        .fold(0u128, |acc, &k| acc | bound.client_label_mask(k))
        .count_ones();

    Ok(RoundOutcome {
        params: new_global,
        selected,
        train_loss,
        distinct_labels,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

fn policy_tag(policy: &SelectionPolicy) -> u64 {
    match policy {
        SelectionPolicy::ClusterBased(_) => 0,
        SelectionPolicy::UniformRandom { .. } => 1,
    }
}

/// A completed (or resumed) training run.
#[derive(Debug)]
pub struct TrainRun {
    pub final_params: ModelParams,
    pub records: Vec<RoundRecord>,
}

/// State to continue an interrupted run from a checkpoint.
#[derive(Debug, Clone)]
pub struct ResumeState {
    pub params: ModelParams,
    pub completed_rounds: u64,
    /// Test accuracy carried into the first resumed record (the last
    /// evaluated value of the interrupted run).
    pub last_test_accuracy: f64,
}

/// Materializes the selection policy for a run: reuses a stored cluster model
/// when one is supplied, otherwise clusters UE locations once.
pub fn build_policy(bound: &BoundWorld<'_>, config: &FederationConfig) -> Result<SelectionPolicy> {
    match &config.policy {
        PolicySpec::Cluster { clusters, stored } => {
            let model = match stored {
                Some(model) => model.clone(),
                None => {
                    let metadata: Vec<Vec<f64>> =
                        bound.partition.ues.positions.iter().map(|p| p.to_vec()).collect();
                    kmeans(&metadata, *clusters, 100, 1e-6, &mut stream(config.seed, Domain::Clustering, 0))?
                }
            };
            SelectionPolicy::cluster_based(model)
        }
        PolicySpec::Random { sample_size } => {
            SelectionPolicy::uniform_random(bound.num_clients(), *sample_size)
        }
    }
}

/// Runs the full loop: cluster once (if needed), then `rounds` rounds of
/// select/train/aggregate, evaluating on the held-out test set every
/// `eval_every` rounds and at the final round. Returns the final model and
/// one record per executed round.
pub fn run_training(
    bound: &BoundWorld<'_>,
    arch: MlpArchitecture,
    config: &FederationConfig,
    resume: Option<ResumeState>,
) -> Result<TrainRun> {
    config.validate()?;
    arch.validate()?;
    if arch.input_dim != bound.source.feature_dim {
        return Err(Error::dimension(format!(
            "architecture input_dim {} does not match dataset feature_dim {}",
            arch.input_dim, bound.source.feature_dim
        )));
    }
    let policy = build_policy(bound, config)?;
    let test_set = bound.source.test_set()?;

    let (mut params, start_round, mut last_accuracy) = match resume {
        Some(state) => {
            if state.params.arch != arch {
                return Err(Error::dimension("resume checkpoint architecture mismatch".to_string()));
            }
            if state.completed_rounds > config.rounds {
                return Err(Error::config(format!(
                    "resume state has {} completed rounds, run only has {}",
                    state.completed_rounds, config.rounds
                )));
            }
            (state.params, state.completed_rounds, state.last_test_accuracy)
        }
        None => {
            let params = init_params(arch, &mut stream(config.seed, Domain::Init, 0));
            let (_, accuracy) = evaluate(&params, &test_set)?;
            (params, 0, accuracy)
        }
    };

    let mut records = Vec::with_capacity((config.rounds - start_round) as usize);
    for round in (start_round + 1)..=config.rounds {
        let outcome = run_round(&params, bound, config, &policy, round)?;
        params = outcome.params;
        if round % config.eval_every == 0 || round == config.rounds {
            let (_, accuracy) = evaluate(&params, &test_set)?;
            last_accuracy = accuracy;
        }
        records.push(RoundRecord {
            round,
            selected: outcome.selected,
            train_loss: outcome.train_loss,
            test_accuracy: last_accuracy,
            distinct_labels: outcome.distinct_labels,
            wall_time_s: outcome.wall_time_s,
        });
    }
    Ok(TrainRun { final_params: params, records })
}

/// Header of the metrics trace CSV.
pub const TRACE_HEADER: &str =
    "round,policy,seed,selected_count,distinct_labels,train_loss,test_accuracy,wall_time_s";

/// Formats one record as a trace CSV row.
pub fn trace_row(record: &RoundRecord, policy: &str, seed: u64) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        record.round,
        policy,
        seed,
        record.selected.indices.len(),
        record.distinct_labels,
        record.train_loss,
        record.test_accuracy,
        record.wall_time_s
    )
}
