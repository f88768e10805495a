//! Experiment front end: JSON config, paired policy runs, CSV traces, and
//! cross-policy comparison.
//!
//! A config describes one experiment family: a world, a labeling scheme, a
//! dataset, and a federation setup. `run_train` executes every
//! `policy x repeat` arm; repeat `r` shifts both the world seed and the
//! federation seed by `r`, and within a repeat every policy sees the
//! bit-identical world, binding, and initial model, so policy comparisons are
//! paired. Long runs checkpoint every `checkpoint_every` rounds and can be
//! resumed with an identical continuation.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterModel;
use crate::datasets::{
    bind_points, load_cifar10, load_fmnist, synthetic_blobs, BoundWorld, CifarPaths, IdxPaths,
    SourceDataset, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::fedavg::{
    run_training, trace_row, FederationConfig, PolicySpec, ResumeState, TrainRun, TRACE_HEADER,
};
use crate::learner::{load_checkpoint, save_checkpoint, MlpArchitecture};
use crate::rng::{stream, Domain};
use crate::selection;
use crate::spatial::{expected_samples, Labeling, SpatialPartition, WorldConfig};

/// Which dataset feeds the spatial points.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic(SyntheticSpec),
    Fmnist(IdxPaths),
    Cifar10(CifarPaths),
}

/// Selection policies by name, as listed in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Cluster,
    Random,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Cluster => "cluster",
            PolicyKind::Random => "random",
        }
    }
}

fn default_eval_every() -> u64 {
    1
}

fn default_hidden_dim() -> usize {
    200
}

fn default_policies() -> Vec<PolicyKind> {
    vec![PolicyKind::Cluster, PolicyKind::Random]
}

fn default_repeats() -> usize {
    3
}

/// Federation block of the experiment config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSection {
    pub rounds: u64,
    pub train: crate::learner::TrainSpec,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    /// Base federation seed; defaults to the world seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    /// Rounds between intermediate checkpoints; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_every: u64,
}

/// A full experiment description. Unknown JSON keys are rejected so config
/// typos fail before any work starts.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub labeling: Labeling,
    pub dataset: DatasetSpec,
    /// Number of metadata clusters; also the per-round participant count for
    /// both policies.
    pub clusters: usize,
    pub federation: FederationSection,
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicyKind>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::config(format!("bad config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.federation.train.validate()?;
        if self.clusters < 1 || self.clusters > self.world.num_ues {
            return Err(Error::config(format!(
                "clusters must be in 1..={} (got {})",
                self.world.num_ues, self.clusters
            )));
        }
        if self.repeats < 1 {
            return Err(Error::config("repeats must be at least 1"));
        }
        if self.federation.rounds < 1 {
            return Err(Error::config("federation.rounds must be at least 1"));
        }
        if self.federation.eval_every < 1 {
            return Err(Error::config("federation.eval_every must be at least 1"));
        }
        if self.policies.is_empty() {
            return Err(Error::config("policies must not be empty"));
        }
        let mut seen = Vec::new();
        for p in &self.policies {
            if seen.contains(p) {
                return Err(Error::config(format!("duplicate policy '{}'", p.name())));
            }
            seen.push(*p);
        }
        if self.labeling == Labeling::Region && self.world.num_classes != 10 {
            return Err(Error::config("region labeling requires num_classes = 10"));
        }
        let dataset_classes = match &self.dataset {
            DatasetSpec::Synthetic(spec) => spec.num_classes,
            DatasetSpec::Fmnist(_) | DatasetSpec::Cifar10(_) => 10,
        };
        if dataset_classes != self.world.num_classes {
            return Err(Error::config(format!(
                "dataset has {dataset_classes} classes, world expects {}",
                self.world.num_classes
            )));
        }
        Ok(())
    }

    /// Base federation seed (defaults to the world seed).
    pub fn federation_seed(&self) -> u64 {
        self.federation.seed.unwrap_or(self.world.seed)
    }

    /// Loads (or generates) the source dataset. Synthetic data derives from
    /// the world seed so an experiment is self-contained.
    pub fn load_dataset(&self) -> Result<SourceDataset> {
        match &self.dataset {
            DatasetSpec::Synthetic(spec) => {
                synthetic_blobs(spec, &mut stream(self.world.seed, Domain::Synthetic, 0))
            }
            DatasetSpec::Fmnist(paths) => load_fmnist(paths),
            DatasetSpec::Cifar10(paths) => load_cifar10(paths),
        }
    }

    fn world_for_repeat(&self, repeat: usize) -> WorldConfig {
        WorldConfig { seed: self.world.seed + repeat as u64, ..self.world.clone() }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Generates the world of the config's first repeat, writes the partition
/// JSON plus a human-readable summary, and returns the two paths.
pub fn run_partition(config: &ExperimentConfig) -> Result<(PathBuf, PathBuf)> {
    create_dir(&config.output_dir)?;
    let partition = SpatialPartition::generate(&config.world, config.labeling)?;
    let partition_path = config.output_dir.join("partition.json");
    partition.save(&partition_path)?;

    let counts: Vec<usize> = (0..partition.world.num_ues).map(|k| partition.capture_count(k)).collect();
    let summary = partition_summary(&partition, &counts);
    if partition.world.intensity == 0.0 {
        eprintln!("warning: intensity is 0, every capture list is empty");
    }
    let summary_path = config.output_dir.join("partition_summary.txt");
    write_file(&summary_path, &summary)?;
    Ok((partition_path, summary_path))
}

fn partition_summary(partition: &SpatialPartition, counts: &[usize]) -> String {
    let world = &partition.world;
    let expected = expected_samples(world.intensity, world.sensing_radius);
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    let min = counts.iter().min().copied().unwrap_or(0);
    let max = counts.iter().max().copied().unwrap_or(0);
    let empty = counts.iter().filter(|&&c| c == 0).count();

    let mut out = String::new();
    let _ = writeln!(
        out,
        "world: L={} R={} lambda={} K={} classes={} seed={}",
        world.side_length, world.sensing_radius, world.intensity, world.num_ues, world.num_classes, world.seed
    );
    let _ = writeln!(out, "labeling: {:?}", partition.labeling);
    let _ = writeln!(out, "points: {}", partition.points.len());
    let deviation = if expected > 0.0 { (mean - expected).abs() / expected * 100.0 } else { 0.0 };
    let _ = writeln!(
        out,
        "capture count: mean={mean:.2} expected={expected:.2} deviation={deviation:.3}% min={min} max={max}"
    );
    let _ = writeln!(out, "clients with no data: {empty}");
    if partition.world.intensity == 0.0 {
        let _ = writeln!(out, "warning: intensity is 0, every capture list is empty");
    }
    let _ = writeln!(out, "capture count histogram (10 equal bins over [{min}, {max}]):");
    let width = ((max - min) as f64 / 10.0).max(1.0);
    let mut bins = [0usize; 10];
    for &c in counts {
        let b = (((c - min) as f64 / width) as usize).min(9);
        bins[b] += 1;
    }
    for (b, count) in bins.iter().enumerate() {
        let lo = min as f64 + b as f64 * width;
        let _ = writeln!(out, "  [{:.0}, {:.0}): {}", lo, lo + width, count);
    }
    out
}

/// Artifact paths of one `policy x repeat` arm.
#[derive(Debug, Clone)]
pub struct ArmOutput {
    pub policy: PolicyKind,
    pub repeat: usize,
    pub metrics_csv: PathBuf,
    pub selections_csv: PathBuf,
    pub checkpoint: PathBuf,
}

fn arm_paths(config: &ExperimentConfig, policy: PolicyKind, repeat: usize) -> ArmOutput {
    let dir = &config.output_dir;
    let stem = format!("{}_rep{repeat}", policy.name());
    ArmOutput {
        policy,
        repeat,
        metrics_csv: dir.join(format!("metrics_{stem}.csv")),
        selections_csv: dir.join(format!("selections_{stem}.csv")),
        checkpoint: dir.join(format!("model_{stem}.ckpt")),
    }
}

fn intermediate_checkpoint(arm: &ArmOutput, round: u64) -> PathBuf {
    arm.checkpoint.with_extension(format!("round{round:06}.ckpt"))
}

fn policy_spec(config: &ExperimentConfig, kind: PolicyKind, stored: Option<ClusterModel>) -> PolicySpec {
    match kind {
        PolicyKind::Cluster => PolicySpec::Cluster { clusters: config.clusters, stored },
        PolicyKind::Random => PolicySpec::Random { sample_size: config.clusters },
    }
}

fn append_lines(path: &Path, lines: &[String], truncate: bool) -> Result<()> {
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(!truncate)
        .write(true)
        .truncate(truncate)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for line in lines {
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Scans an arm's artifacts for resumable state: the latest intermediate
/// checkpoint whose round is covered by the metrics CSV.
fn find_resume(arm: &ArmOutput, rounds: u64) -> Result<Option<ResumeState>> {
    let mut best: Option<(u64, PathBuf)> = None;
    for round in 1..=rounds {
        let path = intermediate_checkpoint(arm, round);
        if path.exists() && best.as_ref().is_none_or(|(r, _)| round > *r) {
            best = Some((round, path));
        }
    }
    let Some((round, path)) = best else {
        return Ok(None);
    };
    let checkpoint = load_checkpoint(&path)?;
    if checkpoint.round != round {
        return Err(Error::Format {
            path,
            reason: format!("checkpoint claims round {}, file name says {round}", checkpoint.round),
        });
    }
    let trace = read_trace(&arm.metrics_csv)?;
    let row = trace
        .rows
        .iter()
        .find(|row| row.round == round)
        .ok_or_else(|| Error::Format {
            path: arm.metrics_csv.clone(),
            reason: format!("no trace row for checkpoint round {round}"),
        })?;
    // Drop rows past the checkpoint; they will be regenerated identically.
    let kept: Vec<String> = std::iter::once(TRACE_HEADER.to_string())
        .chain(trace.rows.iter().filter(|r| r.round <= round).map(|r| r.raw.clone()))
        .collect();
    append_lines(&arm.metrics_csv, &kept, true)?;
    let sel_lines = read_lines(&arm.selections_csv)?;
    let kept_sel: Vec<String> = sel_lines
        .into_iter()
        .enumerate()
        .filter(|(i, line)| {
            *i == 0 || line.split(',').next().and_then(|r| r.parse::<u64>().ok()).is_some_and(|r| r <= round)
        })
        .map(|(_, line)| line)
        .collect();
    append_lines(&arm.selections_csv, &kept_sel, true)?;

    Ok(Some(ResumeState {
        params: checkpoint.params,
        completed_rounds: round,
        last_test_accuracy: row.test_accuracy,
    }))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Runs every `policy x repeat` arm of the experiment. With `resume`,
/// completed arms are skipped and interrupted arms continue from their latest
/// intermediate checkpoint; continuation is bit-identical to an uninterrupted
/// run.
pub fn run_train(config: &ExperimentConfig, resume: bool) -> Result<Vec<ArmOutput>> {
    config.validate()?;
    create_dir(&config.output_dir)?;
    let source = config.load_dataset()?;
    let arch = MlpArchitecture::new(
        source.feature_dim,
        config.federation.hidden_dim,
        config.world.num_classes,
    );

    let mut outputs = Vec::new();
    for repeat in 0..config.repeats {
        let world = config.world_for_repeat(repeat);
        let partition = SpatialPartition::generate(&world, config.labeling)?;
        let fed_seed = config.federation_seed() + repeat as u64;
        let binding = bind_points(&partition, &source, &mut stream(fed_seed, Domain::Binding, 0))?;
        let bound = BoundWorld::new(&partition, &source, &binding)?;

        for &kind in &config.policies {
            let arm = arm_paths(config, kind, repeat);
            if resume && arm.checkpoint.exists() {
                outputs.push(arm);
                continue;
            }
            run_arm(config, &bound, arch, kind, fed_seed, &arm, resume)?;
            outputs.push(arm);
        }
    }
    Ok(outputs)
}

fn run_arm(
    config: &ExperimentConfig,
    bound: &BoundWorld<'_>,
    arch: MlpArchitecture,
    kind: PolicyKind,
    fed_seed: u64,
    arm: &ArmOutput,
    resume: bool,
) -> Result<()> {
    let rounds = config.federation.rounds;
    let mut state = if resume { find_resume(arm, rounds)? } else { None };
    if state.is_none() {
        append_lines(&arm.metrics_csv, &[TRACE_HEADER.to_string()], true)?;
        append_lines(&arm.selections_csv, &["round,policy,indices".to_string()], true)?;
    }

    let segment = if config.federation.checkpoint_every == 0 {
        rounds
    } else {
        config.federation.checkpoint_every
    };
    let fed = FederationConfig {
        rounds,
        train_spec: config.federation.train,
        policy: policy_spec(config, kind, None),
        eval_every: config.federation.eval_every,
        seed: fed_seed,
    };

    let mut done = state.as_ref().map_or(0, |s| s.completed_rounds);
    while done < rounds {
        let target = (done + segment).min(rounds);
        let mut segment_config = fed.clone();
        segment_config.rounds = target;
        let run: TrainRun = run_training(bound, arch, &segment_config, state.take())?;

        let metric_rows: Vec<String> =
            run.records.iter().map(|r| trace_row(r, kind.name(), fed_seed)).collect();
        append_lines(&arm.metrics_csv, &metric_rows, false)?;
        let sel_rows: Vec<String> = run
            .records
            .iter()
            .map(|r| selection::trace_row(&r.selected, kind.name()))
            .collect();
        append_lines(&arm.selections_csv, &sel_rows, false)?;

        let last_accuracy = run.records.last().map_or(0.0, |r| r.test_accuracy);
        if target < rounds {
            save_checkpoint(&run.final_params, fed_seed, target, &intermediate_checkpoint(arm, target))?;
        } else {
            save_checkpoint(&run.final_params, fed_seed, target, &arm.checkpoint)?;
        }
        state = Some(ResumeState {
            params: run.final_params,
            completed_rounds: target,
            last_test_accuracy: last_accuracy,
        });
        done = target;
    }
    Ok(())
}

/// One parsed metrics row.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub round: u64,
    pub policy: String,
    pub seed: u64,
    pub selected_count: usize,
    pub distinct_labels: u32,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub wall_time_s: f64,
    raw: String,
}

/// A parsed metrics CSV.
#[derive(Debug, Clone)]
pub struct Trace {
    pub policy: String,
    pub seed: u64,
    pub rows: Vec<TraceRow>,
}

/// Strict trace parser: schema, row shape, and monotone round grid are all
/// enforced.
pub fn read_trace(path: &Path) -> Result<Trace> {
    let fail = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    let lines = read_lines(path)?;
    if lines.first().map(String::as_str) != Some(TRACE_HEADER) {
        return Err(fail("missing or wrong header".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines[1..].iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(fail(format!("row {i} has {} fields, expected 8", fields.len())));
        }
        let parse_err = |what: &str| fail(format!("row {i}: bad {what}"));
        rows.push(TraceRow {
            round: fields[0].parse().map_err(|_| parse_err("round"))?,
            policy: fields[1].to_string(),
            seed: fields[2].parse().map_err(|_| parse_err("seed"))?,
            selected_count: fields[3].parse().map_err(|_| parse_err("selected_count"))?,
            distinct_labels: fields[4].parse().map_err(|_| parse_err("distinct_labels"))?,
            train_loss: fields[5].parse().map_err(|_| parse_err("train_loss"))?,
            test_accuracy: fields[6].parse().map_err(|_| parse_err("test_accuracy"))?,
            wall_time_s: fields[7].parse().map_err(|_| parse_err("wall_time_s"))?,
            raw: line.clone(),
        });
    }
    if rows.is_empty() {
        return Err(fail("no data rows".into()));
    }
    for pair in rows.windows(2) {
        if pair[1].round != pair[0].round + 1 {
            return Err(fail(format!(
                "round grid not contiguous at {} -> {}",
                pair[0].round, pair[1].round
            )));
        }
    }
    let policy = rows[0].policy.clone();
    let seed = rows[0].seed;
    if rows.iter().any(|r| r.policy != policy || r.seed != seed) {
        return Err(fail("mixed policy or seed within one trace".into()));
    }
    Ok(Trace { policy, seed, rows })
}

/// Summary statistics of one policy across repeats.
#[derive(Debug, Clone, Serialize)]
pub struct PolicySummary {
    pub policy: String,
    pub repeats: usize,
    pub final_accuracy_mean: f64,
    pub final_accuracy_std: f64,
    pub final_loss_mean: f64,
    /// Mean (over repeats) of the accuracy variance across the last 10% of
    /// rounds; the stability measure.
    pub tail_accuracy_variance: f64,
}

/// Output of `compare`.
#[derive(Debug, Clone, Serialize)]
pub struct CompareSummary {
    pub rounds: u64,
    pub policies: Vec<PolicySummary>,
    /// `(a, b, gap)`: mean final accuracy of `a` minus `b` for the first two
    /// policies, in accuracy points.
    pub accuracy_gap: Option<(String, String, f64)>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64
}

/// Compares ≥2 traces spanning ≥2 policies on a shared round grid.
pub fn compare(paths: &[PathBuf]) -> Result<CompareSummary> {
    if paths.len() < 2 {
        return Err(Error::config("need at least two traces (two policies) to compare"));
    }
    let traces: Vec<Trace> = paths.iter().map(|p| read_trace(p)).collect::<Result<_>>()?;
    let rounds = traces[0].rows.len() as u64;
    if traces.iter().any(|t| t.rows.len() as u64 != rounds)
        || traces.iter().any(|t| t.rows[0].round != traces[0].rows[0].round)
    {
        return Err(Error::config("traces have mismatched round grids"));
    }

    let mut policy_names: Vec<String> = Vec::new();
    for t in &traces {
        if !policy_names.contains(&t.policy) {
            policy_names.push(t.policy.clone());
        }
    }
    if policy_names.len() < 2 {
        return Err(Error::config("need two policies, all traces share one"));
    }

    let tail = ((rounds as f64 * 0.1).ceil() as usize).max(1);
    let mut policies = Vec::new();
    for name in &policy_names {
        let group: Vec<&Trace> = traces.iter().filter(|t| &t.policy == name).collect();
        let finals: Vec<f64> = group.iter().map(|t| t.rows.last().unwrap().test_accuracy).collect();
        let losses: Vec<f64> = group.iter().map(|t| t.rows.last().unwrap().train_loss).collect();
        let tail_vars: Vec<f64> = group
            .iter()
            .map(|t| {
                let accs: Vec<f64> =
                    t.rows[t.rows.len() - tail..].iter().map(|r| r.test_accuracy).collect();
                variance(&accs)
            })
            .collect();
        policies.push(PolicySummary {
            policy: name.clone(),
            repeats: group.len(),
            final_accuracy_mean: mean(&finals),
            final_accuracy_std: variance(&finals).sqrt(),
            final_loss_mean: mean(&losses),
            tail_accuracy_variance: mean(&tail_vars),
        });
    }
    let accuracy_gap = Some((
        policies[0].policy.clone(),
        policies[1].policy.clone(),
        policies[0].final_accuracy_mean - policies[1].final_accuracy_mean,
    ));
    Ok(CompareSummary { rounds, policies, accuracy_gap })
}

impl std::fmt::Display for CompareSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "rounds: {}", self.rounds)?;
        writeln!(
            f,
            "{:<10} {:>7} {:>22} {:>12} {:>18}",
            "policy", "repeats", "final_acc (mean+-std)", "final_loss", "tail_acc_variance"
        )?;
        for p in &self.policies {
            writeln!(
                f,
                "{:<10} {:>7} {:>13.4} +- {:.4} {:>12.4} {:>18.6}",
                p.policy,
                p.repeats,
                p.final_accuracy_mean,
                p.final_accuracy_std,
                p.final_loss_mean,
                p.tail_accuracy_variance
            )?;
        }
        if let Some((a, b, gap)) = &self.accuracy_gap {
            writeln!(f, "accuracy gap ({a} - {b}): {:+.4}", gap)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            world: WorldConfig {
                side_length: 10.0,
                sensing_radius: 2.0,
                intensity: 2.0,
                num_ues: 30,
                num_classes: 10,
                seed: 21,
            },
            labeling: Labeling::Region,
            dataset: DatasetSpec::Synthetic(SyntheticSpec {
                num_classes: 10,
                samples_per_class: 20,
                dim: 8,
                separation: 6.0,
            }),
            clusters: 5,
            federation: FederationSection {
                rounds: 4,
                train: crate::learner::TrainSpec {
                    learning_rate: 0.01,
                    local_epochs: 1,
                    batch_size: 8,
                },
                eval_every: 1,
                seed: None,
                hidden_dim: 12,
                checkpoint_every: 0,
            },
            policies: vec![PolicyKind::Cluster, PolicyKind::Random],
            repeats: 2,
            output_dir: dir.to_path_buf(),
        }
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let config = sample_config(dir.path());
        let json = config.to_json().unwrap();
        let back = ExperimentConfig::from_json(&json).unwrap();
        assert_eq!(back.to_json().unwrap(), json);

        let with_typo = json.replace("\"clusters\"", "\"clusterz\"");
        assert!(ExperimentConfig::from_json(&with_typo).is_err());
    }

    #[test]
    fn config_validation_catches_inconsistencies() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = sample_config(dir.path());
        config.clusters = 31;
        assert!(config.validate().is_err());

        let mut config = sample_config(dir.path());
        config.policies = vec![PolicyKind::Cluster, PolicyKind::Cluster];
        assert!(config.validate().is_err());

        let mut config = sample_config(dir.path());
        if let DatasetSpec::Synthetic(spec) = &mut config.dataset {
            spec.num_classes = 7;
        }
        assert!(config.validate().is_err());

        let mut config = sample_config(dir.path());
        config.repeats = 0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn partition_command_writes_reproducible_files() {
        let dir = tempfile::tempdir().unwrap();
        let config = sample_config(&dir.path().join("a"));
        let (partition_a, summary_a) = run_partition(&config).unwrap();
        let config_b = ExperimentConfig { output_dir: dir.path().join("b"), ..config.clone() };
        let (partition_b, _) = run_partition(&config_b).unwrap();
        assert_eq!(
            std::fs::read(&partition_a).unwrap(),
            std::fs::read(&partition_b).unwrap(),
            "partition files must be byte-identical for one seed"
        );
        let summary = std::fs::read_to_string(&summary_a).unwrap();
        assert!(summary.contains("capture count"), "summary: {summary}");
        let loaded = SpatialPartition::load(&partition_a).unwrap();
        assert_eq!(loaded.world.num_ues, 30);
    }

    #[test]
    fn partition_summary_mean_close_to_expected() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = sample_config(dir.path());
        config.world.intensity = 500.0;
        config.world.num_ues = 100;
        let partition = SpatialPartition::generate(&config.world, config.labeling).unwrap();
        let counts: Vec<usize> =
            (0..100).map(|k| partition.capture_count(k)).collect();
        let mean = counts.iter().sum::<usize>() as f64 / 100.0;
        let expected = expected_samples(500.0, 2.0);
        assert!(
            (mean - expected).abs() / expected < 0.05,
            "mean {mean} deviates more than 5% from {expected}"
        );
    }

    #[test]
    fn train_command_produces_all_arms() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = sample_config(dir.path());
        config.repeats = 3;
        let outputs = run_train(&config, false).unwrap();
        assert_eq!(outputs.len(), 6, "2 policies x 3 repeats");
        for arm in &outputs {
            let trace = read_trace(&arm.metrics_csv).unwrap();
            assert_eq!(trace.rows.len(), 4);
            assert_eq!(trace.policy, arm.policy.name());
            assert!(arm.checkpoint.exists());
            let selections = read_lines(&arm.selections_csv).unwrap();
            assert_eq!(selections.len(), 5); // header + 4 rounds
        }
    }

    #[test]
    fn paired_arms_share_world_and_init() {
        // Within a repeat the two policies must decode the identical world;
        // selection is keyed per policy, so distinct_labels may differ, but
        // round 0 initial conditions are shared. Spot-check via the seeds
        // embedded in the checkpoints.
        let dir = tempfile::tempdir().unwrap();
        let mut config = sample_config(dir.path());
        config.repeats = 1;
        let outputs = run_train(&config, false).unwrap();
        let a = load_checkpoint(&outputs[0].checkpoint).unwrap();
        let b = load_checkpoint(&outputs[1].checkpoint).unwrap();
        assert_eq!(a.seed, b.seed);
        assert_eq!(a.round, b.round);
    }

    #[test]
    fn resume_after_interruption_is_identical() {
        let dir = tempfile::tempdir().unwrap();

        // Uninterrupted reference run.
        let mut reference = sample_config(&dir.path().join("ref"));
        reference.repeats = 1;
        reference.policies = vec![PolicyKind::Cluster];
        reference.federation.rounds = 6;
        reference.federation.checkpoint_every = 2;
        let ref_arm = &run_train(&reference, false).unwrap()[0];

        // Interrupted run: same config in another directory, truncated after
        // round 4 (drop the final checkpoint and the last trace rows).
        let mut interrupted = reference.clone();
        interrupted.output_dir = dir.path().join("cut");
        let cut_arm = &run_train(&interrupted, false).unwrap()[0];
        std::fs::remove_file(&cut_arm.checkpoint).unwrap();
        std::fs::remove_file(intermediate_checkpoint(cut_arm, 2)).unwrap();
        let lines = read_lines(&cut_arm.metrics_csv).unwrap();
        append_lines(&cut_arm.metrics_csv, &lines[..6], true).unwrap(); // header + 5 rows

        let resumed_arm = &run_train(&interrupted, true).unwrap()[0];
        let strip_wall = |path: &Path| -> Vec<String> {
            read_lines(path)
                .unwrap()
                .iter()
                .map(|l| l.rsplit_once(',').unwrap().0.to_string())
                .collect()
        };
        assert_eq!(strip_wall(&ref_arm.metrics_csv), strip_wall(&resumed_arm.metrics_csv));
        assert_eq!(
            std::fs::read(&ref_arm.checkpoint).unwrap(),
            std::fs::read(&resumed_arm.checkpoint).unwrap(),
            "final checkpoints must be byte-identical"
        );
    }

    #[test]
    fn compare_reports_gap_and_rejects_bad_input() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = sample_config(dir.path());
        config.repeats = 2;
        let outputs = run_train(&config, false).unwrap();
        let paths: Vec<PathBuf> = outputs.iter().map(|a| a.metrics_csv.clone()).collect();
        let summary = compare(&paths).unwrap();
        assert_eq!(summary.policies.len(), 2);
        assert_eq!(summary.policies[0].repeats, 2);
        let (_, _, gap) = summary.accuracy_gap.clone().unwrap();
        assert!(gap.is_finite());
        let text = summary.to_string();
        assert!(text.contains("accuracy gap"));

        // Identical traces: zero difference.
        let twice = vec![paths[0].clone(), paths[0].clone(), paths[1].clone(), paths[1].clone()];
        let same = compare(&twice).unwrap();
        let finals: Vec<f64> = same.policies.iter().map(|p| p.final_accuracy_mean).collect();
        let direct = compare(&paths[..2]).unwrap();
        assert!((finals[0] - direct.policies[0].final_accuracy_mean).abs() < 1e-15);
        assert_eq!(same.policies[0].final_accuracy_std, 0.0);

        // A single trace is not comparable.
        assert!(compare(&paths[..1]).is_err());

        // Same policy twice is not comparable either.
        let same_policy: Vec<PathBuf> = outputs
            .iter()
            .filter(|a| a.policy == PolicyKind::Cluster)
            .map(|a| a.metrics_csv.clone())
            .collect();
        assert!(compare(&same_policy).is_err());

        // Mismatched grids.
        let mut short = sample_config(&dir.path().join("short"));
        short.federation.rounds = 2;
        short.repeats = 1;
        let short_outputs = run_train(&short, false).unwrap();
        let mixed = vec![paths[0].clone(), short_outputs[1].metrics_csv.clone()];
        assert!(compare(&mixed).is_err());
    }

    #[test]
    fn malformed_trace_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, format!("{TRACE_HEADER}\n1,cluster,0,5,3,nanana,0.5,0.1\n")).unwrap();
        assert!(read_trace(&path).is_err());
        std::fs::write(&path, "wrong,header\n").unwrap();
        assert!(read_trace(&path).is_err());
        std::fs::write(&path, format!("{TRACE_HEADER}\n1,cluster,0,5,3,1.0,0.5\n")).unwrap();
        assert!(read_trace(&path).is_err());
    }
}
