//! Per-round participant selection.
//!
//! Two policies: the cluster-based strategy picks one uniformly random member
//! from every metadata group each round, and the baseline picks a uniform
//! sample without replacement from the whole population. Per-round draws run
//! on a stream keyed by `(seed, policy, round)` so reruns and resumed runs
//! reproduce the same participant sets.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterModel;
use crate::error::{Error, Result};

/// How participants are chosen each round.
#[derive(Debug, Clone, PartialEq)]
pub enum SelectionPolicy {
    /// One uniformly random member per cluster.
    ClusterBased(ClusterModel),
    /// `sample_size` users drawn uniformly without replacement.
    UniformRandom { population_size: usize, sample_size: usize },
}

impl SelectionPolicy {
    pub fn cluster_based(model: ClusterModel) -> Result<Self> {
        if model.members.iter().any(Vec::is_empty) {
            return Err(Error::config("cluster-based selection requires non-empty clusters"));
        }
        Ok(SelectionPolicy::ClusterBased(model))
    }

    pub fn uniform_random(population_size: usize, sample_size: usize) -> Result<Self> {
        if sample_size > population_size {
            return Err(Error::config(format!(
                "sample_size {sample_size} exceeds population {population_size}"
            )));
        }
        if sample_size == 0 {
            return Err(Error::config("sample_size must be at least 1"));
        }
        Ok(SelectionPolicy::UniformRandom { population_size, sample_size })
    }

    /// Number of participants this policy produces per round.
    pub fn participants_per_round(&self) -> usize {
        match self {
            SelectionPolicy::ClusterBased(model) => model.k,
            SelectionPolicy::UniformRandom { sample_size, .. } => *sample_size,
        }
    }
}

/// The participant set of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedSet {
    pub round: u64,
    pub indices: Vec<usize>,
}

/// Draws the round's participant set.
///
/// Cluster-based: an independent uniform draw inside each member list, in
/// cluster order. Uniform-random: a uniform sample without replacement.
pub fn select(policy: &SelectionPolicy, round: u64, rng: &mut ChaCha8Rng) -> SelectedSet {
    let indices = match policy {
        SelectionPolicy::ClusterBased(model) => model
            .members
            .iter()
            .map(|members| members[rng.random_range(0..members.len())])
            .collect(),
        SelectionPolicy::UniformRandom { population_size, sample_size } => {
            rand::seq::index::sample(rng, *population_size, *sample_size).into_vec()
        }
    };
    debug_assert!(
        {
            let mut sorted = indices.clone();
            sorted.sort_unstable();
            sorted.windows(2).all(|w| w[0] != w[1])
        },
        "selection produced duplicates"
    );
    SelectedSet { round, indices }
}

/// One audit row per round: `round,policy,indices` with indices joined by
/// spaces inside the final field.
pub fn trace_row(set: &SelectedSet, policy_name: &str) -> String {
    let joined: Vec<String> = set.indices.iter().map(usize::to_string).collect();
    format!("{},{},{}", set.round, policy_name, joined.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::kmeans;
    use crate::rng::{round_payload, stream, Domain};
    use crate::spatial::{Labeling, SpatialPartition, WorldConfig};

    fn singleton_model(k: usize) -> ClusterModel {
        ClusterModel {
            k,
            centroids: (0..k).map(|i| vec![i as f64]).collect(),
            members: (0..k).map(|i| vec![k - 1 - i]).collect(),
            inertia: 0.0,
        }
    }

    #[test]
    fn singleton_clusters_select_themselves_in_cluster_order() {
        let policy = SelectionPolicy::cluster_based(singleton_model(4)).unwrap();
        let set = select(&policy, 3, &mut stream(0, Domain::Selection, 3));
        assert_eq!(set.indices, vec![3, 2, 1, 0]);
        assert_eq!(set.round, 3);
    }

    #[test]
    fn cluster_based_takes_one_per_cluster_every_round() {
        let members = vec![vec![0, 1, 2], vec![3, 4], vec![5, 6, 7, 8], vec![9], vec![10, 11]];
        let model = ClusterModel {
            k: 5,
            centroids: vec![vec![0.0]; 5],
            members: members.clone(),
            inertia: 0.0,
        };
        let policy = SelectionPolicy::cluster_based(model).unwrap();
        for round in 0..200u64 {
            let set = select(&policy, round, &mut stream(1, Domain::Selection, round));
            assert_eq!(set.indices.len(), 5);
            for (cluster, &chosen) in members.iter().zip(&set.indices) {
                assert!(cluster.contains(&chosen), "round {round}");
            }
        }
    }

    #[test]
    fn within_cluster_draw_is_uniform() {
        let m = 7usize;
        let model = ClusterModel {
            k: 1,
            centroids: vec![vec![0.0]],
            members: vec![(0..m).collect()],
            inertia: 0.0,
        };
        let policy = SelectionPolicy::cluster_based(model).unwrap();
        let rounds = 10_000u64;
        let mut counts = vec![0usize; m];
        for round in 0..rounds {
            let set = select(&policy, round, &mut stream(2, Domain::Selection, round));
            counts[set.indices[0]] += 1;
        }
        let p = 1.0 / m as f64;
        let tol = 3.0 * (p * (1.0 - p) / rounds as f64).sqrt();
        for (i, &count) in counts.iter().enumerate() {
            let freq = count as f64 / rounds as f64;
            assert!((freq - p).abs() < tol, "member {i}: freq {freq}, expected {p} +- {tol}");
        }
    }

    #[test]
    fn uniform_random_has_no_duplicates_and_right_size() {
        let policy = SelectionPolicy::uniform_random(50, 12).unwrap();
        for round in 0..100u64 {
            let set = select(&policy, round, &mut stream(3, Domain::Selection, round));
            assert_eq!(set.indices.len(), 12);
            let mut sorted = set.indices.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 12);
            assert!(sorted.iter().all(|&i| i < 50));
        }
    }

    #[test]
    fn invalid_policies_rejected() {
        assert!(SelectionPolicy::uniform_random(5, 6).is_err());
        assert!(SelectionPolicy::uniform_random(5, 0).is_err());
        let mut model = singleton_model(2);
        model.members[1].clear();
        assert!(SelectionPolicy::cluster_based(model).is_err());
    }

    #[test]
    fn selection_is_deterministic_and_round_keyed() {
        let policy = SelectionPolicy::uniform_random(100, 10).unwrap();
        let a = select(&policy, 5, &mut stream(4, Domain::Selection, 5));
        let b = select(&policy, 5, &mut stream(4, Domain::Selection, 5));
        assert_eq!(a, b);
        let sets: Vec<SelectedSet> = (0..20u64)
            .map(|r| select(&policy, r, &mut stream(4, Domain::Selection, r)))
            .collect();
        assert!(sets.windows(2).any(|w| w[0].indices != w[1].indices));
    }

    #[test]
    fn trace_row_format() {
        let set = SelectedSet { round: 9, indices: vec![4, 17, 3] };
        assert_eq!(trace_row(&set, "cluster"), "9,cluster,4 17 3");
    }

    #[test]
    fn cluster_selection_beats_random_on_label_diversity() {
        // Non-IID world: strip labels depend on x, so location clustering
        // spreads the selected users over more strips than random sampling.
        let config = WorldConfig {
            side_length: 10.0,
            sensing_radius: 2.0,
            intensity: 2.0,
            num_ues: 200,
            num_classes: 10,
            seed: 77,
        };
        let partition = SpatialPartition::generate(&config, Labeling::Region).unwrap();
        let metadata: Vec<Vec<f64>> =
            partition.ues.positions.iter().map(|p| p.to_vec()).collect();
        let model =
            kmeans(&metadata, 10, 100, 1e-6, &mut stream(77, Domain::Clustering, 0)).unwrap();
        let cluster_policy = SelectionPolicy::cluster_based(model).unwrap();
        let random_policy = SelectionPolicy::uniform_random(200, 10).unwrap();

        let masks: Vec<u128> = (0..200).map(|k| partition.label_mask(k)).collect();
        let distinct = |set: &SelectedSet| -> u32 {
            set.indices.iter().fold(0u128, |acc, &i| acc | masks[i]).count_ones()
        };

        let rounds = 1000u64;
        let mut cluster_total = 0u32;
        let mut random_total = 0u32;
        for round in 0..rounds {
            let c = select(
                &cluster_policy,
                round,
                &mut stream(77, Domain::Selection, round_payload(round, 0)),
            );
            let r = select(
                &random_policy,
                round,
                &mut stream(77, Domain::Selection, round_payload(round, 1)),
            );
            cluster_total += distinct(&c);
            random_total += distinct(&r);
        }
        let cluster_mean = cluster_total as f64 / rounds as f64;
        let random_mean = random_total as f64 / rounds as f64;
        assert!(cluster_mean >= random_mean, "cluster {cluster_mean} vs random {random_mean}");
    }
}
