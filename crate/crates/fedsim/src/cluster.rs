//! Metadata clustering.
//!
//! Users are grouped once, before training, by running k-means over their
//! metadata vectors (here: 2-D location, but any fixed-length real vector
//! works). The resulting groups drive per-round selection, so the model is
//! serializable and can be computed once and reused across runs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fitted clustering: `k` centroids plus the disjoint member lists that
/// cover every input index. `inertia` is the sum of squared member-to-centroid
/// distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub members: Vec<Vec<usize>>,
    pub inertia: f64,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn validate_data(data: &[Vec<f64>], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    if k > data.len() {
        return Err(Error::config(format!(
            "k = {k} exceeds the number of metadata vectors ({})",
            data.len()
        )));
    }
    let dim = data[0].len();
    for (i, v) in data.iter().enumerate() {
        if v.len() != dim {
            return Err(Error::dimension(format!(
                "metadata vector {i} has length {}, expected {dim}",
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::config(format!("metadata vector {i} contains a non-finite value")));
        }
    }
    Ok(dim)
}

/// k-means++ seeding: first centroid uniform, then each next centroid drawn
/// with probability proportional to its squared distance to the nearest
/// already-chosen centroid.
fn seed_centroids(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(data[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = data.iter().map(|x| dist2(x, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            // All remaining mass sits on already-chosen centroids; any index
            // works, repair keeps clusters non-empty later.
            rng.random_range(0..n)
        };
        centroids.push(data[next].clone());
        for (i, x) in data.iter().enumerate() {
            let d = dist2(x, &centroids[centroids.len() - 1]);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

/// Nearest centroid of `x`, ties broken by lowest centroid index.
fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = dist2(centroid, x);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Moves the point farthest from its assigned centroid into each empty
/// cluster, never draining a cluster below one member. Returns true if any
/// repair happened.
fn repair_empty(
    assign: &mut [usize],
    sizes: &mut [usize],
    data: &[Vec<f64>],
    centroids: &[Vec<f64>],
) -> bool {
    let mut repaired = false;
    for empty in 0..sizes.len() {
        if sizes[empty] > 0 {
            continue;
        }
        let mut worst: Option<(usize, f64)> = None;
        for (i, x) in data.iter().enumerate() {
            if sizes[assign[i]] < 2 {
                continue;
            }
            let d = dist2(x, &centroids[assign[i]]);
            if worst.is_none_or(|(_, wd)| d > wd) {
                worst = Some((i, d));
            }
        }
        let (victim, _) = worst.expect("a cluster with >= 2 members exists while any is empty");
        sizes[assign[victim]] -= 1;
        assign[victim] = empty;
        sizes[empty] += 1;
        repaired = true;
    }
    repaired
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Iterates assignment and mean-update until the largest centroid shift is at
/// most `tol` or `max_iters` is reached, then re-assigns against the final
/// centroids so the returned member lists are consistent with them. Clusters
/// are never returned empty: an emptied cluster steals the globally farthest
/// point (see `repair_empty`).
pub fn kmeans(
    data: &[Vec<f64>],
    k: usize,
    max_iters: usize,
    tol: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ClusterModel> {
    if data.is_empty() {
        return Err(Error::config("cannot cluster an empty metadata set"));
    }
    let dim = validate_data(data, k)?;
    if max_iters == 0 {
        return Err(Error::config("max_iters must be at least 1"));
    }
    if tol.is_nan() || tol < 0.0 {
        return Err(Error::config("tol must be non-negative"));
    }

    let n = data.len();
    let mut centroids = seed_centroids(data, k, rng);
    let mut assign = vec![0usize; n];
    let mut prev_inertia = f64::INFINITY;

    for _ in 0..max_iters {
        let mut sizes = vec![0usize; k];
        for (i, x) in data.iter().enumerate() {
            assign[i] = nearest(&centroids, x);
            sizes[assign[i]] += 1;
        }
        let repaired = repair_empty(&mut assign, &mut sizes, data, &centroids);

        let inertia: f64 =
            data.iter().zip(&assign).map(|(x, &c)| dist2(x, &centroids[c])).sum();
        // Lloyd is monotone; only a repair step may bump inertia.
        if !repaired {
            assert!(
                inertia <= prev_inertia * (1.0 + 1e-9) + 1e-12,
                "inertia increased: {prev_inertia} -> {inertia}"
            );
        }
        prev_inertia = inertia;

        let mut new_centroids = vec![vec![0.0; dim]; k];
        for (x, &c) in data.iter().zip(&assign) {
            for (acc, v) in new_centroids[c].iter_mut().zip(x) {
                *acc += v;
            }
        }
        for (centroid, &size) in new_centroids.iter_mut().zip(&sizes) {
            for v in centroid.iter_mut() {
                *v /= size as f64;
            }
        }

        let shift = centroids
            .iter()
            .zip(&new_centroids)
            .map(|(a, b)| dist2(a, b).sqrt())
            .fold(0.0f64, f64::max);
        centroids = new_centroids;
        if shift <= tol {
            break;
        }
    }

    // Final assignment against the final centroids.
    let mut sizes = vec![0usize; k];
    for (i, x) in data.iter().enumerate() {
        assign[i] = nearest(&centroids, x);
        sizes[assign[i]] += 1;
    }
    repair_empty(&mut assign, &mut sizes, data, &centroids);

    let mut members = vec![Vec::new(); k];
    for (i, &c) in assign.iter().enumerate() {
        members[c].push(i);
    }
    let inertia: f64 = data.iter().zip(&assign).map(|(x, &c)| dist2(x, &centroids[c])).sum();
    Ok(ClusterModel { k, centroids, members, inertia })
}

impl ClusterModel {
    /// Cluster index of `x`: nearest centroid by squared Euclidean distance,
    /// ties broken by lowest centroid index.
    pub fn assign(&self, x: &[f64]) -> Result<usize> {
        let dim = self.centroids.first().map_or(0, Vec::len);
        if x.len() != dim {
            return Err(Error::dimension(format!(
                "query has dimension {}, centroids have {dim}",
                x.len()
            )));
        }
        Ok(nearest(&self.centroids, x))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: ClusterModel = serde_json::from_str(text)?;
        if model.centroids.len() != model.k || model.members.len() != model.k {
            return Err(Error::config("cluster model is inconsistent with its k"));
        }
        if model.members.iter().any(Vec::is_empty) {
            return Err(Error::config("cluster model has an empty member list"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use rand_distr::{Distribution, Normal};

    fn rng(seed: u64) -> ChaCha8Rng {
        stream(seed, Domain::Clustering, 0)
    }

    fn check_partition(model: &ClusterModel, n: usize) {
        let mut seen = vec![false; n];
        for members in &model.members {
            assert!(!members.is_empty(), "empty cluster");
            for &i in members {
                assert!(!seen[i], "index {i} in two clusters");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s), "not all indices covered");
    }

    #[test]
    fn k1_centroid_is_mean() {
        let data: Vec<Vec<f64>> = vec![vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 4.0]];
        let model = kmeans(&data, 1, 100, 1e-6, &mut rng(0)).unwrap();
        assert!((model.centroids[0][0] - 3.0).abs() < 1e-12);
        assert!((model.centroids[0][1] - 4.0).abs() < 1e-12);
        let total_ss: f64 = data.iter().map(|x| dist2(x, &model.centroids[0])).sum();
        assert!((model.inertia - total_ss).abs() < 1e-12);
        check_partition(&model, 3);
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let data: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let model = kmeans(&data, 6, 100, 1e-6, &mut rng(1)).unwrap();
        assert_eq!(model.inertia, 0.0);
        assert!(model.members.iter().all(|m| m.len() == 1));
        check_partition(&model, 6);
    }

    #[test]
    fn recovers_two_well_separated_blobs() {
        let mut sampler = rng(2);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut data = Vec::new();
        for _ in 0..50 {
            data.push(vec![-5.0 + noise.sample(&mut sampler), noise.sample(&mut sampler)]);
        }
        for _ in 0..50 {
            data.push(vec![5.0 + noise.sample(&mut sampler), noise.sample(&mut sampler)]);
        }
        let model = kmeans(&data, 2, 100, 1e-6, &mut rng(3)).unwrap();
        check_partition(&model, 100);

        // Brute-force oracle: membership by nearest blob mean.
        let left: Vec<usize> = (0..100).filter(|&i| data[i][0] < 0.0).collect();
        let right: Vec<usize> = (0..100).filter(|&i| data[i][0] >= 0.0).collect();
        let mut got: Vec<Vec<usize>> = model.members.clone();
        got.sort_by_key(|m| m.first().copied());
        assert_eq!(got[0], left);
        assert_eq!(got[1], right);
        for centroid in &model.centroids {
            let blob_mean = if centroid[0] < 0.0 { [-5.0, 0.0] } else { [5.0, 0.0] };
            assert!(dist2(centroid, &blob_mean).sqrt() < 0.2, "centroid {centroid:?}");
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let data = vec![vec![0.0], vec![1.0]];
        assert!(kmeans(&data, 0, 100, 1e-6, &mut rng(4)).is_err());
        assert!(kmeans(&data, 3, 100, 1e-6, &mut rng(4)).is_err());
        let bad = vec![vec![0.0], vec![f64::NAN]];
        assert!(kmeans(&bad, 1, 100, 1e-6, &mut rng(4)).is_err());
        let ragged = vec![vec![0.0], vec![0.0, 1.0]];
        assert!(kmeans(&ragged, 1, 100, 1e-6, &mut rng(4)).is_err());
    }

    #[test]
    fn assign_matches_exhaustive_scan() {
        let mut sampler = rng(5);
        let data: Vec<Vec<f64>> = (0..40)
            .map(|_| vec![sampler.random_range(-1.0..1.0), sampler.random_range(-1.0..1.0)])
            .collect();
        let model = kmeans(&data, 5, 100, 1e-6, &mut rng(6)).unwrap();
        for _ in 0..100 {
            let x = vec![sampler.random_range(-1.0..1.0), sampler.random_range(-1.0..1.0)];
            let got = model.assign(&x).unwrap();
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in model.centroids.iter().enumerate() {
                let d = dist2(centroid, &x);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assert_eq!(got, best);
        }
    }

    #[test]
    fn assign_exact_centroid_and_tie_rule() {
        let model = ClusterModel {
            k: 5,
            centroids: vec![
                vec![0.0, 2.0],
                vec![-1.0, 0.0],
                vec![4.0, 4.0],
                vec![7.0, -1.0],
                vec![1.0, 0.0],
            ],
            members: vec![vec![0], vec![1], vec![2], vec![3], vec![4]],
            inertia: 0.0,
        };
        assert_eq!(model.assign(&[7.0, -1.0]).unwrap(), 3);
        // (0,0) is equidistant from centroids 1 and 4; lowest index wins.
        assert_eq!(model.assign(&[0.0, 0.0]).unwrap(), 1);
        assert!(model.assign(&[0.0]).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let mut sampler = rng(7);
        let data: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![sampler.random_range(-5.0..5.0), sampler.random_range(-5.0..5.0)])
            .collect();
        let a = kmeans(&data, 7, 100, 1e-6, &mut rng(8)).unwrap();
        let b = kmeans(&data, 7, 100, 1e-6, &mut rng(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn partition_valid_on_many_random_instances() {
        for seed in 0..30u64 {
            let mut sampler = rng(100 + seed);
            let n = 5 + (seed as usize * 7) % 60;
            let k = 1 + (seed as usize) % n.min(8);
            let data: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![sampler.random_range(0.0..4.0), sampler.random_range(0.0..4.0)])
                .collect();
            let model = kmeans(&data, k, 100, 1e-6, &mut rng(200 + seed)).unwrap();
            check_partition(&model, n);
            assert!(model.inertia >= 0.0);
        }
    }

    #[test]
    fn duplicate_points_still_cover_all_clusters() {
        let data = vec![vec![1.0, 1.0]; 5];
        let model = kmeans(&data, 3, 100, 1e-6, &mut rng(9)).unwrap();
        check_partition(&model, 5);
        assert_eq!(model.inertia, 0.0);
    }

    #[test]
    fn json_round_trip() {
        let data: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.37, -(i as f64)]).collect();
        let model = kmeans(&data, 4, 100, 1e-6, &mut rng(10)).unwrap();
        let json = model.to_json().unwrap();
        let back = ClusterModel::from_json(&json).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn translation_equivariance_exact() {
        // Powers-of-two sizes and dyadic coordinates keep every mean and
        // distance computation exact, so translated runs match bit-for-bit.
        for seed in 0..10u64 {
            let mut sampler = rng(300 + seed);
            let n = 16usize;
            let data: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    vec![
                        sampler.random_range(0..512) as f64 / 64.0,
                        sampler.random_range(0..512) as f64 / 64.0,
                    ]
                })
                .collect();
            let shift = [3.0, -7.0];
            let shifted: Vec<Vec<f64>> =
                data.iter().map(|v| vec![v[0] + shift[0], v[1] + shift[1]]).collect();
            let a = kmeans(&data, 4, 100, 0.0, &mut rng(400 + seed)).unwrap();
            let b = kmeans(&shifted, 4, 100, 0.0, &mut rng(400 + seed)).unwrap();
            assert_eq!(a.members, b.members, "seed {seed}");
        }
    }
}
