//! User clustering on search-filter behavior: per-user percentage features,
//! PAM k-medoids under the L1 metric, and per-cluster refits of the request
//! model.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::{self, Prepared, RequestParams};

/// Characteristics a search can be filtered on: the 3 landlord-match
/// dummies, the 10 amenities, and the 5 non-baseline district dummies.
pub const N_FEATURES: usize = 18;

/// Minimum slots for a search to count as evidence of filtering.
pub const MIN_FILTER_SLOTS: usize = 2;

pub fn feature_names(baseline_district: usize) -> Vec<String> {
    let mut names: Vec<String> = vec![
        "gender_match".into(),
        "age_match".into(),
        "occupation_match".into(),
    ];
    for a in crate::domain::AMENITY_NAMES {
        names.push(format!("amenity_{a}"));
    }
    for d in 0..crate::domain::N_DISTRICTS {
        if d != baseline_district {
            names.push(format!("district_d{}", d + 1));
        }
    }
    names
}

/// Per-user filter shares: for each characteristic, the percentage of the
/// user's searches (with at least `MIN_FILTER_SLOTS` results) where every
/// result shares that characteristic. Users without any qualifying search
/// are dropped; the returned index maps rows back to `prep.users`.
pub fn filter_features(prep: &Prepared) -> (Vec<usize>, Vec<[f64; N_FEATURES]>) {
    let n_users = prep.users.len();
    let mut counts = vec![[0.0f64; N_FEATURES]; n_users];
    let mut totals = vec![0usize; n_users];

    for s in &prep.searches {
        if s.slots.len() < MIN_FILTER_SLOTS {
            continue;
        }
        totals[s.user_idx] += 1;
        for f in 0..N_FEATURES {
            let all_on = s.slots.iter().all(|slot| {
                let v = if f < 13 {
                    slot.x2[1 + f] // matches then amenities
                } else {
                    slot.x1[3 + (f - 13)] // district dummies
                };
                v == 1.0
            });
            if all_on {
                counts[s.user_idx][f] += 1.0;
            }
        }
    }

    let mut index = Vec::new();
    let mut features = Vec::new();
    for u in 0..n_users {
        if totals[u] == 0 {
            continue;
        }
        let mut row = counts[u];
        for v in row.iter_mut() {
            *v = 100.0 * *v / totals[u] as f64;
        }
        index.push(u);
        features.push(row);
    }
    (index, features)
}

fn l1(a: &[f64; N_FEATURES], b: &[f64; N_FEATURES]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct KMedoidsResult {
    /// Row indices of the medoids.
    pub medoids: Vec<usize>,
    /// Cluster id per row.
    pub assignment: Vec<usize>,
    pub cost: f64,
    /// Total cost after the build phase and after each accepted swap.
    pub cost_trace: Vec<f64>,
}

fn assign_and_cost(points: &[[f64; N_FEATURES]], medoids: &[usize]) -> (Vec<usize>, f64) {
    let mut assignment = vec![0usize; points.len()];
    let mut cost = 0.0;
    for (i, p) in points.iter().enumerate() {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (c, &m) in medoids.iter().enumerate() {
            let d = l1(p, &points[m]);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        assignment[i] = best;
        cost += best_d;
    }
    (assignment, cost)
}

/// PAM k-medoids under L1: greedy build, then best-improvement swaps until
/// no swap lowers the total cost. Ties break toward the lower row index, so
/// the result is deterministic.
pub fn k_medoids(points: &[[f64; N_FEATURES]], k: usize) -> Result<KMedoidsResult> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::Usage(format!(
            "k = {k} must be between 1 and the number of rows ({n})"
        )));
    }

    // build: start from the 1-medoid minimizer, then add the point that
    // reduces total cost the most
    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    let mut nearest = vec![f64::INFINITY; n];
    for _ in 0..k {
        let mut best_point = usize::MAX;
        let mut best_cost = f64::INFINITY;
        for cand in 0..n {
            if medoids.contains(&cand) {
                continue;
            }
            let cost: f64 = (0..n)
                .map(|i| nearest[i].min(l1(&points[i], &points[cand])))
                .sum();
            if cost < best_cost {
                best_cost = cost;
                best_point = cand;
            }
        }
        medoids.push(best_point);
        for i in 0..n {
            nearest[i] = nearest[i].min(l1(&points[i], &points[best_point]));
        }
    }

    let (_, mut cost) = assign_and_cost(points, &medoids);
    let mut cost_trace = vec![cost];

    // swap phase
    loop {
        let mut best_swap: Option<(usize, usize, f64)> = None;
        for ci in 0..k {
            for cand in 0..n {
                if medoids.contains(&cand) {
                    continue;
                }
                let mut trial = medoids.clone();
                trial[ci] = cand;
                let (_, c) = assign_and_cost(points, &trial);
                if c + 1e-12 < cost && best_swap.map_or(true, |(_, _, bc)| c < bc) {
                    best_swap = Some((ci, cand, c));
                }
            }
        }
        match best_swap {
            Some((ci, cand, c)) => {
                medoids[ci] = cand;
                cost = c;
                cost_trace.push(cost);
            }
            None => break,
        }
    }

    medoids.sort();
    let (assignment, cost) = assign_and_cost(points, &medoids);
    Ok(KMedoidsResult {
        medoids,
        assignment,
        cost,
        cost_trace,
    })
}

/// One cluster's profile and refit request model.
#[derive(Debug, Clone, Serialize)]
pub struct ClusterFit {
    pub cluster: usize,
    pub n_users: usize,
    pub n_searches: usize,
    pub mean_features: Vec<f64>,
    pub request: Option<RequestParams>,
}

/// Refit the request model separately on each cluster's searches. Clusters
/// whose subsample cannot identify the model carry no fit.
pub fn fit_by_cluster(
    prep: &Prepared,
    row_index: &[usize],
    clustering: &KMedoidsResult,
    k: usize,
) -> Result<Vec<ClusterFit>> {
    let mut user_cluster = vec![usize::MAX; prep.users.len()];
    for (row, &u) in row_index.iter().enumerate() {
        user_cluster[u] = clustering.assignment[row];
    }

    let (_, features) = filter_features(prep);
    let mut fits = Vec::with_capacity(k);
    for c in 0..k {
        let members: Vec<usize> = (0..clustering.assignment.len())
            .filter(|&r| clustering.assignment[r] == c)
            .collect();
        let mut mean_features = vec![0.0; N_FEATURES];
        for &r in &members {
            for (m, v) in mean_features.iter_mut().zip(&features[r]) {
                *m += v;
            }
        }
        if !members.is_empty() {
            for m in mean_features.iter_mut() {
                *m /= members.len() as f64;
            }
        }

        let mut sub = prep.clone();
        sub.searches = prep
            .searches
            .iter()
            .filter(|s| user_cluster[s.user_idx] == c)
            .cloned()
            .collect();
        let n_searches = sub.searches.len();
        let request = estimate::fit_request_model(&sub).ok();
        fits.push(ClusterFit {
            cluster: c,
            n_users: members.len(),
            n_searches,
            mean_features,
            request,
        });
    }
    Ok(fits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(v: f64) -> [f64; N_FEATURES] {
        [v; N_FEATURES]
    }

    #[test]
    fn k1_matches_brute_force_medoid() {
        let points: Vec<[f64; N_FEATURES]> =
            [1.0, 4.0, 5.0, 6.0, 20.0].iter().map(|&v| point(v)).collect();
        let result = k_medoids(&points, 1).unwrap();
        // brute force: pick the row minimizing total L1 distance
        let mut best = 0;
        let mut best_cost = f64::INFINITY;
        for m in 0..points.len() {
            let cost: f64 = points.iter().map(|p| l1(p, &points[m])).sum();
            if cost < best_cost {
                best_cost = cost;
                best = m;
            }
        }
        assert_eq!(result.medoids, vec![best]);
        assert!((result.cost - best_cost).abs() < 1e-12);
    }

    #[test]
    fn recovers_three_planted_clusters() {
        // tight groups around 0, 50 and 100 percent
        let mut points = Vec::new();
        let mut truth = Vec::new();
        for (c, center) in [0.0, 50.0, 100.0].iter().enumerate() {
            for i in 0..20 {
                let jitter = (i % 5) as f64 - 2.0;
                points.push(point(center + jitter));
                truth.push(c);
            }
        }
        let result = k_medoids(&points, 3).unwrap();
        // purity: best bijection between found and planted labels
        let mut correct = 0;
        for perm in [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ] {
            let hits = result
                .assignment
                .iter()
                .zip(&truth)
                .filter(|(&a, &t)| perm[a] == t)
                .count();
            correct = correct.max(hits);
        }
        assert!(
            correct as f64 / points.len() as f64 >= 0.9,
            "purity {}/{}",
            correct,
            points.len()
        );
    }

    #[test]
    fn k_equals_n_has_zero_cost() {
        let points: Vec<[f64; N_FEATURES]> =
            [3.0, 8.0, 15.0, 42.0].iter().map(|&v| point(v)).collect();
        let result = k_medoids(&points, 4).unwrap();
        assert_eq!(result.cost, 0.0);
        assert_eq!(result.medoids, vec![0, 1, 2, 3]);
    }

    #[test]
    fn swap_phase_never_raises_cost() {
        let points: Vec<[f64; N_FEATURES]> = (0..30)
            .map(|i| point((i * 7 % 13) as f64 * 8.0))
            .collect();
        let result = k_medoids(&points, 3).unwrap();
        for w in result.cost_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn invalid_k_is_a_usage_error() {
        let points = vec![point(1.0), point(2.0)];
        assert!(k_medoids(&points, 0).is_err());
        assert!(k_medoids(&points, 3).is_err());
    }

    #[test]
    fn filter_features_from_synthetic_logs() {
        use crate::synth::{generate_market, simulate_behavior, MarketConfig};
        let config = MarketConfig {
            n_users: 40,
            n_rooms: 300,
            searches_per_user_mean: 8.0,
            seed: 19,
            ..Default::default()
        };
        let (users, listings) = generate_market(&config).unwrap();
        let (searches, meta) = simulate_behavior(&users, &listings, &config).unwrap();
        let prep = estimate::prepare(
            &users,
            &listings,
            &searches,
            &meta.winsor_caps,
            config.baseline_district,
        )
        .unwrap();
        let (index, features) = filter_features(&prep);
        assert_eq!(index.len(), features.len());
        assert!(!features.is_empty());
        for row in &features {
            for v in row {
                assert!((0.0..=100.0).contains(v), "share {v}");
            }
        }
        // candidate sets are uniform draws over many rooms, so the district
        // shares should rarely be 100
        let all_hundred = features
            .iter()
            .all(|r| r[13..].iter().any(|&v| v == 100.0));
        assert!(!all_hundred);
    }
}
