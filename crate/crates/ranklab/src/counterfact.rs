//! Counterfactual ranking policies and choice prediction.
//!
//! A policy reorders each search's result slots; predicted clicks and
//! requests then keep the observed per-search counts fixed and reassign them
//! to the slots with the highest deterministic indices under the new order.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimate::{self, ClickParams, Prepared, PreparedSearch, ProjectionModel, RequestParams};
use crate::rngutil::{self, tag};

/// Reference position at which rooms are scored for preference ranking.
/// Scoring must not depend on the slot's current position or reranking would
/// not be well defined.
pub const PREF_SCORE_POSITION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankingPolicy {
    StatusQuo,
    Personalized,
    Random,
    /// Convex blend of preference rank and random rank; `Blend(1.0)` is
    /// personalized, `Blend(0.0)` is random.
    Blend(f64),
}

impl FromStr for RankingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<RankingPolicy> {
        match s {
            "statusquo" => Ok(RankingPolicy::StatusQuo),
            "personalized" => Ok(RankingPolicy::Personalized),
            "random" => Ok(RankingPolicy::Random),
            _ => {
                if let Some(rest) = s.strip_prefix("blend:") {
                    let alpha: f64 = rest
                        .parse()
                        .map_err(|_| Error::Usage(format!("invalid blend weight {rest:?}")))?;
                    if !(0.0..=1.0).contains(&alpha) {
                        return Err(Error::Usage(format!(
                            "blend weight {alpha} outside [0, 1]"
                        )));
                    }
                    Ok(RankingPolicy::Blend(alpha))
                } else {
                    Err(Error::Usage(format!(
                        "unknown ranking policy {s:?} (expected statusquo, personalized, random or blend:A)"
                    )))
                }
            }
        }
    }
}

impl std::fmt::Display for RankingPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RankingPolicy::StatusQuo => write!(f, "statusquo"),
            RankingPolicy::Personalized => write!(f, "personalized"),
            RankingPolicy::Random => write!(f, "random"),
            RankingPolicy::Blend(a) => write!(f, "blend:{a}"),
        }
    }
}

/// Preference ranks: 1 = highest score. Ties broken by lower slot index so
/// the ranking is a strict order.
fn pref_ranks(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut ranks = vec![0; scores.len()];
    for (r, &slot) in order.iter().enumerate() {
        ranks[slot] = r + 1;
    }
    ranks
}

/// Uniform random ranks for one search, deterministic in (seed, draw, gid).
fn random_ranks(n: usize, seed: u64, draw: u64, gid: u64) -> Vec<usize> {
    let mut slots: Vec<usize> = (0..n).collect();
    let mut rng = rngutil::stream(seed, &[tag::RANDOM_RANK, draw, gid]);
    slots.shuffle(&mut rng);
    let mut ranks = vec![0; n];
    for (r, &slot) in slots.iter().enumerate() {
        ranks[slot] = r + 1;
    }
    ranks
}

/// New slot order (original slot indices in new position order) under a
/// policy. `scores` are the per-slot preference scores; `gid` identifies the
/// search within the draw.
pub fn rerank(
    policy: RankingPolicy,
    n_slots: usize,
    scores: &[f64],
    seed: u64,
    draw: u64,
    gid: u64,
) -> Vec<usize> {
    let alpha = match policy {
        RankingPolicy::StatusQuo => return (0..n_slots).collect(),
        RankingPolicy::Personalized => 1.0,
        RankingPolicy::Random => 0.0,
        RankingPolicy::Blend(a) => a,
    };
    let pref = pref_ranks(scores);
    let rand = random_ranks(n_slots, seed, draw, gid);
    let mut order: Vec<usize> = (0..n_slots).collect();
    order.sort_by(|&a, &b| {
        let sa = alpha * pref[a] as f64 + (1.0 - alpha) * rand[a] as f64;
        let sb = alpha * pref[b] as f64 + (1.0 - alpha) * rand[b] as f64;
        sa.partial_cmp(&sb).unwrap().then(rand[a].cmp(&rand[b]))
    });
    order
}

/// Predicted outcomes for one search under a counterfactual order. All
/// vectors are aligned with the original slot indices.
#[derive(Debug, Clone)]
pub struct PredictedSearch {
    pub new_position: Vec<u32>,
    pub clicked: Vec<bool>,
    pub requested: Vec<bool>,
    /// Expected request utility evaluated at the new position.
    pub utility: Vec<f64>,
}

impl PredictedSearch {
    /// Total expected utility over predicted requests.
    pub fn request_utility(&self) -> f64 {
        self.requested
            .iter()
            .zip(&self.utility)
            .filter(|(r, _)| **r)
            .map(|(_, u)| u)
            .sum()
    }
}

fn predict_one(
    search: &PreparedSearch,
    z: &[f64; 4],
    order: &[usize],
    request_params: &RequestParams,
    projection: &ProjectionModel,
    click_params: &ClickParams,
) -> PredictedSearch {
    let n = search.slots.len();
    let mut new_position = vec![0u32; n];
    for (k, &slot) in order.iter().enumerate() {
        new_position[slot] = (k + 1) as u32;
    }

    let utility: Vec<f64> = (0..n)
        .map(|s| {
            estimate::expected_utility(
                &search.slots[s].x1,
                new_position[s],
                z,
                request_params,
                projection,
            )
        })
        .collect();
    let click_index: Vec<f64> = (0..n)
        .map(|s| {
            estimate::click_index_from_parts(
                new_position[s] as f64,
                utility[s],
                &click_params.beta,
            )
        })
        .collect();

    // hold the observed per-search counts fixed
    let n_clicks = search.slots.iter().filter(|s| s.clicked).count();
    let n_requests = search.slots.iter().filter(|s| s.requested).count();

    let mut by_click: Vec<usize> = (0..n).collect();
    by_click.sort_by(|&a, &b| {
        click_index[b]
            .partial_cmp(&click_index[a])
            .unwrap()
            .then(utility[b].partial_cmp(&utility[a]).unwrap())
            .then(search.slots[a].room_idx.cmp(&search.slots[b].room_idx))
    });
    let mut clicked = vec![false; n];
    for &s in by_click.iter().take(n_clicks) {
        clicked[s] = true;
    }

    let mut by_utility: Vec<usize> = (0..n).filter(|&s| clicked[s]).collect();
    by_utility.sort_by(|&a, &b| {
        utility[b]
            .partial_cmp(&utility[a])
            .unwrap()
            .then(search.slots[a].room_idx.cmp(&search.slots[b].room_idx))
    });
    let mut requested = vec![false; n];
    for &s in by_utility.iter().take(n_requests) {
        requested[s] = true;
    }

    PredictedSearch {
        new_position,
        clicked,
        requested,
        utility,
    }
}

/// Rerank every search under `policy` and predict clicks and requests.
/// Deterministic in (seed, draw) and independent of thread count.
pub fn predict_choices(
    prep: &Prepared,
    request_params: &RequestParams,
    projection: &ProjectionModel,
    click_params: &ClickParams,
    policy: RankingPolicy,
    seed: u64,
    draw: u64,
) -> Vec<PredictedSearch> {
    prep.searches
        .par_iter()
        .enumerate()
        .map(|(gid, search)| {
            let z = prep.users[search.user_idx].z();
            let scores: Vec<f64> = search
                .slots
                .iter()
                .map(|slot| {
                    estimate::expected_utility(
                        &slot.x1,
                        PREF_SCORE_POSITION,
                        &z,
                        request_params,
                        projection,
                    )
                })
                .collect();
            let order = rerank(policy, search.slots.len(), &scores, seed, draw, gid as u64);
            predict_one(search, &z, &order, request_params, projection, click_params)
        })
        .collect()
}

/// Per-search random relabeling of room identities: each slot gets a
/// distinct room index drawn uniformly without replacement from the
/// universe. Relabeling differs across searches, which destroys cross-user
/// preference correlation while leaving every within-search utility
/// untouched.
pub fn garble_search(
    n_slots: usize,
    n_rooms: usize,
    seed: u64,
    draw: u64,
    gid: u64,
) -> Result<Vec<usize>> {
    if n_slots > n_rooms {
        return Err(Error::Validation(format!(
            "room universe of size {n_rooms} smaller than a search with {n_slots} slots"
        )));
    }
    let mut rng = rngutil::stream(seed, &[tag::GARBLE, draw, gid]);
    Ok(rand::seq::index::sample(&mut rng, n_rooms, n_slots).into_vec())
}

/// Requests per room implied by a set of predictions. With `garble`, the
/// tally runs over per-search relabeled room identities; utilities are
/// computed on the original rooms, so welfare is untouched.
pub fn request_counts(
    prep: &Prepared,
    predictions: &[PredictedSearch],
    n_rooms: usize,
    garble: Option<(u64, u64)>,
) -> Result<Vec<f64>> {
    let mut counts = vec![0.0; n_rooms];
    for (gid, (search, pred)) in prep.searches.iter().zip(predictions).enumerate() {
        let relabel = match garble {
            Some((seed, draw)) => Some(garble_search(
                search.slots.len(),
                n_rooms,
                seed,
                draw,
                gid as u64,
            )?),
            None => None,
        };
        for (i, (slot, &req)) in search.slots.iter().zip(&pred.requested).enumerate() {
            if req {
                let room = match &relabel {
                    Some(map) => map[i],
                    None => slot.room_idx,
                };
                counts[room] += 1.0;
            }
        }
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn policy_parsing() {
        assert_eq!(
            "statusquo".parse::<RankingPolicy>().unwrap(),
            RankingPolicy::StatusQuo
        );
        assert_eq!(
            "personalized".parse::<RankingPolicy>().unwrap(),
            RankingPolicy::Personalized
        );
        assert_eq!(
            "random".parse::<RankingPolicy>().unwrap(),
            RankingPolicy::Random
        );
        assert_eq!(
            "blend:0.25".parse::<RankingPolicy>().unwrap(),
            RankingPolicy::Blend(0.25)
        );
        assert!("blend:1.5".parse::<RankingPolicy>().is_err());
        assert!("blend:x".parse::<RankingPolicy>().is_err());
        assert!("topk".parse::<RankingPolicy>().is_err());
    }

    #[test]
    fn blend_endpoints_match_pure_policies() {
        let scores = vec![0.3, -0.1, 0.9, 0.3, 0.0];
        for gid in 0..50u64 {
            let n = scores.len();
            let pers = rerank(RankingPolicy::Personalized, n, &scores, 42, 0, gid);
            let b1 = rerank(RankingPolicy::Blend(1.0), n, &scores, 42, 0, gid);
            assert_eq!(pers, b1);
            let rand = rerank(RankingPolicy::Random, n, &scores, 42, 0, gid);
            let b0 = rerank(RankingPolicy::Blend(0.0), n, &scores, 42, 0, gid);
            assert_eq!(rand, b0);
        }
    }

    #[test]
    fn personalized_sorts_by_score_descending() {
        let scores = vec![0.1, 0.5, -0.2, 0.5];
        let order = rerank(RankingPolicy::Personalized, 4, &scores, 1, 0, 0);
        // ties (slots 1 and 3) broken by slot index
        assert_eq!(order, vec![1, 3, 0, 2]);
    }

    #[test]
    fn statusquo_is_identity() {
        let scores = vec![5.0, 1.0, 3.0];
        assert_eq!(
            rerank(RankingPolicy::StatusQuo, 3, &scores, 1, 0, 0),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn random_orders_are_uniform_over_permutations() {
        // 3 slots -> 6 permutations; frequency of each should be near 1/6
        let scores = vec![0.0; 3];
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        let n_draws = 6000;
        for gid in 0..n_draws {
            let order = rerank(RankingPolicy::Random, 3, &scores, 7, 0, gid);
            *counts.entry(order).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for (perm, c) in &counts {
            let f = *c as f64 / n_draws as f64;
            assert!(
                (f - 1.0 / 6.0).abs() < 0.02,
                "permutation {perm:?} frequency {f}"
            );
        }
    }

    #[test]
    fn blend_matches_naive_oracle() {
        // independent recomputation of the blend order
        let scores = vec![1.2, -0.4, 0.0, 0.7, 0.7, -1.1];
        let n = scores.len();
        for &alpha in &[0.1, 0.3, 0.5, 0.8] {
            for gid in 0..20u64 {
                let got = rerank(RankingPolicy::Blend(alpha), n, &scores, 99, 3, gid);

                let pref = pref_ranks(&scores);
                let rand = random_ranks(n, 99, 3, gid);
                let mut expect: Vec<(f64, usize, usize)> = (0..n)
                    .map(|s| (alpha * pref[s] as f64 + (1.0 - alpha) * rand[s] as f64, rand[s], s))
                    .collect();
                expect.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                let expect: Vec<usize> = expect.into_iter().map(|(_, _, s)| s).collect();
                assert_eq!(got, expect, "alpha {alpha} gid {gid}");
            }
        }
    }

    #[test]
    fn rerank_is_a_permutation() {
        let scores = vec![0.2, 0.2, 0.2, 0.9];
        for &policy in &[
            RankingPolicy::StatusQuo,
            RankingPolicy::Personalized,
            RankingPolicy::Random,
            RankingPolicy::Blend(0.4),
        ] {
            let mut order = rerank(policy, 4, &scores, 5, 1, 2);
            order.sort();
            assert_eq!(order, vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn garble_draws_distinct_rooms_per_search() {
        let m1 = garble_search(12, 100, 4, 7, 0).unwrap();
        let m2 = garble_search(12, 100, 4, 7, 0).unwrap();
        assert_eq!(m1, m2);
        let mut sorted = m1.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 12);
        assert!(sorted.iter().all(|&r| r < 100));
        // different searches get different relabelings
        assert_ne!(garble_search(12, 100, 4, 7, 1).unwrap(), m1);
        // universe too small is an error
        assert!(garble_search(5, 4, 1, 0, 0).is_err());
    }
}
