//! Synthetic market generation and status-quo behavior simulation.
//!
//! The generator draws users and listings from configured marginals, builds
//! searches under the platform's status-quo ranking (registered landlord,
//! recency tier, one tie-breaking draw shared across all users), and
//! simulates clicks and requests from latent Gumbel indices with thresholds
//! calibrated to target marginal rates.

use chrono::{Duration, NaiveDate, TimeZone, Utc};
use rand::Rng;
use rayon::prelude::*;

use crate::domain::{
    self, Amenities, District, Gender, Listing, OccupationPref, SearchLog, SearchResultSlot,
    UserProfile, WinsorCaps, N_AMENITIES, N_DISTRICTS, X2_DIM,
};
use crate::error::{Error, Result};
use crate::estimate::{self, CLICK_DIM, REQ_DIM};
use crate::rngutil::{self, gumbel_from_uniform, tag};

#[derive(Debug, Clone)]
pub struct MarketConfig {
    pub n_users: usize,
    pub n_rooms: usize,
    pub searches_per_user_mean: f64,
    pub results_per_search_mean: f64,
    pub page_capacity: usize,

    pub price_mean: f64,
    pub price_sd: f64,
    pub missing_tenants_rate: f64,
    pub n_tenants_mean: f64,
    pub amenity_freqs: [f64; N_AMENITIES],
    pub district_weights: [f64; N_DISTRICTS],
    pub baseline_district: usize,
    pub registered_rate: f64,
    pub pref_age_rate: f64,
    pub pref_gender_rate: f64,
    pub pref_gender_female_share: f64,
    pub pref_occupation_rate: f64,
    pub pref_no_students_share: f64,

    pub user_female_rate: f64,
    pub user_student_rate: f64,
    pub user_worker_rate: f64,
    pub user_age_min: u32,
    pub user_age_max: u32,

    pub epoch: NaiveDate,
    pub publish_window_days: u32,
    pub search_window_days: u32,
    pub winsor_pct: f64,

    pub target_click_rate: f64,
    pub target_request_rate: f64,

    pub true_request_params: Vec<f64>,
    pub true_click_params: Vec<f64>,

    pub seed: u64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        let mut req = vec![0.0; REQ_DIM];
        req[estimate::REQ_PRICE] = -0.001;
        req[estimate::REQ_GENDER_MATCH] = 0.5;
        req[estimate::REQ_AMENITY0 + 1] = 0.1; // balcony
        let mut click = vec![0.0; CLICK_DIM];
        click[estimate::CLICK_POS] = -0.07;
        click[estimate::CLICK_POS_SQ] = 0.001;
        click[estimate::CLICK_POS1] = 0.1;
        click[estimate::CLICK_U] = 0.3;
        MarketConfig {
            n_users: 200,
            n_rooms: 2000,
            searches_per_user_mean: 20.0,
            results_per_search_mean: 12.0,
            page_capacity: 20,
            price_mean: 400.0,
            price_sd: 103.0,
            missing_tenants_rate: 0.132,
            n_tenants_mean: 1.9,
            amenity_freqs: [
                0.241, 0.417, 0.187, 0.142, 0.653, 0.492, 0.470, 0.278, 0.614, 0.214,
            ],
            district_weights: [0.130, 0.198, 0.263, 0.124, 0.160, 0.125],
            baseline_district: 5,
            registered_rate: 0.5,
            pref_age_rate: 0.80,
            pref_gender_rate: 0.272,
            pref_gender_female_share: 0.85,
            pref_occupation_rate: 0.254,
            pref_no_students_share: 0.894,
            user_female_rate: 0.514,
            user_student_rate: 0.346,
            user_worker_rate: 0.810,
            user_age_min: 18,
            user_age_max: 45,
            epoch: NaiveDate::from_ymd_opt(2019, 6, 1).unwrap(),
            publish_window_days: 365,
            search_window_days: 30,
            winsor_pct: 0.99,
            target_click_rate: 0.043,
            target_request_rate: 0.095,
            true_request_params: req,
            true_click_params: click,
            seed: 1,
        }
    }
}

impl MarketConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_rooms == 0 {
            return Err(Error::Usage("n_users and n_rooms must be positive".into()));
        }
        if self.results_per_search_mean > self.page_capacity as f64 {
            return Err(Error::Usage(
                "results_per_search_mean exceeds page_capacity".into(),
            ));
        }
        let freqs = self
            .amenity_freqs
            .iter()
            .chain(self.district_weights.iter())
            .chain([
                &self.missing_tenants_rate,
                &self.registered_rate,
                &self.pref_age_rate,
                &self.pref_gender_rate,
                &self.pref_gender_female_share,
                &self.pref_occupation_rate,
                &self.pref_no_students_share,
                &self.user_female_rate,
                &self.user_student_rate,
                &self.user_worker_rate,
                &self.target_click_rate,
                &self.target_request_rate,
            ]);
        for f in freqs {
            if !(0.0..=1.0).contains(f) {
                return Err(Error::Usage(format!("frequency {f} outside [0, 1]")));
            }
        }
        if self.baseline_district >= N_DISTRICTS {
            return Err(Error::Usage("baseline_district out of range".into()));
        }
        if self.true_request_params.len() != REQ_DIM {
            return Err(Error::Usage(format!(
                "true_request_params must have {REQ_DIM} entries"
            )));
        }
        if self.true_click_params.len() != CLICK_DIM {
            return Err(Error::Usage(format!(
                "true_click_params must have {CLICK_DIM} entries"
            )));
        }
        Ok(())
    }
}

fn sample_poisson(rng: &mut impl Rng, mean: f64) -> usize {
    // inverse-transform; means here are small
    let l = (-mean).exp();
    let mut k = 0usize;
    let mut p = 1.0;
    loop {
        p *= rng.gen::<f64>();
        if p <= l || k > 10_000 {
            return k;
        }
        k += 1;
    }
}

fn sample_normal(rng: &mut impl Rng, mean: f64, sd: f64) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    mean + sd * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn sample_categorical(rng: &mut impl Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Deterministic market draw: users and listings from configured marginals.
pub fn generate_market(config: &MarketConfig) -> Result<(Vec<UserProfile>, Vec<Listing>)> {
    config.validate()?;
    let users: Vec<UserProfile> = (0..config.n_users)
        .into_par_iter()
        .map(|i| {
            let mut rng = rngutil::stream(config.seed, &[tag::USER, i as u64]);
            UserProfile {
                user_id: format!("u{i:06}"),
                age: rng.gen_range(config.user_age_min..=config.user_age_max),
                female: rng.gen::<f64>() < config.user_female_rate,
                student: rng.gen::<f64>() < config.user_student_rate,
                worker: rng.gen::<f64>() < config.user_worker_rate,
            }
        })
        .collect();

    let listings: Vec<Listing> = (0..config.n_rooms)
        .into_par_iter()
        .map(|j| {
            let mut rng = rngutil::stream(config.seed, &[tag::ROOM, j as u64]);
            let price = sample_normal(&mut rng, config.price_mean, config.price_sd)
                .max(0.0)
                .round();
            let n_tenants = if rng.gen::<f64>() < config.missing_tenants_rate {
                None
            } else {
                Some(sample_poisson(&mut rng, config.n_tenants_mean) as u32)
            };
            let published_offset = rng.gen_range(0..=config.publish_window_days as i64);
            let mut amenities = [false; N_AMENITIES];
            for (a, f) in amenities.iter_mut().zip(&config.amenity_freqs) {
                *a = rng.gen::<f64>() < *f;
            }
            let district = District::from_index(sample_categorical(&mut rng, &config.district_weights))
                .expect("district index in range");
            let (pref_min_age, pref_max_age) = if rng.gen::<f64>() < config.pref_age_rate {
                let lo = rng.gen_range(18..=24);
                (Some(lo), Some(lo + rng.gen_range(10..=20)))
            } else {
                (None, None)
            };
            let pref_gender = if rng.gen::<f64>() < config.pref_gender_rate {
                Some(if rng.gen::<f64>() < config.pref_gender_female_share {
                    Gender::Female
                } else {
                    Gender::Male
                })
            } else {
                None
            };
            let pref_occupation = if rng.gen::<f64>() < config.pref_occupation_rate {
                Some(if rng.gen::<f64>() < config.pref_no_students_share {
                    OccupationPref::NoStudents
                } else {
                    OccupationPref::StudentsOnly
                })
            } else {
                None
            };
            Listing {
                room_id: format!("r{j:06}"),
                price,
                n_tenants,
                first_published: config.epoch - Duration::days(published_offset),
                registered_landlord: rng.gen::<f64>() < config.registered_rate,
                amenities: Amenities::from_array(amenities),
                district,
                pref_min_age,
                pref_max_age,
                pref_gender,
                pref_occupation,
            }
        })
        .collect();

    Ok((users, listings))
}

/// The per-room uniform draws that break ranking ties, fixed for a
/// generation epoch and shared across all users.
pub fn tiebreak_epoch(config: &MarketConfig) -> Vec<f64> {
    (0..config.n_rooms)
        .map(|j| rngutil::stream(config.seed, &[tag::TIEBREAK, j as u64]).gen::<f64>())
        .collect()
}

fn recency_tier(listing: &Listing, date: NaiveDate) -> u8 {
    let days = (date - listing.first_published).num_days();
    if days <= 7 {
        2
    } else if days <= 30 {
        1
    } else {
        0
    }
}

/// Status-quo order: registered landlords first, then recency tier, ties
/// broken by the shared per-room draw. Identical candidate sets produce
/// identical orders for every user within an epoch.
pub fn status_quo_rank(
    candidates: &[usize],
    listings: &[Listing],
    date: NaiveDate,
    tiebreak: &[f64],
) -> Vec<usize> {
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| {
        let la = &listings[a];
        let lb = &listings[b];
        lb.registered_landlord
            .cmp(&la.registered_landlord)
            .then(recency_tier(lb, date).cmp(&recency_tier(la, date)))
            .then(tiebreak[a].partial_cmp(&tiebreak[b]).unwrap())
    });
    order
}

/// Metadata the simulator records alongside the logs.
#[derive(Debug, Clone)]
pub struct SimMeta {
    pub winsor_caps: WinsorCaps,
    /// Unconditional means of the hidden covariates, used for the click
    /// index E[U | X1, pos] during generation.
    pub x2_means: [f64; X2_DIM],
    pub click_threshold: f64,
    pub request_threshold: f64,
}

struct ProtoSearch {
    user_idx: usize,
    timestamp_day: i64,
    rooms: Vec<usize>, // ordered by status-quo rank; position = index + 1
}

fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::INFINITY;
    }
    let idx = ((sorted.len() as f64 - 1.0) * q).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// Simulate click/request behavior for every user under the status-quo
/// ranking. Deterministic given the config seed, independent of worker count.
pub fn simulate_behavior(
    users: &[UserProfile],
    listings: &[Listing],
    config: &MarketConfig,
) -> Result<(Vec<SearchLog>, SimMeta)> {
    config.validate()?;
    let tiebreak = tiebreak_epoch(config);

    // structural pass: searches, candidate sets, status-quo positions
    let mut protos: Vec<ProtoSearch> = Vec::new();
    for i in 0..users.len() {
        let mut rng = rngutil::stream(config.seed, &[tag::N_SEARCHES, i as u64]);
        let n_searches = sample_poisson(&mut rng, config.searches_per_user_mean).max(1);
        for _ in 0..n_searches {
            protos.push(ProtoSearch {
                user_idx: i,
                timestamp_day: 0,
                rooms: Vec::new(),
            });
        }
    }
    protos.par_iter_mut().enumerate().for_each(|(gid, proto)| {
        let mut trng = rngutil::stream(config.seed, &[tag::SEARCH_TIME, gid as u64]);
        proto.timestamp_day = trng.gen_range(0..=config.search_window_days as i64);
        let date = config.epoch + Duration::days(proto.timestamp_day);
        let mut crng = rngutil::stream(config.seed, &[tag::CANDIDATES, gid as u64]);
        let n_s = sample_poisson(&mut crng, config.results_per_search_mean)
            .clamp(2, config.page_capacity.min(config.n_rooms));
        let candidates =
            rand::seq::index::sample(&mut crng, config.n_rooms, n_s).into_vec();
        proto.rooms = status_quo_rank(&candidates, listings, date, &tiebreak);
    });

    // winsor caps from the generated slot-level distributions
    let mut prices: Vec<f64> = Vec::new();
    let mut days: Vec<f64> = Vec::new();
    for proto in &protos {
        let date = config.epoch + Duration::days(proto.timestamp_day);
        for &room in &proto.rooms {
            prices.push(listings[room].price);
            days.push((date - listings[room].first_published).num_days() as f64);
        }
    }
    prices.sort_by(|a, b| a.partial_cmp(b).unwrap());
    days.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let caps = WinsorCaps {
        price: empirical_quantile(&prices, config.winsor_pct),
        days_since_published: empirical_quantile(&days, config.winsor_pct),
    };

    // covariate pass
    struct SlotCov {
        x1: [f64; domain::X1_DIM],
        x2: [f64; X2_DIM],
    }
    let covs: Vec<Vec<SlotCov>> = protos
        .par_iter()
        .map(|proto| {
            let ts = Utc
                .from_utc_datetime(
                    &(config.epoch + Duration::days(proto.timestamp_day))
                        .and_hms_opt(12, 0, 0)
                        .unwrap(),
                );
            proto
                .rooms
                .iter()
                .enumerate()
                .map(|(k, &room)| {
                    let cov = domain::derive_covariates(
                        &users[proto.user_idx],
                        &listings[room],
                        ts,
                        (k + 1) as u32,
                        &caps,
                        config.baseline_district,
                    )
                    .expect("generated timestamps are consistent");
                    SlotCov {
                        x1: cov.x1,
                        x2: cov.x2,
                    }
                })
                .collect()
        })
        .collect();

    // unconditional x2 means (covariates are drawn independently, so these
    // are the true conditional means for the click index)
    let mut x2_means = [0.0; X2_DIM];
    let mut n_slots = 0usize;
    for search in &covs {
        for slot in search {
            for (m, v) in x2_means.iter_mut().zip(&slot.x2) {
                *m += v;
            }
            n_slots += 1;
        }
    }
    for m in x2_means.iter_mut() {
        *m /= n_slots as f64;
    }

    // latent indices with Gumbel shocks from per-slot streams
    let beta_req = &config.true_request_params;
    let beta_click = &config.true_click_params;
    let indices: Vec<(Vec<f64>, Vec<f64>)> = protos
        .par_iter()
        .enumerate()
        .map(|(gid, proto)| {
            let slots = &covs[gid];
            let mut click_idx = Vec::with_capacity(slots.len());
            let mut req_util = Vec::with_capacity(slots.len());
            for (k, slot) in slots.iter().enumerate() {
                let pos = (k + 1) as f64;
                let u_det = estimate::request_index(&slot.x1, &slot.x2, beta_req);
                let eu = estimate::request_index(&slot.x1, &x2_means, beta_req);
                let i_det = estimate::click_index_from_parts(pos, eu, beta_click);
                let mut krng =
                    rngutil::stream(config.seed, &[tag::CLICK_SHOCK, gid as u64, k as u64]);
                let mut rrng =
                    rngutil::stream(config.seed, &[tag::REQUEST_SHOCK, gid as u64, k as u64]);
                click_idx.push(i_det + gumbel_from_uniform(krng.gen()));
                req_util.push(u_det + gumbel_from_uniform(rrng.gen()));
            }
            let _ = proto;
            (click_idx, req_util)
        })
        .collect();

    // thresholds calibrated to the target marginal rates
    let mut all_click: Vec<f64> = indices.iter().flat_map(|(c, _)| c.iter().copied()).collect();
    all_click.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let click_threshold = empirical_quantile(&all_click, 1.0 - config.target_click_rate);

    let mut clicked_utils: Vec<f64> = Vec::new();
    for (clicks, utils) in &indices {
        for (c, u) in clicks.iter().zip(utils) {
            if *c > click_threshold {
                clicked_utils.push(*u);
            }
        }
    }
    clicked_utils.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let request_threshold = empirical_quantile(&clicked_utils, 1.0 - config.target_request_rate);

    let searches: Vec<SearchLog> = protos
        .iter()
        .enumerate()
        .map(|(gid, proto)| {
            let (clicks, utils) = &indices[gid];
            let ts = Utc.from_utc_datetime(
                &(config.epoch + Duration::days(proto.timestamp_day))
                    .and_hms_opt(12, 0, 0)
                    .unwrap(),
            );
            SearchLog {
                search_id: format!("s{gid:08}"),
                user_id: users[proto.user_idx].user_id.clone(),
                timestamp: ts,
                slots: proto
                    .rooms
                    .iter()
                    .enumerate()
                    .map(|(k, &room)| {
                        let clicked = clicks[k] > click_threshold;
                        SearchResultSlot {
                            room_id: listings[room].room_id.clone(),
                            position: (k + 1) as u32,
                            clicked,
                            requested: clicked && utils[k] > request_threshold,
                        }
                    })
                    .collect(),
            }
        })
        .collect();

    Ok((
        searches,
        SimMeta {
            winsor_caps: caps,
            x2_means,
            click_threshold,
            request_threshold,
        },
    ))
}
