//! Two-stage estimation pipeline: request-utility fit, hidden-covariate
//! projection, expected-utility construction, click-propensity fit, and
//! euro-normalization of coefficients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::domain::{
    derive_covariates, Listing, SearchLog, UserProfile, WinsorCaps, AMENITY_NAMES, N_DISTRICTS,
    X1_DIM, X2_DIM,
};
use crate::error::{Error, Result};
use crate::optim;
use crate::tielogit::{self, ChoiceInstance};

// Request covariate row layout: x1 followed by x2.
pub const REQ_DIM: usize = X1_DIM + X2_DIM;
pub const REQ_PRICE: usize = 0;
pub const REQ_MISSING_TENANTS: usize = 1;
pub const REQ_N_TENANTS: usize = 2;
pub const REQ_DISTRICT0: usize = 3;
pub const REQ_DAYS: usize = X1_DIM;
pub const REQ_GENDER_MATCH: usize = X1_DIM + 1;
pub const REQ_AGE_MATCH: usize = X1_DIM + 2;
pub const REQ_OCC_MATCH: usize = X1_DIM + 3;
pub const REQ_AMENITY0: usize = X1_DIM + 4;

// Click covariate row layout: g(pos) = [pos, pos^2, 1(pos=1), 1(pos=2),
// 1(pos=3)], then the expected utility and its position interaction.
pub const CLICK_DIM: usize = 7;
pub const CLICK_POS: usize = 0;
pub const CLICK_POS_SQ: usize = 1;
pub const CLICK_POS1: usize = 2;
pub const CLICK_POS2: usize = 3;
pub const CLICK_POS3: usize = 4;
pub const CLICK_U: usize = 5;
pub const CLICK_POS_U: usize = 6;

pub fn request_covariate_names(baseline_district: usize) -> Vec<String> {
    let mut names = vec![
        "price".to_string(),
        "missing_n_tenants".to_string(),
        "n_tenants".to_string(),
    ];
    for d in 0..N_DISTRICTS {
        if d != baseline_district {
            names.push(format!("district_d{}", d + 1));
        }
    }
    names.push("days_since_published".into());
    names.push("gender_match".into());
    names.push("age_match".into());
    names.push("occupation_match".into());
    for a in AMENITY_NAMES {
        names.push(format!("amenity_{a}"));
    }
    names
}

pub fn click_covariate_names() -> Vec<String> {
    [
        "position",
        "position_sq",
        "pos_is_1",
        "pos_is_2",
        "pos_is_3",
        "utility",
        "utility_x_position",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Deterministic request-utility index for one slot.
pub fn request_index(x1: &[f64], x2: &[f64], beta: &[f64]) -> f64 {
    debug_assert_eq!(beta.len(), REQ_DIM);
    let mut v = 0.0;
    for (i, x) in x1.iter().enumerate() {
        v += x * beta[i];
    }
    for (i, x) in x2.iter().enumerate() {
        v += x * beta[X1_DIM + i];
    }
    v
}

pub fn g_position(pos: f64) -> [f64; 5] {
    [
        pos,
        pos * pos,
        (pos == 1.0) as u8 as f64,
        (pos == 2.0) as u8 as f64,
        (pos == 3.0) as u8 as f64,
    ]
}

/// Deterministic click index from position and expected utility.
pub fn click_index_from_parts(pos: f64, utility: f64, beta: &[f64]) -> f64 {
    debug_assert_eq!(beta.len(), CLICK_DIM);
    let g = g_position(pos);
    g.iter().zip(&beta[..5]).map(|(a, b)| a * b).sum::<f64>()
        + utility * beta[CLICK_U]
        + pos * utility * beta[CLICK_POS_U]
}

/// One search-result slot with covariates derived and flags attached.
#[derive(Debug, Clone)]
pub struct PreparedSlot {
    pub room_idx: usize,
    pub position: u32,
    pub x1: [f64; X1_DIM],
    pub x2: [f64; X2_DIM],
    pub clicked: bool,
    pub requested: bool,
}

#[derive(Debug, Clone)]
pub struct PreparedSearch {
    pub search_id: String,
    pub user_idx: usize,
    pub slots: Vec<PreparedSlot>,
}

/// Covariate-resolved dataset shared by estimation, metrics and clustering.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub users: Vec<UserProfile>,
    pub room_ids: Vec<String>,
    pub room_prices: Vec<f64>,
    pub searches: Vec<PreparedSearch>,
    pub baseline_district: usize,
}

pub fn prepare(
    users: &[UserProfile],
    listings: &[Listing],
    searches: &[SearchLog],
    caps: &WinsorCaps,
    baseline_district: usize,
) -> Result<Prepared> {
    let user_idx: HashMap<&str, usize> = users
        .iter()
        .enumerate()
        .map(|(i, u)| (u.user_id.as_str(), i))
        .collect();
    let room_idx: HashMap<&str, usize> = listings
        .iter()
        .enumerate()
        .map(|(i, l)| (l.room_id.as_str(), i))
        .collect();

    let mut prepared = Vec::with_capacity(searches.len());
    for s in searches {
        let &ui = user_idx.get(s.user_id.as_str()).ok_or_else(|| {
            Error::Validation(format!("search {} references unknown user {}", s.search_id, s.user_id))
        })?;
        let mut slots = Vec::with_capacity(s.slots.len());
        for slot in &s.slots {
            let &ri = room_idx.get(slot.room_id.as_str()).ok_or_else(|| {
                Error::Validation(format!(
                    "search {} references unknown room {}",
                    s.search_id, slot.room_id
                ))
            })?;
            let cov = derive_covariates(
                &users[ui],
                &listings[ri],
                s.timestamp,
                slot.position,
                caps,
                baseline_district,
            )?;
            slots.push(PreparedSlot {
                room_idx: ri,
                position: slot.position,
                x1: cov.x1,
                x2: cov.x2,
                clicked: slot.clicked,
                requested: slot.requested,
            });
        }
        slots.sort_by_key(|p| p.position);
        prepared.push(PreparedSearch {
            search_id: s.search_id.clone(),
            user_idx: ui,
            slots,
        });
    }

    Ok(Prepared {
        users: users.to_vec(),
        room_ids: listings.iter().map(|l| l.room_id.clone()).collect(),
        room_prices: listings.iter().map(|l| l.price).collect(),
        searches: prepared,
    baseline_district,
    })
}

fn request_row(slot: &PreparedSlot) -> Vec<f64> {
    let mut row = Vec::with_capacity(REQ_DIM);
    row.extend_from_slice(&slot.x1);
    row.extend_from_slice(&slot.x2);
    row
}

/// Request-stage instances: the choice set is the clicked slots; chosen are
/// the requested ones. Degenerate searches are dropped.
pub fn request_instances(prep: &Prepared) -> Vec<ChoiceInstance> {
    prep.searches
        .iter()
        .filter_map(|s| {
            let chosen: Vec<Vec<f64>> = s
                .slots
                .iter()
                .filter(|p| p.requested)
                .map(request_row)
                .collect();
            let unchosen: Vec<Vec<f64>> = s
                .slots
                .iter()
                .filter(|p| p.clicked && !p.requested)
                .map(request_row)
                .collect();
            if chosen.is_empty() || unchosen.is_empty() {
                None
            } else {
                Some(ChoiceInstance { chosen, unchosen })
            }
        })
        .collect()
}

fn click_row(pos: f64, utility: f64) -> Vec<f64> {
    let g = g_position(pos);
    vec![g[0], g[1], g[2], g[3], g[4], utility, pos * utility]
}

/// Click-stage instances: the choice set is all slots; chosen are clicked.
pub fn click_instances(prep: &Prepared, utilities: &[Vec<f64>]) -> Vec<ChoiceInstance> {
    prep.searches
        .iter()
        .zip(utilities)
        .filter_map(|(s, us)| {
            let chosen: Vec<Vec<f64>> = s
                .slots
                .iter()
                .zip(us)
                .filter(|(p, _)| p.clicked)
                .map(|(p, &u)| click_row(p.position as f64, u))
                .collect();
            let unchosen: Vec<Vec<f64>> = s
                .slots
                .iter()
                .zip(us)
                .filter(|(p, _)| !p.clicked)
                .map(|(p, &u)| click_row(p.position as f64, u))
                .collect();
            if chosen.is_empty() || unchosen.is_empty() {
                None
            } else {
                Some(ChoiceInstance { chosen, unchosen })
            }
        })
        .collect()
}

/// Fitted coefficients for one stage, with observed-information SEs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedParams {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub loglik: f64,
    pub loglik_null: f64,
    pub pseudo_r2: f64,
    pub n_instances: usize,
    pub iterations: usize,
}

pub type RequestParams = FittedParams;
pub type ClickParams = FittedParams;

impl FittedParams {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.beta[i])
    }
}

fn check_identification(instances: &[ChoiceInstance], names: &[String]) -> Result<()> {
    let dim = names.len();
    let mut varies = vec![false; dim];
    for inst in instances {
        let rows = inst.chosen.iter().chain(&inst.unchosen);
        let mut first: Option<&Vec<f64>> = None;
        for row in rows {
            match first {
                None => first = Some(row),
                Some(f) => {
                    for j in 0..dim {
                        if (row[j] - f[j]).abs() > 1e-12 {
                            varies[j] = true;
                        }
                    }
                }
            }
        }
        if varies.iter().all(|v| *v) {
            return Ok(());
        }
    }
    let flat: Vec<&str> = names
        .iter()
        .zip(&varies)
        .filter(|(_, v)| !**v)
        .map(|(n, _)| n.as_str())
        .collect();
    Err(Error::Numerical(format!(
        "covariates not identified (constant within every choice set): {}",
        flat.join(", ")
    )))
}

fn fit_stage(instances: &[ChoiceInstance], names: Vec<String>) -> Result<FittedParams> {
    if instances.is_empty() {
        return Err(Error::Validation(
            "no non-degenerate choice instances to fit".into(),
        ));
    }
    check_identification(instances, &names)?;
    let dim = names.len();
    let objective =
        |beta: &[f64]| -> Result<(f64, Vec<f64>)> { tielogit::log_likelihood_grad(instances, beta) };
    let loglik_null = tielogit::log_likelihood(instances, &vec![0.0; dim])?;
    let sol = optim::maximize(objective, &vec![0.0; dim], optim::DEFAULT_MAX_ITERS)?;
    let se = optim::observed_info_se(objective, &sol.x, 1e-5)?;
    Ok(FittedParams {
        names,
        beta: sol.x,
        se,
        loglik: sol.value,
        loglik_null,
        pseudo_r2: 1.0 - sol.value / loglik_null,
        n_instances: instances.len(),
        iterations: sol.iterations,
    })
}

/// Maximum-likelihood fit of the request-utility coefficients.
pub fn fit_request_model(prep: &Prepared) -> Result<RequestParams> {
    let instances = request_instances(prep);
    fit_stage(&instances, request_covariate_names(prep.baseline_district))
}

// Projection regressors: intercept, x1, pos, pos^2, x1*pos, Z, Z*pos.
pub const PROJ_DIM: usize = 1 + X1_DIM + 2 + X1_DIM + 4 + 4;

fn projection_regressors(x1: &[f64; X1_DIM], pos: f64, z: &[f64; 4]) -> [f64; PROJ_DIM] {
    let mut r = [0.0; PROJ_DIM];
    r[0] = 1.0;
    let mut k = 1;
    for &x in x1 {
        r[k] = x;
        k += 1;
    }
    r[k] = pos;
    r[k + 1] = pos * pos;
    k += 2;
    for &x in x1 {
        r[k] = x * pos;
        k += 1;
    }
    for &x in z {
        r[k] = x;
        k += 1;
    }
    for &x in z {
        r[k] = x * pos;
        k += 1;
    }
    r
}

/// Linear projections of each hidden covariate onto the visible covariates,
/// position and user observables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionModel {
    /// One coefficient vector (length `PROJ_DIM`) per hidden component.
    pub coefs: Vec<Vec<f64>>,
    pub r2: Vec<f64>,
    /// Components clipped to [0,1] after prediction (all but days).
    pub binary: Vec<bool>,
    pub dropped_columns: Vec<usize>,
}

impl ProjectionModel {
    /// Fitted hidden-covariate vector for one slot.
    pub fn predict(&self, x1: &[f64; X1_DIM], pos: f64, z: &[f64; 4]) -> [f64; X2_DIM] {
        let r = projection_regressors(x1, pos, z);
        let mut out = [0.0; X2_DIM];
        for (c, (coef, binary)) in self.coefs.iter().zip(&self.binary).enumerate() {
            let mut v: f64 = coef.iter().zip(&r).map(|(a, b)| a * b).sum();
            if *binary {
                v = v.clamp(0.0, 1.0);
            }
            out[c] = v;
        }
        out
    }
}

/// Ordinary least squares of every hidden component on the projection
/// regressors, over all search-result rows.
pub fn fit_projection(prep: &Prepared) -> Result<ProjectionModel> {
    let mut xtx = DMatrix::<f64>::zeros(PROJ_DIM, PROJ_DIM);
    let mut xty = vec![DVector::<f64>::zeros(PROJ_DIM); X2_DIM];
    let mut sum = [0.0; X2_DIM];
    let mut sumsq = [0.0; X2_DIM];
    let mut n = 0usize;

    for s in &prep.searches {
        let z = prep.users[s.user_idx].z();
        for slot in &s.slots {
            let r = projection_regressors(&slot.x1, slot.position as f64, &z);
            for i in 0..PROJ_DIM {
                for j in i..PROJ_DIM {
                    xtx[(i, j)] += r[i] * r[j];
                }
            }
            for c in 0..X2_DIM {
                let y = slot.x2[c];
                for i in 0..PROJ_DIM {
                    xty[c][i] += r[i] * y;
                }
                sum[c] += y;
                sumsq[c] += y * y;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Validation("no search-result rows to project".into()));
    }
    for i in 0..PROJ_DIM {
        for j in 0..i {
            xtx[(i, j)] = xtx[(j, i)];
        }
    }

    // drop collinear columns via diagonal pivots of a Cholesky-style sweep
    let mut keep: Vec<usize> = Vec::new();
    let mut dropped: Vec<usize> = Vec::new();
    {
        let mut a = xtx.clone();
        let scale: Vec<f64> = (0..PROJ_DIM).map(|i| xtx[(i, i)].max(1e-30)).collect();
        for j in 0..PROJ_DIM {
            if a[(j, j)] > 1e-9 * scale[j] {
                keep.push(j);
                // eliminate column j from the remainder
                let piv = a[(j, j)];
                for r in (j + 1)..PROJ_DIM {
                    let f = a[(r, j)] / piv;
                    for c in j..PROJ_DIM {
                        a[(r, c)] -= f * a[(j, c)];
                    }
                }
            } else {
                dropped.push(j);
            }
        }
    }
    if !dropped.is_empty() {
        eprintln!(
            "warning: projection dropped {} collinear regressor column(s)",
            dropped.len()
        );
    }

    let k = keep.len();
    let mut xtx_k = DMatrix::<f64>::zeros(k, k);
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            xtx_k[(a, b)] = xtx[(i, j)];
        }
    }
    let chol = xtx_k
        .cholesky()
        .ok_or_else(|| Error::Numerical("projection normal equations not solvable".into()))?;

    let mut coefs = Vec::with_capacity(X2_DIM);
    let mut r2 = Vec::with_capacity(X2_DIM);
    for c in 0..X2_DIM {
        let mut rhs = DVector::<f64>::zeros(k);
        for (a, &i) in keep.iter().enumerate() {
            rhs[a] = xty[c][i];
        }
        let sol = chol.solve(&rhs);
        let mut full = vec![0.0; PROJ_DIM];
        for (a, &i) in keep.iter().enumerate() {
            full[i] = sol[a];
        }
        // R^2 from the normal equations: SSR = b'X'y - n*ybar^2
        let ybar = sum[c] / n as f64;
        let sst = sumsq[c] - n as f64 * ybar * ybar;
        let ssr: f64 = sol.dot(&rhs) - n as f64 * ybar * ybar;
        r2.push(if sst > 1e-12 { (ssr / sst).clamp(0.0, 1.0) } else { 1.0 });
        coefs.push(full);
    }

    let mut binary = vec![true; X2_DIM];
    binary[0] = false; // days since published is continuous
    Ok(ProjectionModel {
        coefs,
        r2,
        binary,
        dropped_columns: dropped,
    })
}

/// Expected request utility with hidden covariates replaced by their fitted
/// projections.
pub fn expected_utility(
    x1: &[f64; X1_DIM],
    position: u32,
    z: &[f64; 4],
    request_params: &RequestParams,
    projection: &ProjectionModel,
) -> f64 {
    let x2_hat = projection.predict(x1, position as f64, z);
    request_index(x1, &x2_hat, &request_params.beta)
}

/// Expected utilities for every slot of every search, aligned with
/// `prep.searches`.
pub fn utilities(prep: &Prepared, request_params: &RequestParams, projection: &ProjectionModel) -> Vec<Vec<f64>> {
    prep.searches
        .iter()
        .map(|s| {
            let z = prep.users[s.user_idx].z();
            s.slots
                .iter()
                .map(|slot| expected_utility(&slot.x1, slot.position, &z, request_params, projection))
                .collect()
        })
        .collect()
}

/// Maximum-likelihood fit of the click-propensity coefficients given the
/// per-slot expected utilities. SEs do not propagate first-stage noise.
pub fn fit_click_model(prep: &Prepared, utilities: &[Vec<f64>]) -> Result<ClickParams> {
    let instances = click_instances(prep, utilities);
    fit_stage(&instances, click_covariate_names())
}

/// Euro-scaled coefficient report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalizedReport {
    /// Request coefficients divided by |beta_price| (price maps to -1.00).
    pub request: Vec<(String, f64)>,
    /// Click coefficients divided by |beta_U * beta_price|; the utility row
    /// is reported per euro of expected utility and maps to +/-1.00.
    pub click: Vec<(String, f64)>,
    /// Euros per unit of raw utility index: 1 / |beta_price|.
    pub euro_scale: f64,
}

pub fn normalize_params(
    request: &RequestParams,
    click: &ClickParams,
) -> Result<NormalizedReport> {
    let beta_price = request.beta[REQ_PRICE];
    if beta_price == 0.0 {
        return Err(Error::Numerical("price coefficient is zero".into()));
    }
    let beta_u = click.beta[CLICK_U];
    if beta_u == 0.0 {
        return Err(Error::Numerical("utility coefficient is zero".into()));
    }
    let request_out = request
        .names
        .iter()
        .zip(&request.beta)
        .map(|(n, b)| (n.clone(), b / beta_price.abs()))
        .collect();
    let click_scale = (beta_u * beta_price).abs();
    let click_out = click
        .names
        .iter()
        .zip(&click.beta)
        .enumerate()
        .map(|(i, (n, b))| {
            let v = if i == CLICK_U {
                // marginal effect of a one-euro utility change
                b * beta_price.abs() / click_scale
            } else {
                b / click_scale
            };
            (n.clone(), v)
        })
        .collect();
    Ok(NormalizedReport {
        request: request_out,
        click: click_out,
        euro_scale: 1.0 / beta_price.abs(),
    })
}
