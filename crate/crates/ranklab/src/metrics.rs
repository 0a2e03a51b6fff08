//! Congestion and welfare metrics: Lorenz curves, Gini coefficients,
//! request-utility averages, and the utility-congestion frontier sweep.

use serde::Serialize;

use crate::counterfact::{self, PredictedSearch, RankingPolicy};
use crate::error::Result;
use crate::estimate::{ClickParams, Prepared, ProjectionModel, RequestParams};

/// Gini coefficient of a nonnegative distribution. Zero for a degenerate or
/// perfectly equal distribution.
pub fn gini(values: &[f64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let total: f64 = sorted.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (i + 1) as f64 * x)
        .sum();
    2.0 * weighted / (n as f64 * total) - (n as f64 + 1.0) / n as f64
}

/// Lorenz curve points (population share, cumulative share), ascending, with
/// the origin prepended.
pub fn lorenz_curve(values: &[f64]) -> Vec<(f64, f64)> {
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let total: f64 = sorted.iter().sum();
    let mut points = Vec::with_capacity(n + 1);
    points.push((0.0, 0.0));
    let mut cum = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        cum += x;
        let share = if total > 0.0 { cum / total } else { (i + 1) as f64 / n as f64 };
        points.push(((i + 1) as f64 / n as f64, share));
    }
    points
}

/// Mean expected utility per predicted request.
pub fn avg_request_utility(predictions: &[PredictedSearch]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for p in predictions {
        total += p.request_utility();
        n += p.requested.iter().filter(|r| **r).count();
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    pearson(&rx, &ry)
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Welch two-sample t statistic for a difference in means.
pub fn welch_t(mean_a: f64, sd_a: f64, n_a: usize, mean_b: f64, sd_b: f64, n_b: usize) -> f64 {
    let va = sd_a * sd_a / n_a as f64;
    let vb = sd_b * sd_b / n_b as f64;
    if va + vb <= 0.0 {
        return f64::INFINITY * (mean_a - mean_b).signum();
    }
    (mean_a - mean_b) / (va + vb).sqrt()
}

/// Conventional significance stars for a t statistic.
pub fn stars(t: f64) -> &'static str {
    let t = t.abs();
    if t > 2.576 {
        "***"
    } else if t > 1.96 {
        "**"
    } else if t > 1.645 {
        "*"
    } else {
        ""
    }
}

/// One (policy, draw) cell of the frontier sweep.
#[derive(Debug, Clone, Serialize)]
pub struct FrontierRow {
    pub alpha: f64,
    pub draw: u64,
    pub gini: f64,
    pub avg_utility: f64,
    pub total_requests: f64,
}

/// Mean and standard deviation over draws for one blend weight.
#[derive(Debug, Clone, Serialize)]
pub struct FrontierAggregate {
    pub alpha: f64,
    pub n_draws: usize,
    pub gini_mean: f64,
    pub gini_sd: f64,
    pub utility_mean: f64,
    pub utility_sd: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FrontierResult {
    pub rows: Vec<FrontierRow>,
    pub aggregates: Vec<FrontierAggregate>,
    pub garbled: bool,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Sweep the blend weight over `alphas`, re-drawing the random component
/// `n_draws` times per weight. When `garbled`, requests are tallied against
/// relabeled room identities; utilities are unaffected by construction.
pub fn frontier_sweep(
    prep: &Prepared,
    request_params: &RequestParams,
    projection: &ProjectionModel,
    click_params: &ClickParams,
    alphas: &[f64],
    n_draws: usize,
    seed: u64,
    garbled: bool,
) -> Result<FrontierResult> {
    let n_rooms = prep.room_ids.len();
    let mut rows = Vec::with_capacity(alphas.len() * n_draws);
    let mut aggregates = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let mut ginis = Vec::with_capacity(n_draws);
        let mut utils = Vec::with_capacity(n_draws);
        for draw in 0..n_draws as u64 {
            let predictions = counterfact::predict_choices(
                prep,
                request_params,
                projection,
                click_params,
                RankingPolicy::Blend(alpha),
                seed,
                draw,
            );
            let garble = garbled.then_some((seed, draw));
            let counts = counterfact::request_counts(prep, &predictions, n_rooms, garble)?;
            let g = gini(&counts);
            let u = avg_request_utility(&predictions);
            rows.push(FrontierRow {
                alpha,
                draw,
                gini: g,
                avg_utility: u,
                total_requests: counts.iter().sum(),
            });
            ginis.push(g);
            utils.push(u);
        }
        let (gm, gs) = mean_sd(&ginis);
        let (um, us) = mean_sd(&utils);
        aggregates.push(FrontierAggregate {
            alpha,
            n_draws,
            gini_mean: gm,
            gini_sd: gs,
            utility_mean: um,
            utility_sd: us,
        });
    }
    Ok(FrontierResult {
        rows,
        aggregates,
        garbled,
    })
}

/// Per-position impression, click and request tallies.
#[derive(Debug, Clone, Serialize)]
pub struct PositionRow {
    pub position: u32,
    pub impressions: usize,
    pub clicks: usize,
    pub requests: usize,
}

pub fn position_shares(prep: &Prepared) -> Vec<PositionRow> {
    let max_pos = prep
        .searches
        .iter()
        .flat_map(|s| s.slots.iter().map(|x| x.position))
        .max()
        .unwrap_or(0);
    let mut rows: Vec<PositionRow> = (1..=max_pos)
        .map(|position| PositionRow {
            position,
            impressions: 0,
            clicks: 0,
            requests: 0,
        })
        .collect();
    for s in &prep.searches {
        for slot in &s.slots {
            let row = &mut rows[(slot.position - 1) as usize];
            row.impressions += 1;
            row.clicks += slot.clicked as usize;
            row.requests += slot.requested as usize;
        }
    }
    rows
}

/// Price quantiles (0..=100 percentiles) for impressions, clicks and
/// requests.
#[derive(Debug, Clone, Serialize)]
pub struct PriceCdfRow {
    pub percentile: u32,
    pub impressions: f64,
    pub clicks: f64,
    pub requests: f64,
}

pub fn price_cdfs(prep: &Prepared) -> Vec<PriceCdfRow> {
    let mut all = Vec::new();
    let mut clicked = Vec::new();
    let mut requested = Vec::new();
    for s in &prep.searches {
        for slot in &s.slots {
            let price = prep.room_prices[slot.room_idx];
            all.push(price);
            if slot.clicked {
                clicked.push(price);
            }
            if slot.requested {
                requested.push(price);
            }
        }
    }
    for v in [&mut all, &mut clicked, &mut requested] {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    }
    let q = |v: &[f64], p: u32| -> f64 {
        if v.is_empty() {
            return f64::NAN;
        }
        let idx = ((v.len() - 1) as f64 * p as f64 / 100.0).round() as usize;
        v[idx]
    };
    (0..=100)
        .map(|p| PriceCdfRow {
            percentile: p,
            impressions: q(&all, p),
            clicks: q(&clicked, p),
            requests: q(&requested, p),
        })
        .collect()
}
