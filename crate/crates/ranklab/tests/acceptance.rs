//! End-to-end acceptance checks. Each test prints one pass/fail line so a
//! full run reads as a checklist.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;

use ranklab::domain::X2_DIM;
use ranklab::estimate::{self, FittedParams, Prepared};
use ranklab::metrics;
use ranklab::rngutil;
use ranklab::synth::{generate_market, simulate_behavior, MarketConfig};
use ranklab::tielogit::{self, ChoiceInstance};
use ranklab::cluster;

fn report(n: u32, desc: &str, ok: bool) {
    println!("criterion {n} ({desc}): {}", if ok { "pass" } else { "FAIL" });
    assert!(ok, "criterion {n} ({desc}) failed");
}

fn normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[test]
fn criterion_1_likelihood_exactness() {
    let start = Instant::now();
    let mut rng = rngutil::stream(101, &[1]);
    let mut agree = 0;
    for i in 0..100u64 {
        let nc = rng.gen_range(1..=4);
        let nd = rng.gen_range(1..=12);
        let c: Vec<f64> = (0..nc).map(|_| normal(&mut rng)).collect();
        let d: Vec<f64> = (0..nd).map(|_| normal(&mut rng)).collect();
        let exact = tielogit::tie_prob(&c, &d).unwrap();
        let (mc, se) = tielogit::mc_tie_prob(&c, &d, 1_000_000, 500 + i).unwrap();
        if (exact - mc).abs() <= 3.0 * se.max(1e-12) {
            agree += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        1,
        "likelihood exactness vs monte carlo",
        agree >= 97 && elapsed < 120.0,
    );
}

#[test]
fn criterion_2_gradient_correctness() {
    let mut worst: f64 = 0.0;
    for ds in 0..20u64 {
        let mut rng = rngutil::stream(202, &[ds]);
        let dim = rng.gen_range(2..=4);
        let params: Vec<f64> = (0..dim).map(|_| normal(&mut rng) * 0.5).collect();
        let instances: Vec<ChoiceInstance> = (0..rng.gen_range(3..=8))
            .map(|_| ChoiceInstance {
                chosen: (0..rng.gen_range(1..=3))
                    .map(|_| (0..dim).map(|_| normal(&mut rng)).collect())
                    .collect(),
                unchosen: (0..rng.gen_range(1..=5))
                    .map(|_| (0..dim).map(|_| normal(&mut rng)).collect())
                    .collect(),
            })
            .collect();
        let (_, grad) = tielogit::log_likelihood_grad(&instances, &params).unwrap();
        let h = 1e-5;
        for j in 0..dim {
            let mut up = params.clone();
            up[j] += h;
            let mut dn = params.clone();
            dn[j] -= h;
            let fd = (tielogit::log_likelihood(&instances, &up).unwrap()
                - tielogit::log_likelihood(&instances, &dn).unwrap())
                / (2.0 * h);
            let dev = (grad[j] - fd).abs() / grad[j].abs().max(1.0);
            worst = worst.max(dev);
        }
    }
    report(2, "analytic gradient vs finite differences", worst <= 1e-5);
}

fn true_params_model(config: &MarketConfig) -> (FittedParams, FittedParams) {
    let req = FittedParams {
        names: estimate::request_covariate_names(config.baseline_district),
        beta: config.true_request_params.clone(),
        se: vec![0.0; estimate::REQ_DIM],
        loglik: 0.0,
        loglik_null: -1.0,
        pseudo_r2: 0.0,
        n_instances: 1,
        iterations: 0,
    };
    let click = FittedParams {
        names: estimate::click_covariate_names(),
        beta: config.true_click_params.clone(),
        se: vec![0.0; estimate::CLICK_DIM],
        loglik: 0.0,
        loglik_null: -1.0,
        pseudo_r2: 0.0,
        n_instances: 1,
        iterations: 0,
    };
    (req, click)
}

fn prepared_from(config: &MarketConfig) -> (Prepared, [f64; X2_DIM]) {
    let (users, listings) = generate_market(config).unwrap();
    let (searches, meta) = simulate_behavior(&users, &listings, config).unwrap();
    let prep = estimate::prepare(
        &users,
        &listings,
        &searches,
        &meta.winsor_caps,
        config.baseline_district,
    )
    .unwrap();
    (prep, meta.x2_means)
}

#[test]
fn criterion_3_parameter_recovery() {
    let n_reps = 20;
    // request stage: 2,500 users x 20 searches ~ 50,000 searches
    let mut req_hits = [0u32; 3];
    for rep in 0..n_reps {
        let start = Instant::now();
        let config = MarketConfig {
            n_users: 2500,
            searches_per_user_mean: 20.0,
            seed: 1000 + rep as u64,
            ..Default::default()
        };
        let (prep, _) = prepared_from(&config);
        let fit = estimate::fit_request_model(&prep).unwrap();
        let targets = [
            (estimate::REQ_PRICE, -0.001),
            (estimate::REQ_GENDER_MATCH, 0.5),
            (estimate::REQ_AMENITY0 + 1, 0.1),
        ];
        for (slot, (idx, truth)) in targets.iter().enumerate() {
            if (fit.beta[*idx] - truth).abs() <= 3.0 * fit.se[*idx] {
                req_hits[slot] += 1;
            }
        }
        assert!(start.elapsed().as_secs_f64() < 600.0, "request rep too slow");
    }

    // click stage: 5,000 users x 20 searches ~ 100,000 searches; utilities
    // fed to the click fit use the generator's own coefficients so the click
    // coefficients are tested in isolation
    let mut click_hits = [0u32; 3];
    for rep in 0..n_reps {
        let start = Instant::now();
        let config = MarketConfig {
            n_users: 5000,
            searches_per_user_mean: 20.0,
            seed: 2000 + rep as u64,
            ..Default::default()
        };
        let (prep, x2_means) = prepared_from(&config);
        let utilities: Vec<Vec<f64>> = prep
            .searches
            .iter()
            .map(|s| {
                s.slots
                    .iter()
                    .map(|slot| {
                        estimate::request_index(&slot.x1, &x2_means, &config.true_request_params)
                    })
                    .collect()
            })
            .collect();
        let fit = estimate::fit_click_model(&prep, &utilities).unwrap();
        let targets = [
            (estimate::CLICK_POS, -0.07),
            (estimate::CLICK_POS_SQ, 0.001),
            (estimate::CLICK_U, 0.3),
        ];
        for (slot, (idx, truth)) in targets.iter().enumerate() {
            if (fit.beta[*idx] - truth).abs() <= 3.0 * fit.se[*idx] {
                click_hits[slot] += 1;
            }
        }
        assert!(start.elapsed().as_secs_f64() < 600.0, "click rep too slow");
    }

    let need = (0.9 * n_reps as f64).ceil() as u32;
    println!("  request hits {req_hits:?}, click hits {click_hits:?} of {n_reps}");
    report(
        3,
        "parameter recovery within 3 SE",
        req_hits.iter().chain(&click_hits).all(|&h| h >= need),
    );
}

#[test]
fn criterion_4_normalization() {
    let config = MarketConfig {
        n_users: 100,
        n_rooms: 500,
        searches_per_user_mean: 10.0,
        seed: 404,
        ..Default::default()
    };
    let (prep, _) = prepared_from(&config);
    let (req, click) = true_params_model(&config);
    let norm = estimate::normalize_params(&req, &click).unwrap();
    let price = norm
        .request
        .iter()
        .find(|(n, _)| n == "price")
        .unwrap()
        .1;
    let exact_minus_one = price == -1.0;

    // argmax of the per-search utilities must survive the euro rescaling
    let projection = estimate::fit_projection(&prep).unwrap();
    let utilities = estimate::utilities(&prep, &req, &projection);
    let argmax = |xs: &[f64]| {
        xs.iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0
    };
    let invariant = utilities.iter().all(|us| {
        let scaled: Vec<f64> = us.iter().map(|u| u * norm.euro_scale).collect();
        argmax(us) == argmax(&scaled)
    });
    report(4, "euro normalization", exact_minus_one && invariant);
}

#[test]
fn criterion_5_lorenz_gini_suite() {
    let mut ok = (metrics::gini(&[1.0, 2.0, 3.0, 4.0]) - 0.25).abs() <= 1e-12;
    let mut rng = rngutil::stream(505, &[1]);
    for _ in 0..1000 {
        let n = rng.gen_range(2..50);
        let counts: Vec<f64> = (0..n).map(|_| rng.gen_range(0..40) as f64).collect();
        if counts.iter().sum::<f64>() == 0.0 {
            continue;
        }
        let curve = metrics::lorenz_curve(&counts);
        ok &= curve[0] == (0.0, 0.0);
        let (pe, se) = curve[curve.len() - 1];
        ok &= (pe - 1.0).abs() < 1e-12 && (se - 1.0).abs() < 1e-9;
        // monotone and convex: increments nondecreasing
        let mut prev_inc = -1e-12;
        for w in curve.windows(2) {
            let inc = w[1].1 - w[0].1;
            ok &= inc >= -1e-12;
            ok &= inc >= prev_inc - 1e-9;
            prev_inc = inc;
        }
        let g = metrics::gini(&counts);
        ok &= (0.0..1.0).contains(&g) || g.abs() < 1e-12;
        let scaled: Vec<f64> = counts.iter().map(|c| c * 7.25).collect();
        ok &= (metrics::gini(&scaled) - g).abs() <= 1e-12 * g.max(1.0);
    }
    report(5, "lorenz/gini invariants", ok);
}

/// Vertically differentiated market: utility driven by price and a common
/// amenity, no user-specific taste component, so everyone agrees on the
/// ranking.
fn vertical_config() -> MarketConfig {
    let mut config = MarketConfig {
        n_users: 150,
        n_rooms: 600,
        searches_per_user_mean: 15.0,
        target_click_rate: 0.08,
        target_request_rate: 0.3,
        seed: 606,
        ..Default::default()
    };
    config.true_request_params = vec![0.0; estimate::REQ_DIM];
    config.true_request_params[estimate::REQ_PRICE] = -0.003;
    config.true_request_params[estimate::REQ_AMENITY0 + 1] = 0.4;
    config
}

fn vertical_sweep(garbled: bool) -> metrics::FrontierResult {
    let config = vertical_config();
    let (prep, _) = prepared_from(&config);
    let (req, click) = true_params_model(&config);
    let projection = estimate::fit_projection(&prep).unwrap();
    let alphas: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    metrics::frontier_sweep(&prep, &req, &projection, &click, &alphas, 10, 909, garbled).unwrap()
}

#[test]
fn criterion_6_tradeoff_reproduction() {
    let result = vertical_sweep(false);
    let alphas: Vec<f64> = result.aggregates.iter().map(|a| a.alpha).collect();
    let utils: Vec<f64> = result.aggregates.iter().map(|a| a.utility_mean).collect();
    let ginis: Vec<f64> = result.aggregates.iter().map(|a| a.gini_mean).collect();
    let rho_u = metrics::spearman(&alphas, &utils);
    let rho_g = metrics::spearman(&alphas, &ginis);
    let gap = ginis[ginis.len() - 1] - ginis[0];
    let sd0 = result.aggregates[0].gini_sd;
    println!("  spearman(utility) {rho_u:.3}, spearman(gini) {rho_g:.3}, gap {gap:.4} vs sd {sd0:.4}");
    report(
        6,
        "utility-congestion trade-off shape",
        rho_u >= 0.9 && rho_g >= 0.9 && gap > 5.0 * sd0,
    );
}

#[test]
fn criterion_7_garbling() {
    let plain = vertical_sweep(false);
    let garbled = vertical_sweep(true);
    let gap = |r: &metrics::FrontierResult| {
        let a = &r.aggregates;
        (a[a.len() - 1].gini_mean - a[0].gini_mean).abs()
    };
    let gap_ok = gap(&garbled) < 0.2 * gap(&plain);
    let util_ok = plain
        .rows
        .iter()
        .zip(&garbled.rows)
        .all(|(a, b)| (a.avg_utility - b.avg_utility).abs() < 1e-10);
    println!("  garbled gap {:.5}, ungarbled gap {:.5}", gap(&garbled), gap(&plain));
    report(7, "garbling removes congestion but not utility", gap_ok && util_ok);
}

#[test]
fn criterion_8_position_shape() {
    let config = MarketConfig {
        n_users: 1500,
        n_rooms: 2000,
        searches_per_user_mean: 20.0,
        seed: 808,
        ..Default::default()
    };
    let (prep, _) = prepared_from(&config);
    let rows = metrics::position_shares(&prep);
    let rate: Vec<f64> = rows
        .iter()
        .map(|r| r.clicks as f64 / r.impressions as f64)
        .collect();
    // 3-point smoothing over positions 1..10
    let smoothed: Vec<f64> = (0..10usize)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(rate.len() - 1);
            rate[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let decreasing = smoothed.windows(2).all(|w| w[1] < w[0]);

    // slope of request-given-click on position over individual clicks
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in &prep.searches {
        for slot in &s.slots {
            if slot.clicked {
                xs.push(slot.position as f64);
                ys.push(slot.requested as u8 as f64);
            }
        }
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let resid_var: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
        .sum::<f64>()
        / (n - 2.0);
    let t = slope / (resid_var / sxx).sqrt();
    println!("  smoothed click rates {smoothed:?}");
    println!("  request|click slope t = {t:.3}");
    report(
        8,
        "position shape: clicks fall, request|click flat",
        decreasing && t.abs() < 1.96,
    );
}

#[test]
fn criterion_9_clustering() {
    let mut ok = true;
    // k=1 vs exhaustive scan on 200 random points
    let mut rng = rngutil::stream(909, &[3]);
    let points: Vec<[f64; cluster::N_FEATURES]> = (0..200)
        .map(|_| {
            let mut p = [0.0; cluster::N_FEATURES];
            for v in p.iter_mut() {
                *v = rng.gen_range(0.0..100.0);
            }
            p
        })
        .collect();
    let result = cluster::k_medoids(&points, 1).unwrap();
    let l1 = |a: &[f64; cluster::N_FEATURES], b: &[f64; cluster::N_FEATURES]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
    };
    let mut best_cost = f64::INFINITY;
    let mut best = 0;
    for m in 0..points.len() {
        let cost: f64 = points.iter().map(|p| l1(p, &points[m])).sum();
        if cost < best_cost {
            best_cost = cost;
            best = m;
        }
    }
    ok &= result.medoids == vec![best];

    // planted 3 clusters
    let mut planted = Vec::new();
    let mut truth = Vec::new();
    for (c, center) in [5.0, 45.0, 90.0].iter().enumerate() {
        for i in 0..30 {
            let mut p = [0.0; cluster::N_FEATURES];
            for (j, v) in p.iter_mut().enumerate() {
                *v = center + ((i + j) % 7) as f64 - 3.0;
            }
            planted.push(p);
            truth.push(c);
        }
    }
    let found = cluster::k_medoids(&planted, 3).unwrap();
    let mut purity = 0;
    for perm in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
        let hits = found
            .assignment
            .iter()
            .zip(&truth)
            .filter(|(&a, &t)| perm[a] == t)
            .count();
        purity = purity.max(hits);
    }
    ok &= purity as f64 / planted.len() as f64 >= 0.9;

    // swap cost monotone on several runs
    for k in 2..=4 {
        let run = cluster::k_medoids(&points, k).unwrap();
        ok &= run.cost_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9);
    }
    report(9, "k-medoids behavior", ok);
}

fn run_chain(dir: &Path, threads: &str) -> Vec<u8> {
    let bin = env!("CARGO_BIN_EXE_ranklab");
    let data = dir.join("data");
    let params = dir.join("params.json");
    let frontier = dir.join("frontier.csv");
    let run = |args: &[&str]| {
        let out = Command::new(bin).args(args).output().unwrap();
        assert!(
            out.status.success(),
            "command {:?} failed: {}",
            args,
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&[
        "generate",
        "--threads",
        threads,
        "--out",
        data.to_str().unwrap(),
        "--set",
        "n_users=2000",
        "--set",
        "seed=7",
    ]);
    run(&[
        "estimate",
        "--threads",
        threads,
        "--data",
        data.to_str().unwrap(),
        "--out",
        params.to_str().unwrap(),
    ]);
    run(&[
        "frontier",
        "--threads",
        threads,
        "--data",
        data.to_str().unwrap(),
        "--params",
        params.to_str().unwrap(),
        "--alphas",
        "0,0.5,1",
        "--seeds",
        "2",
        "--out",
        frontier.to_str().unwrap(),
    ]);
    std::fs::read(frontier).unwrap()
}

#[test]
fn criterion_10_determinism() {
    let d1 = tempfile::tempdir().unwrap();
    let d4 = tempfile::tempdir().unwrap();
    let f1 = run_chain(d1.path(), "1");
    let f4 = run_chain(d4.path(), "4");
    report(10, "byte-identical frontier across thread counts", f1 == f4);
}
