//! Key=value configuration overrides for the market generator.

use chrono::NaiveDate;

use crate::domain::{N_AMENITIES, N_DISTRICTS};
use crate::error::{Error, Result};
use crate::estimate::{CLICK_DIM, REQ_DIM};
use crate::synth::MarketConfig;

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Usage(format!("invalid value {value:?} for {key}")))
}

fn parse_list(key: &str, value: &str, expect: usize) -> Result<Vec<f64>> {
    let parts: Vec<f64> = value
        .split(',')
        .map(|p| parse(key, p.trim()))
        .collect::<Result<_>>()?;
    if parts.len() != expect {
        return Err(Error::Usage(format!(
            "{key} expects {expect} comma-separated values, got {}",
            parts.len()
        )));
    }
    Ok(parts)
}

/// Apply `key=value` overrides to a config. Unknown keys are usage errors.
pub fn apply_overrides(config: &mut MarketConfig, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (key, value) = item.split_once('=').ok_or_else(|| {
            Error::Usage(format!("expected key=value, got {item:?}"))
        })?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "n_users" => config.n_users = parse(key, value)?,
            "n_rooms" => config.n_rooms = parse(key, value)?,
            "searches_per_user_mean" => config.searches_per_user_mean = parse(key, value)?,
            "results_per_search_mean" => config.results_per_search_mean = parse(key, value)?,
            "page_capacity" => config.page_capacity = parse(key, value)?,
            "price_mean" => config.price_mean = parse(key, value)?,
            "price_sd" => config.price_sd = parse(key, value)?,
            "missing_tenants_rate" => config.missing_tenants_rate = parse(key, value)?,
            "n_tenants_mean" => config.n_tenants_mean = parse(key, value)?,
            "amenity_freqs" => {
                let v = parse_list(key, value, N_AMENITIES)?;
                config.amenity_freqs.copy_from_slice(&v);
            }
            "district_weights" => {
                let v = parse_list(key, value, N_DISTRICTS)?;
                config.district_weights.copy_from_slice(&v);
            }
            "baseline_district" => config.baseline_district = parse(key, value)?,
            "registered_rate" => config.registered_rate = parse(key, value)?,
            "pref_age_rate" => config.pref_age_rate = parse(key, value)?,
            "pref_gender_rate" => config.pref_gender_rate = parse(key, value)?,
            "pref_gender_female_share" => config.pref_gender_female_share = parse(key, value)?,
            "pref_occupation_rate" => config.pref_occupation_rate = parse(key, value)?,
            "pref_no_students_share" => config.pref_no_students_share = parse(key, value)?,
            "user_female_rate" => config.user_female_rate = parse(key, value)?,
            "user_student_rate" => config.user_student_rate = parse(key, value)?,
            "user_worker_rate" => config.user_worker_rate = parse(key, value)?,
            "user_age_min" => config.user_age_min = parse(key, value)?,
            "user_age_max" => config.user_age_max = parse(key, value)?,
            "epoch" => {
                config.epoch = NaiveDate::parse_from_str(value, "%Y-%m-%d")
                    .map_err(|_| Error::Usage(format!("invalid date {value:?} for epoch")))?;
            }
            "publish_window_days" => config.publish_window_days = parse(key, value)?,
            "search_window_days" => config.search_window_days = parse(key, value)?,
            "winsor_pct" => config.winsor_pct = parse(key, value)?,
            "target_click_rate" => config.target_click_rate = parse(key, value)?,
            "target_request_rate" => config.target_request_rate = parse(key, value)?,
            "true_request_params" => {
                config.true_request_params = parse_list(key, value, REQ_DIM)?;
            }
            "true_click_params" => config.true_click_params = parse_list(key, value, CLICK_DIM)?,
            "seed" => config.seed = parse(key, value)?,
            _ => return Err(Error::Usage(format!("unknown config key {key:?}"))),
        }
    }
    config.validate()
}

fn fmt_list(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Render a config in the same key=value form the parser accepts.
pub fn render(config: &MarketConfig) -> String {
    let mut out = String::new();
    let mut push = |k: &str, v: String| {
        out.push_str(k);
        out.push('=');
        out.push_str(&v);
        out.push('\n');
    };
    push("n_users", config.n_users.to_string());
    push("n_rooms", config.n_rooms.to_string());
    push(
        "searches_per_user_mean",
        config.searches_per_user_mean.to_string(),
    );
    push(
        "results_per_search_mean",
        config.results_per_search_mean.to_string(),
    );
    push("page_capacity", config.page_capacity.to_string());
    push("price_mean", config.price_mean.to_string());
    push("price_sd", config.price_sd.to_string());
    push("missing_tenants_rate", config.missing_tenants_rate.to_string());
    push("n_tenants_mean", config.n_tenants_mean.to_string());
    push("amenity_freqs", fmt_list(&config.amenity_freqs));
    push("district_weights", fmt_list(&config.district_weights));
    push("baseline_district", config.baseline_district.to_string());
    push("registered_rate", config.registered_rate.to_string());
    push("pref_age_rate", config.pref_age_rate.to_string());
    push("pref_gender_rate", config.pref_gender_rate.to_string());
    push(
        "pref_gender_female_share",
        config.pref_gender_female_share.to_string(),
    );
    push("pref_occupation_rate", config.pref_occupation_rate.to_string());
    push(
        "pref_no_students_share",
        config.pref_no_students_share.to_string(),
    );
    push("user_female_rate", config.user_female_rate.to_string());
    push("user_student_rate", config.user_student_rate.to_string());
    push("user_worker_rate", config.user_worker_rate.to_string());
    push("user_age_min", config.user_age_min.to_string());
    push("user_age_max", config.user_age_max.to_string());
    push("epoch", config.epoch.format("%Y-%m-%d").to_string());
    push("publish_window_days", config.publish_window_days.to_string());
    push("search_window_days", config.search_window_days.to_string());
    push("winsor_pct", config.winsor_pct.to_string());
    push("target_click_rate", config.target_click_rate.to_string());
    push("target_request_rate", config.target_request_rate.to_string());
    push("true_request_params", fmt_list(&config.true_request_params));
    push("true_click_params", fmt_list(&config.true_click_params));
    push("seed", config.seed.to_string());
    out
}
