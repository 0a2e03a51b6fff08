use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ranklab::counterfact::{self, RankingPolicy};
use ranklab::dataset::{self, CsvWriter, Dataset, DatasetMeta, FittedModel, RunManifest};
use ranklab::domain::{self, SearchResultSlot};
use ranklab::error::{Error, Result};
use ranklab::estimate::{self, Prepared};
use ranklab::synth::MarketConfig;
use ranklab::{cluster, config, metrics, synth};

#[derive(Parser)]
#[command(name = "ranklab", version, about = "Congestion laboratory for two-sided matching platforms")]
struct Cli {
    /// Worker threads (default: RANKLAB_THREADS or all cores). Output is
    /// identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory
    Generate(GenerateArgs),
    /// Structurally validate a dataset directory
    Validate(DataArgs),
    /// Fit the two-stage choice model and write params.json
    Estimate(EstimateArgs),
    /// Write descriptive tables: lorenz.csv, positions.csv, price_cdfs.csv, summary.txt
    Report(ReportArgs),
    /// Rerank searches under a policy and write predicted logs
    Simulate(SimulateArgs),
    /// Sweep blend weights and write the utility-congestion frontier
    Frontier(FrontierArgs),
    /// Cluster users on filter behavior and refit per cluster
    Cluster(ClusterArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    /// Config overrides, key=value (repeatable)
    #[arg(long = "set")]
    set: Vec<String>,
    /// Print the effective config and exit without generating
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output parameter file
    #[arg(long)]
    out: PathBuf,
    /// Also cluster users and refit the request model per cluster
    #[arg(long)]
    clusters: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    params: PathBuf,
    /// Output directory for the tables
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    params: PathBuf,
    /// Ranking policy: statusquo, personalized, random or blend:A
    #[arg(long)]
    policy: String,
    /// Redraw index for the random ranking component
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relabel room ids per search in the output (congestion accounting only)
    #[arg(long)]
    garble: bool,
    /// Output predicted search log (jsonl)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FrontierArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    params: PathBuf,
    /// Comma-separated blend weights
    #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
    alphas: String,
    /// Random redraws per weight
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    /// Tally requests against randomly relabeled room identities
    #[arg(long)]
    garble: bool,
    /// Output csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Output directory for clusters.csv and medoids.csv
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = resolve_threads(cli.threads);
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
    {
        eprintln!("error: failed to build thread pool: {e}");
        return ExitCode::from(5);
    }
    match run(cli.command, threads) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn resolve_threads(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("RANKLAB_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(0) // 0 lets rayon pick
}

fn run(command: Command, threads: usize) -> Result<()> {
    match command {
        Command::Generate(args) => cmd_generate(args, threads),
        Command::Validate(args) => cmd_validate(args),
        Command::Estimate(args) => cmd_estimate(args, threads),
        Command::Report(args) => cmd_report(args, threads),
        Command::Simulate(args) => cmd_simulate(args, threads),
        Command::Frontier(args) => cmd_frontier(args, threads),
        Command::Cluster(args) => cmd_cluster(args, threads),
    }
}

fn cmd_generate(args: GenerateArgs, threads: usize) -> Result<()> {
    let mut market = MarketConfig::default();
    config::apply_overrides(&mut market, &args.set)?;
    if args.print_config {
        print!("{}", config::render(&market));
        return Ok(());
    }
    let (users, listings) = synth::generate_market(&market)?;
    let (searches, sim) = synth::simulate_behavior(&users, &listings, &market)?;
    let dataset = Dataset {
        users,
        listings,
        searches,
        meta: DatasetMeta::from_sim(&market, &sim),
    };
    dataset::save_dataset(&args.out, &dataset)?;

    let mut manifest = RunManifest::new("generate", market.seed, threads);
    manifest.add_dataset_inputs(&args.out)?; // generated files double as the record
    manifest.save(&args.out.join(dataset::MANIFEST_FILE))?;
    println!(
        "generated {} users, {} rooms, {} searches -> {}",
        dataset.users.len(),
        dataset.listings.len(),
        dataset.searches.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_validate(args: DataArgs) -> Result<()> {
    let data = dataset::load_dataset(&args.data)?;
    let report = domain::validate_dataset(
        &data.users,
        &data.listings,
        &data.searches,
        data.meta.page_capacity,
    );
    if report.is_valid() {
        println!("ok: dataset is structurally valid");
        Ok(())
    } else {
        for v in &report.violations {
            eprintln!("{:?}: {}", v.kind, v.context);
        }
        Err(Error::Validation(format!(
            "{} violation(s) found",
            report.violations.len()
        )))
    }
}

fn load_prepared(dir: &Path) -> Result<(Dataset, Prepared)> {
    let data = dataset::load_dataset(dir)?;
    let prep = estimate::prepare(
        &data.users,
        &data.listings,
        &data.searches,
        &data.meta.winsor_caps,
        data.meta.baseline_district,
    )?;
    Ok((data, prep))
}

fn cmd_estimate(args: EstimateArgs, threads: usize) -> Result<()> {
    let (data, prep) = load_prepared(&args.data)?;
    let request = estimate::fit_request_model(&prep)?;
    let projection = estimate::fit_projection(&prep)?;
    let utilities = estimate::utilities(&prep, &request, &projection);
    let click = estimate::fit_click_model(&prep, &utilities)?;
    let normalized = estimate::normalize_params(&request, &click)?;
    let model = FittedModel {
        request,
        projection,
        click,
        normalized,
    };
    dataset::save_params(&args.out, &model)?;

    let mut cluster_out = None;
    if let Some(k) = args.clusters {
        let (row_index, features) = cluster::filter_features(&prep);
        if features.is_empty() {
            return Err(Error::Validation(
                "no users with qualifying searches to cluster".into(),
            ));
        }
        let clustering = cluster::k_medoids(&features, k)?;
        let fits = cluster::fit_by_cluster(&prep, &row_index, &clustering, k)?;
        let path = args.out.with_file_name("cluster_fits.json");
        std::fs::write(&path, serde_json::to_string_pretty(&fits)? + "\n")?;
        cluster_out = Some(path);
    }

    let mut manifest = RunManifest::new("estimate", data.meta.seed, threads);
    manifest.add_dataset_inputs(&args.data)?;
    manifest.record_output(&args.out);
    if let Some(path) = &cluster_out {
        manifest.record_output(path);
    }
    if let Some(parent) = args.out.parent() {
        manifest.save(&parent.join(dataset::MANIFEST_FILE))?;
    }
    println!(
        "request: {} instances, loglik {:.3}, pseudo-R2 {:.4}",
        model.request.n_instances, model.request.loglik, model.request.pseudo_r2
    );
    println!(
        "click:   {} instances, loglik {:.3}, pseudo-R2 {:.4}",
        model.click.n_instances, model.click.loglik, model.click.pseudo_r2
    );
    println!("params -> {}", args.out.display());
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn cmd_report(args: ReportArgs, threads: usize) -> Result<()> {
    let (data, prep) = load_prepared(&args.data)?;
    let model = dataset::load_params(&args.params)?;
    std::fs::create_dir_all(&args.out)?;

    // observed congestion: requests per room from the logs
    let mut counts = vec![0.0; data.listings.len()];
    for s in &prep.searches {
        for slot in &s.slots {
            if slot.requested {
                counts[slot.room_idx] += 1.0;
            }
        }
    }
    let mut lorenz = CsvWriter::create(&args.out.join("lorenz.csv"), "population_share,request_share")?;
    for (p, s) in metrics::lorenz_curve(&counts) {
        lorenz.row(&[fmt(p), fmt(s)])?;
    }
    lorenz.finish()?;

    let mut positions = CsvWriter::create(
        &args.out.join("positions.csv"),
        "position,impressions,clicks,requests",
    )?;
    for r in metrics::position_shares(&prep) {
        positions.row(&[
            r.position.to_string(),
            r.impressions.to_string(),
            r.clicks.to_string(),
            r.requests.to_string(),
        ])?;
    }
    positions.finish()?;

    let mut prices = CsvWriter::create(
        &args.out.join("price_cdfs.csv"),
        "percentile,impressions,clicks,requests",
    )?;
    for r in metrics::price_cdfs(&prep) {
        prices.row(&[
            r.percentile.to_string(),
            fmt(r.impressions),
            fmt(r.clicks),
            fmt(r.requests),
        ])?;
    }
    prices.finish()?;

    let mut summary = String::new();
    let n_slots: usize = prep.searches.iter().map(|s| s.slots.len()).sum();
    let n_clicks: usize = prep
        .searches
        .iter()
        .flat_map(|s| &s.slots)
        .filter(|x| x.clicked)
        .count();
    let n_reqs: usize = prep
        .searches
        .iter()
        .flat_map(|s| &s.slots)
        .filter(|x| x.requested)
        .count();
    summary.push_str(&format!(
        "dataset: {} users, {} rooms, {} searches, {} result slots\n",
        data.users.len(),
        data.listings.len(),
        prep.searches.len(),
        n_slots
    ));
    summary.push_str(&format!(
        "click rate {:.4}, request rate given click {:.4}\n",
        n_clicks as f64 / n_slots as f64,
        if n_clicks > 0 {
            n_reqs as f64 / n_clicks as f64
        } else {
            0.0
        }
    ));
    summary.push_str(&format!(
        "observed request gini: {:.4}\n\n",
        metrics::gini(&counts)
    ));

    summary.push_str("request model (raw / se / per-euro)\n");
    for (i, name) in model.request.names.iter().enumerate() {
        summary.push_str(&format!(
            "  {:<24} {:>12.6} {:>12.6} {:>12.4}\n",
            name, model.request.beta[i], model.request.se[i], model.normalized.request[i].1
        ));
    }
    summary.push_str(&format!(
        "  pseudo-R2 {:.4} over {} instances\n\n",
        model.request.pseudo_r2, model.request.n_instances
    ));

    summary.push_str("click model (raw / se / normalized)\n");
    for (i, name) in model.click.names.iter().enumerate() {
        summary.push_str(&format!(
            "  {:<24} {:>12.6} {:>12.6} {:>12.4}\n",
            name, model.click.beta[i], model.click.se[i], model.normalized.click[i].1
        ));
    }
    summary.push_str(&format!(
        "  pseudo-R2 {:.4} over {} instances\n\n",
        model.click.pseudo_r2, model.click.n_instances
    ));

    summary.push_str("projection R2 by hidden component\n");
    let req_names = &model.request.names;
    for (c, r2) in model.projection.r2.iter().enumerate() {
        summary.push_str(&format!(
            "  {:<24} {:>8.4}\n",
            req_names[estimate::REQ_DAYS + c], r2
        ));
    }
    std::fs::write(args.out.join("summary.txt"), summary)?;

    let mut manifest = RunManifest::new("report", data.meta.seed, threads);
    manifest.add_dataset_inputs(&args.data)?;
    manifest.add_input(&args.params)?;
    for name in ["lorenz.csv", "positions.csv", "price_cdfs.csv", "summary.txt"] {
        manifest.record_output(&args.out.join(name));
    }
    manifest.save(&args.out.join(dataset::MANIFEST_FILE))?;
    println!("report -> {}", args.out.display());
    Ok(())
}

fn cmd_simulate(args: SimulateArgs, threads: usize) -> Result<()> {
    let (data, prep) = load_prepared(&args.data)?;
    let model = dataset::load_params(&args.params)?;
    let policy: RankingPolicy = args.policy.parse()?;
    let predictions = counterfact::predict_choices(
        &prep,
        &model.request,
        &model.projection,
        &model.click,
        policy,
        data.meta.seed,
        args.seed,
    );

    if let Some(parent) = args.out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    use std::io::Write;
    let header = serde_json::json!({
        "provenance": {
            "command": "simulate",
            "policy": policy.to_string(),
            "seed": data.meta.seed,
            "draw": args.seed,
            "garbled": args.garble,
        }
    });
    writeln!(out, "{header}")?;
    for (gid, (search, pred)) in prep.searches.iter().zip(&predictions).enumerate() {
        let relabel = if args.garble {
            Some(counterfact::garble_search(
                search.slots.len(),
                prep.room_ids.len(),
                data.meta.seed,
                args.seed,
                gid as u64,
            )?)
        } else {
            None
        };
        let mut slots: Vec<SearchResultSlot> = search
            .slots
            .iter()
            .enumerate()
            .map(|(i, slot)| {
                let room_idx = match &relabel {
                    Some(map) => map[i],
                    None => slot.room_idx,
                };
                SearchResultSlot {
                    room_id: prep.room_ids[room_idx].clone(),
                    position: pred.new_position[i],
                    clicked: pred.clicked[i],
                    requested: pred.requested[i],
                }
            })
            .collect();
        slots.sort_by_key(|s| s.position);
        let record = serde_json::json!({
            "search_id": search.search_id,
            "user_id": prep.users[search.user_idx].user_id,
            "slots": slots,
            "request_utility": pred.request_utility(),
        });
        writeln!(out, "{record}")?;
    }
    out.flush()?;

    let mut manifest = RunManifest::new("simulate", data.meta.seed, threads);
    manifest.add_dataset_inputs(&args.data)?;
    manifest.add_input(&args.params)?;
    manifest.record_output(&args.out);
    if let Some(parent) = args.out.parent() {
        manifest.save(&parent.join(dataset::MANIFEST_FILE))?;
    }
    println!(
        "simulated {} searches under {} -> {}",
        predictions.len(),
        policy,
        args.out.display()
    );
    Ok(())
}

fn cmd_frontier(args: FrontierArgs, threads: usize) -> Result<()> {
    let (data, prep) = load_prepared(&args.data)?;
    let model = dataset::load_params(&args.params)?;
    let alphas: Vec<f64> = args
        .alphas
        .split(',')
        .map(|a| {
            a.trim()
                .parse::<f64>()
                .map_err(|_| Error::Usage(format!("invalid blend weight {a:?}")))
        })
        .collect::<Result<_>>()?;
    for a in &alphas {
        if !(0.0..=1.0).contains(a) {
            return Err(Error::Usage(format!("blend weight {a} outside [0, 1]")));
        }
    }
    if args.seeds == 0 {
        return Err(Error::Usage("seeds must be at least 1".into()));
    }

    let result = metrics::frontier_sweep(
        &prep,
        &model.request,
        &model.projection,
        &model.click,
        &alphas,
        args.seeds,
        data.meta.seed,
        args.garble,
    )?;

    let mut csv = CsvWriter::create(
        &args.out,
        "alpha,draw,gini,avg_utility,total_requests",
    )?;
    for r in &result.rows {
        csv.row(&[
            fmt(r.alpha),
            r.draw.to_string(),
            fmt(r.gini),
            fmt(r.avg_utility),
            fmt(r.total_requests),
        ])?;
    }
    // aggregate block: one mean and one sd row per weight
    for a in &result.aggregates {
        csv.row(&[
            fmt(a.alpha),
            "mean".into(),
            fmt(a.gini_mean),
            fmt(a.utility_mean),
            String::new(),
        ])?;
        csv.row(&[
            fmt(a.alpha),
            "sd".into(),
            fmt(a.gini_sd),
            fmt(a.utility_sd),
            String::new(),
        ])?;
    }
    csv.finish()?;

    for a in &result.aggregates {
        println!(
            "alpha {:>5.2}: gini {:.4} (sd {:.4}), utility {:.4} (sd {:.4})",
            a.alpha, a.gini_mean, a.gini_sd, a.utility_mean, a.utility_sd
        );
    }
    if result.aggregates.len() >= 2 {
        let lo = &result.aggregates[0];
        let hi = &result.aggregates[result.aggregates.len() - 1];
        let t_u = metrics::welch_t(
            hi.utility_mean,
            hi.utility_sd,
            hi.n_draws,
            lo.utility_mean,
            lo.utility_sd,
            lo.n_draws,
        );
        let t_g = metrics::welch_t(
            hi.gini_mean,
            hi.gini_sd,
            hi.n_draws,
            lo.gini_mean,
            lo.gini_sd,
            lo.n_draws,
        );
        println!(
            "alpha {:.2} vs {:.2}: utility diff {:+.4}{}, gini diff {:+.4}{}",
            hi.alpha,
            lo.alpha,
            hi.utility_mean - lo.utility_mean,
            metrics::stars(t_u),
            hi.gini_mean - lo.gini_mean,
            metrics::stars(t_g)
        );
    }

    let mut manifest = RunManifest::new("frontier", data.meta.seed, threads);
    manifest.add_dataset_inputs(&args.data)?;
    manifest.add_input(&args.params)?;
    manifest.record_output(&args.out);
    if let Some(parent) = args.out.parent() {
        manifest.save(&parent.join(dataset::MANIFEST_FILE))?;
    }
    Ok(())
}

fn cmd_cluster(args: ClusterArgs, threads: usize) -> Result<()> {
    let (data, prep) = load_prepared(&args.data)?;
    let (row_index, features) = cluster::filter_features(&prep);
    if features.is_empty() {
        return Err(Error::Validation(
            "no users with qualifying searches to cluster".into(),
        ));
    }
    let clustering = cluster::k_medoids(&features, args.k)?;
    let fits = cluster::fit_by_cluster(&prep, &row_index, &clustering, args.k)?;

    std::fs::create_dir_all(&args.out)?;
    let names = cluster::feature_names(data.meta.baseline_district);
    let mut clusters = CsvWriter::create(
        &args.out.join("clusters.csv"),
        &format!("user_id,cluster,{}", names.join(",")),
    )?;
    for (row, &u) in row_index.iter().enumerate() {
        let mut fields = vec![
            prep.users[u].user_id.clone(),
            clustering.assignment[row].to_string(),
        ];
        fields.extend(features[row].iter().map(|v| fmt(*v)));
        clusters.row(&fields)?;
    }
    clusters.finish()?;

    let mut medoids = CsvWriter::create(
        &args.out.join("medoids.csv"),
        &format!("cluster,user_id,n_users,n_searches,{}", names.join(",")),
    )?;
    for (c, fit) in fits.iter().enumerate() {
        let medoid_user = prep.users[row_index[clustering.medoids[c]]].user_id.clone();
        let mut fields = vec![
            c.to_string(),
            medoid_user,
            fit.n_users.to_string(),
            fit.n_searches.to_string(),
        ];
        fields.extend(fit.mean_features.iter().map(|v| fmt(*v)));
        medoids.row(&fields)?;
    }
    medoids.finish()?;

    let fits_json = serde_json::to_string_pretty(&fits)?;
    std::fs::write(args.out.join("cluster_fits.json"), fits_json + "\n")?;

    let mut manifest = RunManifest::new("cluster", data.meta.seed, threads);
    manifest.add_dataset_inputs(&args.data)?;
    for name in ["clusters.csv", "medoids.csv", "cluster_fits.json"] {
        manifest.record_output(&args.out.join(name));
    }
    manifest.save(&args.out.join(dataset::MANIFEST_FILE))?;
    println!(
        "clustered {} users into {} groups (cost {:.2}) -> {}",
        features.len(),
        args.k,
        clustering.cost,
        args.out.display()
    );
    Ok(())
}
