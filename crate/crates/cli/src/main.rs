//! Batch pipeline driver: data generation, model training and validation,
//! solving, PFA tuning, simulation, and comparison-table export.
//!
//! Every command is a deterministic function of its inputs and the global
//! `--seed`; repeated runs produce byte-identical result CSVs. Exit code 2
//! marks usage errors (bad flags, missing files, schema mismatches), exit
//! code 1 marks runtime failures; errors are emitted as one JSON line on
//! stderr.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Deserialize;

use crossdp::baselines::{fit_ar1, fit_markov_chain, fit_mrjd};
use crossdp::crossing::{crossing_time_cdf, SojournCdf};
use crossdp::grid::GridSpec;
use crossdp::hsmm::{CrossingStateModel, ModelHyperparams};
use crossdp::io;
use crossdp::mdp::ScenarioConfig;
use crossdp::policy::{default_theta_grid, tune_pfa, Policy, PreparedPolicy};
use crossdp::process::{Models, ProcessModel};
use crossdp::sim::{
    build_typical_set, build_worst_case_set, evaluate_profit, percent_of_optimal, simulate_policy,
    ScenarioSet,
};
use crossdp::solver::api::{api_train, ApiConfig};
use crossdp::solver::exact::exact_backward_dp;
use crossdp::solver::linear::{badp_linear, BasisKind};
use crossdp::solver::lookup::badp_lookup;
use crossdp::solver::SolverConfig;
use crossdp::synth::{generate_synthetic, load_profile, SyntheticSpec};

#[derive(Parser)]
#[command(name = "crossdp", version, about = "Crossing-state storage dispatch pipeline")]
struct Cli {
    /// Global seed; all randomness in a run derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic training and instance bundle.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a stochastic model to a training CSV.
    #[command(allow_negative_numbers = true)]
    Train {
        /// hsmm-wind | hsmm-price | ar1 | markov | mrjd
        #[arg(long)]
        kind: String,
        #[arg(long)]
        input: PathBuf,
        /// Duration bins per sign (crossing models).
        #[arg(long, default_value_t = 3)]
        m: usize,
        /// Error bins per crossing state (or Markov-chain bins).
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long)]
        grid_min: f64,
        #[arg(long)]
        grid_max: f64,
        #[arg(long)]
        grid_step: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Crossing-time fidelity statistics of a model against training data.
    Validate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute a value function and store the policy artifact.
    Solve {
        /// exact | badp-lookup | badp-linear | api
        #[arg(long)]
        method: String,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        wind_model: PathBuf,
        #[arg(long)]
        price_model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid-search the buy-low/sell-high thresholds.
    TunePfa {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long)]
        wind_model: PathBuf,
        #[arg(long)]
        price_model: PathBuf,
        #[arg(long, default_value_t = 20)]
        grid_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll a policy over a scenario set; export traces and metrics.
    Simulate {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate several policies on shared scenario sets.
    Compare {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_delimiter = ',')]
        policies: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        scenario_sets: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Usage errors exit 2, runtime errors exit 1.
fn exit_code(err: &crossdp::Error) -> i32 {
    match err {
        crossdp::Error::InvalidInput(_)
        | crossdp::Error::Schema(_)
        | crossdp::Error::Checksum
        | crossdp::Error::CsvRow { .. }
        | crossdp::Error::Csv(_)
        | crossdp::Error::Json(_)
        | crossdp::Error::Io(_) => 2,
        _ => 1,
    }
}

fn main() {
    let cli = Cli::parse();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .ok();
    }
    match run(cli) {
        Ok(()) => {}
        Err(err) => {
            let code = exit_code(&err);
            eprintln!(
                "{}",
                serde_json::json!({"error": err.to_string(), "exit": code})
            );
            std::process::exit(code);
        }
    }
}

#[derive(Deserialize)]
struct GenInstanceSpec {
    #[serde(default = "default_temp_label")]
    temperature: String,
    #[serde(default = "default_r_max")]
    r_max_mwh: f64,
    #[serde(default = "default_rho")]
    rho_kwh: f64,
    #[serde(default = "default_levels")]
    r_levels: usize,
    #[serde(default = "default_eta")]
    eta: f64,
    #[serde(default = "default_r0")]
    r0_frac: f64,
}

fn default_temp_label() -> String {
    "avg".into()
}
fn default_r_max() -> f64 {
    5.0
}
fn default_rho() -> f64 {
    250.0
}
fn default_levels() -> usize {
    41
}
fn default_eta() -> f64 {
    1.0
}
fn default_r0() -> f64 {
    0.5
}

impl Default for GenInstanceSpec {
    fn default() -> Self {
        GenInstanceSpec {
            temperature: default_temp_label(),
            r_max_mwh: default_r_max(),
            rho_kwh: default_rho(),
            r_levels: default_levels(),
            eta: default_eta(),
            r0_frac: default_r0(),
        }
    }
}

#[derive(Deserialize)]
struct GenSpecFile {
    #[serde(flatten)]
    synth: SyntheticSpec,
    #[serde(default)]
    instance: Option<GenInstanceSpec>,
}

fn run(cli: Cli) -> crossdp::Result<()> {
    match cli.command {
        Command::GenData { spec, out } => cmd_gen_data(cli.seed, &spec, &out),
        Command::Train {
            kind,
            input,
            m,
            n,
            grid_min,
            grid_max,
            grid_step,
            out,
        } => cmd_train(&kind, &input, m, n, grid_min, grid_max, grid_step, &out),
        Command::Validate { model, input, out } => cmd_validate(cli.seed, &model, &input, &out),
        Command::Solve {
            method,
            alpha,
            instance,
            wind_model,
            price_model,
            out,
        } => cmd_solve(cli.seed, &method, alpha, &instance, &wind_model, &price_model, &out),
        Command::TunePfa {
            instance,
            scenarios,
            wind_model,
            price_model,
            grid_size,
            out,
        } => cmd_tune_pfa(cli.seed, &instance, &scenarios, &wind_model, &price_model, grid_size, &out),
        Command::Simulate {
            policy,
            instance,
            scenarios,
            out,
        } => cmd_simulate(cli.seed, &policy, &instance, &scenarios, &out),
        Command::Compare {
            instance,
            policies,
            scenario_sets,
            out,
        } => cmd_compare(cli.seed, &instance, &policies, &scenario_sets, &out),
    }
}

fn cmd_gen_data(seed: u64, spec_path: &Path, out: &Path) -> crossdp::Result<()> {
    let text = std::fs::read_to_string(spec_path)?;
    let mut spec: GenSpecFile = serde_json::from_str(&text)?;
    spec.synth.seed ^= seed;
    let data = generate_synthetic(&spec.synth)?;
    std::fs::create_dir_all(out)?;
    io::write_training_csv(&out.join("wind.csv"), &data.wind)?;
    io::write_training_csv(&out.join("price.csv"), &data.price)?;
    io::save_artifact(&out.join("truth.json"), "synthetic-truth", &data.truth)?;

    // Instance bundle: one evaluation day taken from the generated profiles.
    let inst = spec.instance.unwrap_or_default();
    let day = 289usize;
    let load = load_profile(&inst.temperature, day);
    let forecast: Vec<f64> = data.wind.reference[..day].to_vec();
    let temperature: Vec<f64> = data.price.temperature.as_ref().unwrap()[..day].to_vec();
    io::write_profile_csv(&out.join("load.csv"), "load_kw", &load)?;
    io::write_profile_csv(&out.join("wind_forecast.csv"), "forecast_kw", &forecast)?;
    io::write_profile_csv(&out.join("temperature.csv"), "temperature", &temperature)?;
    let instance = io::InstanceFile {
        horizon: 288,
        temperature: inst.temperature,
        forecast_id: 1,
        r_max_mwh: inst.r_max_mwh,
        rho_kwh: inst.rho_kwh,
        eta: inst.eta,
        r_levels: inst.r_levels,
        r0_frac: inst.r0_frac,
        e_max_kw: spec.synth.wind.grid.max,
        load_csv: "load.csv".into(),
        wind_forecast_csv: "wind_forecast.csv".into(),
        temperature_csv: "temperature.csv".into(),
        e0_error: 0.0,
        p0_error: 0.0,
        p_min: None,
        p_max: None,
    };
    io::save_instance(&out.join("instance.json"), &instance)?;
    println!(
        "{}",
        serde_json::json!({"command": "gen-data", "rows": data.wind.len(), "out": out.display().to_string()})
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    kind: &str,
    input: &Path,
    m: usize,
    n: usize,
    grid_min: f64,
    grid_max: f64,
    grid_step: f64,
    out: &Path,
) -> crossdp::Result<()> {
    let series = io::load_training_csv(input)?;
    let grid_spec = GridSpec {
        min: grid_min,
        max: grid_max,
        step: grid_step,
    };
    let grid = grid_spec.build()?;
    let errors: Vec<f64> = series
        .actual
        .iter()
        .zip(&series.reference)
        .map(|(a, r)| a - r)
        .collect();
    let hyper = ModelHyperparams { m, n, grid: grid_spec };
    let (model, flags) = match kind {
        "hsmm-wind" => {
            let m = CrossingStateModel::fit_wind(&series, hyper)?;
            let f = m.diagnostics.flags.len();
            (ProcessModel::Hsmm(m), f)
        }
        "hsmm-price" => {
            let m = CrossingStateModel::fit_price(&series, hyper)?;
            let f = m.diagnostics.flags.len();
            (ProcessModel::Hsmm(m), f)
        }
        "ar1" => (
            ProcessModel::Ar1 {
                params: fit_ar1(&errors)?,
                grid,
            },
            0,
        ),
        "markov" => (
            ProcessModel::Markov {
                model: fit_markov_chain(&errors, &grid, n)?,
                grid,
            },
            0,
        ),
        "mrjd" => (
            ProcessModel::Mrjd {
                params: fit_mrjd(&errors)?,
                grid,
            },
            0,
        ),
        other => {
            return Err(crossdp::Error::InvalidInput(format!(
                "unknown model kind '{other}' (expected hsmm-wind, hsmm-price, ar1, markov, mrjd)"
            )))
        }
    };
    io::save_model(out, &model)?;
    println!(
        "{}",
        serde_json::json!({"command": "train", "kind": kind, "rows": series.len(), "diagnostic_flags": flags, "out": out.display().to_string()})
    );
    Ok(())
}

fn cmd_validate(seed: u64, model_path: &Path, input: &Path, out: &Path) -> crossdp::Result<()> {
    let model = io::load_model(model_path)?;
    let series = io::load_training_csv(input)?;
    let errors: Vec<f64> = series
        .actual
        .iter()
        .zip(&series.reference)
        .map(|(a, r)| a - r)
        .collect();
    let steps = 100_000usize;
    let classes: Option<Vec<usize>> = match &model {
        ProcessModel::Hsmm(m) if m.n_classes > 1 => {
            let temp = series.temperature.as_ref().ok_or_else(|| {
                crossdp::Error::InvalidInput("price validation needs a temperature column".into())
            })?;
            Some(
                m.extras
                    .as_ref()
                    .map(|ex| ex.labels_for(temp))
                    .transpose()?
                    .unwrap_or_default(),
            )
        }
        _ => None,
    };
    let mut rng = crossdp::rng::stream(seed, "validate", 0);
    let sampled = model.sample_eval_path(&mut rng, steps, None, classes.as_deref())?;

    let (train_up, train_down) = crossing_time_cdf(&errors);
    let (model_up, model_down) = crossing_time_cdf(&sampled);
    let ks = |a: &Option<SojournCdf>, b: &Option<SojournCdf>| -> f64 {
        match (a, b) {
            (Some(x), Some(y)) => x.ks_distance(y),
            _ => 1.0,
        }
    };
    let ks_up = ks(&train_up, &model_up);
    let ks_down = ks(&train_down, &model_down);

    std::fs::create_dir_all(out)?;
    let mut csv = String::from("sign,duration,training_F,model_F\n");
    let mut dump = |sign: &str, train: &Option<SojournCdf>, model: &Option<SojournCdf>| {
        if let (Some(tr), Some(md)) = (train, model) {
            let top = tr.tau_max().max(md.tau_max());
            for d in 1..=top {
                csv.push_str(&format!("{sign},{d},{},{}\n", tr.eval(d), md.eval(d)));
            }
        }
    };
    dump("up", &train_up, &model_up);
    dump("down", &train_down, &model_down);
    std::fs::write(out.join("crossing_cdf.csv"), csv)?;
    let stats = serde_json::json!({"ks_up": ks_up, "ks_down": ks_down, "steps": steps});
    std::fs::write(out.join("stats.json"), serde_json::to_string_pretty(&stats)?)?;
    println!(
        "{}",
        serde_json::json!({"command": "validate", "ks_up": ks_up, "ks_down": ks_down})
    );
    Ok(())
}

fn load_models(wind: &Path, price: &Path) -> crossdp::Result<Models> {
    Ok(Models {
        wind: io::load_model(wind)?,
        price: io::load_model(price)?,
    })
}

fn cmd_solve(
    seed: u64,
    method: &str,
    alpha: f64,
    instance: &Path,
    wind_model: &Path,
    price_model: &Path,
    out: &Path,
) -> crossdp::Result<()> {
    let models = load_models(wind_model, price_model)?;
    let scenario = io::build_scenario(instance, &models)?;
    let cfg = SolverConfig {
        alpha,
        seed,
        progress: true,
        ..Default::default()
    };
    let meta = io::VfaMeta {
        method: method.to_string(),
        alpha,
        seed,
        wind_model_hash: io::content_hash(&models.wind)?,
        price_model_hash: io::content_hash(&models.price)?,
    };
    let started = std::time::Instant::now();
    let payload = match method {
        "exact" => {
            let vfa = exact_backward_dp(&scenario, &models, &cfg)?;
            let vfa_name = vfa_file_name(out);
            io::save_lookup_vfa(
                &out.parent().unwrap_or(Path::new(".")).join(&vfa_name),
                &vfa,
                &meta,
            )?;
            io::PolicyPayload::LookupFile { path: vfa_name }
        }
        "badp-lookup" => {
            let vfa = badp_lookup(&scenario, &models, &cfg)?;
            let vfa_name = vfa_file_name(out);
            io::save_lookup_vfa(
                &out.parent().unwrap_or(Path::new(".")).join(&vfa_name),
                &vfa,
                &meta,
            )?;
            io::PolicyPayload::LookupFile { path: vfa_name }
        }
        "badp-linear" => {
            let vfa = badp_linear(&scenario, &models, &cfg, BasisKind::Standard)?;
            io::PolicyPayload::Inline {
                policy: Policy::Linear(vfa),
            }
        }
        "api" => {
            let vfa = api_train(&scenario, &models, &cfg, &ApiConfig::default())?;
            io::PolicyPayload::Inline {
                policy: Policy::Linear(vfa),
            }
        }
        other => {
            return Err(crossdp::Error::InvalidInput(format!(
                "unknown method '{other}' (expected exact, badp-lookup, badp-linear, api)"
            )))
        }
    };
    let bundle = io::PolicyBundle {
        label: format!("{method}-{alpha}"),
        wind_model: wind_model.display().to_string(),
        price_model: price_model.display().to_string(),
        meta: serde_json::json!({"method": method, "alpha": alpha, "seed": seed}),
        policy: payload,
    };
    io::save_policy(out, &bundle)?;
    println!(
        "{}",
        serde_json::json!({"command": "solve", "method": method, "alpha": alpha, "seconds": started.elapsed().as_secs_f64(), "out": out.display().to_string()})
    );
    Ok(())
}

fn vfa_file_name(policy_out: &Path) -> String {
    let stem = policy_out
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "policy".into());
    format!("{stem}.vfa.json")
}

fn build_set(
    seed: u64,
    scenario: &ScenarioConfig,
    models: &Models,
    spec_path: &Path,
) -> crossdp::Result<ScenarioSet> {
    let spec = io::load_scenario_spec(spec_path)?;
    let set_seed = spec.seed ^ seed;
    let mut set = build_typical_set(scenario, models, spec.count, set_seed)?;
    if spec.kind == "worst-case" {
        set = build_worst_case_set(scenario, models, &set, spec.pool, set_seed)?;
    } else if spec.kind != "typical" {
        return Err(crossdp::Error::InvalidInput(format!(
            "unknown scenario kind '{}'",
            spec.kind
        )));
    }
    set.label = spec.label;
    Ok(set)
}

fn load_bundle(policy_path: &Path) -> crossdp::Result<(io::PolicyBundle, Policy, Models)> {
    let bundle = io::load_policy(policy_path)?;
    let base = policy_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let policy = io::resolve_policy(&bundle, &base)?;
    // Model paths resolve as written, then relative to the bundle.
    let resolve = |text: &str| -> PathBuf {
        let p = PathBuf::from(text);
        if p.exists() {
            p
        } else {
            base.join(text)
        }
    };
    let models = load_models(&resolve(&bundle.wind_model), &resolve(&bundle.price_model))?;
    Ok((bundle, policy, models))
}

fn cmd_tune_pfa(
    seed: u64,
    instance: &Path,
    scenarios: &Path,
    wind_model: &Path,
    price_model: &Path,
    grid_size: usize,
    out: &Path,
) -> crossdp::Result<()> {
    let models = load_models(wind_model, price_model)?;
    let scenario = io::build_scenario(instance, &models)?;
    let set = build_set(seed, &scenario, &models, scenarios)?;
    let pooled: Vec<f64> = set
        .price_paths
        .iter()
        .flat_map(|path| {
            path.iter()
                .enumerate()
                .map(|(t, e)| scenario.price_value(t, *e))
        })
        .collect();
    let grid = default_theta_grid(&pooled, grid_size);
    let params = tune_pfa(&scenario, &models, &set, &grid)?;
    let bundle = io::PolicyBundle {
        label: "pfa".into(),
        wind_model: wind_model.display().to_string(),
        price_model: price_model.display().to_string(),
        meta: serde_json::json!({
            "scenario_set_hash": io::content_hash(&set)?,
            "scenario_set_seed": set.seed,
            "grid_size": grid_size,
        }),
        policy: io::PolicyPayload::Inline {
            policy: Policy::Pfa(params),
        },
    };
    io::save_policy(out, &bundle)?;
    println!(
        "{}",
        serde_json::json!({"command": "tune-pfa", "theta_h": params.theta_h, "theta_l": params.theta_l, "out": out.display().to_string()})
    );
    Ok(())
}

fn cmd_simulate(
    seed: u64,
    policy_path: &Path,
    instance: &Path,
    scenarios: &Path,
    out: &Path,
) -> crossdp::Result<()> {
    let (bundle, policy, models) = load_bundle(policy_path)?;
    let scenario = io::build_scenario(instance, &models)?;
    let set = build_set(seed, &scenario, &models, scenarios)?;
    let prepared = PreparedPolicy::prepare(&policy, &scenario, &models)?;
    std::fs::create_dir_all(out)?;

    let mut metrics = String::from("path,total_usd,shifted_usd,belief_resets\n");
    let mut totals = Vec::new();
    for k in 0..set.len() {
        let trace = simulate_policy(
            &prepared,
            &scenario,
            &models,
            &set.wind_paths[k],
            &set.price_paths[k],
        )?;
        io::write_trace_csv(&out.join(format!("trace_{k:03}.csv")), &trace)?;
        metrics.push_str(&format!(
            "{k},{},{},{}\n",
            trace.total_contribution, trace.total_shifted, trace.belief_resets
        ));
        totals.push(trace.total_contribution);
    }
    std::fs::write(out.join("metrics.csv"), metrics)?;
    let mean = totals.iter().sum::<f64>() / totals.len().max(1) as f64;
    println!(
        "{}",
        serde_json::json!({"command": "simulate", "policy": bundle.label, "set": set.label, "paths": set.len(), "mean_total_usd": mean})
    );
    Ok(())
}

fn cmd_compare(
    seed: u64,
    instance: &Path,
    policies: &[PathBuf],
    scenario_sets: &[PathBuf],
    out: &Path,
) -> crossdp::Result<()> {
    if policies.is_empty() || scenario_sets.is_empty() {
        return Err(crossdp::Error::InvalidInput(
            "compare needs at least one policy and one scenario set".into(),
        ));
    }
    let mut loaded = Vec::new();
    for p in policies {
        loaded.push(load_bundle(p)?);
    }
    // Paths are generated from the first policy's models; every policy is
    // evaluated on the same paths.
    let (_, _, path_models) = &loaded[0];
    let scenario = io::build_scenario(instance, path_models)?;

    let mut csv = String::from("policy,scenario_set,mean_total_usd,mean_shifted_usd,pct_of_first\n");
    for set_path in scenario_sets {
        let set = build_set(seed, &scenario, path_models, set_path)?;
        let mut benchmark = None;
        for (bundle, policy, models) in &loaded {
            let scenario_for_policy = io::build_scenario(instance, models)?;
            let prepared = PreparedPolicy::prepare(policy, &scenario_for_policy, models)?;
            let summary = evaluate_profit(&prepared, &scenario_for_policy, models, &set)?;
            let pct = match &benchmark {
                None => 100.0,
                Some(b) => percent_of_optimal(&summary, b),
            };
            csv.push_str(&format!(
                "{},{},{},{},{:.1}\n",
                bundle.label, set.label, summary.mean_total, summary.mean_shifted, pct
            ));
            if benchmark.is_none() {
                benchmark = Some(summary);
            }
        }
    }
    std::fs::write(out, csv)?;
    println!(
        "{}",
        serde_json::json!({"command": "compare", "policies": policies.len(), "sets": scenario_sets.len(), "out": out.display().to_string()})
    );
    Ok(())
}
