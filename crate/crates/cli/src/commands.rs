use std::io::Read;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use draftcheck_core::analytics::export::{categories_csv, funnel_csv, histogram_csv, histogram_points, tasks_csv};
use draftcheck_core::analytics::{
    category_distribution, compute_funnel, interaction_histogram, task_distribution, FunnelStats,
};
use draftcheck_core::synth::{apportion, synthesize, SyntheticCohortSpec};
use draftcheck_core::{
    serialize_table, EventStore, FeedbackGateway, InteractionRecord, JsonlStore, ProviderConfig, ReportDraft,
};
use draftcheck_server::ServiceConfig;
use serde::Serialize;

use crate::{render, AnalyticsArgs, Command};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Serve { config, listen } => serve(&config, listen),
        Command::CheckConfig { config } => check_config(&config),
        Command::Synth { out, spec, seed, json } => synth(&out, spec.as_deref(), seed, json),
        Command::Funnel(args) => funnel(&args),
        Command::Histogram { args, normalized } => histogram(&args, normalized),
        Command::Tasks(args) => tasks(&args),
        Command::Categories(args) => categories(&args),
        Command::Feedback {
            file,
            mock,
            config,
            round,
            json,
        } => feedback(file.as_deref(), mock.map(Into::into), config.as_deref(), round.as_deref(), json),
    }
}

fn load_config(path: &Path) -> Result<ServiceConfig> {
    Ok(ServiceConfig::load(path)?)
}

fn check_config(path: &Path) -> Result<()> {
    let config = load_config(path)?;
    println!("{}: ok", path.display());
    println!("listen     {}", config.listen);
    println!("store_dir  {}", config.store_dir.display());
    println!("dev_mode   {}", config.dev_mode);
    for r in &config.rounds {
        println!(
            "round {:<12} {:?} {} prompt {}",
            r.id, r.provider.kind, r.provider.model_name, r.provider.prompt_version
        );
    }
    Ok(())
}

fn serve(path: &Path, listen: Option<SocketAddr>) -> Result<()> {
    let mut config = load_config(path)?;
    if let Some(addr) = listen {
        config.listen = addr;
    }
    let state = draftcheck_server::state_from_config(&config)
        .with_context(|| format!("opening store {}", config.store_dir.display()))?;
    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    runtime.block_on(async {
        let listener = draftcheck_server::bind(config.listen).await?;
        draftcheck_server::serve(listener, state, config.static_dir.as_deref(), shutdown_signal()).await?;
        tracing::info!("shut down");
        Ok(())
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

#[derive(Serialize)]
struct SynthRoundSummary {
    round_id: String,
    prompt_version: draftcheck_core::PromptVersion,
    expected: [usize; 4],
    funnel: FunnelStats,
}

fn synth(out: &Path, spec_path: Option<&Path>, seed: Option<u64>, json: bool) -> Result<()> {
    let mut spec = match spec_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<SyntheticCohortSpec>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SyntheticCohortSpec::default_cohort(),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let records = synthesize(&spec)?;

    let store = JsonlStore::open(out)
        .with_context(|| format!("opening {}", out.display()))?
        .without_fsync();
    if !store.is_empty()? {
        bail!("{} already holds records; synth only writes fresh stores", out.display());
    }
    for r in records {
        store.append(r)?;
    }

    let all = store.all();
    let summaries: Vec<SynthRoundSummary> = spec
        .rounds
        .iter()
        .map(|r| SynthRoundSummary {
            round_id: r.round_id.clone(),
            prompt_version: r.prompt_version,
            expected: apportion(&r.mix, r.submitted).expected_funnel(),
            funnel: compute_funnel(&all, &r.round_id),
        })
        .collect();
    if let Some(bad) = summaries.iter().find(|s| s.funnel.stages() != s.expected) {
        bail!(
            "round {}: generated funnel {:?} differs from planned {:?}",
            bad.round_id,
            bad.funnel.stages(),
            bad.expected
        );
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&summaries)?);
    } else {
        println!(
            "wrote {} records for {} students (seed {}) to {}",
            all.len(),
            spec.n_students,
            spec.seed,
            out.display()
        );
        let funnels: Vec<FunnelStats> = summaries.into_iter().map(|s| s.funnel).collect();
        print!("{}", render::funnel(&funnels));
    }
    Ok(())
}

fn open_store(dir: &Path) -> Result<JsonlStore> {
    if !dir.is_dir() {
        bail!("store directory {} does not exist", dir.display());
    }
    Ok(JsonlStore::open(dir)?)
}

fn round_ids(store: &JsonlStore, args: &AnalyticsArgs) -> Result<Vec<String>> {
    Ok(match &args.round {
        Some(r) => vec![r.clone()],
        None => store.rounds()?,
    })
}

fn single_round(args: &AnalyticsArgs) -> Result<&str> {
    args.round.as_deref().context("--round is required for this command")
}

fn write_csv(out: Option<&PathBuf>, csv: &str) -> Result<()> {
    if let Some(path) = out {
        std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load(args: &AnalyticsArgs) -> Result<(JsonlStore, Vec<InteractionRecord>)> {
    let store = open_store(&args.store)?;
    let records = store.all();
    Ok((store, records))
}

fn funnel(args: &AnalyticsArgs) -> Result<()> {
    let (store, records) = load(args)?;
    let stats: Vec<FunnelStats> = round_ids(&store, args)?
        .iter()
        .map(|r| compute_funnel(&records, r))
        .collect();
    write_csv(args.out.as_ref(), &funnel_csv(&stats))?;
    if args.json {
        print_json(&stats)
    } else {
        print!("{}", render::funnel(&stats));
        Ok(())
    }
}

fn histogram(args: &AnalyticsArgs, normalized: bool) -> Result<()> {
    let round = single_round(args)?;
    let (_, records) = load(args)?;
    let hist = interaction_histogram(&records, round, normalized)?;
    write_csv(args.out.as_ref(), &histogram_csv(round, &hist))?;
    if args.json {
        print_json(&histogram_points(&hist))
    } else {
        print!("{}", render::histogram(round, &hist, normalized));
        Ok(())
    }
}

fn tasks(args: &AnalyticsArgs) -> Result<()> {
    let round = single_round(args)?;
    let (_, records) = load(args)?;
    let dist = task_distribution(&records, round);
    write_csv(args.out.as_ref(), &tasks_csv(&dist))?;
    if args.json {
        print_json(&dist)
    } else {
        print!("{}", render::tasks(&dist));
        Ok(())
    }
}

fn categories(args: &AnalyticsArgs) -> Result<()> {
    let round = single_round(args)?;
    let (_, records) = load(args)?;
    let dist = category_distribution(&records, round)?;
    write_csv(args.out.as_ref(), &categories_csv(&dist))?;
    if args.json {
        print_json(&dist)
    } else {
        print!("{}", render::categories(&dist));
        Ok(())
    }
}

fn feedback(
    file: Option<&Path>,
    mock: Option<draftcheck_core::PromptVersion>,
    config: Option<&Path>,
    round: Option<&str>,
    json: bool,
) -> Result<()> {
    let provider = match (mock, config, round) {
        (Some(version), _, _) => ProviderConfig::mock(version),
        (None, Some(path), Some(round)) => {
            let config = load_config(path)?;
            let rc = config
                .round(round)
                .with_context(|| format!("round `{round}` is not in {}", path.display()))?;
            rc.provider.clone()
        }
        _ => bail!("pass --mock <v1|v2> or --config with --round"),
    };
    let text = match file {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s).context("reading standard input")?;
            s
        }
    };
    let gateway = FeedbackGateway::from_config(provider)?;
    let draft = ReportDraft::new(text, "cli", round.unwrap_or("cli"));
    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    let table = runtime.block_on(gateway.request_feedback(&draft))?;
    if json {
        println!("{}", serialize_table(&table));
    } else {
        print!("{}", render::table(&table));
    }
    Ok(())
}
