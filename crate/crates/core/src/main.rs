use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use socket_store::endpoint::Endpoint;
use socket_store::experiment::{self, ExperimentConfig, BASELINE};
use socket_store::moduledef::ModuleManifest;
use socket_store::store::server::Server;
use socket_store::store::{Decision, LogFilter, Store, StoreConfig};
use socket_store::time::SimTime;

#[derive(Parser, Debug)]
#[command(name = "socket-store", version, about = "Marketplace for network-logic modules over a simulated SDN")]
struct Cli {
    /// Directory holding the store's state file.
    #[arg(long, global = true, env = "SOCKSTORE_DATA_DIR", default_value = "store-data")]
    data_dir: PathBuf,
    /// Seed for license token generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Register a specialist who may author and review modules.
    RegisterSpecialist { name: String },
    /// Submit a module bundle (directory with manifest.toml) and open its review.
    Submit {
        bundle: PathBuf,
        /// Leave the module in the submitted state.
        #[arg(long)]
        no_review: bool,
    },
    /// Move a submitted module into review.
    StartReview { module: String },
    /// Record a review decision.
    Review(ReviewArgs),
    /// Accept a module under review.
    Publish {
        module: String,
        #[arg(long)]
        reviewer: String,
    },
    /// Submit a new version of a module that was sent back for revision.
    Resubmit { bundle: PathBuf },
    /// Withdraw a published module.
    Retire { module: String },
    /// Search published modules by name or description.
    Search {
        #[arg(default_value = "")]
        query: String,
    },
    /// Buy a license; prints the token.
    Purchase {
        #[arg(long)]
        app: String,
        #[arg(long)]
        module: String,
    },
    /// Check a token against a module.
    Authorize {
        #[arg(long)]
        token: String,
        #[arg(long)]
        module: String,
    },
    /// Revoke a license token.
    Revoke { token: String },
    /// Evaluate a module on a testbed scenario.
    Eval {
        module: String,
        #[arg(long, default_value = "fig4")]
        scenario: String,
    },
    /// Run a module's network-side directives for a licensed application.
    Instantiate {
        #[arg(long)]
        token: String,
        #[arg(long)]
        module: String,
        /// Module input as name=value; repeatable.
        #[arg(long = "input", value_parser = parse_input)]
        inputs: Vec<(String, String)>,
    },
    /// Show an instance's usage and price.
    Cost { instance: String },
    /// Destroy an instance.
    Teardown { instance: String },
    /// Print the action log.
    Log {
        #[arg(long)]
        actor: Option<String>,
        /// Earliest entry time, ms.
        #[arg(long)]
        since: Option<f64>,
        /// Latest entry time, ms (inclusive).
        #[arg(long)]
        until: Option<f64>,
    },
    /// List agent types and metrics known to the store.
    Library,
    /// Register a device's endpoints under an alias.
    Bind {
        alias: String,
        #[arg(long)]
        device: String,
        /// Endpoint as address:port/nic; repeatable.
        #[arg(long = "endpoint", required = true)]
        endpoints: Vec<Endpoint>,
    },
    /// Look up an alias.
    Resolve { alias: String },
    /// Serve the device protocol over TCP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
    },
    /// Run the deadline experiment and write per-packet CSV.
    RunExperiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct ReviewArgs {
    module: String,
    #[arg(long)]
    reviewer: String,
    #[arg(long, conflicts_with = "revise", required_unless_present = "revise")]
    accept: bool,
    #[arg(long)]
    revise: bool,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// TOML config; defaults apply to absent fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Module id, or "baseline".
    #[arg(long)]
    module: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Also run the baseline, writing <output>-baseline.csv.
    #[arg(long)]
    with_baseline: bool,
}

fn parse_input(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(format!("expected name=value, got {s:?}")),
    }
}

fn open_store(cli: &Cli) -> Result<Store> {
    std::fs::create_dir_all(&cli.data_dir).with_context(|| format!("creating {}", cli.data_dir.display()))?;
    let cfg = StoreConfig { data_dir: Some(cli.data_dir.clone()), seed: cli.seed, ..StoreConfig::default() };
    Store::open(cfg).context("opening store")
}

fn load_bundle(dir: &Path) -> Result<ModuleManifest> {
    ModuleManifest::load_bundle(dir).with_context(|| format!("loading bundle {}", dir.display()))
}

fn ms(t: SimTime) -> String {
    experiment::fmt_ms(t)
}

fn run(cli: Cli) -> Result<()> {
    if let Cmd::RunExperiment(args) = &cli.cmd {
        return run_experiment(args, cli.seed);
    }
    let mut store = open_store(&cli)?;
    match cli.cmd {
        Cmd::RegisterSpecialist { name } => {
            store.register_specialist(&name)?;
            println!("registered {name}");
        }
        Cmd::Submit { bundle, no_review } => {
            let id = store.submit(load_bundle(&bundle)?)?;
            let state =
                if no_review { store.module(&id).expect("just submitted").state } else { store.start_review(&id)? };
            println!("{id} {}", state.as_str());
        }
        Cmd::StartReview { module } => println!("{module} {}", store.start_review(&module)?.as_str()),
        Cmd::Review(r) => {
            let decision = if r.accept { Decision::Accept } else { Decision::Revise };
            println!("{} {}", r.module, store.review(&r.module, decision, &r.reviewer)?.as_str());
        }
        Cmd::Publish { module, reviewer } => {
            println!("{module} {}", store.review(&module, Decision::Accept, &reviewer)?.as_str());
        }
        Cmd::Resubmit { bundle } => {
            let m = load_bundle(&bundle)?;
            let id = m.module_id.clone();
            println!("{id} {}", store.resubmit(m)?.as_str());
        }
        Cmd::Retire { module } => println!("{module} {}", store.retire(&module)?.as_str()),
        Cmd::Search { query } => {
            let hits = store.search(&query);
            if hits.is_empty() {
                println!("no modules found");
            }
            for h in hits {
                let score = h.aggregate.map_or("-".to_string(), |a| format!("{a:.4}"));
                let metric = h.metric_id.as_deref().unwrap_or("-");
                println!("{}\tv{}\t{}\t{metric}={score}\t{:.2}\t{}", h.module_id, h.version, h.name, h.price, h.author);
            }
        }
        Cmd::Purchase { app, module } => println!("{}", store.purchase(&app, &module)?.token),
        Cmd::Authorize { token, module } => match store.authorize(&token, &module) {
            Ok(a) => println!("allow {} for {} (log #{})", a.module_id(), a.app_id(), a.log_seq()),
            Err(d) => bail!("denied: {}", d.reason),
        },
        Cmd::Revoke { token } => {
            let l = store.revoke(&token)?;
            println!("revoked license of {} for {}", l.app_id, l.module_id);
        }
        Cmd::Eval { module, scenario } => {
            for s in store.run_testbed(&module, &scenario)? {
                let v = s.value.map_or("failed".to_string(), |v| format!("{v:.4}"));
                println!("{} {} {v} ({})", s.module_id, s.metric_id, s.scenario);
            }
        }
        Cmd::Instantiate { token, module, inputs } => {
            let auth = match store.authorize(&token, &module) {
                Ok(a) => a,
                Err(d) => bail!("denied: {}", d.reason),
            };
            let inputs: BTreeMap<String, String> = inputs.into_iter().collect();
            let rec = store.instantiate(&auth, &inputs)?;
            println!("{}", rec.instance_id);
            if let Some(a) = &rec.activation {
                for p in &a.paths {
                    println!("path {}: {} ({:.3} ms)", p.index, p.nodes.join("-"), p.latency_ms);
                }
            }
            if let Some(f) = &rec.failure {
                println!("{f} (max feasible K {})", f.max_feasible_k);
            }
        }
        Cmd::Cost { instance } => {
            let r = store.cost(&instance)?;
            for u in &r.usage {
                println!("{}\t{:.6} {}\t{:.6}", u.resource, u.quantity, u.unit, u.amount());
            }
            println!("total {:.6} (weighted {:.6}) at {} ms", r.raw_total, r.weighted_total, ms(r.at));
        }
        Cmd::Teardown { instance } => {
            let n = store.teardown(&instance)?;
            println!("{instance} torn down ({n} agents)");
        }
        Cmd::Log { actor, since, until } => {
            let filter =
                LogFilter { actor, since: since.map(SimTime::from_ms_f64), until: until.map(SimTime::from_ms_f64) };
            for e in store.read_log(&filter) {
                println!("{}\t{}\t{}\t{}\t{}", e.seq, ms(e.ts), e.actor, e.outcome, e.action);
            }
        }
        Cmd::Library => {
            for s in store.library().schemas() {
                let params: Vec<String> = s
                    .params
                    .iter()
                    .map(|p| format!("{}:{}{}", p.name, p.semantic_type, if p.required { "" } else { "?" }))
                    .collect();
                println!("{}\t{:?}\t{}\t{}", s.type_name, s.kind, params.join(","), s.messages.join(","));
            }
        }
        Cmd::Bind { alias, device, endpoints } => {
            let b = store.bind_alias(&alias, &device, endpoints)?;
            println!("{} bound to {} at {} ms", b.alias, b.device, ms(b.refreshed_at));
        }
        Cmd::Resolve { alias } => {
            for e in store.resolve(&alias)? {
                println!("{e}");
            }
        }
        Cmd::Serve { addr } => {
            let server = Server::bind(&addr, Arc::new(Mutex::new(store)))?;
            eprintln!("listening on {}", server.local_addr()?);
            server.run()?;
        }
        Cmd::RunExperiment(_) => unreachable!("handled above"),
    }
    Ok(())
}

fn run_experiment(args: &ExperimentArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(m) = &args.module {
        cfg.module = m.clone();
    }
    if let Some(o) = &args.output {
        cfg.output = o.clone();
    }
    if args.plot.is_some() {
        cfg.plot = args.plot.clone();
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let mut runs = vec![cfg.clone()];
    if args.with_baseline && cfg.module != BASELINE {
        let stem = cfg.output.file_stem().and_then(|s| s.to_str()).unwrap_or("experiment");
        let output = cfg.output.with_file_name(format!("{stem}-baseline.csv"));
        let plot = cfg.plot.as_ref().map(|p| {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("experiment");
            p.with_file_name(format!("{stem}-baseline.svg"))
        });
        runs.insert(0, ExperimentConfig { module: BASELINE.into(), output, plot, ..cfg.clone() });
    }
    for c in runs {
        let report = experiment::run(&c)?;
        report.write_outputs(&c.output, c.plot.as_deref())?;
        print!("{}", report.summary_text());
        println!("csv: {}", c.output.display());
        if let Some(p) = &c.plot {
            println!("plot: {}", p.display());
        }
        println!();
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use socket_store::store::OPERATIONS;

    #[test]
    fn every_store_operation_has_a_command() {
        let cmd = Cli::command();
        let names: Vec<&str> = cmd.get_subcommands().map(|c| c.get_name()).collect();
        for op in OPERATIONS {
            assert!(names.contains(op), "missing command {op}");
        }
        for extra in ["serve", "publish", "run-experiment"] {
            assert!(names.contains(&extra));
        }
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn input_pairs() {
        assert_eq!(parse_input("K=2").unwrap(), ("K".into(), "2".into()));
        assert!(parse_input("=2").is_err());
        assert!(parse_input("K").is_err());
    }
}
