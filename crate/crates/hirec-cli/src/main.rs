//! Command-line front end for the experiment harness.
//!
//! Exit codes: 0 success, 2 configuration error, 3 checkpoint error,
//! 4 action-constraint violation, 1 anything else.

use std::fmt::Write as _;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hirec::graph::ContactNetwork;
use hirec::harness::{
    eval_episode_spec, plot_rows, read_replications_csv, run_episode, run_eval, run_setup1,
    run_setup2, train_explore, train_policy, write_plot_csv, EpisodeRecord, ExperimentConfig,
    RunSummary, TrainReport,
};
use hirec::{Error, Explorer, Policy};

#[derive(Parser)]
#[command(
    name = "hirec",
    version,
    about = "Epidemic control on partially observable contact networks: training, evaluation, and comparison experiments."
)]
struct Cli {
    /// TOML configuration file. Omitted sections take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides experiment.master_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for checkpoints, tables, and generated files.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads (0 = all cores); overrides experiment.jobs.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a contact graph and write its edge list to the output directory.
    Gen,
    /// Train the exploration agent and write <out>/explore.json.
    TrainExplore,
    /// Train the policy agent on a trained exploration agent; writes <out>/policy.json.
    TrainPolicy {
        /// Exploration checkpoint to build on. Default: <out>/explore.json.
        #[arg(long)]
        explore: Option<PathBuf>,
    },
    /// Evaluate the configured controller over paired replications.
    Eval {
        /// Also write replication 0 as a JSON-lines episode record.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Also write replication 0's per-step beliefs as CSV (t,node,p,q).
        #[arg(long)]
        dump_beliefs: Option<PathBuf>,
    },
    /// Run comparison setup 1 or 2 and write its result tables.
    Compare {
        /// Which setup to run; overrides experiment.setup.
        #[arg(long)]
        setup: Option<u8>,
    },
    /// Aggregate replication tables into a tidy CSV for plotting.
    PlotData {
        /// Replication CSVs produced by eval or compare.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Re-run a recorded episode and check it reproduces exactly.
    Replay {
        record: PathBuf,
        /// Write the replayed record here for inspection.
        #[arg(long)]
        record_out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Checkpoint(_) => 3,
        Error::ConstraintViolation(_) => 4,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.experiment.master_seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.experiment.jobs = jobs;
    }
    // Checkpoints default to where the train commands put them.
    if cfg.control.policy_checkpoint.is_none() {
        cfg.control.policy_checkpoint = Some(cli.out.join("policy.json"));
    }
    if cfg.control.explore_checkpoint.is_none() {
        cfg.control.explore_checkpoint = Some(cli.out.join("explore.json"));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Loads both trained agents; the compare setups always run them.
fn load_trained_agents(cfg: &ExperimentConfig) -> Result<(Policy, Explorer), Error> {
    let policy_path = cfg
        .control
        .policy_checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("control.policy_checkpoint is not set".into()))?;
    let explore_path = cfg
        .control
        .explore_checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("control.explore_checkpoint is not set".into()))?;
    Ok((Policy::load(policy_path)?, Explorer::load(explore_path)?))
}

fn print_train_report(what: &str, report: &TrainReport, checkpoint: &std::path::Path) {
    println!(
        "trained {what}: {} episodes, {} learner steps, last loss {}, recent mean r_a {:.4}, {:.1}s",
        report.episodes,
        report.learner_steps,
        report
            .last_loss
            .map(|l| format!("{l:.6}"))
            .unwrap_or_else(|| "n/a".into()),
        report.recent_mean_ra,
        report.wall_clock_secs
    );
    println!("checkpoint: {}", checkpoint.display());
}

fn print_summary(summary: &RunSummary) {
    println!("method,m1,m2,p_r,reps,mean_ra,ci95");
    for row in &summary.rows {
        println!(
            "{},{},{},{},{},{:.6},{:.6}",
            row.method,
            row.m1,
            row.m2,
            row.p_r.map(|v| v.to_string()).unwrap_or_default(),
            row.reps,
            row.mean_ra,
            row.ci95
        );
    }
    println!("wall clock: {:.1}s", summary.wall_clock_secs);
}

fn write_compare_csv(summary: &RunSummary, path: &std::path::Path) -> Result<(), Error> {
    let mut text = String::from("method,m1,p_r,mean_ra,ci95\n");
    for row in &summary.rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{}",
            row.method,
            row.m1,
            row.p_r.map(|v| v.to_string()).unwrap_or_default(),
            row.mean_ra,
            row.ci95
        );
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = load_config(&cli)?;
    std::fs::create_dir_all(&cli.out)?;
    match &cli.command {
        Command::Gen => {
            let seed = cfg.experiment.master_seed;
            let net = ContactNetwork::generate_scale_free(cfg.graph_cfg(seed))?;
            let path = cli.out.join(format!("graph-{seed}.txt"));
            let file = std::fs::File::create(&path)?;
            net.write_edge_list(BufWriter::new(file))?;
            println!(
                "graph: {} nodes, {} edges, seed {} -> {}",
                net.n(),
                net.true_edge_count(),
                seed,
                path.display()
            );
        }
        Command::TrainExplore => {
            let (_, report) = train_explore(&cfg, &cli.out)?;
            print_train_report("explore", &report, &cli.out.join("explore.json"));
        }
        Command::TrainPolicy { explore } => {
            let path = explore.clone().unwrap_or_else(|| cli.out.join("explore.json"));
            let explorer = Explorer::load(&path)?;
            let (_, report) = train_policy(&cfg, &explorer, &cli.out)?;
            print_train_report("policy", &report, &cli.out.join("policy.json"));
        }
        Command::Eval { record, dump_beliefs } => {
            let (policy, explorer) = cfg.load_agents()?;
            if record.is_some() || dump_beliefs.is_some() {
                let spec = eval_episode_spec(&cfg, 0)?;
                let mut dump = dump_beliefs.as_ref().map(|_| Vec::new());
                let episode =
                    run_episode(&spec, policy.as_ref(), explorer.as_ref(), dump.as_mut())?;
                if let Some(path) = record {
                    let file = std::fs::File::create(path)?;
                    episode.write_jsonl(BufWriter::new(file))?;
                    println!("record: {}", path.display());
                }
                if let (Some(path), Some(rows)) = (dump_beliefs, dump) {
                    let mut text = String::from("t,node,p,q\n");
                    for row in rows {
                        let _ = writeln!(
                            text,
                            "{},{},{},{}",
                            row.t,
                            row.node,
                            row.p,
                            if row.q { 1 } else { 0 }
                        );
                    }
                    std::fs::write(path, text)?;
                    println!("beliefs: {}", path.display());
                }
            }
            let summary = run_eval(&cfg, policy.as_ref(), explorer.as_ref(), None)?;
            summary.save_csv(&cli.out, "eval")?;
            print_summary(&summary);
        }
        Command::Compare { setup } => {
            let mut cfg = cfg;
            if let Some(s) = *setup {
                cfg.experiment.setup = s;
                cfg.validate()?;
            }
            let (policy, explorer) = load_trained_agents(&cfg)?;
            let summary = match cfg.experiment.setup {
                1 => run_setup1(&cfg, &policy, &explorer)?,
                _ => run_setup2(&cfg, &policy, &explorer)?,
            };
            let prefix = format!("setup{}", cfg.experiment.setup);
            summary.save_csv(&cli.out, &prefix)?;
            write_compare_csv(&summary, &cli.out.join("compare.csv"))?;
            print_summary(&summary);
        }
        Command::PlotData { inputs } => {
            let mut all = Vec::new();
            for path in inputs {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Error::Config(format!("cannot read {}: {e}", path.display()))
                })?;
                all.extend(read_replications_csv(&text)?);
            }
            let rows = plot_rows(&all);
            let path = cli.out.join("plot.csv");
            let mut buf = Vec::new();
            write_plot_csv(&rows, &mut buf)?;
            std::fs::write(&path, buf)?;
            println!("{} series -> {}", rows.len(), path.display());
        }
        Command::Replay { record, record_out } => {
            let text = std::fs::read_to_string(record)?;
            let original = EpisodeRecord::from_jsonl_str(&text)?;
            let replayed = original.replay()?;
            if let Some(path) = record_out {
                let file = std::fs::File::create(path)?;
                replayed.write_jsonl(BufWriter::new(file))?;
            }
            if replayed == original && replayed.to_jsonl()? == original.to_jsonl()? {
                println!(
                    "replay matches: r_a = {}, {} abnormal of {} nodes",
                    replayed.end.r_a, replayed.end.ever_abnormal, replayed.header.n
                );
            } else {
                return Err(Error::RecordFormat(
                    "replay diverged from the recorded episode".into(),
                ));
            }
        }
    }
    Ok(())
}
