use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use level_balance::balance::{dataset_imbalance, estimate_balance, EvalConfig};
use level_balance::env::{ActionSpaceVariant, BalancingEnv, EnvConfig};
use level_balance::gateway::{run_peer_episode, serve, serve_tcp, GatewayConfig, GatewayError, LevelSource, PolicyPeer};
use level_balance::level::{generate_dataset, read_dataset, write_dataset, GeneratorConfig, LevelDataset, LevelRecord};
use level_balance::report;
use level_balance::search::{balance_dataset, balanced_fraction, LevelOutcome, Method, SearchBudget};
use level_balance::sim::{parse_pair, run_match_traced, ArchetypeSpec, MatchConfig};

#[derive(Parser)]
#[command(name = "levelbal", version, about = "Measure and repair balance of two-player tile levels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Random,
    Hillclimb,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Wide,
    Legacy,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a level dataset.
    Gen {
        /// JSON generator config; fields left out take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        count: usize,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate balance of every level and write a per-level CSV.
    Measure {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "A:A")]
        pair: String,
        #[arg(long, default_value_t = 10)]
        sims: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        #[arg(long)]
        out: PathBuf,
        /// Append a `setup,initial_imbalance_fraction` row here.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Run a balancer over a dataset.
    Balance {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "A:A")]
        pair: String,
        /// Evaluation budget per level; for `external`, the episode step limit.
        #[arg(long, default_value_t = 100)]
        budget: u32,
        #[arg(long, default_value_t = 10)]
        sims: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        /// Draw fresh simulation seeds for every evaluation.
        #[arg(long)]
        no_crn: bool,
        #[arg(long)]
        out: PathBuf,
        /// Write the balanced levels as a dataset.
        #[arg(long)]
        levels_out: Option<PathBuf>,
        /// host:port of the policy peer for `external`.
        #[arg(long)]
        peer: Option<String>,
    },
    /// Serve the environment over newline-delimited JSON.
    Serve {
        #[arg(long, value_enum, default_value = "wide")]
        variant: VariantArg,
        /// `stdio` or `tcp:PORT`.
        #[arg(long, default_value = "stdio")]
        transport: String,
        /// Draw reset levels from this dataset instead of generating them.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "A:A")]
        pair: String,
        #[arg(long, default_value_t = 10)]
        sims: u32,
        #[arg(long, default_value_t = 10)]
        max_steps: u32,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render a level, or a before/after pair, with balance captions.
    Render {
        #[arg(long = "in")]
        input: PathBuf,
        /// Dataset holding the edited levels under the same ids.
        #[arg(long)]
        after: Option<PathBuf>,
        /// Defaults to the first level.
        #[arg(long)]
        id: Option<String>,
        #[arg(long, default_value = "A:A")]
        pair: String,
        #[arg(long, default_value_t = 10)]
        sims: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a turn-by-turn trace of one match.
    Trace {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        id: Option<String>,
        #[arg(long, default_value = "A:A")]
        pair: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Usage(String),
    Io(String),
    Protocol(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Io(_) => 2,
            Failure::Protocol(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Io(m) | Failure::Protocol(m) => m,
        }
    }
}

fn usage(e: impl ToString) -> Failure {
    Failure::Usage(e.to_string())
}

fn io_err(path: &Path, e: impl ToString) -> Failure {
    Failure::Io(format!("{}: {}", path.display(), e.to_string()))
}

fn load(path: &Path) -> Result<LevelDataset, Failure> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    read_dataset(BufReader::new(f)).map_err(|e| io_err(path, e))
}

fn save(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn save_dataset(path: &Path, ds: &LevelDataset) -> Result<(), Failure> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    write_dataset(ds, &mut w).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

fn eval_config(sims: u32, seed: u64, epsilon: f64) -> Result<EvalConfig, Failure> {
    let cfg = EvalConfig {
        n_sims: sims,
        base_seed: seed,
        epsilon,
        match_config: MatchConfig::default(),
    };
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn pair(s: &str) -> Result<(ArchetypeSpec, ArchetypeSpec), Failure> {
    parse_pair(s).map_err(usage)
}

fn pick<'a>(ds: &'a LevelDataset, id: Option<&str>) -> Result<&'a LevelRecord, Failure> {
    match id {
        Some(id) => ds.get(id).ok_or_else(|| usage(format!("no level with id {id:?}"))),
        None => ds.records.first().ok_or_else(|| usage("dataset is empty")),
    }
}

fn peer_failure(e: GatewayError) -> Failure {
    match e {
        GatewayError::Connect { .. } | GatewayError::Io(_) => Failure::Io(e.to_string()),
        _ => Failure::Protocol(e.to_string()),
    }
}

fn balance_external(
    ds: &LevelDataset,
    env_cfg: EnvConfig,
    peer_addr: &str,
    seed: u64,
) -> Result<Vec<LevelOutcome>, Failure> {
    let mut peer = PolicyPeer::connect(peer_addr).map_err(peer_failure)?;
    let eps = env_cfg.eval.epsilon;
    let mut env = BalancingEnv::new(env_cfg).map_err(usage)?;
    let mut rows = Vec::with_capacity(ds.len());
    for (i, rec) in ds.iter().enumerate() {
        let ep = run_peer_episode(&mut peer, &mut env, rec.level.clone(), seed.wrapping_add(i as u64))
            .map_err(peer_failure)?;
        rows.push(LevelOutcome {
            level_id: rec.id.clone(),
            method: "external".into(),
            initial_b: ep.initial.b,
            final_b: ep.last.b,
            initially_balanced: (ep.initial.b - 0.5).abs() <= eps,
            balanced: ep.last.balanced,
            evals_used: ep.steps + 1,
            final_level: ep.final_level,
            final_estimate: env.estimate().expect("episode ran").clone(),
        });
    }
    Ok(rows)
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Gen {
            config,
            count,
            seed,
            out,
        } => {
            let mut cfg: GeneratorConfig = match &config {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
                    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
                }
                None => GeneratorConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let ds = generate_dataset(&cfg, count).map_err(usage)?;
            save_dataset(&out, &ds)?;
            eprintln!("wrote {} levels to {}", ds.len(), out.display());
        }
        Command::Measure {
            dataset,
            pair: p,
            sims,
            seed,
            epsilon,
            out,
            summary: summary_out,
        } => {
            let (a1, a2) = pair(&p)?;
            let cfg = eval_config(sims, seed, epsilon)?;
            let ds = load(&dataset)?;
            let summary = dataset_imbalance(&ds, &a1, &a2, &cfg).map_err(usage)?;
            save(&out, &report::imbalance_csv(&summary))?;
            let setup = format!("{} vs {}", a1.name, a2.name);
            println!(
                "{setup}: favor_p1={:.3} favor_p2={:.3} balanced={:.3} initial_imbalance={:.3}",
                summary.frac_favor1,
                summary.frac_favor2,
                summary.frac_balanced,
                summary.initial_imbalance()
            );
            if let Some(path) = summary_out {
                let fresh = !path.exists();
                let mut f = fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| io_err(&path, e))?;
                let mut text = String::new();
                if fresh {
                    text.push_str(report::SUMMARY_HEADER);
                    text.push('\n');
                }
                text.push_str(&report::summary_row(&setup, &summary));
                text.push('\n');
                f.write_all(text.as_bytes()).map_err(|e| io_err(&path, e))?;
            }
        }
        Command::Balance {
            method,
            dataset,
            pair: p,
            budget,
            sims,
            seed,
            epsilon,
            no_crn,
            out,
            levels_out,
            peer,
        } => {
            let (a1, a2) = pair(&p)?;
            let cfg = eval_config(sims, seed, epsilon)?;
            let ds = load(&dataset)?;
            let rows = match method {
                MethodArg::External => {
                    let addr = peer.ok_or_else(|| usage("--method external needs --peer host:port"))?;
                    let env_cfg = EnvConfig {
                        max_steps: budget.saturating_sub(1).max(1),
                        eval: cfg.clone(),
                        arch1: a1.clone(),
                        arch2: a2.clone(),
                        ..EnvConfig::default()
                    };
                    balance_external(&ds, env_cfg, &addr, seed)?
                }
                MethodArg::Random | MethodArg::Hillclimb => {
                    let m = if matches!(method, MethodArg::Random) {
                        Method::Random
                    } else {
                        Method::HillClimb
                    };
                    let b = SearchBudget {
                        max_evals: budget,
                        common_random_numbers: !no_crn,
                        ..SearchBudget::default()
                    };
                    balance_dataset(&ds, m, &a1, &a2, &cfg, &b, seed).map_err(usage)?
                }
            };
            save(&out, &report::batch_csv(&rows))?;
            if let Some(path) = levels_out {
                let edited: LevelDataset = rows
                    .iter()
                    .map(|r| {
                        let mut meta = ds.get(&r.level_id).map(|x| x.meta.clone()).unwrap_or_default();
                        meta.insert("initial_b".into(), serde_json::json!(r.initial_b));
                        meta.insert("final_b".into(), serde_json::json!(r.final_b));
                        meta.insert("method".into(), serde_json::json!(r.method));
                        LevelRecord {
                            id: r.level_id.clone(),
                            level: r.final_level.clone(),
                            meta,
                        }
                    })
                    .collect();
                save_dataset(&path, &edited)?;
            }
            match balanced_fraction(&rows) {
                Some(f) => println!("balanced {f:.3} of initially unbalanced levels ({} levels)", rows.len()),
                None => println!("every level started balanced ({} levels)", rows.len()),
            }
        }
        Command::Serve {
            variant,
            transport,
            dataset,
            pair: p,
            sims,
            max_steps,
            epsilon,
            seed,
        } => {
            let (a1, a2) = pair(&p)?;
            let env = EnvConfig {
                variant: match variant {
                    VariantArg::Wide => ActionSpaceVariant::SwapWide,
                    VariantArg::Legacy => ActionSpaceVariant::SwapWideLegacy,
                },
                max_steps,
                eval: eval_config(sims, seed, epsilon)?,
                arch1: a1,
                arch2: a2,
                ..EnvConfig::default()
            };
            let levels = match dataset {
                Some(path) => LevelSource::Dataset(Arc::new(load(&path)?)),
                None => LevelSource::Generator(GeneratorConfig {
                    seed,
                    ..GeneratorConfig::default()
                }),
            };
            let cfg = Arc::new(GatewayConfig::new(env, levels).map_err(usage)?);
            if transport == "stdio" {
                let stdin = io::stdin();
                serve(cfg, stdin.lock(), io::stdout().lock()).map_err(|e| Failure::Io(e.to_string()))?;
            } else if let Some(port) = transport.strip_prefix("tcp:") {
                let port: u16 = port.parse().map_err(|_| usage(format!("bad port in {transport:?}")))?;
                let listener =
                    TcpListener::bind(("127.0.0.1", port)).map_err(|e| Failure::Io(format!("bind {port}: {e}")))?;
                eprintln!("listening on {}", listener.local_addr().map_err(|e| Failure::Io(e.to_string()))?);
                serve_tcp(cfg, listener).map_err(|e| Failure::Io(e.to_string()))?;
            } else {
                return Err(usage(format!("transport must be stdio or tcp:PORT, got {transport:?}")));
            }
        }
        Command::Render {
            input,
            after,
            id,
            pair: p,
            sims,
            seed,
            epsilon,
            out,
        } => {
            let (a1, a2) = pair(&p)?;
            let cfg = eval_config(sims, seed, epsilon)?;
            let ds = load(&input)?;
            let before = pick(&ds, id.as_deref())?;
            let est_before = estimate_balance(&before.level, &a1, &a2, &cfg);
            let text = match after {
                Some(path) => {
                    let ds_after = load(&path)?;
                    let edited = pick(&ds_after, Some(&before.id))?;
                    let est_after = estimate_balance(&edited.level, &a1, &a2, &cfg);
                    report::render_panel(&before.level, &est_before, &edited.level, &est_after, epsilon)
                }
                None => format!(
                    "{}\n{}\n",
                    level_balance::level::render_ascii(&before.level),
                    report::caption(&est_before, epsilon)
                ),
            };
            match out {
                Some(path) => save(&path, &text)?,
                None => print!("{text}"),
            }
        }
        Command::Trace {
            input,
            id,
            pair: p,
            seed,
        } => {
            let (a1, a2) = pair(&p)?;
            let ds = load(&input)?;
            let rec = pick(&ds, id.as_deref())?;
            let cfg = MatchConfig::default().with_seed(seed);
            let (outcome, turns) = run_match_traced(&rec.level, &a1, &a2, &cfg);
            let mut stdout = io::stdout().lock();
            for t in &turns {
                writeln!(stdout, "{t}").map_err(|e| Failure::Io(e.to_string()))?;
            }
            writeln!(
                stdout,
                "# winner={:?} cause={} turns={} vp={},{}",
                outcome.winner,
                outcome.cause.name(),
                outcome.turns_played,
                outcome.vp[0],
                outcome.vp[1]
            )
            .map_err(|e| Failure::Io(e.to_string()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
