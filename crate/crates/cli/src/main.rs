use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use spikenas::arch::{decode_cell, search_space_size, NetworkArch, OpSet, Operation};
use spikenas::config::{ConfigLayer, RunConfig};
use spikenas::data::DatasetKind;
use spikenas::report::{candidate_log_lines, ReportDoc};
use spikenas::run::{self, RunOutput};
use spikenas::scenario::Scenario;
use spikenas::search::AblationStrategy;
use spikenas::snn::CodeMode;

#[derive(Parser)]
#[command(
    name = "spikenas",
    version,
    about = "Memory-aware, training-free architecture search for spiking neural networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Memory-aware per-cell search for a scenario such as 2C3O_M.
    Search {
        #[arg(long)]
        scenario: Scenario,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        out: Output,
    },
    /// Random-search baseline over the scenario's cell count and operation set.
    RandomSearch {
        #[arg(long)]
        scenario: Scenario,
        /// Number of random draws (default 5000).
        #[arg(long)]
        iterations: Option<usize>,
        /// Do not apply the scenario budget to random draws.
        #[arg(long)]
        no_budget_filter: bool,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        out: Output,
    },
    /// Search with one operation removed from the operation set.
    Ablate {
        /// Operation set before removal: 5O, 3O, 2O or a comma list.
        #[arg(long, default_value = "5O")]
        opset: OpSet,
        #[arg(long, default_value_t = 1)]
        cells: usize,
        /// Operation to remove, e.g. Zeroize or AvgPool3x3.
        #[arg(long)]
        remove: Operation,
        #[arg(long, value_enum, default_value_t = Strategy::MemoryAware)]
        strategy: Strategy,
        #[arg(long)]
        iterations: Option<usize>,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        out: Output,
    },
    /// Score one architecture on a seeded batch.
    Score {
        #[command(flatten)]
        arch: ArchArgs,
        /// Write the summed and per-layer kernel matrices as text.
        #[arg(long)]
        dump_matrix: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Parameter count and memory footprint of one architecture.
    Memcalc {
        #[command(flatten)]
        arch: ArchArgs,
        #[command(flatten)]
        common: Common,
    },
    /// List every cell of an operation set, one per line.
    Enumerate {
        #[arg(long, default_value = "5O")]
        opset: OpSet,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    MemoryAware,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum CodeModeArg {
    AnyFire,
    PerTimestep,
}

/// Settings shared by every scoring/searching command. Unset flags fall
/// back to the config file, then `SPIKENAS_*` variables, then defaults.
#[derive(Args)]
struct Common {
    #[arg(long, default_value = "cifar10")]
    dataset: String,
    /// CIFAR root directory (default: $SPIKENAS_DATA_DIR).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// TOML file with settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parameter budget; overrides the scenario preset.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    bits: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    timesteps: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    v_threshold: Option<f64>,
    #[arg(long)]
    v_reset: Option<f64>,
    #[arg(long)]
    stem_channels: Option<usize>,
    #[arg(long)]
    width_multiplier: Option<usize>,
    /// Input resolution after block averaging (divides 32).
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    no_bias: bool,
    #[arg(long, value_enum)]
    code_mode: Option<CodeModeArg>,
    #[arg(long)]
    rate_coding: bool,
    #[arg(long)]
    standardize: bool,
    /// Re-search cells in place instead of holding others at their best.
    #[arg(long)]
    literal_cell_fixing: bool,
    /// Records generated for --dataset synthetic.
    #[arg(long)]
    synthetic_records: Option<usize>,
}

#[derive(Args)]
struct Output {
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report_out: Option<PathBuf>,
    /// Write one JSON line per visited candidate.
    #[arg(long)]
    candidate_log: Option<PathBuf>,
    /// Write a one-row CSV summary.
    #[arg(long)]
    table_out: Option<PathBuf>,
}

#[derive(Args)]
struct ArchArgs {
    #[arg(long, default_value = "5O")]
    opset: OpSet,
    /// Comma-separated per-cell candidate indices, e.g. 17,700.
    #[arg(long, value_delimiter = ',', required_unless_present = "from_report")]
    cells: Vec<u64>,
    /// Take the architecture from an existing report.
    #[arg(long, conflicts_with_all = ["cells", "opset"])]
    from_report: Option<PathBuf>,
}

impl Common {
    fn layer(&self) -> ConfigLayer {
        let flag = |b: bool| b.then_some(true);
        ConfigLayer {
            data_dir: self.data_dir.clone(),
            budget: self.budget,
            bits: self.bits,
            seed: self.seed,
            timesteps: self.timesteps,
            alpha: self.alpha,
            batch_size: self.batch_size,
            jobs: self.jobs,
            tau: self.tau,
            v_threshold: self.v_threshold,
            v_reset: self.v_reset,
            stem_channels: self.stem_channels,
            width_multiplier: self.width_multiplier,
            resolution: self.resolution,
            no_bias: flag(self.no_bias),
            code_mode: self.code_mode.map(|m| match m {
                CodeModeArg::AnyFire => CodeMode::AnyFire,
                CodeModeArg::PerTimestep => CodeMode::PerTimestep,
            }),
            rate_coding: flag(self.rate_coding),
            standardize: flag(self.standardize),
            literal_cell_fixing: flag(self.literal_cell_fixing),
            iterations: None,
            random_budget: None,
            synthetic_records: self.synthetic_records,
        }
    }

    fn dataset(&self) -> Result<DatasetKind> {
        DatasetKind::parse(&self.dataset).with_context(|| {
            format!(
                "unknown dataset `{}` (cifar10, cifar100, synthetic)",
                self.dataset
            )
        })
    }

    fn resolve(&self, cli: ConfigLayer) -> Result<RunConfig> {
        let file = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                Some(ConfigLayer::from_toml(&text)?)
            }
            None => None,
        };
        Ok(RunConfig::resolve(cli, file, ConfigLayer::from_env()?)?)
    }
}

impl ArchArgs {
    fn network(&self, kind: DatasetKind, cfg: &RunConfig) -> Result<(OpSet, NetworkArch)> {
        if let Some(path) = &self.from_report {
            let doc = ReportDoc::from_json(&fs::read_to_string(path)?)
                .with_context(|| format!("parsing report {}", path.display()))?;
            let opset = doc.opset()?;
            let net = doc.best_arch.to_network(&opset)?;
            return Ok((opset, net));
        }
        let net = run::network_from_indices(&self.opset, &self.cells, kind, cfg)?;
        Ok((self.opset.clone(), net))
    }
}

fn emit(text: &str) -> Result<()> {
    let mut w = std::io::stdout().lock();
    writeln!(w, "{text}")?;
    w.flush()?;
    Ok(())
}

fn broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<std::io::Error>()
            .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
    })
}

fn write_outputs(out: &Output, result: &RunOutput) -> Result<()> {
    let json = result.doc.to_json();
    match &out.report_out {
        Some(path) => write_file(path, &(json + "\n"))?,
        None => emit(&json)?,
    }
    if let Some(path) = &out.candidate_log {
        let log = result.report.candidate_log.as_deref().unwrap_or_default();
        write_file(path, &candidate_log_lines(log))?;
    }
    if let Some(path) = &out.table_out {
        write_file(path, &result.doc.to_table()?)?;
    }
    let d = &result.doc;
    eprintln!(
        "{} on {}: cells {:?}, score {}, {} params, {} scored, {} skipped, {} ms",
        d.scenario,
        d.dataset,
        d.best_arch.cell_indices,
        d.best_score
            .map_or("singular".to_string(), |s| format!("{s:.6}")),
        d.n_param,
        d.evaluations_total,
        d.evaluations_skipped,
        d.wall_time_ms
    );
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Search {
            scenario,
            common,
            out,
        } => {
            let cfg = common.resolve(common.layer())?;
            let res = run::run_scenario(
                &scenario,
                common.dataset()?,
                &cfg,
                out.candidate_log.is_some(),
            )?;
            write_outputs(&out, &res)
        }
        Command::RandomSearch {
            scenario,
            iterations,
            no_budget_filter,
            common,
            out,
        } => {
            let mut layer = common.layer();
            layer.iterations = iterations;
            layer.random_budget = no_budget_filter.then_some(false);
            let cfg = common.resolve(layer)?;
            let res = run::run_random(
                &scenario,
                common.dataset()?,
                &cfg,
                out.candidate_log.is_some(),
            )?;
            write_outputs(&out, &res)
        }
        Command::Ablate {
            opset,
            cells,
            remove,
            strategy,
            iterations,
            common,
            out,
        } => {
            let mut layer = common.layer();
            layer.iterations = iterations;
            let cfg = common.resolve(layer)?;
            let strategy = match strategy {
                Strategy::MemoryAware => AblationStrategy::MemoryAware,
                Strategy::Random => AblationStrategy::Random {
                    iterations: cfg.iterations,
                },
            };
            let res = run::run_ablation(
                &opset,
                cells,
                remove,
                strategy,
                common.dataset()?,
                &cfg,
                out.candidate_log.is_some(),
            )?;
            write_outputs(&out, &res)
        }
        Command::Score {
            arch,
            dump_matrix,
            common,
        } => {
            let cfg = common.resolve(common.layer())?;
            let kind = common.dataset()?;
            let (opset, net) = arch.network(kind, &cfg)?;
            let score = run::score_architecture(&net, kind, &cfg, dump_matrix.is_some())?;
            if let (Some(path), Some(diag)) = (&dump_matrix, &score.diagnostics) {
                let mut text = format!("# summed\n{}", diag.summed.to_text());
                for (name, k) in &diag.per_layer {
                    text.push_str(&format!("# {name}\n{}", k.to_text()));
                }
                write_file(path, &text)?;
            }
            let doc = serde_json::json!({
                "opset": opset.name(),
                "cell_indices": net.cell_indices(&opset)?,
                "dataset": kind.name(),
                "seed": cfg.seed,
                "score": score.as_option(),
                "singular": score.singular,
            });
            emit(&serde_json::to_string_pretty(&doc)?)?;
            Ok(())
        }
        Command::Memcalc { arch, common } => {
            let cfg = common.resolve(common.layer())?;
            let (opset, net) = arch.network(common.dataset()?, &cfg)?;
            let fp = run::memcalc(&net, cfg.bits);
            let doc = serde_json::json!({
                "opset": opset.name(),
                "cell_indices": net.cell_indices(&opset)?,
                "n_param": fp.n_param,
                "bits": fp.bits,
                "bytes": fp.bytes,
                "bit_precision": cfg.bits,
            });
            emit(&serde_json::to_string_pretty(&doc)?)?;
            Ok(())
        }
        Command::Enumerate { opset } => {
            let stdout = std::io::stdout();
            let mut w = std::io::BufWriter::new(stdout.lock());
            for i in 0..search_space_size(&opset) {
                let cell = decode_cell(i, &opset)?;
                if writeln!(w, "{i}\t{cell}").is_err() {
                    break;
                }
            }
            w.flush().ok();
            if search_space_size(&opset) == 0 {
                bail!("empty operation set");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
