use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use specpipe::commands::{self, CliError, Ctx, DEFAULT_FREE};
use specpipe::config::RunConfig;
use specpipe::trace::TraceFormat;

#[derive(Parser)]
#[command(name = "specpipe", version, about = "Plan, simulate and calibrate speculative decoding under weight offloading")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Leave the GPU FFN term out of the target round.
    #[arg(long)]
    strict_paper_approx: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Rank every feasible policy of the config's search space.
    Plan {
        #[command(flatten)]
        common: Common,
        /// Re-rank the k best policies by simulation.
        #[arg(long, default_value_t = 0)]
        simulate_top_k: usize,
    },
    /// Simulate the config's policy and write a trace.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = TraceFormat::Json)]
        format: TraceFormat,
    },
    /// Print the step-length distribution.
    Pmf {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        n_cand: u32,
    },
    /// Fit hardware primitives to measured throughputs.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// CSV with bs_prefill,bs_decoding,bs_draft,n_cand,throughput.
        #[arg(long)]
        observations: PathBuf,
        /// Comma-separated parameters to fit.
        #[arg(long)]
        free: Option<String>,
        /// Fit on this many evenly spread rows and report the rest.
        #[arg(long)]
        train: Option<usize>,
    },
    /// List presets, or print a config for one.
    Presets {
        #[arg(long)]
        emit: Option<String>,
        #[arg(long, default_value_t = 0.7)]
        acceptance_p: f64,
        /// Emit a simulate config for this policy instead of a plan config.
        #[arg(long)]
        policy: Option<String>,
    },
    /// Compare the full pipeline with its ablated variants.
    Ablation {
        #[command(flatten)]
        common: Common,
    },
}

fn with_ctx<T>(common: &Common, f: impl FnOnce(&Ctx) -> Result<T, CliError>) -> Result<T, CliError> {
    let (cfg, bytes) = RunConfig::load(&common.config)?;
    let ctx = Ctx {
        cfg: &cfg,
        config_bytes: &bytes,
        seed: common.seed.unwrap_or(cfg.seed),
        out_dir: common.out.clone().unwrap_or_else(|| cfg.output_dir.clone()),
        strict: common.strict_paper_approx,
    };
    f(&ctx)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.cmd {
        Cmd::Plan { common, simulate_top_k } => {
            with_ctx(&common, |ctx| commands::cmd_plan(ctx, simulate_top_k, &mut out)).map(drop)
        }
        Cmd::Simulate { common, format } => {
            with_ctx(&common, |ctx| commands::cmd_simulate(ctx, format, &mut out)).map(drop)
        }
        Cmd::Pmf { p, n_cand } => commands::cmd_pmf(p, n_cand, &mut out),
        Cmd::Calibrate { common, observations, free, train } => {
            let free = match free {
                Some(list) => commands::parse_free(&list)?,
                None => DEFAULT_FREE.to_vec(),
            };
            with_ctx(&common, |ctx| commands::cmd_calibrate(ctx, &observations, &free, train, &mut out)).map(drop)
        }
        Cmd::Presets { emit, acceptance_p, policy } => {
            let policy = policy.as_deref().map(commands::parse_policy).transpose()?;
            commands::cmd_presets(emit.as_deref(), acceptance_p, policy, &mut out)
        }
        Cmd::Ablation { common } => with_ctx(&common, |ctx| commands::cmd_ablation(ctx, &mut out)).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
