//! Subcommand implementations. Each returns the files it wrote; errors carry
//! the process exit code.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use specpipe_core::costmodel::EvalOptions;
use specpipe_core::planner::{
    ablation_report, calibrate, candidates, evaluate_policy, rank, rerank_by_simulation, spearman,
    CalibrationError, CalibrationOptions, FreeParam, Observation, RankedPolicies, SearchError, SearchOptions,
    SearchSpace,
};
use specpipe_core::simulator::{simulate, SimError, SimOptions};
use specpipe_core::specdec::AcceptanceModel;
use specpipe_core::{HardwareProfile, ModelSpec, Policy, PresetName, Workload};

use crate::config::{ConfigError, RunConfig};
use crate::observations::{self, ObservationError};
use crate::report::{self, RankingRow};
use crate::trace::{TraceDoc, TraceFormat};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Observations(#[from] ObservationError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("internal feasibility violation: {0}")]
    Internal(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Observations(_) | CliError::Usage(_) | CliError::Io { .. } => 1,
            CliError::Infeasible(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::NoFeasiblePolicy => CliError::Infeasible(e.to_string()),
            _ => CliError::Usage(format!("config: {e}")),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InfeasiblePlan { .. } => CliError::Internal(e.to_string()),
            SimError::Placement(_) => CliError::Infeasible(e.to_string()),
            SimError::Invalid(_) | SimError::TooManySequences { .. } => CliError::Usage(format!("config: {e}")),
        }
    }
}

impl From<CalibrationError> for CliError {
    fn from(e: CalibrationError) -> Self {
        match e {
            CalibrationError::BadObservation { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Infeasible(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))
}

/// Inputs shared by the config-driven commands.
pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    pub config_bytes: &'a [u8],
    pub seed: u64,
    pub out_dir: PathBuf,
    pub strict: bool,
}

impl Ctx<'_> {
    fn search_opts(&self) -> SearchOptions {
        SearchOptions {
            eval: EvalOptions {
                strict_paper_approx: self.strict,
                serial_speculation: false,
            },
            scope: self.cfg.workload_scope,
        }
    }

    fn sim_opts(&self) -> SimOptions {
        SimOptions {
            seed: self.seed,
            placement: self.cfg.placement,
        }
    }

    fn write(&self, command: &str, files: &[(String, String)]) -> Result<Vec<PathBuf>, CliError> {
        report::write_outputs(&self.out_dir, command, self.config_bytes, self.seed, files)
            .map_err(io_err(&self.out_dir))
    }
}

/// Grid search with the evaluations spread over worker threads. The ranking
/// does not depend on the number of workers.
pub fn search_parallel(
    space: &SearchSpace,
    workload: &Workload,
    hw: &HardwareProfile,
    target: &ModelSpec,
    draft: &ModelSpec,
    opts: SearchOptions,
    workers: usize,
) -> Result<RankedPolicies, SearchError> {
    space.validate()?;
    let cands = candidates(space, workload, hw, target, draft);
    let workers = workers.max(1);
    let chunk = cands.len().div_ceil(workers).max(1);
    let entries = std::thread::scope(|s| {
        let handles: Vec<_> = cands
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|p| (*p, evaluate_policy(p, workload, hw, target, draft, opts)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    rank(entries)
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

pub fn cmd_plan(ctx: &Ctx, simulate_top_k: usize, out: &mut dyn Write) -> Result<Vec<PathBuf>, CliError> {
    let cfg = ctx.cfg;
    let space = cfg.require_search_space()?;
    let opts = ctx.search_opts();
    let ranked = search_parallel(space, &cfg.workload, &cfg.hardware, &cfg.target_model, &cfg.draft_model, opts, workers())?;
    let rows: Vec<RankingRow> = ranked.entries.iter().map(|(p, c)| RankingRow::new(p, c)).collect();
    let mut files = vec![
        ("ranking.csv".to_string(), report::ranking_csv(&rows)),
        ("ranking.json".to_string(), report::ranking_json(&rows)),
    ];
    let best = ranked.entries[0];
    emit(out, &format!(
        "feasible policies: {}\nbest policy: {} predicted {:.3} tok/s\n",
        ranked.entries.len(),
        best.0,
        best.1.throughput
    ))?;
    if simulate_top_k > 0 {
        let sims = rerank_by_simulation(&ranked, simulate_top_k, &cfg.workload, &cfg.hardware, &cfg.target_model, &cfg.draft_model, opts, &ctx.sim_opts())?;
        let srows = report::simulated_rows(&sims);
        files.push(("simulated.csv".to_string(), report::simulated_csv(&srows)));
        files.push(("simulated.json".to_string(), report::json_doc(&srows)));
        if let Some(top) = sims.first() {
            emit(out, &format!(
                "best after simulating top {}: {} simulated {:.3} tok/s\n",
                sims.len(),
                top.policy,
                top.simulated.throughput
            ))?;
        }
    }
    ctx.write("plan", &files)
}

pub fn cmd_simulate(ctx: &Ctx, format: TraceFormat, out: &mut dyn Write) -> Result<Vec<PathBuf>, CliError> {
    let cfg = ctx.cfg;
    let policy = cfg.require_policy()?;
    let opts = ctx.search_opts();
    let w = opts.scope.apply(&cfg.workload, &policy);
    let res = simulate(&policy, &w, &cfg.hardware, &cfg.target_model, &cfg.draft_model, &ctx.sim_opts())?;
    if res.peak_gpu_bytes + res.pinned_gpu_bytes > cfg.hardware.gpu_mem_capacity {
        return Err(CliError::Internal(format!(
            "decoding peak {} B exceeds GPU capacity {} B",
            res.peak_gpu_bytes + res.pinned_gpu_bytes,
            cfg.hardware.gpu_mem_capacity
        )));
    }
    let pred = evaluate_policy(&policy, &cfg.workload, &cfg.hardware, &cfg.target_model, &cfg.draft_model, opts);
    let summary = report::SimSummary::new(policy, ctx.seed, w.total_sequences, &res, &pred);
    let doc = TraceDoc::from_events(&res.trace);
    let files = vec![
        (format.file_name().to_string(), doc.render(format)),
        ("summary.json".to_string(), report::json_doc(&summary)),
    ];
    let mut text = format!(
        "policy {}  seed {}\nthroughput {:.3} tok/s (predicted {:.3})\nrounds {} (predicted {})\ntotal {:.3} s, prefill {:.3} s\npeak GPU {} B\n",
        policy, ctx.seed, summary.throughput, summary.throughput_pred, summary.rounds, summary.rounds_pred,
        summary.total_time_s, summary.prefill_time_s, summary.peak_gpu_bytes
    );
    for (r, f) in &summary.busy_fraction {
        text.push_str(&format!("busy {r:<8} {:.1}%\n", 100.0 * f));
    }
    emit(out, &text)?;
    ctx.write("simulate", &files)
}

pub fn cmd_pmf(p: f64, n_cand: u32, out: &mut dyn Write) -> Result<(), CliError> {
    let m = AcceptanceModel::new(p, n_cand).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut text = String::from("k\tpmf\tcumulative\n");
    let mut cum = 0.0;
    for (i, q) in m.pmf().iter().enumerate() {
        cum += q;
        text.push_str(&format!("{}\t{:.12}\t{:.12}\n", i + 1, q, cum));
    }
    text.push_str(&format!("expected\t{:.12}\n", m.expected_accepted()));
    emit(out, &text)
}

#[derive(Debug, Serialize)]
struct CalibrationRow {
    no: u32,
    policy: Policy,
    measured: f64,
    predicted: f64,
    residual: f64,
}

#[derive(Debug, Serialize)]
struct CalibrationDoc {
    free_params: Vec<&'static str>,
    acceptance_p: f64,
    rms_error: f64,
    train: Vec<CalibrationRow>,
    held_out: Vec<CalibrationRow>,
    spearman_held_out: Option<f64>,
}

pub fn parse_free(list: &str) -> Result<Vec<FreeParam>, CliError> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            FreeParam::parse(s.trim()).ok_or_else(|| CliError::Usage(format!("--free: unknown parameter `{}`", s.trim())))
        })
        .collect()
}

pub const DEFAULT_FREE: [FreeParam; 3] = [FreeParam::TAttnCpu, FreeParam::TTargetPrefillGpu, FreeParam::AcceptanceP];

pub fn cmd_calibrate(
    ctx: &Ctx,
    observations_path: &Path,
    free: &[FreeParam],
    train: Option<usize>,
    out: &mut dyn Write,
) -> Result<Vec<PathBuf>, CliError> {
    let cfg = ctx.cfg;
    let rows = observations::load(observations_path)?;
    let train_idx = observations::spread(rows.len(), train.unwrap_or(rows.len()));
    let train_obs: Vec<Observation> = train_idx.iter().map(|&i| rows[i].obs).collect();
    let opts = CalibrationOptions {
        seed: ctx.seed,
        search: ctx.search_opts(),
        ..CalibrationOptions::default()
    };
    let fit = calibrate(&train_obs, &cfg.workload, &cfg.hardware, &cfg.target_model, &cfg.draft_model, free, &opts)?;
    let w = Workload {
        acceptance_p: fit.acceptance_p,
        ..cfg.workload
    };
    let line = |i: usize| {
        let r = rows[i];
        let predicted = evaluate_policy(&r.obs.policy, &w, &fit.profile, &cfg.target_model, &cfg.draft_model, opts.search).throughput;
        CalibrationRow {
            no: r.no,
            policy: r.obs.policy,
            measured: r.obs.throughput,
            predicted,
            residual: (predicted - r.obs.throughput) / r.obs.throughput,
        }
    };
    let held_idx: Vec<usize> = (0..rows.len()).filter(|i| !train_idx.contains(i)).collect();
    let held_out: Vec<CalibrationRow> = held_idx.iter().map(|&i| line(i)).collect();
    let rho = spearman(
        &held_out.iter().map(|r| r.predicted).collect::<Vec<_>>(),
        &held_out.iter().map(|r| r.measured).collect::<Vec<_>>(),
    );
    let doc = CalibrationDoc {
        free_params: free.iter().map(|f| f.as_str()).collect(),
        acceptance_p: fit.acceptance_p,
        rms_error: fit.rms_error,
        train: train_idx.iter().map(|&i| line(i)).collect(),
        held_out,
        spearman_held_out: rho,
    };
    let fitted_cfg = RunConfig {
        hardware: fit.profile,
        workload: w,
        ..cfg.clone()
    };
    let files = vec![
        ("fitted_profile.json".to_string(), report::json_doc(&fit.profile)),
        ("fitted_config.json".to_string(), format!("{}\n", fitted_cfg.to_json())),
        ("calibration.json".to_string(), report::json_doc(&doc)),
    ];
    let mut text = format!(
        "fitted {} on {} rows: rms relative error {:.4}, acceptance_p {:.4}\n",
        doc.free_params.join(","),
        doc.train.len(),
        fit.rms_error,
        fit.acceptance_p
    );
    if let Some(r) = rho {
        text.push_str(&format!("held-out rows {}: spearman {:.4}\n", doc.held_out.len(), r));
    }
    emit(out, &text)?;
    ctx.write("calibrate", &files)
}

pub fn cmd_presets(emit_name: Option<&str>, acceptance_p: f64, policy: Option<Policy>, out: &mut dyn Write) -> Result<(), CliError> {
    match emit_name {
        None => {
            let mut text = String::new();
            for name in PresetName::ALL {
                let p = specpipe_core::preset(name);
                text.push_str(&format!(
                    "{}\t{} ({} layers, {:.1} GB) + {}\tGPU {} GiB, CPU {} GiB, C2G {:.1} GB/s\n",
                    name,
                    p.target.name,
                    p.target.n_layer,
                    p.target.total_bytes() as f64 / 1e9,
                    p.draft.name,
                    p.hardware.gpu_mem_capacity >> 30,
                    p.hardware.cpu_mem_capacity >> 30,
                    p.hardware.c2g_bandwidth / 1e9,
                ));
            }
            emit(out, &text)
        }
        Some(name) => {
            let preset: PresetName = name.parse().map_err(|e: specpipe_core::presets::UnknownPreset| CliError::Usage(e.to_string()))?;
            if !(0.0..=1.0).contains(&acceptance_p) {
                return Err(CliError::Usage(format!("--acceptance-p {acceptance_p} is outside [0, 1]")));
            }
            let cfg = RunConfig::for_preset(preset, acceptance_p, policy);
            emit(out, &format!("{}\n", cfg.to_json()))
        }
    }
}

pub fn cmd_ablation(ctx: &Ctx, out: &mut dyn Write) -> Result<Vec<PathBuf>, CliError> {
    let cfg = ctx.cfg;
    let opts = ctx.search_opts();
    let default_space = SearchSpace::default();
    let space = cfg.search_space.as_ref().unwrap_or(&default_space);
    let best = match cfg.policy {
        Some(p) => p,
        None => search_parallel(space, &cfg.workload, &cfg.hardware, &cfg.target_model, &cfg.draft_model, opts, workers())?.best,
    };
    let rep = ablation_report(&cfg.workload, &cfg.hardware, &cfg.target_model, &cfg.draft_model, best, space, ctx.seed, opts);
    let lines = report::ablation_lines(&rep);
    let mut text = String::new();
    for l in &lines {
        text.push_str(&format!(
            "{:<14} ({}, {}, {}, {})  {:.3} tok/s\n",
            l.variant, l.row.bs_prefill, l.row.bs_decoding, l.row.bs_draft, l.row.n_cand, l.row.throughput_pred
        ));
    }
    emit(out, &text)?;
    let files = vec![
        ("ablation.csv".to_string(), report::ablation_csv(&lines)),
        ("ablation.json".to_string(), report::json_doc(&lines)),
    ];
    ctx.write("ablation", &files)
}

/// Parses `a,b,c,d` into a policy.
pub fn parse_policy(s: &str) -> Result<Policy, CliError> {
    let v: Vec<u32> = s
        .split(',')
        .map(|x| x.trim().parse::<u32>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--policy `{s}`: expected four comma-separated counts")))?;
    let [a, b, c, d] = v[..] else {
        return Err(CliError::Usage(format!("--policy `{s}`: expected four comma-separated counts")));
    };
    let p = Policy::new(a, b, c, d);
    p.validate().map_err(|e| CliError::Usage(format!("--policy: {e}")))?;
    Ok(p)
}
