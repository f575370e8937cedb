//! Ranking, ablation, summary and metadata documents.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use specpipe_core::planner::{AblationReport, SimulatedEntry};
use specpipe_core::simulator::{Resource, SimResult};
use specpipe_core::{CostBreakdown, Policy};

pub const RANKING_COLUMNS: [&str; 9] = [
    "bs_prefill",
    "bs_decoding",
    "bs_draft",
    "n_cand",
    "throughput_pred",
    "t_prefill_s",
    "t_decoding_s",
    "v_decoding_bytes",
    "feasible",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub bs_prefill: u32,
    pub bs_decoding: u32,
    pub bs_draft: u32,
    pub n_cand: u32,
    pub throughput_pred: f64,
    pub t_prefill_s: f64,
    pub t_decoding_s: f64,
    pub v_decoding_bytes: u64,
    pub feasible: bool,
}

impl RankingRow {
    pub fn new(p: &Policy, c: &CostBreakdown) -> Self {
        Self {
            bs_prefill: p.bs_prefill,
            bs_decoding: p.bs_decoding,
            bs_draft: p.bs_draft,
            n_cand: p.n_cand,
            throughput_pred: c.throughput,
            t_prefill_s: c.t_prefill,
            t_decoding_s: c.t_decoding,
            v_decoding_bytes: c.v_decoding,
            feasible: c.feasible,
        }
    }

    fn fields(&self) -> Vec<String> {
        vec![
            self.bs_prefill.to_string(),
            self.bs_decoding.to_string(),
            self.bs_draft.to_string(),
            self.n_cand.to_string(),
            format!("{:.6}", self.throughput_pred),
            format!("{:.6}", self.t_prefill_s),
            format!("{:.6}", self.t_decoding_s),
            self.v_decoding_bytes.to_string(),
            self.feasible.to_string(),
        ]
    }
}

fn csv_doc(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub fn json_doc<T: Serialize + ?Sized>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

pub fn ranking_csv(rows: &[RankingRow]) -> String {
    csv_doc(&RANKING_COLUMNS, rows.iter().map(RankingRow::fields))
}

pub fn ranking_json(rows: &[RankingRow]) -> String {
    json_doc(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationLine {
    pub variant: String,
    pub acceptance_p: f64,
    #[serde(flatten)]
    pub row: RankingRow,
}

pub fn ablation_lines(r: &AblationReport) -> Vec<AblationLine> {
    r.rows
        .iter()
        .map(|a| AblationLine {
            variant: a.variant.as_str().to_string(),
            acceptance_p: a.acceptance_p,
            row: RankingRow::new(&a.policy, &a.cost),
        })
        .collect()
}

pub fn ablation_csv(lines: &[AblationLine]) -> String {
    let mut header = vec!["variant", "acceptance_p"];
    header.extend(RANKING_COLUMNS);
    csv_doc(
        &header,
        lines.iter().map(|l| {
            let mut f = vec![l.variant.clone(), format!("{}", l.acceptance_p)];
            f.extend(l.row.fields());
            f
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedRow {
    #[serde(flatten)]
    pub row: RankingRow,
    pub throughput_sim: f64,
    pub rounds_sim: u64,
}

pub fn simulated_rows(entries: &[SimulatedEntry]) -> Vec<SimulatedRow> {
    entries
        .iter()
        .map(|e| SimulatedRow {
            row: RankingRow::new(&e.policy, &e.predicted),
            throughput_sim: e.simulated.throughput,
            rounds_sim: e.simulated.rounds_executed,
        })
        .collect()
}

pub fn simulated_csv(rows: &[SimulatedRow]) -> String {
    let mut header: Vec<&str> = RANKING_COLUMNS.to_vec();
    header.extend(["throughput_sim", "rounds_sim"]);
    csv_doc(
        &header,
        rows.iter().map(|r| {
            let mut f = r.row.fields();
            f.push(format!("{:.6}", r.throughput_sim));
            f.push(r.rounds_sim.to_string());
            f
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub policy: Policy,
    pub seed: u64,
    pub total_sequences: u64,
    pub tokens_generated: u64,
    pub total_time_s: f64,
    pub prefill_time_s: f64,
    pub throughput: f64,
    pub throughput_pred: f64,
    pub rounds: u64,
    pub rounds_pred: u64,
    pub peak_gpu_bytes: u64,
    pub prefill_peak_gpu_bytes: u64,
    pub pinned_gpu_bytes: u64,
    pub busy_fraction: BTreeMap<String, f64>,
}

impl SimSummary {
    pub fn new(policy: Policy, seed: u64, total_sequences: u64, r: &SimResult, pred: &CostBreakdown) -> Self {
        let busy_fraction = Resource::ALL
            .iter()
            .map(|res| {
                let f = if r.total_time > 0.0 { r.busy(*res) / r.total_time } else { 0.0 };
                (res.as_str().to_string(), f)
            })
            .collect();
        Self {
            policy,
            seed,
            total_sequences,
            tokens_generated: r.tokens_generated,
            total_time_s: r.total_time,
            prefill_time_s: r.prefill_time,
            throughput: r.throughput,
            throughput_pred: pred.throughput,
            rounds: r.rounds_executed,
            rounds_pred: pred.rounds,
            peak_gpu_bytes: r.peak_gpu_bytes,
            prefill_peak_gpu_bytes: r.prefill_peak_gpu_bytes,
            pinned_gpu_bytes: r.pinned_gpu_bytes,
            busy_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub files: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `files` into `dir` followed by `meta.json`.
pub fn write_outputs(
    dir: &Path,
    command: &str,
    config_bytes: &[u8],
    seed: u64,
    files: &[(String, String)],
) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        std::fs::write(&p, body)?;
        written.push(p);
    }
    let meta = Meta {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config_sha256: sha256_hex(config_bytes),
        seed,
        files: files.iter().map(|(n, _)| n.clone()).collect(),
    };
    let p = dir.join("meta.json");
    std::fs::write(&p, json_doc(&meta))?;
    written.push(p);
    Ok(written)
}
