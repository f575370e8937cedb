//! Closed-form latency, memory and throughput of one policy.
//!
//! Decoding runs in rounds. In each round the target verifies one batch
//! (CPU attention and C2G FFN streaming overlap per layer, then a short GPU
//! FFN pass) while the draft model proposes for the other batch on the GPU.
//! A round therefore lasts `max(target_round, draft_round)`, and the round
//! count follows from the mean tokens per verify step.

use serde::{Deserialize, Serialize};

use crate::domain::{HardwareProfile, ModelSpec, Policy, Workload};
use crate::specdec::AcceptanceModel;

/// Knobs that change the model's shape rather than its inputs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Drop the per-layer GPU FFN term from the target round.
    pub strict_paper_approx: bool,
    /// Charge `target_round + draft_round` per round instead of the max,
    /// i.e. drafting and verification do not overlap.
    pub serial_speculation: bool,
}

/// Everything `evaluate` derives for one policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// Prefill passes plus the KV cache offload.
    pub t_prefill: f64,
    /// Offload share of `t_prefill`.
    pub t_kv_offload: f64,
    pub t_decoding: f64,
    pub t_draft_per_round: f64,
    pub t_target_per_round: f64,
    pub rounds: u64,
    pub v_prefill: u64,
    pub v_decoding: u64,
    pub expected_tokens: f64,
    pub throughput: f64,
    pub feasible: bool,
}

impl CostBreakdown {
    pub fn t_total(&self) -> f64 {
        self.t_prefill + self.t_decoding
    }

    pub fn peak_gpu_bytes(&self) -> u64 {
        self.v_prefill.max(self.v_decoding)
    }
}

fn div_ceil(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Target prefill passes: `ceil(sequences / bs_prefill)` micro-batches.
pub fn prefill_time(policy: &Policy, workload: &Workload, hw: &HardwareProfile) -> f64 {
    let passes = div_ceil(workload.total_sequences, u64::from(policy.bs_prefill));
    passes as f64 * hw.t_target_prefill_gpu
}

/// Moving every prompt's KV cache from GPU to CPU after prefill.
pub fn kv_offload_time(workload: &Workload, hw: &HardwareProfile, target: &ModelSpec) -> f64 {
    prompt_kv_bytes(workload.total_sequences, workload, target) as f64 / hw.g2c_bandwidth
}

pub(crate) fn prompt_kv_bytes(sequences: u64, workload: &Workload, target: &ModelSpec) -> u64 {
    sequences
        .saturating_mul(workload.l_input)
        .saturating_mul(target.kv_bytes_per_token())
}

/// Number of draft sub-batches per decoding batch.
pub fn draft_chunks(policy: &Policy) -> u64 {
    div_ceil(u64::from(policy.bs_decoding), u64::from(policy.bs_draft))
}

/// One draft sub-batch: a prefill pass then `n_cand - 1` decode steps.
pub fn draft_chunk_time(policy: &Policy, hw: &HardwareProfile) -> f64 {
    hw.t_draft_prefill_gpu + f64::from(policy.n_cand - 1) * hw.t_draft_decode_gpu
}

pub fn draft_round_time(policy: &Policy, hw: &HardwareProfile) -> f64 {
    draft_chunks(policy) as f64 * draft_chunk_time(policy, hw)
}

/// Per-layer components of a verify pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerTimes {
    /// CPU attention over `n_cand` tokens of every sequence in the batch.
    pub attn_cpu: f64,
    /// Streaming one layer's FFN weights into the GPU window.
    pub ffn_load: f64,
    /// GPU FFN compute once weights and activations are present.
    pub ffn_gpu: f64,
}

impl LayerTimes {
    pub fn new(policy: &Policy, hw: &HardwareProfile, target: &ModelSpec) -> Self {
        Self {
            attn_cpu: f64::from(policy.n_cand) * f64::from(policy.bs_decoding) * hw.t_attn_cpu,
            ffn_load: target.ffn_bytes_per_layer as f64 / hw.c2g_bandwidth,
            ffn_gpu: f64::from(policy.bs_decoding) * hw.t_ffn_gpu,
        }
    }
}

/// `n_layer * (max(attn, load) + ffn_gpu)`; the GPU term is dropped when
/// `strict_paper_approx` is set.
pub fn target_round_time(
    policy: &Policy,
    hw: &HardwareProfile,
    target: &ModelSpec,
    strict_paper_approx: bool,
) -> f64 {
    let l = LayerTimes::new(policy, hw, target);
    let gpu = if strict_paper_approx { 0.0 } else { l.ffn_gpu };
    f64::from(target.n_layer) * (l.attn_cpu.max(l.ffn_load) + gpu)
}

/// Rounds needed for `max_new_tokens` at the mean step length.
pub fn rounds(policy: &Policy, workload: &Workload) -> u64 {
    let mean = AcceptanceModel::new(workload.acceptance_p, policy.n_cand)
        .map(|m| m.expected_accepted())
        .unwrap_or(1.0);
    let x = workload.max_new_tokens as f64 / mean;
    let nearest = libm::round(x);
    // Absorb rounding in `mean` when the quotient is an exact integer.
    if (x - nearest).abs() <= 1e-9 * x {
        nearest as u64
    } else {
        libm::ceil(x) as u64
    }
}

/// Decoding wall-clock and round count.
pub fn decoding_time(
    policy: &Policy,
    workload: &Workload,
    hw: &HardwareProfile,
    target: &ModelSpec,
    opts: EvalOptions,
) -> (f64, u64) {
    let n = rounds(policy, workload);
    let t = target_round_time(policy, hw, target, opts.strict_paper_approx);
    let d = draft_round_time(policy, hw);
    let per_round = if opts.serial_speculation { t + d } else { t.max(d) };
    (n as f64 * per_round, n)
}

/// GPU bytes of the two-layer parameter window used while streaming layers.
pub fn prefill_parameter_window(target: &ModelSpec) -> u64 {
    2 * target.layer_bytes() + target.other_bytes
}

/// Prefill peak: resident parameter window plus one micro-batch of KV.
pub fn prefill_memory(policy: &Policy, workload: &Workload, target: &ModelSpec) -> u64 {
    prefill_parameter_window(target).saturating_add(prompt_kv_bytes(
        u64::from(policy.bs_prefill),
        workload,
        target,
    ))
}

/// Draft KV reservation, sized for the longest sequence the run can reach.
pub fn draft_kv_bytes(policy: &Policy, workload: &Workload, draft: &ModelSpec) -> u64 {
    u64::from(policy.bs_draft)
        .saturating_mul(workload.l_input + workload.max_new_tokens)
        .saturating_mul(draft.kv_bytes_per_token())
}

/// Two FFN slots (current and prefetch).
pub fn ffn_window_bytes(target: &ModelSpec) -> u64 {
    2 * target.ffn_bytes_per_layer
}

/// Decoding peak: FFN window, resident draft model and draft KV.
pub fn decoding_memory(
    policy: &Policy,
    workload: &Workload,
    target: &ModelSpec,
    draft: &ModelSpec,
) -> u64 {
    ffn_window_bytes(target)
        .saturating_add(draft.total_bytes())
        .saturating_add(draft_kv_bytes(policy, workload, draft))
}

pub fn evaluate(
    policy: &Policy,
    workload: &Workload,
    hw: &HardwareProfile,
    target: &ModelSpec,
    draft: &ModelSpec,
    opts: EvalOptions,
) -> CostBreakdown {
    let t_kv_offload = kv_offload_time(workload, hw, target);
    let t_prefill = prefill_time(policy, workload, hw) + t_kv_offload;
    let (t_decoding, rounds) = decoding_time(policy, workload, hw, target, opts);
    let v_prefill = prefill_memory(policy, workload, target);
    let v_decoding = decoding_memory(policy, workload, target, draft);
    let feasible = v_prefill.max(v_decoding) <= hw.gpu_mem_capacity;
    let expected_tokens = (workload.total_sequences * workload.max_new_tokens) as f64;
    let throughput = if feasible {
        expected_tokens / (t_prefill + t_decoding)
    } else {
        0.0
    };
    CostBreakdown {
        t_prefill,
        t_kv_offload,
        t_decoding,
        t_draft_per_round: draft_round_time(policy, hw),
        t_target_per_round: target_round_time(policy, hw, target, opts.strict_paper_approx),
        rounds,
        v_prefill,
        v_decoding,
        expected_tokens,
        throughput,
        feasible,
    }
}
