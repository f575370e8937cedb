//! Discrete-event simulation of the dual-batch pipeline.
//!
//! Each decoding round verifies one batch on the target model while the
//! draft model proposes for the other batch; a barrier closes the round once
//! both sides are done. Per target layer the CPU attention and the C2G load
//! of the layer's FFN weights run concurrently, and the GPU FFN pass starts
//! when both have finished. The target's FFN pass preempts draft work on the
//! GPU, so a draft step may be split into several fragments.
//!
//! Acceptance is sampled once per unfinished sequence per round.

use alloc::vec::Vec;
use core::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costmodel::{self, LayerTimes};
use crate::domain::{HardwareProfile, ModelSpec, Policy, ValidationError, Workload};
use crate::placement::{assign_tiers, Phase, PlacementError, PlacementOptions, PlacementPlan};
use crate::specdec::AcceptanceModel;

/// Declaration order is the tie-break order of exported traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Resource {
    #[serde(rename = "GPU")]
    Gpu,
    #[serde(rename = "CPU")]
    Cpu,
    #[serde(rename = "IO_C2G")]
    IoC2g,
    #[serde(rename = "IO_G2C")]
    IoG2c,
    #[serde(rename = "IO_DISK")]
    IoDisk,
}

impl Resource {
    pub const ALL: [Resource; 5] = [
        Resource::Gpu,
        Resource::Cpu,
        Resource::IoC2g,
        Resource::IoG2c,
        Resource::IoDisk,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Resource::Gpu => "GPU",
            Resource::Cpu => "CPU",
            Resource::IoC2g => "IO_C2G",
            Resource::IoG2c => "IO_G2C",
            Resource::IoDisk => "IO_DISK",
        }
    }

    fn index(&self) -> usize {
        *self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    /// One prefill micro-batch through the whole target model.
    TargetPrefill,
    KvOffload,
    AttnCpu,
    FfnLoad,
    FfnGpu,
    DraftPrefill,
    DraftDecode,
    DiskPrefetch,
    Barrier,
}

impl Label {
    pub const ALL: [Label; 9] = [
        Label::TargetPrefill,
        Label::KvOffload,
        Label::AttnCpu,
        Label::FfnLoad,
        Label::FfnGpu,
        Label::DraftPrefill,
        Label::DraftDecode,
        Label::DiskPrefetch,
        Label::Barrier,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::TargetPrefill => "target_prefill",
            Label::KvOffload => "kv_offload",
            Label::AttnCpu => "attn_cpu",
            Label::FfnLoad => "ffn_load",
            Label::FfnGpu => "ffn_gpu",
            Label::DraftPrefill => "draft_prefill",
            Label::DraftDecode => "draft_decode",
            Label::DiskPrefetch => "disk_prefetch",
            Label::Barrier => "barrier",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub resource: Resource,
    pub label: Label,
    pub batch: Option<u8>,
    pub layer: Option<u32>,
    /// Decoding round; prefill events carry round 0.
    pub round: u64,
    pub start: f64,
    pub end: f64,
}

impl SimEvent {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    /// Canonical trace order.
    pub fn cmp_key(&self, other: &Self) -> core::cmp::Ordering {
        self.start
            .total_cmp(&other.start)
            .then(self.resource.cmp(&other.resource))
            .then(self.end.total_cmp(&other.end))
            .then(self.label.cmp(&other.label))
            .then(self.batch.cmp(&other.batch))
            .then(self.layer.cmp(&other.layer))
            .then(self.round.cmp(&other.round))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub trace: Vec<SimEvent>,
    pub total_time: f64,
    pub prefill_time: f64,
    pub tokens_generated: u64,
    pub throughput: f64,
    /// GPU reservation while decoding (window, draft model, draft KV).
    pub peak_gpu_bytes: u64,
    pub prefill_peak_gpu_bytes: u64,
    /// Target layers pinned on the GPU on top of `peak_gpu_bytes`.
    pub pinned_gpu_bytes: u64,
    pub rounds_executed: u64,
    /// Seconds, indexed like [`Resource::ALL`].
    pub per_resource_busy: [f64; 5],
}

impl SimResult {
    pub fn busy(&self, r: Resource) -> f64 {
        self.per_resource_busy[r.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    Invalid(ValidationError),
    Placement(PlacementError),
    /// More sequences than the two batches can hold.
    TooManySequences { total: u64, slots: u64 },
    /// A plan admitted by placement needs more GPU memory than exists.
    InfeasiblePlan { peak: u64, capacity: u64 },
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Invalid(e) => write!(f, "invalid input: {e}"),
            Self::Placement(e) => write!(f, "placement failed: {e}"),
            Self::TooManySequences { total, slots } => write!(
                f,
                "{total} sequences do not fit in the {slots} slots of two decoding batches"
            ),
            Self::InfeasiblePlan { peak, capacity } => write!(
                f,
                "plan needs {peak} bytes of GPU memory, capacity is {capacity}"
            ),
        }
    }
}

impl From<ValidationError> for SimError {
    fn from(e: ValidationError) -> Self {
        Self::Invalid(e)
    }
}

impl From<PlacementError> for SimError {
    fn from(e: PlacementError) -> Self {
        Self::Placement(e)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimOptions {
    pub seed: u64,
    pub placement: PlacementOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrefillSim {
    pub trace: Vec<SimEvent>,
    pub end: f64,
    pub peak_gpu_bytes: u64,
}

fn push(trace: &mut Vec<SimEvent>, busy: &mut [f64; 5], ev: SimEvent) {
    busy[ev.resource.index()] += ev.duration();
    trace.push(ev);
}

/// Prefill micro-batches back to back on the GPU, each followed by the G2C
/// offload of its KV cache, which overlaps the next micro-batch.
pub fn simulate_prefill(
    policy: &Policy,
    workload: &Workload,
    hw: &HardwareProfile,
    target: &ModelSpec,
    plan: &PlacementPlan,
) -> PrefillSim {
    let mut busy = [0.0; 5];
    let mut trace = Vec::new();
    let bs = u64::from(policy.bs_prefill);
    let mut gpu_free = 0.0;
    let mut g2c_free = 0.0f64;
    let mut left = workload.total_sequences;
    while left > 0 {
        let n = left.min(bs);
        left -= n;
        let end = gpu_free + hw.t_target_prefill_gpu;
        push(&mut trace, &mut busy, SimEvent {
            resource: Resource::Gpu,
            label: Label::TargetPrefill,
            batch: None,
            layer: None,
            round: 0,
            start: gpu_free,
            end,
        });
        gpu_free = end;
        let bytes = costmodel::prompt_kv_bytes(n, workload, target);
        let start = g2c_free.max(end);
        g2c_free = start + bytes as f64 / hw.g2c_bandwidth;
        push(&mut trace, &mut busy, SimEvent {
            resource: Resource::IoG2c,
            label: Label::KvOffload,
            batch: None,
            layer: None,
            round: 0,
            start,
            end: g2c_free,
        });
    }
    PrefillSim {
        trace,
        end: gpu_free.max(g2c_free),
        peak_gpu_bytes: plan.gpu_bytes(),
    }
}

/// Places GPU work of length `d` from `cursor` on, skipping the busy
/// intervals (sorted, disjoint) and splitting where it has to.
fn fill_gaps(
    busy_iv: &[(f64, f64)],
    idx: &mut usize,
    cursor: &mut f64,
    mut d: f64,
    mut emit: impl FnMut(f64, f64),
) {
    while d > 0.0 {
        while *idx < busy_iv.len() && busy_iv[*idx].1 <= *cursor {
            *idx += 1;
        }
        if *idx < busy_iv.len() && busy_iv[*idx].0 <= *cursor {
            *cursor = busy_iv[*idx].1;
            continue;
        }
        let gap_end = busy_iv.get(*idx).map_or(f64::INFINITY, |iv| iv.0);
        if *cursor + d <= gap_end {
            emit(*cursor, *cursor + d);
            *cursor += d;
            return;
        }
        emit(*cursor, gap_end);
        d -= gap_end - *cursor;
        *cursor = gap_end;
    }
}

/// Decoding rounds until every sequence holds `max_new_tokens` tokens.
/// Time starts at `t0`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_decoding(
    policy: &Policy,
    workload: &Workload,
    hw: &HardwareProfile,
    target: &ModelSpec,
    draft: &ModelSpec,
    plan: &PlacementPlan,
    seed: u64,
    t0: f64,
) -> Result<SimResult, SimError> {
    let slots = policy.in_flight();
    if workload.total_sequences > slots {
        return Err(SimError::TooManySequences {
            total: workload.total_sequences,
            slots,
        });
    }
    let peak = costmodel::decoding_memory(policy, workload, target, draft);
    if plan.gpu_bytes() > hw.gpu_mem_capacity {
        return Err(SimError::InfeasiblePlan {
            peak: plan.gpu_bytes(),
            capacity: hw.gpu_mem_capacity,
        });
    }
    let hw = plan.effective_profile(hw);
    let model = AcceptanceModel::new(workload.acceptance_p, policy.n_cand)
        .map_err(|_| ValidationError::ProbabilityOutOfRange { field: "acceptance_p" })?;
    let lt = LayerTimes::new(policy, &hw, target);
    let n_layer = target.n_layer;
    let chunks = costmodel::draft_chunks(policy);
    let disk_time: Vec<f64> = (0..n_layer)
        .map(|l| plan.disk_bytes_of_layer(l) as f64 / hw.disk_read_bandwidth)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut generated = alloc::vec![0u64; workload.total_sequences as usize];
    let mut trace = Vec::new();
    let mut busy = [0.0; 5];
    let mut now = t0;
    let mut disk_free = t0;
    // completion time of the staging copy of the next layer, if any
    let mut staged: Option<(u32, f64)> = None;
    let mut round = 0u64;
    let mut gpu_iv: Vec<(f64, f64)> = Vec::with_capacity(n_layer as usize);

    while generated.iter().any(|&g| g < workload.max_new_tokens) {
        let verify = (round % 2) as u8;
        let drafting = 1 - verify;
        gpu_iv.clear();

        let mut cpu_free = now;
        let mut c2g_free = now;
        let mut prev_gpu_end = now;
        for layer in 0..n_layer {
            let mut ready = cpu_free.max(prev_gpu_end);
            if disk_time[layer as usize] > 0.0 {
                let staged_end = match staged {
                    Some((l, end)) if l == layer => end,
                    _ => {
                        // nothing in flight: fetch on demand
                        let s = disk_free.max(ready);
                        disk_free = s + disk_time[layer as usize];
                        push(&mut trace, &mut busy, SimEvent {
                            resource: Resource::IoDisk,
                            label: Label::DiskPrefetch,
                            batch: Some(verify),
                            layer: Some(layer),
                            round,
                            start: s,
                            end: disk_free,
                        });
                        disk_free
                    }
                };
                staged = None;
                ready = ready.max(staged_end);
            }
            let a_end = ready + lt.attn_cpu;
            push(&mut trace, &mut busy, SimEvent {
                resource: Resource::Cpu,
                label: Label::AttnCpu,
                batch: Some(verify),
                layer: Some(layer),
                round,
                start: ready,
                end: a_end,
            });
            cpu_free = a_end;

            let next = (layer + 1) % n_layer;
            if disk_time[next as usize] > 0.0 && n_layer > 1 {
                let s = disk_free.max(ready);
                disk_free = s + disk_time[next as usize];
                push(&mut trace, &mut busy, SimEvent {
                    resource: Resource::IoDisk,
                    label: Label::DiskPrefetch,
                    batch: Some(verify),
                    layer: Some(next),
                    round,
                    start: s,
                    end: disk_free,
                });
                staged = Some((next, disk_free));
            }

            let l_end = if plan.ffn_pinned(layer) {
                ready
            } else {
                let s = c2g_free.max(ready);
                c2g_free = s + lt.ffn_load;
                push(&mut trace, &mut busy, SimEvent {
                    resource: Resource::IoC2g,
                    label: Label::FfnLoad,
                    batch: Some(verify),
                    layer: Some(layer),
                    round,
                    start: s,
                    end: c2g_free,
                });
                c2g_free
            };

            let g_start = a_end.max(l_end);
            let g_end = g_start + lt.ffn_gpu;
            push(&mut trace, &mut busy, SimEvent {
                resource: Resource::Gpu,
                label: Label::FfnGpu,
                batch: Some(verify),
                layer: Some(layer),
                round,
                start: g_start,
                end: g_end,
            });
            gpu_iv.push((g_start, g_end));
            prev_gpu_end = g_end;
        }
        let target_end = prev_gpu_end.max(cpu_free);

        let mut cursor = now;
        let mut idx = 0;
        for _ in 0..chunks {
            for step in 0..policy.n_cand {
                let (label, d) = if step == 0 {
                    (Label::DraftPrefill, hw.t_draft_prefill_gpu)
                } else {
                    (Label::DraftDecode, hw.t_draft_decode_gpu)
                };
                fill_gaps(&gpu_iv, &mut idx, &mut cursor, d, |s, e| {
                    push(&mut trace, &mut busy, SimEvent {
                        resource: Resource::Gpu,
                        label,
                        batch: Some(drafting),
                        layer: None,
                        round,
                        start: s,
                        end: e,
                    });
                });
            }
        }

        let end = target_end.max(cursor);
        trace.push(SimEvent {
            resource: Resource::Cpu,
            label: Label::Barrier,
            batch: None,
            layer: None,
            round,
            start: end,
            end,
        });
        for g in generated.iter_mut() {
            if *g < workload.max_new_tokens {
                let k = u64::from(model.sample_accepted(&mut rng));
                *g = (*g + k).min(workload.max_new_tokens);
            }
        }
        now = end;
        round += 1;
    }

    let tokens = workload.total_sequences * workload.max_new_tokens;
    let total_time = now.max(disk_free);
    Ok(SimResult {
        trace,
        total_time,
        prefill_time: t0,
        tokens_generated: tokens,
        throughput: if total_time > 0.0 { tokens as f64 / total_time } else { 0.0 },
        peak_gpu_bytes: peak,
        prefill_peak_gpu_bytes: 0,
        pinned_gpu_bytes: plan.pinned_bytes(),
        rounds_executed: round,
        per_resource_busy: busy,
    })
}

/// Prefill followed by decoding, with plans from [`assign_tiers`].
pub fn simulate(
    policy: &Policy,
    workload: &Workload,
    hw: &HardwareProfile,
    target: &ModelSpec,
    draft: &ModelSpec,
    opts: &SimOptions,
) -> Result<SimResult, SimError> {
    hw.validate()?;
    target.validate()?;
    draft.validate()?;
    policy.validate()?;
    workload.validate()?;
    let pre_plan = assign_tiers(target, draft, hw, policy, workload, Phase::Prefill, opts.placement)?;
    if pre_plan.gpu_bytes() > hw.gpu_mem_capacity {
        return Err(SimError::InfeasiblePlan {
            peak: pre_plan.gpu_bytes(),
            capacity: hw.gpu_mem_capacity,
        });
    }
    let dec_plan = assign_tiers(target, draft, hw, policy, workload, Phase::Decoding, opts.placement)?;
    let pre = simulate_prefill(policy, workload, hw, target, &pre_plan);
    let mut res = simulate_decoding(policy, workload, hw, target, draft, &dec_plan, opts.seed, pre.end)?;
    let mut trace = pre.trace;
    for ev in &trace {
        res.per_resource_busy[ev.resource.index()] += ev.duration();
    }
    trace.append(&mut res.trace);
    trace.sort_by(SimEvent::cmp_key);
    res.trace = trace;
    res.prefill_peak_gpu_bytes = pre.peak_gpu_bytes;
    Ok(res)
}

/// First pair of events on one resource that overlap, if any.
pub fn find_overlap(trace: &[SimEvent]) -> Option<(SimEvent, SimEvent)> {
    for r in Resource::ALL {
        let mut evs: Vec<&SimEvent> = trace.iter().filter(|e| e.resource == r).collect();
        evs.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
        for w in evs.windows(2) {
            if w[0].end > w[1].start {
                return Some((*w[0], *w[1]));
            }
        }
    }
    None
}

/// Wall-clock length of every decoding round, from the barrier events.
pub fn round_durations(res: &SimResult) -> Vec<f64> {
    let mut prev = res.prefill_time;
    let mut barriers: Vec<&SimEvent> = res.trace.iter().filter(|e| e.label == Label::Barrier).collect();
    barriers.sort_by_key(|e| e.round);
    barriers
        .into_iter()
        .map(|b| {
            let d = b.end - prev;
            prev = b.end;
            d
        })
        .collect()
}
