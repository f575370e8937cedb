//! Tier assignment for every tensor group and the per-layer prefetch plan.
//!
//! Priorities, highest first:
//!
//! 1. a two-layer window (current and next target layer) of GPU placeholders,
//! 2. the draft model and its KV cache on the GPU while decoding,
//! 3. optionally, further target layers pinned on the GPU while headroom lasts,
//! 4. everything else in CPU memory,
//! 5. target parameters that do not fit in CPU memory on disk.
//!
//! Only CPU memory talks to both the GPU and the disk: disk-resident layers
//! are staged through two CPU placeholders before they can be streamed on.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::costmodel;
use crate::domain::{HardwareProfile, ModelSpec, Policy, Workload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Tier {
    Gpu,
    Cpu,
    Disk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Prefill,
    Decoding,
}

/// Declaration order is the tie-break order within a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    AttentionParams,
    FfnParams,
    KvCache,
    DraftParams,
    DraftKv,
    Other,
}

impl TensorKind {
    pub fn is_per_layer(&self) -> bool {
        matches!(self, Self::AttentionParams | Self::FfnParams | Self::KvCache)
    }

    fn is_target_params(&self) -> bool {
        matches!(self, Self::AttentionParams | Self::FfnParams)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseRelevance {
    Prefill,
    Decoding,
    Both,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorGroup {
    pub id: String,
    pub kind: TensorKind,
    pub layer: Option<u32>,
    pub bytes: u64,
    pub phase_relevance: PhaseRelevance,
}

impl TensorGroup {
    fn sort_key(&self) -> (u32, TensorKind) {
        (self.layer.unwrap_or(u32::MAX), self.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub group: TensorGroup,
    pub tier: Tier,
}

/// What a prefetch op moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "layer")]
pub enum Transfer {
    /// One layer's FFN weights into the GPU window.
    Ffn(u32),
    /// Every disk-resident parameter group of one layer into CPU staging.
    LayerParams(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefetchOp {
    /// Issued when the attention of this layer starts.
    pub trigger: u32,
    pub transfer: Transfer,
    pub from: Tier,
    pub to: Tier,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlacementOptions {
    /// Pin additional target layers into leftover GPU memory.
    pub pin_low_yield: bool,
    /// C2G speed-up from page-locked host buffers, applied only when the
    /// whole model fits in CPU memory.
    pub pinned_host_factor: f64,
}

impl Default for PlacementOptions {
    fn default() -> Self {
        Self {
            pin_low_yield: false,
            pinned_host_factor: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementPlan {
    pub phase: Phase,
    /// Sorted by (layer, kind); non-layer groups last.
    pub assignments: Vec<Assignment>,
    pub pinned_gpu: Vec<String>,
    pub prefetch_ops: Vec<PrefetchOp>,
    /// Placeholder slots for the current and next streamed layer.
    pub gpu_window_bytes: u64,
    /// Transient GPU buffers, e.g. one prefill micro-batch of KV cache.
    pub gpu_workspace_bytes: u64,
    /// CPU placeholders for layers staged from disk.
    pub cpu_staging_bytes: u64,
    /// Multiplier the pipeline applies to the C2G bandwidth.
    pub c2g_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlacementError {
    /// The tensors do not fit in GPU + CPU + disk together.
    InsufficientTotalMemory { required: u64, available: u64 },
    /// The mandatory GPU working set alone exceeds GPU memory.
    GpuWorkingSetExceeded { required: u64, capacity: u64 },
    /// Non-parameter tensors must live in CPU memory; they do not fit.
    CpuResidentOverflow { required: u64, capacity: u64 },
}

impl fmt::Display for PlacementError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InsufficientTotalMemory { required, available } => write!(
                f,
                "model needs {required} bytes but GPU + CPU + disk offer {available}"
            ),
            Self::GpuWorkingSetExceeded { required, capacity } => write!(
                f,
                "GPU working set of {required} bytes exceeds capacity {capacity}"
            ),
            Self::CpuResidentOverflow { required, capacity } => write!(
                f,
                "KV cache and resident tensors need {required} bytes of CPU memory, capacity {capacity}"
            ),
        }
    }
}

impl PlacementPlan {
    pub fn tier_of(&self, id: &str) -> Option<Tier> {
        self.assignments
            .iter()
            .find(|a| a.group.id == id)
            .map(|a| a.tier)
    }

    pub fn bytes_on(&self, tier: Tier) -> u64 {
        self.assignments
            .iter()
            .filter(|a| a.tier == tier)
            .map(|a| a.group.bytes)
            .sum()
    }

    /// Assigned GPU bytes plus window and workspace reservations.
    pub fn gpu_bytes(&self) -> u64 {
        self.bytes_on(Tier::Gpu) + self.gpu_window_bytes + self.gpu_workspace_bytes
    }

    pub fn pinned_bytes(&self) -> u64 {
        self.assignments
            .iter()
            .filter(|a| self.pinned_gpu.contains(&a.group.id))
            .map(|a| a.group.bytes)
            .sum()
    }

    pub fn cpu_bytes(&self) -> u64 {
        self.bytes_on(Tier::Cpu) + self.cpu_staging_bytes
    }

    pub fn has_disk(&self) -> bool {
        self.assignments.iter().any(|a| a.tier == Tier::Disk)
    }

    /// True if the FFN of `layer` stays on the GPU.
    pub fn ffn_pinned(&self, layer: u32) -> bool {
        self.pinned_gpu.iter().any(|id| *id == ffn_id(layer))
    }

    /// Disk-resident parameter bytes of one target layer.
    pub fn disk_bytes_of_layer(&self, layer: u32) -> u64 {
        self.assignments
            .iter()
            .filter(|a| {
                a.tier == Tier::Disk && a.group.layer == Some(layer) && a.group.kind.is_target_params()
            })
            .map(|a| a.group.bytes)
            .sum()
    }

    /// Profile with the plan's C2G scaling applied.
    pub fn effective_profile(&self, hw: &HardwareProfile) -> HardwareProfile {
        HardwareProfile {
            c2g_bandwidth: hw.c2g_bandwidth * self.c2g_scale,
            ..*hw
        }
    }

    /// Re-checks the capacity and routing invariants.
    pub fn check(&self, hw: &HardwareProfile) -> Result<(), PlanViolation> {
        if self.gpu_bytes() > hw.gpu_mem_capacity {
            return Err(PlanViolation::GpuOverCapacity);
        }
        if self.cpu_bytes() > hw.cpu_mem_capacity {
            return Err(PlanViolation::CpuOverCapacity);
        }
        if self.bytes_on(Tier::Disk) > hw.disk_capacity {
            return Err(PlanViolation::DiskOverCapacity);
        }
        if self
            .prefetch_ops
            .iter()
            .any(|op| op.from == Tier::Disk && op.to == Tier::Gpu)
        {
            return Err(PlanViolation::DiskToGpu);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanViolation {
    GpuOverCapacity,
    CpuOverCapacity,
    DiskOverCapacity,
    DiskToGpu,
}

fn attn_id(layer: u32) -> String {
    format!("target.L{layer}.attn")
}

fn ffn_id(layer: u32) -> String {
    format!("target.L{layer}.ffn")
}

/// Every tensor group of one phase, in tie-break order.
pub fn tensor_groups(
    target: &ModelSpec,
    draft: &ModelSpec,
    policy: &Policy,
    workload: &Workload,
) -> Vec<TensorGroup> {
    let kv_tokens = workload.total_sequences * (workload.l_input + workload.max_new_tokens);
    let mut groups = Vec::with_capacity(3 * target.n_layer as usize + 3);
    for layer in 0..target.n_layer {
        groups.push(TensorGroup {
            id: attn_id(layer),
            kind: TensorKind::AttentionParams,
            layer: Some(layer),
            bytes: target.attn_bytes_per_layer,
            phase_relevance: PhaseRelevance::Both,
        });
        groups.push(TensorGroup {
            id: ffn_id(layer),
            kind: TensorKind::FfnParams,
            layer: Some(layer),
            bytes: target.ffn_bytes_per_layer,
            phase_relevance: PhaseRelevance::Both,
        });
        groups.push(TensorGroup {
            id: format!("target.L{layer}.kv"),
            kind: TensorKind::KvCache,
            layer: Some(layer),
            bytes: kv_tokens.saturating_mul(target.kv_bytes_per_token_per_layer),
            phase_relevance: PhaseRelevance::Both,
        });
    }
    groups.push(TensorGroup {
        id: "draft.params".into(),
        kind: TensorKind::DraftParams,
        layer: None,
        bytes: draft.total_bytes(),
        phase_relevance: PhaseRelevance::Decoding,
    });
    groups.push(TensorGroup {
        id: "draft.kv".into(),
        kind: TensorKind::DraftKv,
        layer: None,
        bytes: costmodel::draft_kv_bytes(policy, workload, draft),
        phase_relevance: PhaseRelevance::Decoding,
    });
    groups.push(TensorGroup {
        id: "target.other".into(),
        kind: TensorKind::Other,
        layer: None,
        bytes: target.other_bytes,
        phase_relevance: PhaseRelevance::Both,
    });
    groups
}

pub fn assign_tiers(
    target: &ModelSpec,
    draft: &ModelSpec,
    hw: &HardwareProfile,
    policy: &Policy,
    workload: &Workload,
    phase: Phase,
    opts: PlacementOptions,
) -> Result<PlacementPlan, PlacementError> {
    let groups = tensor_groups(target, draft, policy, workload);
    let mut tiers: Vec<Option<Tier>> = alloc::vec![None; groups.len()];

    // (1) window placeholders and phase workspace
    let (gpu_window_bytes, gpu_workspace_bytes) = match phase {
        Phase::Prefill => (
            2 * target.layer_bytes(),
            costmodel::prompt_kv_bytes(u64::from(policy.bs_prefill), workload, target),
        ),
        Phase::Decoding => (costmodel::ffn_window_bytes(target), 0),
    };
    let mut gpu_used = gpu_window_bytes.saturating_add(gpu_workspace_bytes);

    // (2) phase-resident GPU tensors
    for (g, t) in groups.iter().zip(tiers.iter_mut()) {
        let on_gpu = match phase {
            Phase::Prefill => g.kind == TensorKind::Other,
            Phase::Decoding => matches!(g.kind, TensorKind::DraftParams | TensorKind::DraftKv),
        };
        if on_gpu {
            *t = Some(Tier::Gpu);
            gpu_used = gpu_used.saturating_add(g.bytes);
        }
    }
    if gpu_used > hw.gpu_mem_capacity {
        return Err(PlacementError::GpuWorkingSetExceeded {
            required: gpu_used,
            capacity: hw.gpu_mem_capacity,
        });
    }

    // (3) low-yield pinning, ascending layer, stops at the first misfit
    let mut pinned_gpu = Vec::new();
    if opts.pin_low_yield {
        for (g, t) in groups.iter().zip(tiers.iter_mut()) {
            let useful = match phase {
                Phase::Prefill => g.kind.is_target_params(),
                Phase::Decoding => g.kind == TensorKind::FfnParams,
            };
            if !useful || t.is_some() {
                continue;
            }
            if gpu_used + g.bytes > hw.gpu_mem_capacity {
                break;
            }
            gpu_used += g.bytes;
            *t = Some(Tier::Gpu);
            pinned_gpu.push(g.id.clone());
        }
    }

    // (4) CPU: non-parameter tensors are CPU-only, parameters ascending
    let resident: u64 = groups
        .iter()
        .zip(&tiers)
        .filter(|(g, t)| t.is_none() && !g.kind.is_target_params())
        .map(|(g, _)| g.bytes)
        .sum();
    if resident > hw.cpu_mem_capacity {
        return Err(PlacementError::CpuResidentOverflow {
            required: resident,
            capacity: hw.cpu_mem_capacity,
        });
    }
    let params: u64 = groups
        .iter()
        .zip(&tiers)
        .filter(|(g, t)| t.is_none() && g.kind.is_target_params())
        .map(|(g, _)| g.bytes)
        .sum();
    let spills = resident + params > hw.cpu_mem_capacity;
    let cpu_staging_bytes = if spills { 2 * target.layer_bytes() } else { 0 };
    if spills {
        let available = hw
            .cpu_mem_capacity
            .saturating_add(hw.disk_capacity)
            .saturating_sub(cpu_staging_bytes);
        if !hw.disk_enabled() || resident + params > available {
            return Err(PlacementError::InsufficientTotalMemory {
                required: resident + params + cpu_staging_bytes,
                available: hw.cpu_mem_capacity.saturating_add(hw.disk_capacity),
            });
        }
    }
    let mut cpu_used = resident + cpu_staging_bytes;
    let mut spilled = false;
    for (g, t) in groups.iter().zip(tiers.iter_mut()) {
        if t.is_some() {
            continue;
        }
        if !g.kind.is_target_params() {
            *t = Some(Tier::Cpu);
        } else if !spilled && cpu_used + g.bytes <= hw.cpu_mem_capacity {
            cpu_used += g.bytes;
            *t = Some(Tier::Cpu);
        } else {
            // (5) overflow, always a suffix of the layer order
            spilled = true;
            *t = Some(Tier::Disk);
        }
    }

    let mut assignments: Vec<Assignment> = groups
        .into_iter()
        .zip(tiers)
        .map(|(group, tier)| Assignment {
            group,
            tier: tier.expect("every group is assigned"),
        })
        .collect();
    assignments.sort_by_key(|a| a.group.sort_key());

    let mut plan = PlacementPlan {
        phase,
        assignments,
        pinned_gpu,
        prefetch_ops: Vec::new(),
        gpu_window_bytes,
        gpu_workspace_bytes,
        cpu_staging_bytes,
        c2g_scale: if spills { 1.0 } else { opts.pinned_host_factor },
    };
    plan.prefetch_ops = prefetch_schedule(&plan, target, phase);
    Ok(plan)
}

/// Per-layer transfers in execution order.
///
/// While layer `i` computes attention, its FFN streams CPU to GPU (unless
/// pinned) and, if layer `i + 1` has disk-resident parameters, those are
/// staged disk to CPU. During decoding the layer after the last one is layer
/// 0 of the next round. Prefill parameter traffic is part of the prefill
/// pass primitive and only the FFN stream is listed.
pub fn prefetch_schedule(plan: &PlacementPlan, target: &ModelSpec, phase: Phase) -> Vec<PrefetchOp> {
    let n = target.n_layer;
    let mut ops = Vec::new();
    for i in 0..n {
        if !plan.ffn_pinned(i) {
            ops.push(PrefetchOp {
                trigger: i,
                transfer: Transfer::Ffn(i),
                from: Tier::Cpu,
                to: Tier::Gpu,
                bytes: target.ffn_bytes_per_layer,
            });
        }
        let next = match phase {
            Phase::Decoding => (i + 1) % n,
            Phase::Prefill if i + 1 < n => i + 1,
            Phase::Prefill => continue,
        };
        let disk = plan.disk_bytes_of_layer(next);
        if disk > 0 {
            ops.push(PrefetchOp {
                trigger: i,
                transfer: Transfer::LayerParams(next),
                from: Tier::Disk,
                to: Tier::Cpu,
                bytes: disk,
            });
        }
    }
    ops
}
