//! Built-in hardware and model presets.
//!
//! Model sizes come from the public architecture configurations (hidden
//! size, FFN width, expert count, KV heads, vocabulary) at two bytes per
//! parameter. Hardware capacities are the nominal machine sizes; the C2G
//! bandwidth is an effective PCIe figure (~64% of the link's theoretical
//! rate, which reproduces the ~240 ms per-layer FFN load observed for the
//! 8x22B model on PCIe 4.0 x16).
//!
//! The compute primitives are back-solved from published decode-phase runtime
//! breakdowns, which give per-component totals for one policy on each machine.
//! With the per-layer FFN load time `f` known from the bandwidth, the ratios
//! of those totals fix the CPU attention, GPU FFN and draft times:
//!
//! ```text
//! attention per layer = f * cpu_total / weight_total
//! ffn compute / layer = f * gpu_target_total / weight_total
//! draft per round     = n_layer * f * gpu_draft_total / weight_total
//! ```
//!
//! The draft chunk time is split 2:1 between one prefill pass and one decode
//! step. The prefill pass time is the sum of the prefill-phase GPU and weight
//! totals divided by the number of micro-batches of that run.

use core::fmt;
use core::str::FromStr;

use alloc::string::ToString;

use crate::domain::{HardwareProfile, ModelSpec};

const GIB: u64 = 1 << 30;
const BF16: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetName {
    /// RTX 4090, PCIe 3.0 x16, 256 GiB DRAM, NVMe; Mixtral 8x7B target.
    Env1Mixtral8x7b,
    /// RTX 4090, PCIe 4.0 x16, 448 GiB DRAM; Mixtral 8x22B target.
    Env2Mixtral8x22b,
}

impl PresetName {
    pub const ALL: [PresetName; 2] = [PresetName::Env1Mixtral8x7b, PresetName::Env2Mixtral8x22b];

    pub fn as_str(&self) -> &'static str {
        match self {
            PresetName::Env1Mixtral8x7b => "env1_8x7b",
            PresetName::Env2Mixtral8x22b => "env2_8x22b",
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownPreset(pub alloc::string::String);

impl fmt::Display for UnknownPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown preset `{}` (expected env1_8x7b or env2_8x22b)", self.0)
    }
}

impl FromStr for PresetName {
    type Err = UnknownPreset;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PresetName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| UnknownPreset(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub hardware: HardwareProfile,
    pub target: ModelSpec,
    pub draft: ModelSpec,
}

/// Looks a preset up by its label.
pub fn preset_by_name(name: &str) -> Result<Preset, UnknownPreset> {
    name.parse().map(preset)
}

pub fn preset(name: PresetName) -> Preset {
    match name {
        PresetName::Env1Mixtral8x7b => {
            let target = mixtral_8x7b();
            let hardware = env1(&target);
            Preset {
                hardware,
                target,
                draft: mistral_7b(),
            }
        }
        PresetName::Env2Mixtral8x22b => {
            let target = mixtral_8x22b();
            let hardware = env2(&target);
            Preset {
                hardware,
                target,
                draft: mistral_7b(),
            }
        }
    }
}

/// Dense decoder-only transformer dimensions.
struct Arch {
    hidden: u64,
    n_layer: u32,
    ffn_width: u64,
    experts: u64,
    kv_heads: u64,
    head_dim: u64,
    vocab: u64,
}

impl Arch {
    fn spec(&self, name: &str) -> ModelSpec {
        let h = self.hidden;
        let kv_width = self.kv_heads * self.head_dim;
        // q, o are h x h; k, v are h x kv_width; two RMS norms per layer.
        let attn = 2 * h * h + 2 * h * kv_width + 2 * h;
        let router = if self.experts > 1 { h * self.experts } else { 0 };
        let ffn = self.experts * 3 * h * self.ffn_width + router;
        // untied embedding and output head, final norm
        let other = 2 * self.vocab * h + h;
        ModelSpec {
            name: name.to_string(),
            n_layer: self.n_layer,
            attn_bytes_per_layer: attn * BF16,
            ffn_bytes_per_layer: ffn * BF16,
            other_bytes: other * BF16,
            kv_bytes_per_token_per_layer: 2 * kv_width * BF16,
            dtype_bytes: BF16 as u32,
        }
    }
}

pub fn mixtral_8x7b() -> ModelSpec {
    Arch {
        hidden: 4096,
        n_layer: 32,
        ffn_width: 14336,
        experts: 8,
        kv_heads: 8,
        head_dim: 128,
        vocab: 32000,
    }
    .spec("mixtral-8x7b")
}

pub fn mixtral_8x22b() -> ModelSpec {
    Arch {
        hidden: 6144,
        n_layer: 56,
        ffn_width: 16384,
        experts: 8,
        kv_heads: 8,
        head_dim: 128,
        vocab: 32768,
    }
    .spec("mixtral-8x22b")
}

pub fn mistral_7b() -> ModelSpec {
    Arch {
        hidden: 4096,
        n_layer: 32,
        ffn_width: 14336,
        experts: 1,
        kv_heads: 8,
        head_dim: 128,
        vocab: 32000,
    }
    .spec("mistral-7b")
}

/// Runtime breakdown of one measured run, seconds.
struct Breakdown {
    bs_prefill: u64,
    bs_decoding: u64,
    bs_draft: u64,
    n_cand: u64,
    prefill_gpu: f64,
    prefill_weight: f64,
    decode_cpu: f64,
    decode_weight: f64,
    decode_gpu_target: f64,
    decode_gpu_draft: f64,
}

struct Primitives {
    t_attn_cpu: f64,
    t_ffn_gpu: f64,
    t_draft_prefill_gpu: f64,
    t_draft_decode_gpu: f64,
    t_target_prefill_gpu: f64,
}

fn back_solve(b: &Breakdown, target: &ModelSpec, c2g: f64) -> Primitives {
    let f = target.ffn_bytes_per_layer as f64 / c2g;
    let attn = f * b.decode_cpu / b.decode_weight;
    let ffn = f * b.decode_gpu_target / b.decode_weight;
    let draft_round = f64::from(target.n_layer) * f * b.decode_gpu_draft / b.decode_weight;
    let chunks = b.bs_decoding.div_ceil(b.bs_draft) as f64;
    // chunk = prefill + (n_cand - 1) * decode with prefill = 2 * decode
    let decode_step = draft_round / chunks / (b.n_cand + 1) as f64;
    let micro_batches = (2 * b.bs_decoding).div_ceil(b.bs_prefill) as f64;
    Primitives {
        t_attn_cpu: attn / (b.n_cand * b.bs_decoding) as f64,
        t_ffn_gpu: ffn / b.bs_decoding as f64,
        t_draft_prefill_gpu: 2.0 * decode_step,
        t_draft_decode_gpu: decode_step,
        t_target_prefill_gpu: (b.prefill_gpu + b.prefill_weight) / micro_batches,
    }
}

fn env1(target: &ModelSpec) -> HardwareProfile {
    let c2g = 10.0e9;
    let p = back_solve(
        &Breakdown {
            bs_prefill: 80,
            bs_decoding: 192,
            bs_draft: 8,
            n_cand: 8,
            prefill_gpu: 79.62,
            prefill_weight: 123.48,
            decode_cpu: 531.23,
            decode_weight: 236.2,
            decode_gpu_target: 35.34,
            decode_gpu_draft: 489.02,
        },
        target,
        c2g,
    );
    HardwareProfile {
        gpu_mem_capacity: 24 * GIB,
        cpu_mem_capacity: 256 * GIB,
        // NVMe scratch; capacity is an assumption, bandwidths are measured.
        disk_capacity: 2_000_000_000_000,
        c2g_bandwidth: c2g,
        g2c_bandwidth: c2g,
        disk_read_bandwidth: 3.5e9,
        disk_write_bandwidth: 1.7e9,
        t_attn_cpu: p.t_attn_cpu,
        t_ffn_gpu: p.t_ffn_gpu,
        t_draft_prefill_gpu: p.t_draft_prefill_gpu,
        t_draft_decode_gpu: p.t_draft_decode_gpu,
        t_target_prefill_gpu: p.t_target_prefill_gpu,
    }
}

fn env2(target: &ModelSpec) -> HardwareProfile {
    let c2g = 20.0e9;
    let p = back_solve(
        &Breakdown {
            bs_prefill: 16,
            bs_decoding: 64,
            bs_draft: 8,
            n_cand: 8,
            prefill_gpu: 42.22,
            prefill_weight: 166.45,
            decode_cpu: 746.38,
            decode_weight: 262.64,
            decode_gpu_target: 27.34,
            decode_gpu_draft: 345.93,
        },
        target,
        c2g,
    );
    HardwareProfile {
        gpu_mem_capacity: 24 * GIB,
        cpu_mem_capacity: 448 * GIB,
        disk_capacity: 0,
        c2g_bandwidth: c2g,
        g2c_bandwidth: c2g,
        disk_read_bandwidth: 0.0,
        disk_write_bandwidth: 0.0,
        t_attn_cpu: p.t_attn_cpu,
        t_ffn_gpu: p.t_ffn_gpu,
        t_draft_prefill_gpu: p.t_draft_prefill_gpu,
        t_draft_decode_gpu: p.t_draft_decode_gpu,
        t_target_prefill_gpu: p.t_target_prefill_gpu,
    }
}
