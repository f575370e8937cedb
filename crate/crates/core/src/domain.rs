//! Domain types shared by every other module.
//!
//! Units are fixed crate-wide: sizes in bytes, times in seconds, bandwidths in
//! bytes per second. Nothing in the crate converts between GB and GiB or
//! between milliseconds and seconds; presets do that once at construction.

use core::fmt;

use serde::{Deserialize, Serialize};

/// Measured or assumed primitives of one machine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareProfile {
    pub gpu_mem_capacity: u64,
    pub cpu_mem_capacity: u64,
    /// Zero disables the disk tier.
    pub disk_capacity: u64,
    /// CPU memory to GPU memory.
    pub c2g_bandwidth: f64,
    /// GPU memory to CPU memory.
    pub g2c_bandwidth: f64,
    pub disk_read_bandwidth: f64,
    pub disk_write_bandwidth: f64,
    /// CPU attention time per (token x batch element x layer).
    pub t_attn_cpu: f64,
    /// GPU FFN compute time per (layer x batch element).
    pub t_ffn_gpu: f64,
    /// One draft prefill pass over a draft sub-batch.
    pub t_draft_prefill_gpu: f64,
    /// One single-token draft decode step over a draft sub-batch.
    pub t_draft_decode_gpu: f64,
    /// One target-model prefill pass over a prefill micro-batch, parameter
    /// streaming included.
    pub t_target_prefill_gpu: f64,
}

impl HardwareProfile {
    pub fn disk_enabled(&self) -> bool {
        self.disk_capacity > 0
    }

    /// Checks every field invariant, reporting the first violated field.
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.gpu_mem_capacity == 0 {
            return Err(ValidationError::ZeroGpuMemory);
        }
        let mut bandwidths = alloc::vec![
            ("c2g_bandwidth", self.c2g_bandwidth),
            ("g2c_bandwidth", self.g2c_bandwidth),
        ];
        if self.disk_enabled() {
            bandwidths.push(("disk_read_bandwidth", self.disk_read_bandwidth));
            bandwidths.push(("disk_write_bandwidth", self.disk_write_bandwidth));
        }
        for (field, value) in bandwidths {
            // NaN fails this check too.
            if !(value > 0.0) {
                return Err(ValidationError::NonPositiveBandwidth { field });
            }
        }
        for (field, value) in self.latencies() {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(ValidationError::NegativeLatency { field });
            }
        }
        Ok(())
    }

    fn latencies(&self) -> [(&'static str, f64); 5] {
        [
            ("t_attn_cpu", self.t_attn_cpu),
            ("t_ffn_gpu", self.t_ffn_gpu),
            ("t_draft_prefill_gpu", self.t_draft_prefill_gpu),
            ("t_draft_decode_gpu", self.t_draft_decode_gpu),
            ("t_target_prefill_gpu", self.t_target_prefill_gpu),
        ]
    }
}

/// Size description of one transformer model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: alloc::string::String,
    pub n_layer: u32,
    pub attn_bytes_per_layer: u64,
    pub ffn_bytes_per_layer: u64,
    /// Embeddings, norms and the output head.
    pub other_bytes: u64,
    pub kv_bytes_per_token_per_layer: u64,
    pub dtype_bytes: u32,
}

impl ModelSpec {
    pub fn total_bytes(&self) -> u64 {
        u64::from(self.n_layer) * self.layer_bytes() + self.other_bytes
    }

    /// Attention plus FFN parameters of a single layer.
    pub fn layer_bytes(&self) -> u64 {
        self.attn_bytes_per_layer + self.ffn_bytes_per_layer
    }

    /// KV bytes for one token across all layers.
    pub fn kv_bytes_per_token(&self) -> u64 {
        self.kv_bytes_per_token_per_layer * u64::from(self.n_layer)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.n_layer == 0 {
            return Err(ValidationError::ZeroCount { field: "n_layer" });
        }
        if self.dtype_bytes == 0 {
            return Err(ValidationError::ZeroCount { field: "dtype_bytes" });
        }
        Ok(())
    }
}

/// The four knobs searched by the planner.
///
/// `bs_decoding` is the size of each of the two interleaved batches, so a
/// policy keeps `2 * bs_decoding` sequences in flight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Policy {
    pub bs_prefill: u32,
    pub bs_decoding: u32,
    pub bs_draft: u32,
    pub n_cand: u32,
}

impl Policy {
    pub const fn new(bs_prefill: u32, bs_decoding: u32, bs_draft: u32, n_cand: u32) -> Self {
        Self {
            bs_prefill,
            bs_decoding,
            bs_draft,
            n_cand,
        }
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        for (field, value) in [
            ("bs_prefill", self.bs_prefill),
            ("bs_decoding", self.bs_decoding),
            ("bs_draft", self.bs_draft),
            ("n_cand", self.n_cand),
        ] {
            if value == 0 {
                return Err(ValidationError::ZeroCount { field });
            }
        }
        if self.bs_draft > self.bs_decoding {
            return Err(ValidationError::PolicyOrdering {
                field: "bs_draft",
                reason: "bs_draft must not exceed bs_decoding",
            });
        }
        if u64::from(self.bs_prefill) > 2 * u64::from(self.bs_decoding) {
            return Err(ValidationError::PolicyOrdering {
                field: "bs_prefill",
                reason: "bs_prefill must not exceed 2 * bs_decoding",
            });
        }
        Ok(())
    }

    /// Sequences in flight under dual-batch rotation.
    pub fn in_flight(&self) -> u64 {
        2 * u64::from(self.bs_decoding)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.bs_prefill, self.bs_decoding, self.bs_draft, self.n_cand
        )
    }
}

/// What is being generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workload {
    pub total_sequences: u64,
    /// Mean prompt length in tokens.
    pub l_input: u64,
    pub max_new_tokens: u64,
    /// Per-token draft acceptance probability.
    pub acceptance_p: f64,
}

impl Workload {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(0.0..=1.0).contains(&self.acceptance_p) {
            return Err(ValidationError::ProbabilityOutOfRange {
                field: "acceptance_p",
            });
        }
        if self.l_input == 0 {
            return Err(ValidationError::ZeroCount { field: "l_input" });
        }
        if self.max_new_tokens == 0 {
            return Err(ValidationError::ZeroCount {
                field: "max_new_tokens",
            });
        }
        if self.total_sequences == 0 {
            return Err(ValidationError::ZeroCount {
                field: "total_sequences",
            });
        }
        Ok(())
    }

    /// Copy with `total_sequences` set to the rotation size of `policy`.
    pub fn rotated_for(&self, policy: &Policy) -> Self {
        Self {
            total_sequences: policy.in_flight(),
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationError {
    NonPositiveBandwidth { field: &'static str },
    NegativeLatency { field: &'static str },
    ZeroGpuMemory,
    ZeroCount { field: &'static str },
    PolicyOrdering { field: &'static str, reason: &'static str },
    ProbabilityOutOfRange { field: &'static str },
}

impl ValidationError {
    pub fn field(&self) -> &'static str {
        match self {
            Self::NonPositiveBandwidth { field }
            | Self::NegativeLatency { field }
            | Self::ZeroCount { field }
            | Self::PolicyOrdering { field, .. }
            | Self::ProbabilityOutOfRange { field } => field,
            Self::ZeroGpuMemory => "gpu_mem_capacity",
        }
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NonPositiveBandwidth { field } => write!(f, "{field}: bandwidth must be > 0"),
            Self::NegativeLatency { field } => {
                write!(f, "{field}: time must be finite and >= 0")
            }
            Self::ZeroGpuMemory => f.write_str("gpu_mem_capacity: must be > 0"),
            Self::ZeroCount { field } => write!(f, "{field}: must be >= 1"),
            Self::PolicyOrdering { field, reason } => write!(f, "{field}: {reason}"),
            Self::ProbabilityOutOfRange { field } => write!(f, "{field}: must lie in [0, 1]"),
        }
    }
}
