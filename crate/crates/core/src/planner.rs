//! Policy grid search, calibration of hardware primitives and ablations.

pub mod ablation;
pub mod calibrate;

pub use ablation::{ablation_report, AblationReport, AblationRow, Variant};
pub use calibrate::{
    calibrate, spearman, Calibration, CalibrationError, CalibrationOptions, FreeParam, Observation,
};

use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::costmodel::{self, evaluate, CostBreakdown, EvalOptions};
use crate::domain::{HardwareProfile, ModelSpec, Policy, Workload};
use crate::simulator::{simulate, SimError, SimOptions, SimResult};

/// Explicit ascending value lists, one per policy knob.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub bs_prefill_values: Vec<u32>,
    pub bs_decoding_values: Vec<u32>,
    pub bs_draft_values: Vec<u32>,
    pub n_cand_values: Vec<u32>,
}

impl Default for SearchSpace {
    /// The ranges swept by the published policy tables.
    fn default() -> Self {
        Self {
            bs_prefill_values: alloc::vec![16, 32, 50, 80, 96, 100],
            bs_decoding_values: alloc::vec![32, 64, 128, 160, 192, 200, 256, 288, 300, 320],
            bs_draft_values: alloc::vec![4, 5, 6, 8, 10],
            n_cand_values: alloc::vec![1, 2, 3, 4, 5, 6, 8],
        }
    }
}

impl SearchSpace {
    pub fn singleton(p: Policy) -> Self {
        Self {
            bs_prefill_values: alloc::vec![p.bs_prefill],
            bs_decoding_values: alloc::vec![p.bs_decoding],
            bs_draft_values: alloc::vec![p.bs_draft],
            n_cand_values: alloc::vec![p.n_cand],
        }
    }

    fn axes(&self) -> [(&'static str, &[u32]); 4] {
        [
            ("bs_prefill_values", &self.bs_prefill_values),
            ("bs_decoding_values", &self.bs_decoding_values),
            ("bs_draft_values", &self.bs_draft_values),
            ("n_cand_values", &self.n_cand_values),
        ]
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        for (axis, values) in self.axes() {
            if values.is_empty() {
                return Err(SearchError::EmptyAxis { axis });
            }
            if values.contains(&0) {
                return Err(SearchError::ZeroValue { axis });
            }
            if values.windows(2).any(|w| w[0] >= w[1]) {
                return Err(SearchError::NotAscending { axis });
            }
        }
        Ok(())
    }

    /// Number of raw grid points.
    pub fn len(&self) -> usize {
        self.axes().iter().map(|(_, v)| v.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every grid point in lexicographic order, representable or not.
    pub fn policies(&self) -> impl Iterator<Item = Policy> + '_ {
        self.bs_prefill_values.iter().flat_map(move |&a| {
            self.bs_decoding_values.iter().flat_map(move |&b| {
                self.bs_draft_values.iter().flat_map(move |&c| {
                    self.n_cand_values.iter().map(move |&d| Policy::new(a, b, c, d))
                })
            })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchError {
    EmptyAxis { axis: &'static str },
    ZeroValue { axis: &'static str },
    NotAscending { axis: &'static str },
    NoFeasiblePolicy,
}

impl fmt::Display for SearchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyAxis { axis } => write!(f, "search_space.{axis}: list is empty"),
            Self::ZeroValue { axis } => write!(f, "search_space.{axis}: values must be >= 1"),
            Self::NotAscending { axis } => {
                write!(f, "search_space.{axis}: values must be strictly ascending")
            }
            Self::NoFeasiblePolicy => f.write_str("no policy in the search space fits in GPU memory"),
        }
    }
}

/// How many sequences each policy is charged for.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadScope {
    /// One full rotation: `2 * bs_decoding` sequences.
    #[default]
    Rotation,
    /// The workload's own `total_sequences`.
    Fixed,
}

impl WorkloadScope {
    pub fn apply(&self, workload: &Workload, policy: &Policy) -> Workload {
        match self {
            WorkloadScope::Rotation => workload.rotated_for(policy),
            WorkloadScope::Fixed => *workload,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub eval: EvalOptions,
    pub scope: WorkloadScope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPolicies {
    pub entries: Vec<(Policy, CostBreakdown)>,
    pub best: Policy,
}

/// Throughput descending, then policy ascending.
pub fn rank_order(a: &(Policy, CostBreakdown), b: &(Policy, CostBreakdown)) -> Ordering {
    b.1.throughput
        .total_cmp(&a.1.throughput)
        .then_with(|| a.0.cmp(&b.0))
}

/// Grid points worth evaluating.
///
/// Drops points that are not valid policies and points whose prefill or
/// decoding memory alone exceeds the GPU. Prefill memory depends only on
/// `bs_prefill` and decoding memory only on `bs_draft`, so each axis value is
/// checked once and nothing feasible is lost.
pub fn candidates(
    space: &SearchSpace,
    workload: &Workload,
    hw: &HardwareProfile,
    target: &ModelSpec,
    draft: &ModelSpec,
) -> Vec<Policy> {
    let cap = hw.gpu_mem_capacity;
    let probe = |a: u32, c: u32| Policy::new(a, a.max(c), c, 1);
    let prefill_ok: Vec<u32> = space
        .bs_prefill_values
        .iter()
        .copied()
        .filter(|&a| costmodel::prefill_memory(&probe(a, 1), workload, target) <= cap)
        .collect();
    let draft_ok: Vec<u32> = space
        .bs_draft_values
        .iter()
        .copied()
        .filter(|&c| costmodel::decoding_memory(&probe(1, c), workload, target, draft) <= cap)
        .collect();
    let mut out = Vec::new();
    for &a in &prefill_ok {
        for &b in &space.bs_decoding_values {
            for &c in &draft_ok {
                for &d in &space.n_cand_values {
                    let p = Policy::new(a, b, c, d);
                    if p.validate().is_ok() {
                        out.push(p);
                    }
                }
            }
        }
    }
    out
}

pub fn evaluate_policy(
    policy: &Policy,
    workload: &Workload,
    hw: &HardwareProfile,
    target: &ModelSpec,
    draft: &ModelSpec,
    opts: SearchOptions,
) -> CostBreakdown {
    evaluate(policy, &opts.scope.apply(workload, policy), hw, target, draft, opts.eval)
}

/// Keeps feasible entries and sorts them.
pub fn rank(mut entries: Vec<(Policy, CostBreakdown)>) -> Result<RankedPolicies, SearchError> {
    entries.retain(|(_, c)| c.feasible);
    entries.sort_by(rank_order);
    let best = entries.first().ok_or(SearchError::NoFeasiblePolicy)?.0;
    Ok(RankedPolicies { entries, best })
}

pub fn search(
    space: &SearchSpace,
    workload: &Workload,
    hw: &HardwareProfile,
    target: &ModelSpec,
    draft: &ModelSpec,
) -> Result<RankedPolicies, SearchError> {
    search_with(space, workload, hw, target, draft, SearchOptions::default())
}

pub fn search_with(
    space: &SearchSpace,
    workload: &Workload,
    hw: &HardwareProfile,
    target: &ModelSpec,
    draft: &ModelSpec,
    opts: SearchOptions,
) -> Result<RankedPolicies, SearchError> {
    space.validate()?;
    let entries = candidates(space, workload, hw, target, draft)
        .into_iter()
        .map(|p| (p, evaluate_policy(&p, workload, hw, target, draft, opts)))
        .collect();
    rank(entries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedEntry {
    pub policy: Policy,
    pub predicted: CostBreakdown,
    pub simulated: SimResult,
}

/// Re-ranks the `k` best analytic policies by simulated throughput.
#[allow(clippy::too_many_arguments)]
pub fn rerank_by_simulation(
    ranked: &RankedPolicies,
    k: usize,
    workload: &Workload,
    hw: &HardwareProfile,
    target: &ModelSpec,
    draft: &ModelSpec,
    opts: SearchOptions,
    sim: &SimOptions,
) -> Result<Vec<SimulatedEntry>, SimError> {
    let mut out = Vec::with_capacity(k);
    for (policy, predicted) in ranked.entries.iter().take(k) {
        let w = opts.scope.apply(workload, policy);
        let simulated = simulate(policy, &w, hw, target, draft, sim)?;
        out.push(SimulatedEntry {
            policy: *policy,
            predicted: *predicted,
            simulated,
        });
    }
    out.sort_by(|a, b| {
        b.simulated
            .throughput
            .total_cmp(&a.simulated.throughput)
            .then_with(|| a.policy.cmp(&b.policy))
    });
    Ok(out)
}
