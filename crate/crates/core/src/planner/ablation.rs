//! Side-by-side predictions for variants of one policy.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{candidates, evaluate_policy, SearchOptions, SearchSpace};
use crate::costmodel::{CostBreakdown, EvalOptions};
use crate::domain::{HardwareProfile, ModelSpec, Policy, Workload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// `p = 0`, one candidate: every step yields one token. The draft pass is
    /// still charged.
    NoSpeculation,
    /// Drafting and verification take turns instead of overlapping.
    SerialSpeculation,
    /// A policy drawn uniformly from the feasible grid points.
    RandomPolicy,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSpeculation => "no_sd",
            Variant::SerialSpeculation => "serial_sd",
            Variant::RandomPolicy => "random_policy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub policy: Policy,
    pub acceptance_p: f64,
    pub cost: CostBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn throughput(&self, v: Variant) -> Option<f64> {
        self.rows.iter().find(|r| r.variant == v).map(|r| r.cost.throughput)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn ablation_report(
    workload: &Workload,
    hw: &HardwareProfile,
    target: &ModelSpec,
    draft: &ModelSpec,
    best: Policy,
    space: &SearchSpace,
    seed: u64,
    opts: SearchOptions,
) -> AblationReport {
    let row = |variant, policy: Policy, w: &Workload, eval: EvalOptions| AblationRow {
        variant,
        policy,
        acceptance_p: w.acceptance_p,
        cost: evaluate_policy(&policy, w, hw, target, draft, SearchOptions { eval, ..opts }),
    };
    let no_sd = Workload { acceptance_p: 0.0, ..*workload };
    let serial = EvalOptions { serial_speculation: true, ..opts.eval };

    let mut pool = candidates(space, workload, hw, target, draft);
    if pool.is_empty() {
        pool.push(best);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random = pool[rng.random_range(0..pool.len())];

    AblationReport {
        rows: alloc::vec![
            row(Variant::Full, best, workload, opts.eval),
            row(Variant::NoSpeculation, Policy { n_cand: 1, ..best }, &no_sd, opts.eval),
            row(Variant::SerialSpeculation, best, workload, serial),
            row(Variant::RandomPolicy, random, workload, opts.eval),
        ],
    }
}
