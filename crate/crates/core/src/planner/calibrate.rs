//! Least-squares fit of hardware primitives to measured throughputs.
//!
//! The objective is the sum of squared relative throughput errors. Times and
//! bandwidths are searched in log space and the acceptance probability in
//! logit space, so every trial point is in-domain. Minimization is
//! Nelder–Mead from several seeded starting points.

use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate_policy, SearchOptions};
use crate::domain::{HardwareProfile, ModelSpec, Policy, Workload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreeParam {
    TAttnCpu,
    TFfnGpu,
    TDraftPrefillGpu,
    TDraftDecodeGpu,
    TTargetPrefillGpu,
    C2gBandwidth,
    G2cBandwidth,
    /// Workload acceptance probability, fitted alongside the hardware.
    AcceptanceP,
}

impl FreeParam {
    pub const ALL: [FreeParam; 8] = [
        FreeParam::TAttnCpu,
        FreeParam::TFfnGpu,
        FreeParam::TDraftPrefillGpu,
        FreeParam::TDraftDecodeGpu,
        FreeParam::TTargetPrefillGpu,
        FreeParam::C2gBandwidth,
        FreeParam::G2cBandwidth,
        FreeParam::AcceptanceP,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FreeParam::TAttnCpu => "t_attn_cpu",
            FreeParam::TFfnGpu => "t_ffn_gpu",
            FreeParam::TDraftPrefillGpu => "t_draft_prefill_gpu",
            FreeParam::TDraftDecodeGpu => "t_draft_decode_gpu",
            FreeParam::TTargetPrefillGpu => "t_target_prefill_gpu",
            FreeParam::C2gBandwidth => "c2g_bandwidth",
            FreeParam::G2cBandwidth => "g2c_bandwidth",
            FreeParam::AcceptanceP => "acceptance_p",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.as_str() == s)
    }

    fn get(&self, hw: &HardwareProfile, p: f64) -> f64 {
        match self {
            FreeParam::TAttnCpu => hw.t_attn_cpu,
            FreeParam::TFfnGpu => hw.t_ffn_gpu,
            FreeParam::TDraftPrefillGpu => hw.t_draft_prefill_gpu,
            FreeParam::TDraftDecodeGpu => hw.t_draft_decode_gpu,
            FreeParam::TTargetPrefillGpu => hw.t_target_prefill_gpu,
            FreeParam::C2gBandwidth => hw.c2g_bandwidth,
            FreeParam::G2cBandwidth => hw.g2c_bandwidth,
            FreeParam::AcceptanceP => p,
        }
    }

    fn set(&self, hw: &mut HardwareProfile, p: &mut f64, v: f64) {
        match self {
            FreeParam::TAttnCpu => hw.t_attn_cpu = v,
            FreeParam::TFfnGpu => hw.t_ffn_gpu = v,
            FreeParam::TDraftPrefillGpu => hw.t_draft_prefill_gpu = v,
            FreeParam::TDraftDecodeGpu => hw.t_draft_decode_gpu = v,
            FreeParam::TTargetPrefillGpu => hw.t_target_prefill_gpu = v,
            FreeParam::C2gBandwidth => hw.c2g_bandwidth = v,
            FreeParam::G2cBandwidth => hw.g2c_bandwidth = v,
            FreeParam::AcceptanceP => *p = v,
        }
    }

    fn to_search(&self, v: f64) -> f64 {
        match self {
            FreeParam::AcceptanceP => {
                let v = v.clamp(1e-6, 1.0 - 1e-6);
                libm::log(v / (1.0 - v))
            }
            _ => libm::log(v.max(1e-12)),
        }
    }

    fn from_search(&self, x: f64) -> f64 {
        match self {
            FreeParam::AcceptanceP => 1.0 / (1.0 + libm::exp(-x)),
            _ => libm::exp(x.clamp(-700.0, 700.0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub policy: Policy,
    /// Tokens per second.
    pub throughput: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub starts: u32,
    pub max_iterations: u32,
    /// Stop when the simplex's objective spread falls below this.
    pub tolerance: f64,
    /// Root-mean-square relative error above which the fit is rejected.
    pub max_rms_error: f64,
    pub seed: u64,
    pub search: SearchOptions,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            starts: 8,
            max_iterations: 4000,
            tolerance: 1e-16,
            max_rms_error: 0.5,
            seed: 0,
            search: SearchOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub profile: HardwareProfile,
    pub acceptance_p: f64,
    /// `(predicted - measured) / measured` per observation.
    pub residuals: Vec<f64>,
    pub rms_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CalibrationError {
    Underdetermined { observations: usize, free: usize },
    NonConvergent { rms_error: f64, threshold: f64 },
    /// Measured throughput must be finite and positive.
    BadObservation { index: usize },
}

impl fmt::Display for CalibrationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Underdetermined { observations, free } => write!(
                f,
                "{observations} observations cannot determine {free} free parameters"
            ),
            Self::NonConvergent { rms_error, threshold } => write!(
                f,
                "fit did not converge: rms relative error {rms_error:.4} > {threshold}"
            ),
            Self::BadObservation { index } => {
                write!(f, "observation {index}: throughput must be finite and > 0")
            }
        }
    }
}

struct Problem<'a> {
    obs: &'a [Observation],
    workload: &'a Workload,
    hw: &'a HardwareProfile,
    target: &'a ModelSpec,
    draft: &'a ModelSpec,
    free: &'a [FreeParam],
    search: SearchOptions,
}

impl Problem<'_> {
    fn unpack(&self, x: &[f64]) -> (HardwareProfile, f64) {
        let mut hw = *self.hw;
        let mut p = self.workload.acceptance_p;
        for (f, &xi) in self.free.iter().zip(x) {
            f.set(&mut hw, &mut p, f.from_search(xi));
        }
        (hw, p)
    }

    fn residuals(&self, hw: &HardwareProfile, p: f64) -> Vec<f64> {
        let w = Workload { acceptance_p: p, ..*self.workload };
        self.obs
            .iter()
            .map(|o| {
                let c = evaluate_policy(&o.policy, &w, hw, self.target, self.draft, self.search);
                (c.throughput - o.throughput) / o.throughput
            })
            .collect()
    }

    fn cost(&self, x: &[f64]) -> f64 {
        let (hw, p) = self.unpack(x);
        let c: f64 = self.residuals(&hw, p).iter().map(|r| r * r).sum();
        if c.is_finite() {
            c
        } else {
            f64::MAX
        }
    }
}

/// Nelder–Mead with the standard coefficients. Returns the best vertex and
/// its value.
pub(crate) fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    max_iter: u32,
    tol: f64,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    if n == 0 {
        return (Vec::new(), f(x0));
    }
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let point = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(ai, bi)| ai + t * (bi - ai)).collect()
    };

    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        if vals[n] - vals[0] <= tol {
            break;
        }
        let mut centroid = alloc::vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let reflected = point(&centroid, &simplex[n], -1.0);
        let fr = f(&reflected);
        if fr < vals[0] {
            let expanded = point(&centroid, &simplex[n], -2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                vals[n] = fe;
            } else {
                simplex[n] = reflected;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            simplex[n] = reflected;
            vals[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < vals[n] {
            let c = point(&centroid, &simplex[n], -0.5);
            let fc = f(&c);
            (c, fc)
        } else {
            let c = point(&centroid, &simplex[n], 0.5);
            let fc = f(&c);
            (c, fc)
        };
        if fc < vals[n].min(fr) {
            simplex[n] = contracted;
            vals[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        for i in 1..=n {
            simplex[i] = point(&simplex[0], &simplex[i], 0.5);
            vals[i] = f(&simplex[i]);
        }
    }
    let best = (0..=n).min_by(|&i, &j| vals[i].total_cmp(&vals[j])).unwrap_or(0);
    (simplex[best].clone(), vals[best])
}

/// Fits `free` so predicted throughputs match `observations`.
pub fn calibrate(
    observations: &[Observation],
    workload: &Workload,
    hw_template: &HardwareProfile,
    target: &ModelSpec,
    draft: &ModelSpec,
    free: &[FreeParam],
    opts: &CalibrationOptions,
) -> Result<Calibration, CalibrationError> {
    let mut free = free.to_vec();
    free.sort();
    free.dedup();
    if observations.len() < free.len() {
        return Err(CalibrationError::Underdetermined {
            observations: observations.len(),
            free: free.len(),
        });
    }
    if let Some(index) = observations
        .iter()
        .position(|o| !(o.throughput.is_finite() && o.throughput > 0.0))
    {
        return Err(CalibrationError::BadObservation { index });
    }
    let prob = Problem {
        obs: observations,
        workload,
        hw: hw_template,
        target,
        draft,
        free: &free,
        search: opts.search,
    };
    let cost = |x: &[f64]| prob.cost(x);
    let x0: Vec<f64> = free
        .iter()
        .map(|f| f.to_search(f.get(hw_template, workload.acceptance_p)))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best = (x0.clone(), cost(&x0));
    for s in 0..opts.starts.max(1) {
        let start: Vec<f64> = if s == 0 {
            x0.clone()
        } else {
            x0.iter().map(|x| x + rng.random_range(-2.0..2.0)).collect()
        };
        let mut run = nelder_mead(&cost, &start, 0.5, opts.max_iterations, opts.tolerance);
        // restart at the optimum to undo simplex collapse
        let again = nelder_mead(&cost, &run.0, 0.1, opts.max_iterations, opts.tolerance);
        if again.1 < run.1 {
            run = again;
        }
        if run.1 < best.1 {
            best = run;
        }
    }

    let (profile, acceptance_p) = prob.unpack(&best.0);
    let residuals = prob.residuals(&profile, acceptance_p);
    let rms_error = libm::sqrt(residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len().max(1) as f64);
    if !(rms_error <= opts.max_rms_error) {
        return Err(CalibrationError::NonConvergent {
            rms_error,
            threshold: opts.max_rms_error,
        });
    }
    Ok(Calibration {
        profile,
        acceptance_p,
        residuals,
        rms_error,
    })
}

/// 1-based ranks; ties share their average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = alloc::vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` for fewer than two points or a
/// constant input.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / libm::sqrt(va * vb))
}
