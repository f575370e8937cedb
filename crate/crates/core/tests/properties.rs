use proptest::prelude::*;
use specpipe_core::costmodel::{self, EvalOptions};
use specpipe_core::placement::{tensor_groups, Tier};
use specpipe_core::planner::{search, SearchError, SearchSpace};
use specpipe_core::simulator::{find_overlap, simulate, Label, SimOptions};
use specpipe_core::{
    assign_tiers, preset, AcceptanceModel, HardwareProfile, ModelSpec, Phase, PlacementOptions, Policy, PresetName,
    Workload,
};

const GIB: u64 = 1 << 30;

fn model(n_layer: u32, attn: u64, ffn: u64, other: u64, kv: u64) -> ModelSpec {
    ModelSpec {
        name: "m".into(),
        n_layer,
        attn_bytes_per_layer: attn,
        ffn_bytes_per_layer: ffn,
        other_bytes: other,
        kv_bytes_per_token_per_layer: kv,
        dtype_bytes: 2,
    }
}

fn arb_models() -> impl Strategy<Value = (ModelSpec, ModelSpec)> {
    (
        8u32..48,
        10_000_000u64..200_000_000,
        100_000_000u64..3_000_000_000,
        100_000_000u64..900_000_000,
        1024u64..8192,
        1u32..24,
    )
        .prop_map(|(n, a, f, o, kv, dn)| (model(n, a, f, o, kv), model(dn, a / 8, f / 20, o / 4, kv)))
}

fn arb_hw(target: &ModelSpec, draft: &ModelSpec) -> impl Strategy<Value = HardwareProfile> {
    let floor = (2 * target.layer_bytes() + target.other_bytes).max(2 * target.ffn_bytes_per_layer + draft.total_bytes());
    (
        1.0f64..1.5,
        1e9f64..40e9,
        0.0f64..5e-4,
        0.0f64..1e-3,
        1e-3f64..1.0,
        1e-3f64..0.5,
        1.0f64..60.0,
    )
        .prop_map(move |(cap, bw, attn, ffn, dp, dd, tp)| HardwareProfile {
            gpu_mem_capacity: (floor as f64 * cap) as u64,
            cpu_mem_capacity: 1 << 42,
            disk_capacity: 0,
            c2g_bandwidth: bw,
            g2c_bandwidth: bw,
            disk_read_bandwidth: 0.0,
            disk_write_bandwidth: 0.0,
            t_attn_cpu: attn,
            t_ffn_gpu: ffn,
            t_draft_prefill_gpu: dp,
            t_draft_decode_gpu: dd,
            t_target_prefill_gpu: tp,
        })
}

fn arb_axis(max: u32) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::btree_set(1..=max, 1..6).prop_map(|s| s.into_iter().collect())
}

fn arb_space() -> impl Strategy<Value = SearchSpace> {
    (arb_axis(200), arb_axis(320), arb_axis(32), arb_axis(10)).prop_map(|(a, b, c, d)| SearchSpace {
        bs_prefill_values: a,
        bs_decoding_values: b,
        bs_draft_values: c,
        n_cand_values: d,
    })
}

fn arb_workload() -> impl Strategy<Value = Workload> {
    (32u64..1024, 1u64..64, 0.0f64..=1.0).prop_map(|(l, m, p)| Workload {
        total_sequences: 1,
        l_input: l,
        max_new_tokens: m,
        acceptance_p: p,
    })
}

fn problem() -> impl Strategy<Value = (ModelSpec, ModelSpec, HardwareProfile, SearchSpace, Workload)> {
    arb_models().prop_flat_map(|(t, d)| {
        let hw = arb_hw(&t, &d);
        (Just(t), Just(d), hw, arb_space(), arb_workload())
    })
}

fn exhaustive(
    space: &SearchSpace,
    w: &Workload,
    hw: &HardwareProfile,
    t: &ModelSpec,
    d: &ModelSpec,
) -> Option<(Policy, f64)> {
    let mut best: Option<(Policy, f64)> = None;
    for p in space.policies() {
        if p.validate().is_err() {
            continue;
        }
        let c = costmodel::evaluate(&p, &w.rotated_for(&p), hw, t, d, EvalOptions::default());
        if !c.feasible {
            continue;
        }
        // Policies come in ascending order, so only a strict gain replaces.
        if best.is_none_or(|(_, b)| c.throughput > b) {
            best = Some((p, c.throughput));
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn search_matches_exhaustive((t, d, hw, space, w) in problem()) {
        match (search(&space, &w, &hw, &t, &d), exhaustive(&space, &w, &hw, &t, &d)) {
            (Ok(r), Some((p, tp))) => {
                prop_assert_eq!(r.best, p);
                prop_assert_eq!(r.entries[0].1.throughput, tp);
            }
            (Err(SearchError::NoFeasiblePolicy), None) => {}
            (got, want) => prop_assert!(false, "search {:?} vs exhaustive {:?}", got.map(|r| r.best), want),
        }
    }

    #[test]
    fn more_gpu_memory_never_hurts((t, d, hw, space, w) in problem(), extra in 0u64..8 * GIB) {
        let bigger = HardwareProfile { gpu_mem_capacity: hw.gpu_mem_capacity + extra, ..hw };
        let small = search(&space, &w, &hw, &t, &d).map(|r| r.entries.len());
        let large = search(&space, &w, &bigger, &t, &d);
        if let Ok(n) = small {
            let large = large.unwrap();
            prop_assert!(large.entries.len() >= n);
            let before = search(&space, &w, &hw, &t, &d).unwrap().entries[0].1.throughput;
            prop_assert!(large.entries[0].1.throughput >= before);
        }
    }

    #[test]
    fn throughput_is_zero_exactly_when_infeasible((t, d, hw, space, w) in problem()) {
        for p in space.policies().filter(|p| p.validate().is_ok()).take(50) {
            let c = costmodel::evaluate(&p, &w.rotated_for(&p), &hw, &t, &d, EvalOptions::default());
            prop_assert_eq!(c.feasible, c.throughput > 0.0);
            prop_assert!(c.peak_gpu_bytes() <= hw.gpu_mem_capacity || !c.feasible);
            let serial = costmodel::evaluate(&p, &w.rotated_for(&p), &hw, &t, &d, EvalOptions { serial_speculation: true, ..Default::default() });
            prop_assert!(serial.throughput <= c.throughput);
        }
    }

    #[test]
    fn expectation_grows_with_acceptance(p in 0.0f64..1.0, dp in 0.0f64..0.5, n in 1u32..32) {
        let q = (p + dp).min(1.0);
        let lo = AcceptanceModel::new(p, n).unwrap().expected_accepted();
        let hi = AcceptanceModel::new(q, n).unwrap().expected_accepted();
        prop_assert!(hi >= lo - 1e-12);
        prop_assert!((1.0..=f64::from(n) + 1.0).contains(&lo));
    }
}

fn env_policy() -> impl Strategy<Value = (PresetName, Policy, f64, u64, u64)> {
    (
        prop::sample::select(vec![PresetName::Env1Mixtral8x7b, PresetName::Env2Mixtral8x22b]),
        prop::sample::select(vec![16u32, 32, 64, 96, 128]),
        prop::sample::select(vec![2u32, 4, 8]),
        1u32..=6,
        0.0f64..=1.0,
        1u64..8,
        any::<u64>(),
    )
        .prop_map(|(env, b, c, d, p, m, seed)| (env, Policy::new(b.min(80), b, c, d), p, m, seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulated_traces_are_exclusive_and_causal((env, policy, p, m, seed) in env_policy()) {
        let pr = preset(env);
        let w = Workload { total_sequences: policy.in_flight(), l_input: 503, max_new_tokens: m, acceptance_p: p };
        let c = costmodel::evaluate(&policy, &w, &pr.hardware, &pr.target, &pr.draft, EvalOptions::default());
        prop_assume!(c.feasible);
        let r = simulate(&policy, &w, &pr.hardware, &pr.target, &pr.draft, &SimOptions { seed, ..Default::default() }).unwrap();
        prop_assert_eq!(find_overlap(&r.trace), None);
        prop_assert_eq!(r.tokens_generated, w.total_sequences * m);
        prop_assert_eq!(r.peak_gpu_bytes, c.v_decoding);
        for e in r.trace.iter().filter(|e| e.label == Label::FfnGpu) {
            let ready = r
                .trace
                .iter()
                .filter(|x| matches!(x.label, Label::AttnCpu | Label::FfnLoad) && x.round == e.round && x.batch == e.batch && x.layer == e.layer)
                .map(|x| x.end)
                .fold(0.0, f64::max);
            prop_assert!(e.start >= ready);
        }
        let again = simulate(&policy, &w, &pr.hardware, &pr.target, &pr.draft, &SimOptions { seed, ..Default::default() }).unwrap();
        prop_assert_eq!(r, again);
    }

    #[test]
    fn placement_is_deterministic_and_conserves_bytes(
        (env, policy, p, m, _seed) in env_policy(),
        gpu in 16u64..48,
        cpu in 64u64..512,
        disk in prop::sample::select(vec![0u64, 2048]),
        phase in prop::sample::select(vec![Phase::Prefill, Phase::Decoding]),
    ) {
        let pr = preset(env);
        let hw = HardwareProfile {
            gpu_mem_capacity: gpu * GIB,
            cpu_mem_capacity: cpu * GIB,
            disk_capacity: disk * GIB,
            disk_read_bandwidth: 3e9,
            disk_write_bandwidth: 2e9,
            ..pr.hardware
        };
        let w = Workload { total_sequences: policy.in_flight(), l_input: 503, max_new_tokens: m, acceptance_p: p };
        let a = assign_tiers(&pr.target, &pr.draft, &hw, &policy, &w, phase, PlacementOptions::default());
        let b = assign_tiers(&pr.target, &pr.draft, &hw, &policy, &w, phase, PlacementOptions::default());
        prop_assert_eq!(&a, &b);
        if let Ok(plan) = a {
            let total: u64 = plan.assignments.iter().map(|x| x.group.bytes).sum();
            prop_assert_eq!(total, [Tier::Gpu, Tier::Cpu, Tier::Disk].iter().map(|t| plan.bytes_on(*t)).sum::<u64>());
            prop_assert!(plan.cpu_bytes() <= hw.cpu_mem_capacity);
            prop_assert!(plan.bytes_on(Tier::Disk) <= hw.disk_capacity);
            let ids: Vec<&str> = plan.assignments.iter().map(|x| x.group.id.as_str()).collect();
            let groups = tensor_groups(&pr.target, &pr.draft, &policy, &w);
            prop_assert!(ids.len() <= groups.len());
            prop_assert!(ids.iter().all(|id| groups.iter().any(|g| g.id == *id)));
        }
    }
}
