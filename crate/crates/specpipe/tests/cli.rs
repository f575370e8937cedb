use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use specpipe::config::RunConfig;
use specpipe::observations;
use specpipe_core::planner::{evaluate_policy, SearchOptions, SearchSpace};
use specpipe_core::{Policy, PresetName};

fn specpipe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specpipe")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn write_cfg(dir: &Path, name: &str, cfg: &RunConfig) -> String {
    let p = dir.join(name);
    std::fs::write(&p, cfg.to_json()).unwrap();
    p.display().to_string()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn pmf_table_and_expectation() {
    let o = specpipe(&["pmf", "--p", "0.5", "--n-cand", "2"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    let rows: Vec<f64> = out
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with("expected"))
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(rows, [0.5, 0.25, 0.25]);
    assert!(out.contains("expected\t1.750000000000"));

    assert!(stdout(&specpipe(&["pmf", "--p", "0", "--n-cand", "4"])).contains("expected\t1.000000000000"));
    assert!(stdout(&specpipe(&["pmf", "--p", "1", "--n-cand", "4"])).contains("expected\t5.000000000000"));
}

#[test]
fn pmf_domain_errors_exit_1() {
    assert_eq!(code(&specpipe(&["pmf", "--p", "1.5", "--n-cand", "2"])), 1);
    assert_eq!(code(&specpipe(&["pmf", "--p", "0.5", "--n-cand", "0"])), 1);
    assert_eq!(code(&specpipe(&["pmf", "--p", "0.5"])), 1);
}

/// The axis values swept by the 8x7B SummEval table.
fn table_grid() -> SearchSpace {
    let mut axes: [Vec<u32>; 4] = Default::default();
    for r in observations::load(&fixture("policy_8x7b_env1_summeval.csv")).unwrap() {
        let p = r.obs.policy;
        for (axis, v) in axes.iter_mut().zip([p.bs_prefill, p.bs_decoding, p.bs_draft, p.n_cand]) {
            axis.push(v);
        }
    }
    for a in &mut axes {
        a.sort_unstable();
        a.dedup();
    }
    let [a, b, c, d] = axes;
    SearchSpace {
        bs_prefill_values: a,
        bs_decoding_values: b,
        bs_draft_values: c,
        n_cand_values: d,
    }
}

#[test]
fn plan_writes_ranking_and_meta() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::for_preset(PresetName::Env1Mixtral8x7b, 0.7, None);
    cfg.search_space = Some(table_grid());
    let c = write_cfg(tmp.path(), "plan.json", &cfg);
    let out = tmp.path().join("out");
    let o = specpipe(&["plan", "--config", &c, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("best policy: (80, "), "{}", stdout(&o));

    let csv = std::fs::read_to_string(out.join("ranking.csv")).unwrap();
    assert!(csv.starts_with("bs_prefill,bs_decoding,bs_draft,n_cand,throughput_pred,t_prefill_s,t_decoding_s,v_decoding_bytes,feasible\n"));
    let ranking = json(&out.join("ranking.json"));
    assert_eq!(ranking[0]["bs_prefill"], 80);
    let tps: Vec<f64> = ranking.as_array().unwrap().iter().map(|r| r["throughput_pred"].as_f64().unwrap()).collect();
    assert!(tps.windows(2).all(|w| w[0] >= w[1]));

    let meta = json(&out.join("meta.json"));
    assert_eq!(meta["command"], "plan");
    assert_eq!(meta["seed"], 0);
    assert_eq!(meta["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(meta["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn plan_simulates_top_k() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::for_preset(PresetName::Env1Mixtral8x7b, 0.7, None);
    cfg.search_space = Some(SearchSpace {
        bs_prefill_values: vec![80],
        bs_decoding_values: vec![64, 192],
        bs_draft_values: vec![8],
        n_cand_values: vec![4, 8],
    });
    let c = write_cfg(tmp.path(), "plan.json", &cfg);
    let out = tmp.path().join("out");
    let o = specpipe(&["plan", "--config", &c, "--out", out.to_str().unwrap(), "--simulate-top-k", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let sims = json(&out.join("simulated.json"));
    let sims = sims.as_array().unwrap();
    assert_eq!(sims.len(), 3);
    let tps: Vec<f64> = sims.iter().map(|r| r["throughput_sim"].as_f64().unwrap()).collect();
    assert!(tps.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn plan_without_feasible_policy_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::for_preset(PresetName::Env1Mixtral8x7b, 0.7, None);
    cfg.hardware.gpu_mem_capacity = 1 << 30;
    let c = write_cfg(tmp.path(), "plan.json", &cfg);
    let o = specpipe(&["plan", "--config", &c, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn malformed_config_exits_1_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::for_preset(PresetName::Env1Mixtral8x7b, 0.7, None);
    let mut v: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
    v["workload"]["max_new_tokenz"] = 16.into();
    let p = tmp.path().join("bad.json");
    std::fs::write(&p, v.to_string()).unwrap();
    let o = specpipe(&["plan", "--config", p.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("max_new_tokenz"), "{}", stderr(&o));

    let o = specpipe(&["plan", "--config", tmp.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn policy_and_search_space_are_exclusive() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::for_preset(PresetName::Env1Mixtral8x7b, 0.7, Some(Policy::new(80, 192, 8, 8)));
    let out = tmp.path().join("o");
    let c = write_cfg(tmp.path(), "sim.json", &cfg);
    let o = specpipe(&["plan", "--config", &c, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("policy"), "{}", stderr(&o));

    cfg.search_space = Some(SearchSpace::default());
    let c = write_cfg(tmp.path(), "both.json", &cfg);
    assert_eq!(code(&specpipe(&["simulate", "--config", &c, "--out", out.to_str().unwrap()])), 1);
}

#[test]
fn simulate_p_one_rounds() {
    let tmp = tempfile::tempdir().unwrap();
    for (n_cand, m) in [(8u32, 16u64), (3, 17), (1, 5)] {
        let mut cfg = RunConfig::for_preset(PresetName::Env1Mixtral8x7b, 1.0, Some(Policy::new(80, 192, 8, n_cand)));
        cfg.workload.max_new_tokens = m;
        let c = write_cfg(tmp.path(), "sim.json", &cfg);
        let out = tmp.path().join(format!("o{n_cand}"));
        let o = specpipe(&["simulate", "--config", &c, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let s = json(&out.join("summary.json"));
        assert_eq!(s["rounds"].as_u64().unwrap(), m.div_ceil(u64::from(n_cand) + 1));
        assert_eq!(s["rounds"], s["rounds_pred"]);
    }
}

#[test]
fn simulate_writes_each_trace_format() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::for_preset(PresetName::Env1Mixtral8x7b, 0.7, Some(Policy::new(32, 64, 8, 4)));
    let c = write_cfg(tmp.path(), "sim.json", &cfg);
    for (fmt, file) in [("json", "trace.json"), ("csv", "trace.csv"), ("chrome", "trace.chrome.json")] {
        let out = tmp.path().join(fmt);
        let o = specpipe(&["simulate", "--config", &c, "--out", out.to_str().unwrap(), "--format", fmt, "--seed", "3"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(out.join(file).is_file());
        let meta = json(&out.join("meta.json"));
        assert_eq!(meta["seed"], 3);
        assert_eq!(meta["files"], serde_json::json!([file, "summary.json"]));
        let s = json(&out.join("summary.json"));
        for key in ["throughput", "rounds", "busy_fraction", "peak_gpu_bytes"] {
            assert!(s.get(key).is_some(), "{key}");
        }
    }
    let csv = std::fs::read_to_string(tmp.path().join("csv/trace.csv")).unwrap();
    assert!(csv.lines().count() > 10);
}

#[test]
fn simulate_too_many_sequences_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::for_preset(PresetName::Env1Mixtral8x7b, 0.7, Some(Policy::new(16, 32, 8, 4)));
    cfg.workload.total_sequences = 65;
    cfg.workload_scope = specpipe_core::planner::WorkloadScope::Fixed;
    let c = write_cfg(tmp.path(), "sim.json", &cfg);
    let o = specpipe(&["simulate", "--config", &c, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn calibrate_recovers_self_generated_observations() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::for_preset(PresetName::Env1Mixtral8x7b, 0.7, None);
    let mut truth = cfg.hardware;
    truth.t_attn_cpu *= 1.7;
    truth.t_target_prefill_gpu *= 0.6;
    let policies = [
        Policy::new(80, 192, 8, 8),
        Policy::new(80, 128, 5, 3),
        Policy::new(50, 256, 6, 2),
        Policy::new(96, 320, 10, 5),
        Policy::new(32, 64, 4, 6),
        Policy::new(100, 300, 8, 1),
    ];
    let mut csv = String::from("bs_prefill,bs_decoding,bs_draft,n_cand,throughput\n");
    for p in policies {
        let t = evaluate_policy(&p, &cfg.workload, &truth, &cfg.target_model, &cfg.draft_model, SearchOptions::default()).throughput;
        csv.push_str(&format!("{},{},{},{},{t:?}\n", p.bs_prefill, p.bs_decoding, p.bs_draft, p.n_cand));
    }
    let obs = tmp.path().join("obs.csv");
    std::fs::write(&obs, csv).unwrap();
    let c = write_cfg(tmp.path(), "cfg.json", &cfg);
    let out = tmp.path().join("out");
    let o = specpipe(&[
        "calibrate",
        "--config",
        &c,
        "--observations",
        obs.to_str().unwrap(),
        "--free",
        "t_attn_cpu,t_target_prefill_gpu",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc = json(&out.join("calibration.json"));
    assert!(doc["rms_error"].as_f64().unwrap() < 1e-6, "{doc}");
    let fitted = json(&out.join("fitted_profile.json"));
    let attn = fitted["t_attn_cpu"].as_f64().unwrap();
    assert!((attn - truth.t_attn_cpu).abs() / truth.t_attn_cpu < 1e-4);
    let fitted_cfg = RunConfig::load(&out.join("fitted_config.json")).unwrap().0;
    assert_eq!(fitted_cfg.hardware.t_attn_cpu, attn);
}

#[test]
fn calibrate_with_too_few_rows_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::for_preset(PresetName::Env1Mixtral8x7b, 0.7, None);
    let obs = tmp.path().join("obs.csv");
    std::fs::write(&obs, "bs_prefill,bs_decoding,bs_draft,n_cand,throughput\n80,192,8,8,24.7\n80,128,8,8,20.1\n").unwrap();
    let c = write_cfg(tmp.path(), "cfg.json", &cfg);
    let o = specpipe(&["calibrate", "--config", &c, "--observations", obs.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn calibrate_rejects_unknown_free_parameter() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::for_preset(PresetName::Env1Mixtral8x7b, 0.7, None);
    let c = write_cfg(tmp.path(), "cfg.json", &cfg);
    let o = specpipe(&["calibrate", "--config", &c, "--observations", fixture("policy_8x7b_env1_summeval.csv").to_str().unwrap(), "--free", "t_warp"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn calibrate_summeval_table_held_out_rank() {
    // Fit on ten rows spread over the table, rank the other 35.
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::for_preset(PresetName::Env1Mixtral8x7b, 0.7, None);
    let c = write_cfg(tmp.path(), "cfg.json", &cfg);
    let out = tmp.path().join("out");
    let obs = fixture("policy_8x7b_env1_summeval.csv");
    let o = specpipe(&["calibrate", "--config", &c, "--observations", obs.to_str().unwrap(), "--train", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("fitted_profile.json").is_file());
    let doc = json(&out.join("calibration.json"));
    assert_eq!(doc["held_out"].as_array().unwrap().len(), 35);
    let rho = doc["spearman_held_out"].as_f64().unwrap();
    assert!(rho >= 0.6, "held-out spearman {rho}");
}

#[test]
fn presets_list_and_emit() {
    let o = specpipe(&["presets"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("env1_8x7b") && out.contains("env2_8x22b"));

    let o = specpipe(&["presets", "--emit", "env2_8x22b", "--acceptance-p", "0.6", "--policy", "16,64,8,8"]);
    assert_eq!(code(&o), 0);
    let cfg = RunConfig::from_json(&stdout(&o)).unwrap();
    assert_eq!(cfg.policy, Some(Policy::new(16, 64, 8, 8)));
    assert_eq!(cfg.workload.acceptance_p, 0.6);

    assert_eq!(code(&specpipe(&["presets", "--emit", "env3"])), 1);
}

#[test]
fn ablation_reports_four_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::for_preset(PresetName::Env1Mixtral8x7b, 0.7, Some(Policy::new(80, 192, 8, 8)));
    let c = write_cfg(tmp.path(), "cfg.json", &cfg);
    let out = tmp.path().join("out");
    let o = specpipe(&["ablation", "--config", &c, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = json(&out.join("ablation.json"));
    let names: Vec<&str> = rows.as_array().unwrap().iter().map(|r| r["variant"].as_str().unwrap()).collect();
    assert_eq!(names, ["full", "no_sd", "serial_sd", "random_policy"]);
    let tp = |i: usize| rows[i]["throughput_pred"].as_f64().unwrap();
    assert!(tp(2) < tp(0));
}

#[test]
fn strict_flag_never_lowers_prediction() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::for_preset(PresetName::Env1Mixtral8x7b, 0.7, None);
    cfg.search_space = Some(SearchSpace::singleton(Policy::new(80, 192, 8, 8)));
    let c = write_cfg(tmp.path(), "plan.json", &cfg);
    let tp = |extra: &[&str], dir: &str| {
        let out = tmp.path().join(dir);
        let mut args = vec!["plan", "--config", &c, "--out", out.to_str().unwrap()];
        args.extend(extra);
        assert_eq!(code(&specpipe(&args)), 0);
        json(&out.join("ranking.json"))[0]["throughput_pred"].as_f64().unwrap()
    };
    assert!(tp(&["--strict-paper-approx"], "strict") >= tp(&[], "full"));
}
