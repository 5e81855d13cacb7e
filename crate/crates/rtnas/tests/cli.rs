//! End-to-end checks of the `rtnas` binary: workflows, file formats and
//! exit statuses (0 ok, 1 config, 2 infeasible, 3 I/O).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rtnas")
}

fn benchmark(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../benchmarks")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn rtnas")
}

fn assert_code(out: &Output, want: i32) {
    assert_eq!(
        out.status.code(),
        Some(want),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn search_decode_sample_pareto_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let cfg = benchmark("tiny.toml");
    let cfg_s = cfg.to_str().unwrap();

    let started = Instant::now();
    assert_code(&run(&["search", "--config", cfg_s, "--out", out_s]), 0);
    assert!(
        started.elapsed().as_secs() < 60,
        "tiny search must finish quickly"
    );
    for f in ["search.log", "params.json", "summary.txt"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let log = std::fs::read_to_string(out.join("search.log")).unwrap();
    assert_eq!(log.lines().count(), 40, "one record per epoch");
    assert!(log.lines().all(|l| l.starts_with("outer=")));

    let params = out.join("params.json");
    let params_s = params.to_str().unwrap();
    for method in ["greedy", "ga"] {
        for nl in ["1", "3", "5", "7"] {
            assert_code(
                &run(&[
                    "decode", "--config", cfg_s, "--params", params_s, "--nl", nl, "--method",
                    method, "--out", out_s,
                ]),
                0,
            );
        }
    }

    // The emitted sweep rows carry non-decreasing latency in n_l for both
    // decoders.
    let row_latency = |method: &str, nl: usize| -> f64 {
        let text =
            std::fs::read_to_string(out.join(format!("decode_{method}_nl{nl}.csv"))).unwrap();
        text.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap()
    };
    for method in ["greedy", "ga"] {
        let sweep: Vec<f64> = [3, 5, 7].iter().map(|&nl| row_latency(method, nl)).collect();
        assert!(
            sweep.windows(2).all(|w| w[1] >= w[0]),
            "{method} sweep not monotone: {sweep:?}"
        );
    }
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("decode_greedy_nl1.json")).unwrap())
            .unwrap();
    assert_eq!(doc["n_l"], 1);
    assert_eq!(doc["paths"].as_array().unwrap().len(), 1);
    assert_eq!(doc["paths"][0].as_array().unwrap().len(), 4);

    let greedy7: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("decode_greedy_nl7.json")).unwrap())
            .unwrap();
    let ga7: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("decode_ga_nl7.json")).unwrap())
            .unwrap();
    assert!(
        ga7["latency_ms"].as_f64().unwrap() <= greedy7["latency_ms"].as_f64().unwrap(),
        "GA decode must not lose to greedy on the same params"
    );

    assert_code(
        &run(&["sample", "--config", cfg_s, "--n", "200", "--out", out_s]),
        0,
    );
    let samples = std::fs::read_to_string(out.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 201, "header plus one row per sample");

    let ga_csv = out.join("decode_ga_nl7.csv");
    let greedy_csv = out.join("decode_greedy_nl7.csv");
    let samples_csv = out.join("samples.csv");
    assert_code(
        &run(&[
            "pareto",
            ga_csv.to_str().unwrap(),
            greedy_csv.to_str().unwrap(),
            samples_csv.to_str().unwrap(),
            "--out",
            out_s,
        ]),
        0,
    );
    let frontier = std::fs::read_to_string(out.join("frontier.csv")).unwrap();
    let plot = std::fs::read_to_string(out.join("pareto_points.csv")).unwrap();
    assert_eq!(plot.lines().count(), 203, "2 decodes + 200 samples + header");
    assert!(frontier.lines().count() >= 2);

    // Frontier output is a subset of its input and contains no dominated
    // point (pairwise brute force on the emitted rows).
    let parse_rows = |text: &str| -> Vec<(String, f64, f64)> {
        text.lines()
            .skip(1)
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                (f[0].to_string(), f[1].parse().unwrap(), f[2].parse().unwrap())
            })
            .collect()
    };
    let all_rows = parse_rows(&plot);
    let front_rows = parse_rows(&frontier);
    for (id, score, lat) in &front_rows {
        assert!(all_rows.iter().any(|(i, s, l)| i == id && s == score && l == lat));
        for (oid, os, ol) in &all_rows {
            if oid != id {
                let dominates = *os >= *score && *ol <= *lat && (*os > *score || *ol < *lat);
                assert!(!dominates, "{oid} dominates frontier row {id}");
            }
        }
    }
}

#[test]
fn lambda_zero_records_zero_penalty_every_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    let tiny = std::fs::read_to_string(benchmark("tiny.toml")).unwrap();
    std::fs::write(&cfg_path, tiny.replace("lambda = 100.0", "lambda = 0.0")).unwrap();
    let out = dir.path().join("out");
    assert_code(
        &run(&[
            "search",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]),
        0,
    );
    let log = std::fs::read_to_string(out.join("search.log")).unwrap();
    for line in log.lines() {
        assert!(line.contains("penalty=0.000000000"), "line: {line}");
    }
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("max_penalty=0.000000000"));
}

#[test]
fn stale_params_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = benchmark("tiny.toml");
    assert_code(
        &run(&[
            "search",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]),
        0,
    );
    // Same params against a differently shaped skeleton: stale.
    let other_cfg = dir.path().join("other.toml");
    let tiny = std::fs::read_to_string(&cfg).unwrap();
    std::fs::write(&other_cfg, tiny.replace("layers = 4", "layers = 5")).unwrap();
    let params = out.join("params.json");
    let out2 = run(&[
        "decode",
        "--config",
        other_cfg.to_str().unwrap(),
        "--params",
        params.to_str().unwrap(),
        "--nl",
        "3",
        "--method",
        "greedy",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_code(&out2, 1);
    assert!(String::from_utf8_lossy(&out2.stderr).contains("stale"));
}

#[test]
fn infeasible_constraints_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    let tiny = std::fs::read_to_string(benchmark("tiny.toml")).unwrap();
    // The cheapest architecture sits far above the implied latency bound
    // for 10^5 FPS, so the outer loop must exhaust its cap.
    std::fs::write(
        &cfg_path,
        tiny.replace(
            "throughput_min_fps = 22.0",
            "throughput_min_fps = 100000.0",
        ),
    )
    .unwrap();
    let out = run(&[
        "search",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("infeasible"));
}

#[test]
fn config_errors_exit_with_status_one_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    let tiny = std::fs::read_to_string(benchmark("tiny.toml")).unwrap();
    std::fs::write(&cfg_path, format!("{tiny}\n[loss2]\nx = 1\n")).unwrap();
    let out = run(&[
        "search",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_code(&out, 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("loss2"));
}

#[test]
fn missing_config_exits_with_status_three() {
    let out = run(&["search", "--config", "/nonexistent/run.toml"]);
    assert_code(&out, 3);
}

#[test]
fn sample_is_reproducible_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = benchmark("tiny.toml");
    let cfg_s = cfg.to_str().unwrap();
    let read = |out: &Path| std::fs::read_to_string(out.join("samples.csv")).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    assert_code(&run(&["sample", "--config", cfg_s, "--n", "50", "--seed", "1", "--out", a.to_str().unwrap()]), 0);
    assert_code(&run(&["sample", "--config", cfg_s, "--n", "50", "--seed", "1", "--out", b.to_str().unwrap()]), 0);
    assert_code(&run(&["sample", "--config", cfg_s, "--n", "50", "--seed", "2", "--out", c.to_str().unwrap()]), 0);
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn malformed_points_file_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(
        &bad,
        "id,score,latency_ms,throughput_fps,source\nx,1.0,2.0,3.0,random\ny,oops,2.0,3.0,random\n",
    )
    .unwrap();
    let out = run(&[
        "pareto",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_code(&out, 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains(":3:"));
}
