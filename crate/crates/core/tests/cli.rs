use std::path::Path;

use bnpwmar::cli::main_with_args;
use bnpwmar::io::chain::read_chain;
use bnpwmar::io::manifest::{read_manifest, ManifestBody};
use bnpwmar::io::series::{read_series, ReadOptions};

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("bnpwmar").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"
[model]
lags = 3

[prior]
diagonalSigmaX = true

[sampler]
components = 6
iters = 200
burnin = 100
thin = 10
selectionMode = "global"
gammaHold = 40
tuneRounds = 1
tuneSweeps = 100
batchSweeps = 20
"#;

#[test]
fn simulate_fit_and_post_process() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let series = d.join("ricker.txt");
    assert_eq!(
        run(&[
            "simulate",
            "--kind",
            "rickerNormal",
            "--length",
            "1100",
            "--seed",
            "4",
            "--out",
            s(&series)
        ]),
        0
    );
    assert_eq!(read_series(&series, ReadOptions::default()).unwrap().len(), 1100);
    let sim_manifest = d.join("ricker.txt.manifest.json");
    assert!(sim_manifest.exists());

    let cfg = d.join("run.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = d.join("fit");
    let code = run(&[
        "fit",
        "--config",
        s(&cfg),
        "--data",
        s(&series),
        "--take",
        "80",
        "--chains",
        "2",
        "--split-init",
        "--seed",
        "11",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 0);

    let mut seeds = Vec::new();
    for k in 0..2 {
        let (header, draws) = read_chain(&out.join(format!("chain-{k}.jsonl"))).unwrap();
        assert_eq!(draws.len(), 20);
        assert_eq!(header.lags, 3);
        seeds.push(header.seed);
        let m = read_manifest(&out.join(format!("chain-{k}.manifest.json"))).unwrap();
        match m.body {
            ManifestBody::Fit {
                config, data, timings, ..
            } => {
                assert_eq!(config.sampler.seed, 11 + k as u64);
                assert_eq!(data.length, 80);
                assert!(timings.seconds_per_1000 > 0.0);
                assert_eq!(config.sampler.pi_gamma.as_ref().map(Vec::len), Some(3));
            }
            other => panic!("unexpected manifest {other:?}"),
        }
        let trace = std::fs::read_to_string(out.join(format!("chain-{k}.trace.tsv"))).unwrap();
        assert!(trace.starts_with("iteration loglik n_occupied log_omega_last"));
        assert_eq!(trace.lines().count(), 1 + 300);
    }
    assert_eq!(seeds, vec![11, 12]);

    let c0 = out.join("chain-0.jsonl");
    let c1 = out.join("chain-1.jsonl");
    let summary = d.join("summary.json");
    assert_eq!(run(&["summarize", "--chains", s(&c0), s(&c1), "--out", s(&summary)]), 0);
    let text = std::fs::read_to_string(&summary).unwrap();
    assert!(text.contains("logOmegaLastMax") || text.contains("log_omega_last_max"));

    let grid = d.join("mean.tsv");
    let code = run(&[
        "estimate",
        "--chains",
        s(&c0),
        s(&c1),
        "--functional",
        "mean",
        "--vary",
        "2:0.5:4:8",
        "--uniform",
        "0.5:4",
        "--out",
        s(&grid),
    ]);
    assert_eq!(code, 0);
    let g = std::fs::read_to_string(&grid).unwrap();
    assert_eq!(g.lines().next().unwrap(), "lag2 mean q025 q975");
    assert_eq!(g.lines().count(), 9);

    let dens = d.join("dens.tsv");
    let code = run(&[
        "estimate",
        "--chains",
        s(&c0),
        "--functional",
        "density",
        "--y",
        "0:5:11",
        "--vary",
        "1:1:3:2",
        "--vary",
        "2:1:3:3",
        "--fix",
        "2,2,2",
        "--out",
        s(&dens),
    ]);
    assert_eq!(code, 0);
    assert_eq!(std::fs::read_to_string(&dens).unwrap().lines().count(), 1 + 2 * 3 * 11);

    let fc = d.join("forecast.tsv");
    let code = run(&[
        "forecast",
        "--chains",
        s(&c0),
        "--data",
        s(&series),
        "--take",
        "80",
        "--steps",
        "3",
        "--paths",
        "200",
        "--out",
        s(&fc),
    ]);
    assert_eq!(code, 0);
    assert_eq!(std::fs::read_to_string(&fc).unwrap().lines().count(), 4);

    let scores = d.join("scores.json");
    let code = run(&[
        "evaluate",
        "--chains",
        s(&c0),
        s(&c1),
        "--oracle",
        "rickerNormal",
        "--data",
        s(&series),
        "--fit-length",
        "80",
        "--pool",
        "1000",
        "--n-val",
        "30",
        "--replicates",
        "100",
        "--max-draws",
        "10",
        "--out",
        s(&scores),
    ]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&scores).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
    assert!(v[0]["kl"]["kl"].as_f64().unwrap().is_finite());

    for m in [
        sim_manifest,
        out.join("chain-1.manifest.json"),
        d.join("mean.tsv.manifest.json"),
        d.join("forecast.tsv.manifest.json"),
        d.join("scores.json.manifest.json"),
    ] {
        assert_eq!(run(&["replay", "--manifest", s(&m)]), 0, "replay of {}", m.display());
    }
}

#[test]
fn replay_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("ar.txt");
    assert_eq!(
        run(&["simulate", "--kind", "ar2", "--length", "50", "--out", s(&series)]),
        0
    );
    let m = dir.path().join("ar.txt.manifest.json");
    let text = std::fs::read_to_string(&m)
        .unwrap()
        .replace("\"seed\": 1", "\"seed\": 2");
    std::fs::write(&m, text).unwrap();
    assert_eq!(run(&["replay", "--manifest", s(&m)]), 1);
}

#[test]
fn errors_and_usage() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "1\n2\nx\n").unwrap();
    let out = dir.path().join("o");
    assert_eq!(run(&["fit", "--data", s(&bad), "--out", s(&out)]), 1);
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[sampler]\ncomponents = 1\n").unwrap();
    std::fs::write(&bad, "1\n2\n3\n4\n").unwrap();
    assert_eq!(
        run(&["fit", "--config", s(&cfg), "--data", s(&bad), "--out", s(&out)]),
        1
    );
    assert_eq!(
        run(&["simulate", "--kind", "nope", "--length", "3", "--out", s(&out)]),
        2
    );
}
