use std::fs;
use std::path::Path;
use std::process::Command as Process;

use stopscan_cli::config::{BaselineArg, IndicatorArg, ModeArg};
use stopscan_cli::stages::read_scores;
use stopscan_cli::{execute, Command, Manifest, Overrides, PipelineConfig};
use stopscan_core::grid::DurationMatrix;
use stopscan_core::scoring::Indicator;
use tempfile::TempDir;

/// Writes a small synthetic fixture and returns a config file pointing at it.
fn fixture(dir: &Path) -> std::path::PathBuf {
    let input = dir.join("input");
    let toml = format!(
        r#"seed = 7

[paths]
gps = "{gps}"
route = "{route}"
truth = "{truth}"
output = "{out}"

[pipeline.detector]
mode = "physical"

[synth]
journeys = 8
"#,
        gps = input.join("gps.csv").display(),
        route = input.join("route.txt").display(),
        truth = input.join("truth.json").display(),
        out = dir.join("out").display(),
    );
    let path = dir.join("config.toml");
    fs::write(&path, toml).unwrap();
    let o = Overrides { config: Some(path.clone()), ..Default::default() };
    execute(&Command::Synth, &o).unwrap();
    path
}

fn with_config(config: &Path, output: &Path) -> Overrides {
    Overrides { config: Some(config.into()), output: Some(output.into()), ..Default::default() }
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn stamp(dir: &Path, name: &str) -> (String, u64) {
    let v: serde_json::Value = serde_json::from_str(&read(dir, name)).unwrap();
    (v["config_hash"].as_str().unwrap().to_string(), v["seed"].as_u64().unwrap())
}

#[test]
fn run_writes_stamped_artifacts_with_metrics_in_range() {
    let tmp = TempDir::new().unwrap();
    let cfg = fixture(tmp.path());
    let out = tmp.path().join("out");
    execute(&Command::Run, &with_config(&cfg, &out)).unwrap();

    let metrics: serde_json::Value = serde_json::from_str(&read(&out, "metrics.json")).unwrap();
    for key in ["ap", "auc"] {
        let x = metrics[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&x), "{key} = {x}");
    }
    let manifest: Manifest = serde_json::from_str(&read(&out, "manifest.json")).unwrap();
    assert_eq!(manifest.seed, 7);
    for stage in ["ingest", "detect", "matrix", "solve", "score", "eval"] {
        for file in &manifest.stages[stage] {
            assert!(out.join(file).exists(), "{stage}: {file}");
            if file.ends_with(".json") && file != "manifest.json" {
                assert_eq!(stamp(&out, file), (manifest.config_hash.clone(), 7), "{file}");
            }
        }
    }
    let echoed = PipelineConfig::load(&out.join("config.toml")).unwrap();
    assert_eq!(echoed.hash(), manifest.config_hash);
    assert!(read(&out, "trace.csv").starts_with("cluster,iter,objective,res1,res2,res3,rho\n"));
    assert!(read(&out, "scores.csv").starts_with("segment_id,start_lng,start_lat,end_lng,end_lat,ast,mst,tat_k\n"));
}

#[test]
fn rerun_gives_byte_identical_scores_and_metrics() {
    let tmp = TempDir::new().unwrap();
    let cfg = fixture(tmp.path());
    let out = tmp.path().join("out");
    execute(&Command::Run, &with_config(&cfg, &out)).unwrap();
    let first = (read(&out, "scores.csv"), read(&out, "metrics.json"));
    execute(&Command::Run, &with_config(&cfg, &out)).unwrap();
    assert_eq!(first, (read(&out, "scores.csv"), read(&out, "metrics.json")));
}

#[test]
fn wsa_scores_are_row_sums_of_r() {
    let tmp = TempDir::new().unwrap();
    let cfg = fixture(tmp.path());
    let out = tmp.path().join("out");
    let o = Overrides { baseline: Some(BaselineArg::Wsa), ..with_config(&cfg, &out) };
    execute(&Command::Run, &o).unwrap();
    let r = DurationMatrix::read_csv(read(&out, "matrix.csv").as_bytes()).unwrap();
    let ast = read_scores(&read(&out, "scores.csv"), Indicator::Ast).unwrap();
    assert_eq!(ast.len(), r.values.nrows());
    for (i, row) in r.values.row_iter().enumerate() {
        let mut sum = 0.0;
        for x in row.iter() {
            sum += x;
        }
        assert!((ast[i] - sum).abs() <= 1e-9 * sum.max(1.0), "row {i}: {} vs {sum}", ast[i]);
    }
    assert!(r.total() > 0.0);
    assert!(!out.join("trace.csv").exists());
}

#[test]
fn geojson_has_one_ranked_feature_per_segment() {
    let tmp = TempDir::new().unwrap();
    let cfg = fixture(tmp.path());
    let out = tmp.path().join("out");
    let o = Overrides { indicator: Some(IndicatorArg::Mst), ..with_config(&cfg, &out) };
    execute(&Command::Run, &o).unwrap();
    let geo: serde_json::Value = serde_json::from_str(&read(&out, "scores.geojson")).unwrap();
    let features = geo["features"].as_array().unwrap();
    let mst = read_scores(&read(&out, "scores.csv"), Indicator::Mst).unwrap();
    assert_eq!(features.len(), mst.len());
    let mut ranks: Vec<u64> = features.iter().map(|f| f["properties"]["rank"].as_u64().unwrap()).collect();
    for (i, f) in features.iter().enumerate() {
        assert_eq!(f["geometry"]["type"], "LineString");
        assert_eq!(f["properties"]["segment_id"].as_u64().unwrap(), i as u64);
        assert_eq!(f["properties"]["score"].as_f64().unwrap(), mst[i]);
        let lng = f["geometry"]["coordinates"][0][0].as_f64().unwrap();
        assert!((116.0..117.0).contains(&lng), "lng first");
    }
    for w in features.windows(2) {
        let (a, b) = (&w[0]["properties"], &w[1]["properties"]);
        if a["score"].as_f64() == b["score"].as_f64() {
            assert!(a["rank"].as_u64() < b["rank"].as_u64());
        }
    }
    ranks.sort_unstable();
    assert_eq!(ranks, (1..=mst.len() as u64).collect::<Vec<_>>());
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().unwrap().is_file())
        .map(|e| (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn echoed_config_reproduces_every_artifact() {
    let tmp = TempDir::new().unwrap();
    let cfg = fixture(tmp.path());
    let first = tmp.path().join("first");
    let o = Overrides { lambda: Some(0.2), mode: Some(ModeArg::Literal), k: Some(3), ..with_config(&cfg, &first) };
    execute(&Command::Run, &o).unwrap();
    let second = tmp.path().join("second");
    execute(&Command::Run, &with_config(&first.join("config.toml"), &second)).unwrap();
    let (a, b) = (files(&first), files(&second));
    assert_eq!(a.len(), b.len());
    for ((na, ba), (nb, bb)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        if na != "config.toml" {
            assert!(ba == bb, "{na} differs");
        }
    }
    let echoed = PipelineConfig::load(&first.join("config.toml")).unwrap();
    assert_eq!((echoed.pipeline.solver.lambda, echoed.pipeline.k), (0.2, 3));
}

#[test]
fn stage_by_stage_matches_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = fixture(tmp.path());
    let whole = tmp.path().join("whole");
    execute(&Command::Run, &with_config(&cfg, &whole)).unwrap();
    let staged = tmp.path().join("staged");
    for c in [Command::Ingest, Command::Detect, Command::Matrix, Command::Solve, Command::Score, Command::Eval { sweep: false }] {
        execute(&c, &with_config(&cfg, &staged)).unwrap();
    }
    let without_config = |d: &Path| files(d).into_iter().filter(|(n, _)| n != "config.toml").collect::<Vec<_>>();
    assert_eq!(without_config(&whole), without_config(&staged));
}

#[test]
fn clustered_parallel_equals_serial() {
    let tmp = TempDir::new().unwrap();
    let cfg = fixture(tmp.path());
    let mut text = fs::read_to_string(&cfg).unwrap();
    text.push_str("\n[pipeline.clustering]\nenabled = true\n");
    fs::write(&cfg, &text).unwrap();
    let par = tmp.path().join("par");
    execute(&Command::Run, &with_config(&cfg, &par)).unwrap();
    let partition: serde_json::Value = serde_json::from_str(&read(&par, "partition.json")).unwrap();
    assert!(partition["exemplars"].as_array().unwrap().len() > 1);

    let serial_cfg = tmp.path().join("serial.toml");
    let mut cfg_value = PipelineConfig::load(&cfg).unwrap();
    cfg_value.pipeline.parallel = false;
    fs::write(&serial_cfg, cfg_value.to_toml().unwrap()).unwrap();
    let ser = tmp.path().join("ser");
    let o = Overrides { jobs: Some(1), ..with_config(&serial_cfg, &ser) };
    execute(&Command::Run, &o).unwrap();
    assert_eq!(read(&par, "scores.csv"), read(&ser, "scores.csv"));
    assert_eq!(read(&par, "scoring_matrix.csv"), read(&ser, "scoring_matrix.csv"));
}

#[test]
fn sweep_covers_the_grid() {
    let tmp = TempDir::new().unwrap();
    let cfg = fixture(tmp.path());
    let out = tmp.path().join("out");
    let o = with_config(&cfg, &out);
    for c in [Command::Ingest, Command::Detect, Command::Matrix, Command::Solve, Command::Score] {
        execute(&c, &o).unwrap();
    }
    execute(&Command::Eval { sweep: true }, &o).unwrap();
    let sweep = read(&out, "sweep.csv");
    let mut lines = sweep.lines();
    assert_eq!(lines.next(), Some("lambda,beta,ap,auc"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 121);
    assert_eq!((rows[0][0], rows[0][1]), (0.0, 0.0));
    assert_eq!((rows[120][0], rows[120][1]), (1.0, 1.0));
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r[2]) && (0.0..=1.0).contains(&r[3])));
}

fn stopscan(args: &[&str]) -> std::process::Output {
    Process::new(env!("CARGO_BIN_EXE_stopscan")).args(args).env("RUST_LOG", "off").output().unwrap()
}

#[test]
fn stage_failure_is_tagged_and_keeps_earlier_artifacts() {
    let tmp = TempDir::new().unwrap();
    let cfg = fixture(tmp.path());
    let mut config = PipelineConfig::load(&cfg).unwrap();
    config.paths.route = tmp.path().join("missing-route.txt");
    let broken = tmp.path().join("broken.toml");
    fs::write(&broken, config.to_toml().unwrap()).unwrap();
    let out = tmp.path().join("out");
    let res = stopscan(&["run", "--config", broken.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("stage matrix failed"), "{err}");
    for kept in ["points.csv", "cleaning_report.json", "events.csv", "detection.json", "config.toml"] {
        assert!(out.join(kept).exists(), "{kept}");
    }
}

#[test]
fn binary_rejects_unknown_config_keys_and_bad_flags() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[pipeline]\nsegment_len = 100\n").unwrap();
    let res = stopscan(&["ingest", "--config", bad.to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("invalid configuration"));
    let res = stopscan(&["run", "--baseline", "nope"]);
    assert!(!res.status.success());
}

#[test]
fn pair_subcommand_reports_diagnostics() {
    let res = stopscan(&["pair", "5", "10", "60", "30", "--strict-feasibility"]);
    assert!(res.status.success());
    let v: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(v["verdict"]["stopped"], false);
    let res = stopscan(&["pair", "5", "10", "60"]);
    let v: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(v["verdict"]["stopped"], true);
    assert_eq!(v["verdict"]["case"], "case1_touch");
}
