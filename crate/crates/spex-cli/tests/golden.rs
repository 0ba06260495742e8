//! End-to-end runs of the binary: every command must reproduce its
//! artifacts byte for byte when re-run from the configuration echo its
//! own output embeds, and errors must map to the documented exit codes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use spex::cov::SiteSet;
use spex::dep::DependenceSpec;
use spex::io::{panel_csv, stations_csv, Role};
use spex::marginal::{SurfaceModel, TrendSurface};
use spex::sim::synth_dataset;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spex"))
}

fn run_cmd(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(sub)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary launches")
}

fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr_doc(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr not JSON ({e}): {text}"))
}

fn read_dir_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name().into_string().unwrap();
        out.insert(name, fs::read(entry.path()).unwrap());
    }
    out
}

/// Fixture data: eight stations on a 15 km lattice, the last held out,
/// with forty years of Smith-model maxima.
struct Fixture {
    dir: tempfile::TempDir,
    stations: PathBuf,
    maxima: PathBuf,
    model_json: Value,
    smith_json: Value,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let ids: Vec<String> = (1..=8).map(|k| format!("s{k}")).collect();
    let coords = vec![
        [0.0, 0.0],
        [15.0, 0.0],
        [30.0, 0.0],
        [0.0, 15.0],
        [15.0, 15.0],
        [30.0, 15.0],
        [0.0, 30.0],
        [15.0, 30.0],
    ];
    let sites = SiteSet::new(ids, coords).unwrap();
    let mut roles = vec![Role::Fit; 8];
    roles[7] = Role::Validate;
    let model = SurfaceModel {
        eta: TrendSurface {
            beta0: 30.0,
            beta1: 0.05,
            beta2: -0.1,
        },
        tau: TrendSurface::constant(8.0),
        xi: TrendSurface::constant(0.1),
    };
    let spec = DependenceSpec::Smith {
        omega11: 100.0,
        omega12: 0.0,
        omega22: 100.0,
    };
    let years: Vec<i64> = (1961..2001).collect();
    let panel = synth_dataset(&model, &spec, &sites, &years, 11).unwrap();

    let stations = dir.path().join("stations.csv");
    fs::write(&stations, stations_csv(&sites, &roles)).unwrap();
    let maxima = dir.path().join("maxima.csv");
    fs::write(&maxima, panel_csv(&panel)).unwrap();

    let model_json = serde_json::to_value(model).unwrap();
    let smith_json = serde_json::to_value(&spec).unwrap();
    Fixture {
        dir,
        stations,
        maxima,
        model_json,
        smith_json,
    }
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

/// Runs a command twice, the second time from the config echo embedded
/// in the first run's document, and demands bytewise identical artifacts
/// apart from run.json.
fn assert_rerun_identical(sub: &str, doc_name: &str, config: &Path, work: &Path) -> Value {
    let out1 = work.join(format!("{sub}_out1"));
    let run1 = run_cmd(sub, config, &out1, &[]);
    assert_success(&run1, sub);

    let doc: Value = serde_json::from_slice(&fs::read(out1.join(doc_name)).unwrap()).unwrap();
    assert_eq!(doc["command"], json!(sub));
    assert!(doc["seed"].is_u64(), "document must embed its seed");
    assert!(
        doc["inputs"].as_object().map_or(false, |m| !m.is_empty()),
        "document must embed input digests"
    );
    for digest in doc["inputs"].as_object().unwrap().values() {
        assert_eq!(digest["sha256"].as_str().unwrap().len(), 64);
    }
    let echo = write_config(work, &format!("{sub}_echo.json"), &doc["config"]);

    let out2 = work.join(format!("{sub}_out2"));
    let run2 = run_cmd(sub, &echo, &out2, &[]);
    assert_success(&run2, &format!("{sub} rerun from echo"));

    let files1 = read_dir_files(&out1);
    let files2 = read_dir_files(&out2);
    assert_eq!(
        files1.keys().collect::<Vec<_>>(),
        files2.keys().collect::<Vec<_>>(),
        "{sub} rerun should write the same artifact set"
    );
    assert!(files1.contains_key("run.json"));
    for (name, bytes) in &files1 {
        if name == "run.json" {
            continue;
        }
        assert_eq!(
            bytes,
            files2.get(name).unwrap(),
            "{sub} artifact {name} changed across a rerun from the embedded config"
        );
    }
    let log: Value = serde_json::from_slice(files1.get("run.json").unwrap()).unwrap();
    assert!(log["started_unix_s"].as_f64().unwrap() > 0.0);
    assert!(log["outputs"].as_object().unwrap().len() >= 2);
    doc
}

#[test]
fn every_command_reruns_byte_identically_from_its_config_echo() {
    let fx = fixture();
    let work = fx.dir.path();

    let fit_cfg = write_config(
        work,
        "fit.json",
        &json!({
            "stations": fx.stations,
            "maxima": fx.maxima,
            "dependence": fx.smith_json,
            "eta_trend": true,
            "n_starts": 1,
            "max_evals": 2500,
            "seed": 3
        }),
    );
    let fit_doc = assert_rerun_identical("fit", "report.json", &fit_cfg, work);
    assert!(fit_doc["results"]["fit"]["converged"].as_bool().unwrap());
    assert_eq!(fit_doc["results"]["fit"]["seed"], json!(3));

    let sim_cfg = write_config(
        work,
        "simulate.json",
        &json!({
            "stations": fx.stations,
            "years": {"start": 2001, "count": 5},
            "model": fx.model_json,
            "generator": {"kind": "max-stable", "dependence": fx.smith_json},
            "seed": 21
        }),
    );
    let sim_doc = assert_rerun_identical("simulate", "simulate.json", &sim_cfg, work);
    assert_eq!(sim_doc["results"]["n_sites"], json!(8));
    assert_eq!(sim_doc["results"]["n_years"], json!(5));

    let mad_cfg = write_config(
        work,
        "madogram.json",
        &json!({
            "stations": fx.stations,
            "maxima": fx.maxima,
            "n_bins": 5
        }),
    );
    let mad_doc = assert_rerun_identical("madogram", "madogram.json", &mad_cfg, work);
    assert_eq!(mad_doc["results"]["n_pairs"], json!(28));

    let check_cfg = write_config(
        work,
        "check.json",
        &json!({
            "stations": fx.stations,
            "maxima": fx.maxima,
            "model": fx.model_json,
            "null": {"kind": "dependence", "dependence": fx.smith_json},
            "radii": [20.0, 40.0],
            "n_sim": 29,
            "seed": 5
        }),
    );
    let check_doc = assert_rerun_identical("check", "check.json", &check_cfg, work);
    assert!(check_doc["results"]["p_value"].is_f64() || check_doc["results"]["p_value"].is_u64());

    let mcmc_cfg = write_config(
        work,
        "mcmc.json",
        &json!({
            "stations": fx.stations,
            "maxima": fx.maxima,
            "mcmc": {"iterations": 400, "burn_in": 100, "thin": 10},
            "seed": 13
        }),
    );
    let mcmc_doc = assert_rerun_identical("mcmc", "mcmc.json", &mcmc_cfg, work);
    assert_eq!(mcmc_doc["results"]["n_samples"], json!(30));
    let samples1 = work.join("mcmc_out1").join("samples.csv");
    let header = fs::read_to_string(&samples1).unwrap();
    assert!(header.starts_with("sample,beta.eta.0,beta.eta.x,beta.eta.y,beta.tau.0"));
    assert!(header.lines().next().unwrap().contains("eta.s1"));

    let rm_cfg = write_config(
        work,
        "returnmap.json",
        &json!({
            "stations": fx.stations,
            "samples": samples1,
            "period": 50.0,
            "seed": 9
        }),
    );
    let rm_doc = assert_rerun_identical("returnmap", "returnmap.json", &rm_cfg, work);
    assert_eq!(rm_doc["results"]["n_cells"], json!(8));
    let map = fs::read_to_string(work.join("returnmap_out1").join("map.csv")).unwrap();
    assert!(map.starts_with("lon_km,lat_km,mean,q025,q975\n"));
    assert_eq!(map.lines().count(), 9);
}

#[test]
fn seed_flag_overrides_the_configuration() {
    let fx = fixture();
    let work = fx.dir.path();
    let cfg = write_config(
        work,
        "sim.json",
        &json!({
            "stations": fx.stations,
            "years": {"start": 2001, "count": 3},
            "model": fx.model_json,
            "generator": {"kind": "max-stable", "dependence": fx.smith_json},
            "seed": 0
        }),
    );
    let a = work.join("a");
    let b = work.join("b");
    assert_success(&run_cmd("simulate", &cfg, &a, &["--seed", "7"]), "simulate a");
    assert_success(&run_cmd("simulate", &cfg, &b, &[]), "simulate b");
    let doc_a: Value = serde_json::from_slice(&fs::read(a.join("simulate.json")).unwrap()).unwrap();
    assert_eq!(doc_a["seed"], json!(7));
    assert_eq!(doc_a["config"]["seed"], json!(7));
    let maxima_a = fs::read(a.join("maxima.csv")).unwrap();
    let maxima_b = fs::read(b.join("maxima.csv")).unwrap();
    assert_ne!(maxima_a, maxima_b, "different seeds must give different panels");
}

#[test]
fn returnmap_without_samples_is_a_user_error() {
    let fx = fixture();
    let work = fx.dir.path();
    // Header-only samples table: a chain that retained nothing.
    let ids: Vec<String> = (1..=7).map(|k| format!("s{k}")).collect();
    let mut header = String::from("sample");
    for b in ["eta", "tau", "xi"] {
        for c in ["0", "x", "y"] {
            header.push_str(&format!(",beta.{b}.{c}"));
        }
    }
    for b in ["eta", "tau", "xi"] {
        header.push_str(&format!(",sill.{b}"));
    }
    for b in ["eta", "tau", "xi"] {
        header.push_str(&format!(",range.{b}"));
    }
    for b in ["eta", "tau", "xi"] {
        for id in &ids {
            header.push_str(&format!(",{b}.{id}"));
        }
    }
    header.push('\n');
    let samples = work.join("empty_samples.csv");
    fs::write(&samples, header).unwrap();

    let cfg = write_config(
        work,
        "rm.json",
        &json!({
            "stations": fx.stations,
            "samples": samples,
            "period": 50.0
        }),
    );
    let out = run_cmd("returnmap", &cfg, &work.join("rm_out"), &[]);
    assert_eq!(out.status.code(), Some(1));
    let doc = stderr_doc(&out);
    assert_eq!(doc["error"]["exit_code"], json!(1));
    assert_eq!(doc["error"]["kind"], json!("insufficient-data"));
}

#[test]
fn configuration_and_input_errors_exit_one_with_a_schema_doc() {
    let fx = fixture();
    let work = fx.dir.path();

    let unknown = write_config(
        work,
        "bad.json",
        &json!({
            "stations": fx.stations,
            "maxima": fx.maxima,
            "n_bins": 5,
            "bogus_knob": 1
        }),
    );
    let out = run_cmd("madogram", &unknown, &work.join("bad_out"), &[]);
    assert_eq!(out.status.code(), Some(1));
    let doc = stderr_doc(&out);
    assert_eq!(doc["error"]["kind"], json!("schema"));
    assert!(
        doc["error"]["message"].as_str().unwrap().contains("bogus_knob"),
        "{doc}"
    );

    let missing = write_config(
        work,
        "missing.json",
        &json!({
            "stations": work.join("absent.csv"),
            "maxima": fx.maxima,
            "n_bins": 5
        }),
    );
    let out = run_cmd("madogram", &missing, &work.join("missing_out"), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_doc(&out)["error"]["kind"], json!("io"));

    let out = bin().arg("madogram").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_doc(&out)["error"]["kind"], json!("usage"));

    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("returnmap"));
}

#[test]
fn nested_unknown_keys_are_rejected_with_their_path() {
    let fx = fixture();
    let work = fx.dir.path();
    let cfg = write_config(
        work,
        "deep.json",
        &json!({
            "stations": fx.stations,
            "maxima": fx.maxima,
            "mcmc": {"iterations": 200, "burn_in": 100, "thin": 10, "warmup": 5},
            "seed": 1
        }),
    );
    let out = run_cmd("mcmc", &cfg, &work.join("deep_out"), &[]);
    assert_eq!(out.status.code(), Some(1));
    let doc = stderr_doc(&out);
    assert_eq!(doc["error"]["kind"], json!("schema"));
    assert!(
        doc["error"]["message"].as_str().unwrap().contains("warmup"),
        "{doc}"
    );
}
