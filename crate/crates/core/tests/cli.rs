use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mimo_bsp::cli::{parse_config, JsonResults};
use mimo_bsp::sim::{BerRecord, NoisePoints};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mimo-bsp"))
        .args(args)
        .env_remove(mimo_bsp::cli::WORKERS_ENV)
        .output()
        .expect("spawn binary")
}

const SMALL: [&str; 12] = [
    "--nr", "2", "--nt", "2", "--mod", "qpsk", "--detectors", "map,mmse,bsp:2:2", "--vectors", "200", "--seed", "5",
];

fn with<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    SMALL.iter().copied().chain(extra.iter().copied()).collect()
}

#[test]
fn no_arguments_prints_help_and_fails() {
    let out = bin(&[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn flags_override_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.toml");
    fs::write(&file, "nr = 4\nnt = 2\nmod = \"16qam\"\nebn0 = [10.0]\ndetectors = [\"mmse\"]\nseed = 1\n").unwrap();
    let p = file.to_str().unwrap();
    let (cfg, _) = parse_config(["mimo-bsp", "--config", p, "--seed", "2"]).unwrap();
    assert_eq!(cfg.master_seed, 2);
    assert_eq!((cfg.nr, cfg.nt, cfg.bits_per_symbol), (4, 2, 4));
    assert_eq!(cfg.noise, NoisePoints::EbN0Db(vec![10.0]));
    let (cfg, _) = parse_config(["mimo-bsp", "--config", p]).unwrap();
    assert_eq!(cfg.master_seed, 1);
}

#[test]
fn csv_layout() {
    let out = bin(&["--nr", "2", "--nt", "2", "--mod", "qpsk", "--detectors", "mmse", "--ebn0", "8", "--vectors", "50"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(
        lines[0],
        "detector,ebn0_db,sigma2,vectors,bit_errors,bits_total,ber,ci_low,ci_high,symbol_errors,mults_per_use"
    );
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields[0], "mmse");
    assert_eq!(fields[1], "8.0");
    assert_eq!(fields[3], "50");
    assert_eq!(fields[5], "200");
}

#[test]
fn csv_rows_sorted_and_manifest_written() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    let out = bin(&with(&["--ebn0", "12,4", "--out", path.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(0));
    let mut rd = csv::Reader::from_path(&path).unwrap();
    let recs: Vec<BerRecord> = rd.deserialize().map(Result::unwrap).collect();
    let keys: Vec<(String, f64)> = recs.iter().map(|r| (r.detector.clone(), r.ebn0_db.unwrap())).collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    assert_eq!(keys, sorted);
    assert_eq!(recs.len(), 6);
    assert!(Path::new(&format!("{}.manifest.json", path.display())).exists());
}

#[test]
fn json_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    assert_eq!(bin(&with(&["--ebn0", "6", "--out", path.to_str().unwrap()])).status.code(), Some(0));
    let text = fs::read_to_string(&path).unwrap();
    let doc: JsonResults = serde_json::from_str(&text).unwrap();
    assert_eq!(doc.records.len(), 3);
    assert_eq!(serde_json::to_string_pretty(&doc).unwrap(), text);
    let again: JsonResults = serde_json::from_str(&serde_json::to_string(&doc).unwrap()).unwrap();
    assert_eq!(again.records, doc.records);
    assert_eq!(again.manifest, doc.manifest);
}

#[test]
fn manifest_reproduces_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.csv");
    let second = dir.path().join("b.csv");
    assert_eq!(bin(&with(&["--ebn0", "3:3:9", "--out", first.to_str().unwrap()])).status.code(), Some(0));
    let manifest = format!("{}.manifest.json", first.display());
    let out = bin(&["--config", &manifest, "--out", second.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
}

#[test]
fn unwritable_output_fails() {
    let out = bin(&with(&["--ebn0", "6", "--out", "/nonexistent-dir/x/r.csv"]));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn every_violation_is_reported() {
    let out = bin(&["--nr", "1", "--nt", "2", "--mod", "3", "--ebn0", "5", "--detectors", "bsp:0:1,foo"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    let lines = err.lines().filter(|l| l.starts_with("  ")).count();
    assert!(lines >= 3, "{err}");
}

#[test]
fn odd_modulation_rejected() {
    let e = parse_config(["mimo-bsp", "--nr", "2", "--nt", "2", "--mod", "3", "--ebn0", "5", "--detectors", "mmse"]);
    assert!(e.is_err());
    let e = parse_config(["mimo-bsp", "--nr", "2", "--nt", "2", "--mod", "8psk", "--ebn0", "5", "--detectors", "mmse"]);
    assert!(e.is_err());
}

#[test]
fn ebn0_and_sigma2_conflict() {
    assert!(parse_config(["mimo-bsp", "--nr", "2", "--nt", "2", "--mod", "qpsk", "--ebn0", "5", "--sigma2", "0.1", "--detectors", "mmse"]).is_err());
    let (cfg, _) = parse_config(["mimo-bsp", "--nr", "2", "--nt", "2", "--mod", "qpsk", "--sigma2", "0,0.1", "--detectors", "mmse"]).unwrap();
    assert_eq!(cfg.noise, NoisePoints::Sigma2(vec![0.0, 0.1]));
}
