//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, Parser, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bp::DEFAULT_ENUMERATION_CAP;
use crate::error::{Error, Result};
use crate::sim::{run_sweep, BerRecord, DetectorSpec, NoisePoints, SimulationConfig};

pub const WORKERS_ENV: &str = "MIMO_BSP_WORKERS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Parser, Debug, Default)]
#[command(
    name = "mimo-bsp",
    version,
    about = "Monte Carlo BER sweeps for MIMO soft detectors",
    after_help = "Example:\n  mimo-bsp --nr 8 --nt 4 --mod 16qam --ebn0 5:1:20 --iters 10 \\\n    --detectors map,mmse,obp,bsp:1:1,bsp:2:2 --seed 7 --out fig.csv"
)]
pub struct Cli {
    /// Receive antennas
    #[arg(long)]
    pub nr: Option<usize>,
    /// Transmit antennas
    #[arg(long)]
    pub nt: Option<usize>,
    /// qpsk, 16qam, 64qam, 256qam, or bits per symbol
    #[arg(long = "mod")]
    pub modulation: Option<String>,
    /// Eb/N0 points in dB: start:step:stop or a comma list
    #[arg(long, allow_hyphen_values = true, conflicts_with = "sigma2")]
    pub ebn0: Option<String>,
    /// Noise variance per real dimension instead of Eb/N0 (same syntax)
    #[arg(long)]
    pub sigma2: Option<String>,
    /// Message-passing iterations
    #[arg(long)]
    pub iters: Option<usize>,
    /// Comma list of map, mmse, obp[:init], bsp:<d_m>:<d_f>[:init], ebrdf:<d_f>
    #[arg(long)]
    pub detectors: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum channel uses per point
    #[arg(long)]
    pub vectors: Option<u64>,
    /// Stop a point once every detector has this many bit errors (0 disables)
    #[arg(long)]
    pub target_errors: Option<u64>,
    #[arg(long, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    /// TOML or JSON settings file; a JSON run manifest re-runs that sweep
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file (CSV goes to stdout when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// Largest |A|^N_t the exhaustive detectors will enumerate
    #[arg(long)]
    pub map_cap: Option<usize>,
}

/// Settings file: every key mirrors a flag.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSettings {
    nr: Option<usize>,
    nt: Option<usize>,
    #[serde(rename = "mod")]
    modulation: Option<StringOrNumber>,
    ebn0: Option<Points>,
    sigma2: Option<Points>,
    iters: Option<usize>,
    detectors: Option<Detectors>,
    seed: Option<u64>,
    vectors: Option<u64>,
    target_errors: Option<u64>,
    workers: Option<usize>,
    out: Option<PathBuf>,
    format: Option<OutputFormat>,
    map_cap: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum StringOrNumber {
    Text(String),
    Number(usize),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Points {
    Text(String),
    List(Vec<f64>),
    Single(f64),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Detectors {
    Text(String),
    List(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: SimulationConfig,
    pub version: String,
    pub timestamp: String,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(config: SimulationConfig, outputs: Vec<PathBuf>) -> Self {
        Self {
            config,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            outputs,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputOptions {
    pub path: Option<PathBuf>,
    pub format: OutputFormat,
}

/// Parses `start:step:stop`, a comma list, or one number.
pub fn parse_points(spec: &str) -> Result<Vec<f64>> {
    let spec = spec.trim();
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::invalid(format!("'{s}' is not a number")))
    };
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [start, step, stop] = parts.as_slice() else {
            return Err(Error::invalid(format!("range '{spec}' must be start:step:stop")));
        };
        let (start, step, stop) = (num(start)?, num(step)?, num(stop)?);
        if !(step > 0.0 && step.is_finite()) || stop < start {
            return Err(Error::invalid(format!("range '{spec}' needs step > 0 and stop >= start")));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|k| start + k as f64 * step).collect())
    } else {
        spec.split(',').map(num).collect()
    }
}

fn parse_modulation(s: &str) -> Result<usize> {
    match s.trim().to_ascii_lowercase().as_str() {
        "qpsk" | "4qam" => Ok(2),
        "16qam" => Ok(4),
        "64qam" => Ok(6),
        "256qam" => Ok(8),
        other => other
            .parse()
            .map_err(|_| Error::invalid(format!("unknown modulation '{s}' (qpsk, 16qam, 64qam, 256qam or bits per symbol)"))),
    }
}

fn points_from(p: Points) -> Result<Vec<f64>> {
    match p {
        Points::Text(s) => parse_points(&s),
        Points::List(v) => Ok(v),
        Points::Single(x) => Ok(vec![x]),
    }
}

fn load_file(path: &Path) -> Result<std::result::Result<FileSettings, Box<RunManifest>>> {
    let text = fs::read_to_string(path)?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))?;
        if value.get("config").is_some() {
            let m: RunManifest = serde_json::from_value(value)
                .map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))?;
            return Ok(Err(Box::new(m)));
        }
        serde_json::from_value(value)
            .map(Ok)
            .map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text)
            .map(Ok)
            .map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))
    }
}

/// Merges a parsed command line over its optional settings file.
///
/// Every problem found is reported in one error.
pub fn resolve(cli: Cli) -> Result<(SimulationConfig, OutputOptions)> {
    let mut problems: Vec<String> = Vec::new();
    let (file, base) = match cli.config.as_deref().map(load_file).transpose()? {
        None => (FileSettings::default(), None),
        Some(Ok(f)) => (f, None),
        Some(Err(m)) => (FileSettings::default(), Some(m.config)),
    };

    let mut take = |r: Result<Vec<f64>>| match r {
        Ok(v) => Some(v),
        Err(e) => {
            problems.push(e.to_string());
            None
        }
    };
    let ebn0 = match (&cli.ebn0, &cli.sigma2) {
        (Some(s), _) => take(parse_points(s)),
        (None, Some(_)) => None,
        (None, None) if file.sigma2.is_none() => file.ebn0.map(points_from).and_then(&mut take),
        _ => None,
    };
    let sigma2 = match (&cli.sigma2, &cli.ebn0) {
        (Some(s), _) => take(parse_points(s)),
        (None, Some(_)) => None,
        (None, None) => file.sigma2.map(points_from).and_then(&mut take),
    };

    let modulation = cli
        .modulation
        .clone()
        .or(file.modulation.map(|m| match m {
            StringOrNumber::Text(s) => s,
            StringOrNumber::Number(n) => n.to_string(),
        }))
        .map(|m| parse_modulation(&m));
    let detectors: Option<Vec<String>> = cli
        .detectors
        .clone()
        .map(|s| s.split(',').map(str::to_string).collect())
        .or(file.detectors.map(|d| match d {
            Detectors::Text(s) => s.split(',').map(str::to_string).collect(),
            Detectors::List(v) => v,
        }));

    let from_manifest = base.is_some();
    let mut cfg = base.unwrap_or_else(|| SimulationConfig::new(0, 0, 0, NoisePoints::EbN0Db(Vec::new()), Vec::new()));
    if !from_manifest {
        cfg.workers = std::thread::available_parallelism().map_or(1, usize::from);
    }
    macro_rules! set {
        ($field:ident, $cli:expr, $file:expr, $name:literal) => {
            match $cli.or($file) {
                Some(v) => cfg.$field = v,
                None if !from_manifest => problems.push(format!("{} is required", $name)),
                None => {}
            }
        };
    }
    set!(nr, cli.nr, file.nr, "--nr");
    set!(nt, cli.nt, file.nt, "--nt");
    match modulation {
        Some(Ok(m)) => cfg.bits_per_symbol = m,
        Some(Err(e)) => problems.push(e.to_string()),
        None if !from_manifest => problems.push("--mod is required".to_string()),
        None => {}
    }
    match (ebn0, sigma2) {
        (Some(p), _) => cfg.noise = NoisePoints::EbN0Db(p),
        (None, Some(p)) => cfg.noise = NoisePoints::Sigma2(p),
        (None, None) if !from_manifest && cli.ebn0.is_none() && cli.sigma2.is_none() => {
            problems.push("--ebn0 or --sigma2 is required".to_string());
        }
        _ => {}
    }
    if let Some(list) = detectors {
        let mut roster = Vec::new();
        for d in list {
            match d.parse::<DetectorSpec>() {
                Ok(spec) => roster.push(spec),
                Err(e) => problems.push(e.to_string()),
            }
        }
        cfg.detectors = roster;
    } else if !from_manifest {
        problems.push("--detectors is required".to_string());
    }
    if let Some(v) = cli.iters.or(file.iters) {
        cfg.iterations = v;
    }
    if let Some(v) = cli.seed.or(file.seed) {
        cfg.master_seed = v;
    }
    if let Some(v) = cli.vectors.or(file.vectors) {
        cfg.max_vectors = v;
    }
    if let Some(v) = cli.target_errors.or(file.target_errors) {
        cfg.target_bit_errors = (v > 0).then_some(v);
    }
    if let Some(v) = cli.workers.or(file.workers) {
        cfg.workers = v;
    }
    cfg.map_cap = cli.map_cap.or(file.map_cap).unwrap_or(if from_manifest { cfg.map_cap } else { DEFAULT_ENUMERATION_CAP });

    if problems.is_empty() {
        problems.extend(cfg.violations());
    } else {
        problems.extend(cfg.violations().into_iter().filter(|v| !v.contains("roster is empty")));
    }
    if !problems.is_empty() {
        return Err(Error::invalid(problems.join("\n  ")));
    }
    let path = cli.out.or(file.out);
    let format = cli.format.or(file.format).unwrap_or_else(|| match &path {
        Some(p) if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) => OutputFormat::Json,
        _ => OutputFormat::Csv,
    });
    Ok((cfg, OutputOptions { path, format }))
}

/// Parses arguments (program name first) into a validated configuration.
pub fn parse_config<I, T>(args: I) -> Result<(SimulationConfig, OutputOptions)>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::invalid(e.to_string()))?;
    resolve(cli)
}

/// Records sorted by detector id, then Eb/N0, then noise variance.
pub fn sorted_records(records: &[BerRecord]) -> Vec<BerRecord> {
    let mut v = records.to_vec();
    v.sort_by(|a, b| {
        a.detector
            .cmp(&b.detector)
            .then(a.ebn0_db.unwrap_or(f64::NAN).total_cmp(&b.ebn0_db.unwrap_or(f64::NAN)))
            .then(a.sigma2.total_cmp(&b.sigma2))
    });
    v
}

pub fn write_csv<W: Write>(records: &[BerRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in sorted_records(records) {
        w.serialize(&r).map_err(|e| Error::Serialization(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct JsonResults {
    pub manifest: RunManifest,
    pub records: Vec<BerRecord>,
}

/// Sibling file holding the manifest of a CSV result.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Writes results to `path`; CSV output also gets a manifest next to it.
pub fn emit_results(
    records: &[BerRecord],
    manifest: &RunManifest,
    format: OutputFormat,
    path: &Path,
) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("no records to write"));
    }
    match format {
        OutputFormat::Csv => {
            let mut buf = Vec::new();
            write_csv(records, &mut buf)?;
            fs::write(path, buf)?;
            let m = serde_json::to_vec_pretty(manifest).map_err(|e| Error::Serialization(e.to_string()))?;
            fs::write(manifest_path(path), m)?;
        }
        OutputFormat::Json => {
            let doc = JsonResults {
                manifest: manifest.clone(),
                records: sorted_records(records),
            };
            let text = serde_json::to_vec_pretty(&doc).map_err(|e| Error::Serialization(e.to_string()))?;
            fs::write(path, text)?;
        }
    }
    Ok(())
}

/// Full program; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    if args.len() <= 1 {
        eprintln!("{}", Cli::command().render_help());
        return 2;
    }
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (cfg, out) = match resolve(cli) {
        Ok(v) => v,
        Err(Error::InvalidArgument(msg)) => {
            eprintln!("error: invalid configuration:\n  {msg}\n\nRun with --help for usage.");
            return 2;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let records = match run_sweep(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let written = match &out.path {
        Some(path) => {
            let mut outputs = vec![path.clone()];
            if out.format == OutputFormat::Csv {
                outputs.push(manifest_path(path));
            }
            emit_results(&records, &RunManifest::new(cfg.clone(), outputs), out.format, path)
        }
        None => match out.format {
            OutputFormat::Csv => write_csv(&records, std::io::stdout().lock()),
            OutputFormat::Json => serde_json::to_writer_pretty(
                std::io::stdout().lock(),
                &JsonResults {
                    manifest: RunManifest::new(cfg.clone(), Vec::new()),
                    records: sorted_records(&records),
                },
            )
            .map_err(|e| Error::Serialization(e.to_string())),
        },
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return 1;
    }
    let failures: u64 = records.iter().map(|r| r.failures).sum();
    if failures > 0 {
        eprintln!("error: {failures} detector runs failed; see warnings");
        return 1;
    }
    0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_and_lists() {
        assert_eq!(parse_points("5:1:8").unwrap(), vec![5.0, 6.0, 7.0, 8.0]);
        assert_eq!(parse_points("0:0.5:1").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_points("-2:2:2").unwrap(), vec![-2.0, 0.0, 2.0]);
        assert_eq!(parse_points("0.1, 0.2").unwrap(), vec![0.1, 0.2]);
        assert_eq!(parse_points("14").unwrap(), vec![14.0]);
        for bad in ["1:2", "3:1:1", "1:0:4", "a", "1,,2"] {
            assert!(parse_points(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn modulation_names() {
        assert_eq!(parse_modulation("16QAM").unwrap(), 4);
        assert_eq!(parse_modulation("qpsk").unwrap(), 2);
        assert_eq!(parse_modulation("3").unwrap(), 3);
        assert!(parse_modulation("8psk").is_err());
    }
}
