use std::fs;
use std::io::{self, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use consensus_attack::broker::remote::{echo_responder, serve_lines, serve_tcp};
use consensus_attack::harness::export::stats_json;
use consensus_attack::harness::verify::{ch_consistency, ch_nes_agreement, nes_consistency, DEFAULT_TAUS, HALF_SQUARED_NORM};
use consensus_attack::harness::{
    export_results, run_bench, run_campaign, run_campaign_on, BenchConfig, CampaignResult, ExperimentConfig, RunReport,
};
use consensus_attack::Execution;
use ndarray::Array1;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "consensus-attack", version, about = "Query-budgeted closed-box attacks with CBO, CH and NES")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for exported artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Attack a single dataset input.
    Attack {
        #[command(flatten)]
        common: Common,
        /// Dataset index of the input.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Attack every input of the dataset and report campaign statistics.
    Campaign {
        #[command(flatten)]
        common: Common,
    },
    /// Run an optimizer on an analytic benchmark function.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Check the small-step behavior of the NES and CH expected steps.
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Serve the echo model over the line protocol.
    ServeEcho {
        /// Address to listen on; the bound address is printed on stdout.
        #[arg(long, default_value = "127.0.0.1:7878", conflicts_with = "stdio")]
        addr: String,
        /// Serve requests from stdin to stdout instead.
        #[arg(long)]
        stdio: bool,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Attack { common, index } => attack(&common, index),
        Command::Campaign { common } => campaign(&common),
        Command::Bench { common } => bench(&common),
        Command::Verify { common } => verify(&common),
        Command::ServeEcho { addr, stdio } => serve_echo(&addr, stdio),
    }
}

fn require_config(common: &Common) -> Result<&Path> {
    common.config.as_deref().context("--config is required for this command")
}

fn base_dir(config: &Path) -> &Path {
    config.parent().unwrap_or(Path::new("."))
}

fn load_experiment(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let path = require_config(common)?;
    let mut config = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok((config, base_dir(path).to_path_buf()))
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_json(out: Option<&Path>, name: &str, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(name);
        fs::write(&path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn finish_campaign(result: &CampaignResult, bins: usize, out: Option<&Path>) -> Result<ExitCode> {
    if let Some(dir) = out {
        export_results(result, bins, dir).with_context(|| format!("exporting to {}", dir.display()))?;
    }
    if let Some(e) = &result.error {
        eprintln!("campaign aborted: {e}");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn attack(common: &Common, index: usize) -> Result<ExitCode> {
    let (config, base) = load_experiment(common)?;
    let classifier = config.classifier.build(&base)?;
    let samples = config.dataset.load(&base, classifier.as_ref())?;
    let Some(sample) = samples.get(index) else {
        bail!("dataset has {} inputs, index {index} is out of range", samples.len());
    };
    let result = run_campaign_on(&config, classifier, std::slice::from_ref(sample))?;
    let mut report = RunReport::from(&result.runs[0]);
    report.index = index;
    print_json(&report)?;
    finish_campaign(&result, config.histogram_bins, common.out.as_deref())
}

fn campaign(common: &Common) -> Result<ExitCode> {
    let (config, base) = load_experiment(common)?;
    let result = run_campaign(&config, &base)?;
    println!("{}", stats_json(&result.stats)?);
    finish_campaign(&result, config.histogram_bins, common.out.as_deref())
}

fn bench(common: &Common) -> Result<ExitCode> {
    let path = require_config(common)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let exec = execution_of(&value)?;
    let mut config: BenchConfig = serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let report = run_bench(&config, exec)?;
    print_json(&report)?;
    write_json(common.out.as_deref(), "bench.json", &report)?;
    Ok(ExitCode::SUCCESS)
}

fn execution_of(value: &Value) -> Result<Execution> {
    match value.get("execution") {
        Some(v) => Ok(serde_json::from_value(v.clone()).context("parsing execution")?),
        None => Ok(Execution::default()),
    }
}

/// Settings of the `verify` command, all optional in the configuration.
struct VerifySettings {
    samples: usize,
    dim: usize,
    eta: f64,
    alpha: f64,
    agreement_tau: f64,
    taus: Vec<f64>,
    seed: u64,
    exec: Execution,
}

impl VerifySettings {
    fn from_value(value: &Value) -> Result<Self> {
        let uint = |key: &str, default: u64| value.get(key).map_or(Some(default), Value::as_u64);
        let float = |key: &str, default: f64| value.get(key).map_or(Some(default), Value::as_f64);
        let field = |key: &str| format!("`{key}` has the wrong type");
        let taus = match value.get("taus") {
            Some(v) => serde_json::from_value(v.clone()).with_context(|| field("taus"))?,
            None => DEFAULT_TAUS.to_vec(),
        };
        let settings = VerifySettings {
            samples: uint("samples", 1_000_000).with_context(|| field("samples"))? as usize,
            dim: uint("dim", 5).with_context(|| field("dim"))? as usize,
            eta: float("eta", 1.0).with_context(|| field("eta"))?,
            alpha: float("alpha", 100.0).with_context(|| field("alpha"))?,
            agreement_tau: float("agreement_tau", 0.01).with_context(|| field("agreement_tau"))?,
            taus,
            seed: uint("seed", 0).with_context(|| field("seed"))?,
            exec: execution_of(value)?,
        };
        if settings.samples == 0 || settings.dim == 0 {
            bail!("samples and dim must be positive");
        }
        if settings.taus.len() < 2 || settings.taus.iter().any(|t| *t <= 0.0) {
            bail!("at least two positive step sizes are needed");
        }
        if settings.eta <= 0.0 || settings.alpha <= 0.0 || settings.agreement_tau <= 0.0 {
            bail!("eta, alpha and agreement_tau must be positive");
        }
        Ok(settings)
    }
}

fn verify(common: &Common) -> Result<ExitCode> {
    let value = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => json!({}),
    };
    let mut s = VerifySettings::from_value(&value)?;
    if let Some(seed) = common.seed {
        s.seed = seed;
    }
    let point = Array1::from_elem(s.dim, 1.0 / (s.dim as f64).sqrt());
    let nes = nes_consistency(&HALF_SQUARED_NORM, point.view(), &s.taus, s.eta, s.samples, s.seed, s.exec);
    let ch = ch_consistency(&HALF_SQUARED_NORM, point.view(), &s.taus, s.alpha, s.samples, s.seed.wrapping_add(1), s.exec);
    let agreement = ch_nes_agreement(s.dim, s.agreement_tau, s.eta, s.alpha, s.samples, s.seed.wrapping_add(2), s.exec);
    let report = json!({ "nes": nes, "ch": ch, "agreement": agreement });
    print_json(&report)?;
    write_json(common.out.as_deref(), "verify.json", &report)?;
    Ok(ExitCode::SUCCESS)
}

fn serve_echo(addr: &str, stdio: bool) -> Result<ExitCode> {
    let respond = echo_responder();
    if stdio {
        let stdin = io::stdin().lock();
        let stdout = BufWriter::new(io::stdout().lock());
        serve_lines(stdin, stdout, respond.as_ref()).context("serving stdin")?;
        return Ok(ExitCode::SUCCESS);
    }
    let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
    let local = listener.local_addr()?;
    let mut stdout = io::stdout().lock();
    writeln!(stdout, "listening on {local}")?;
    stdout.flush()?;
    drop(stdout);
    serve_tcp(listener, respond).context("serving tcp")?;
    Ok(ExitCode::SUCCESS)
}
