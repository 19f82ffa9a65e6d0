use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use hadamard::config::{Config, Direction, Stage};
use hadamard::pipeline::{with_overrides, write_matrix_csv, Pipeline};
use hadamard::report::num;
use hadamard::states::{validate_state, Samples, StateTag};
use hadamard::Result;

#[derive(Parser)]
#[command(name = "hadamard", version = hadamard::pipeline::VERSION, about = "Covariances of Klein-Gordon states on asymptotically static spacetimes")]
struct Cli {
    /// Configuration file (TOML).
    #[arg(long, global = true, default_value = "hadamard.toml")]
    config: PathBuf,
    /// Output directory for reports, CSV dumps, run.log and the cache.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Comma-separated stages for `run`, or "all".
    #[arg(long, global = true, default_value = "all")]
    stages: String,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replaces basis.k.
    #[arg(long, global = true)]
    k_override: Option<usize>,
    /// Multiplies every tolerance.
    #[arg(long, global = true)]
    tol_scale: Option<f64>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Runs the selected stages and writes report.json.
    Run,
    Reduce,
    Riccati,
    Frame,
    Evolve,
    /// Builds one covariance pair, validates it and dumps c⁺ as CSV.
    State {
        #[arg(long, value_parser = ["vac", "ref", "in", "out"])]
        which: String,
    },
    /// Traces the scattering sequence and writes its CSV.
    Converge {
        #[arg(long, default_value = "out", value_parser = ["in", "out"])]
        direction: String,
        #[arg(long, default_value = "5:40:12")]
        samples: String,
    },
    Wavepacket,
    /// Validates the vac, ref, in and out covariances.
    Validate,
}

fn tag(s: &str) -> StateTag {
    match s {
        "vac" => StateTag::Vac,
        "ref" => StateTag::Ref,
        "in" => StateTag::In,
        _ => StateTag::Out,
    }
}

fn print(v: &serde_json::Value) {
    use std::io::Write;
    // A closed pipe (e.g. `| head`) is not an error worth a panic.
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(v).expect("json"));
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = with_overrides(Config::load(&cli.config)?, cli.seed, cli.k_override, cli.tol_scale)?;
    std::fs::create_dir_all(&cli.out)?;
    let mut p = Pipeline::new(cfg, &cli.out)?;
    let single = |st: Stage| vec![st, Stage::Report];
    match cli.command.unwrap_or(Command::Run) {
        Command::Run => {
            let stages = Stage::parse_list(&cli.stages)?;
            let mut all = stages.clone();
            if !all.contains(&Stage::Report) {
                all.push(Stage::Report);
            }
            p.run(&all)?;
            println!("{}", cli.out.join("report.json").display());
        }
        Command::Reduce => p.run(&single(Stage::Reduce))?,
        Command::Riccati => p.run(&single(Stage::Riccati))?,
        Command::Frame => p.run(&single(Stage::Frame))?,
        Command::Evolve => p.run(&single(Stage::Evolve))?,
        Command::Wavepacket => p.run(&single(Stage::Microlocal))?,
        Command::State { which } => {
            p.run(&[Stage::Reduce])?;
            let c = p.covariances(tag(&which))?;
            let basis = p.basis()?;
            let rep = validate_state(&c, &basis)?;
            write_matrix_csv(&cli.out.join(format!("c_{which}_plus.csv")), &c.c_plus)?;
            let v = json!({ "scenario": p.cfg.name, "tag": which, "residuals": serde_json::to_value(&rep).expect("json") });
            std::fs::write(cli.out.join(format!("state_{which}.json")), serde_json::to_string_pretty(&v).expect("json"))?;
            print(&v);
            return Ok(rep.pass);
        }
        Command::Converge { direction, samples } => {
            p.run(&[Stage::Reduce])?;
            let dir = Direction::parse(&direction)?;
            let samples = Samples::parse(&samples)?;
            let sc = p.scattering(dir, &samples)?;
            let path = p.write_trace(dir, &sc)?;
            let fit = sc.frame_trace.fit.as_ref();
            print(&json!({
                "direction": direction,
                "trace": path.display().to_string(),
                "gamma": fit.map(|f| num(f.exponent)),
                "r_squared": fit.map(|f| num(f.r_squared)),
                "vacuum_gamma": sc.vacuum_trace.fit.as_ref().map(|f| num(f.exponent)),
                "vacuum_gap_gamma": sc.gap_fit.as_ref().map(|f| num(f.exponent)),
            }));
        }
        Command::Validate => {
            p.run(&[Stage::Reduce])?;
            let basis = p.basis()?;
            let mut all = true;
            let mut out = serde_json::Map::new();
            for which in ["vac", "ref", "in", "out"] {
                let c = p.covariances(tag(which))?;
                let rep = validate_state(&c, &basis)?;
                all &= rep.pass;
                out.insert(which.into(), serde_json::to_value(&rep).expect("json"));
            }
            let v = serde_json::Value::Object(out);
            std::fs::write(cli.out.join("validate.json"), serde_json::to_string_pretty(&v).expect("json"))?;
            print(&v);
            return Ok(all);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
