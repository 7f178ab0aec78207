use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gtlab_core::harness::{run_study, StudyConfig, StudyKind, StudyRun};

/// Phase-field solvers and Gibbs-Thomson verification studies.
///
/// Exit status: 0 when every acceptance rule of the study passes, 1 when a
/// rule fails, 2 for invalid input.
#[derive(Parser)]
#[command(name = "gtlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal profile, first-order correction and surface tension.
    Profile(Common),
    /// Stationary Cahn-Hilliard solves (disk or planar seed).
    SolveCh(Common),
    /// Ohta-Kawasaki critical points (disk or lamellar seed).
    SolveOk(Common),
    /// Pointwise Gibbs-Thomson residual on a Cahn-Hilliard disk.
    GtCheck(Common),
    /// Defect of the profile-based comparison function over a circular arc.
    SubsolutionCheck(Common),
    /// Multiplicity estimates on synthetic stacked layers.
    Multiplicity(Common),
    /// Gap between bulk roots and far-field values.
    Gap(Common),
    /// Run the study described by a JSON config.
    Study(Common),
}

#[derive(Args)]
struct Common {
    /// JSON study config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the report, tables and fields.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated, strictly decreasing list of ε.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Grid rule h = ε / k.
    #[arg(long)]
    grid_k: Option<usize>,
    /// Seed geometry: `disk:R`, `planar:X` (2D) or `lamellar:X` (1D).
    #[arg(long)]
    seed_geometry: Option<String>,
    /// Forcing value f(y1) for subsolution and gap studies.
    #[arg(long)]
    fy1: Option<f64>,
}

#[derive(Clone, Copy, PartialEq)]
enum Seed {
    Disk(f64),
    Planar(f64),
    Lamellar(f64),
}

fn parse_seed(text: &str) -> Result<Seed> {
    let (shape, value) = text
        .split_once(':')
        .with_context(|| format!("seed geometry `{text}` should look like disk:0.25"))?;
    let v: f64 = value.parse().with_context(|| format!("bad number in seed geometry `{text}`"))?;
    Ok(match shape {
        "disk" => Seed::Disk(v),
        "planar" => Seed::Planar(v),
        "lamellar" => Seed::Lamellar(v),
        _ => bail!("unknown seed geometry `{shape}` (expected disk, planar or lamellar)"),
    })
}

fn kind_for(command: &Command, seed: Option<Seed>) -> Option<StudyKind> {
    use Seed::*;
    Some(match (command, seed) {
        (Command::Profile(_), _) => StudyKind::Profile,
        (Command::SolveCh(_), None | Some(Disk(_))) => StudyKind::ChDisk,
        (Command::SolveCh(_), Some(_)) => StudyKind::ChPlanar,
        (Command::SolveOk(_), None | Some(Disk(_))) => StudyKind::OkDisk,
        (Command::SolveOk(_), Some(_)) => StudyKind::OkLamellar,
        (Command::GtCheck(_), _) => StudyKind::GtCheck,
        (Command::SubsolutionCheck(_), _) => StudyKind::Subsolution,
        (Command::Multiplicity(_), _) => StudyKind::Multiplicity,
        (Command::Gap(_), _) => StudyKind::Gap,
        (Command::Study(_), _) => return None,
    })
}

fn default_eps(kind: StudyKind) -> Vec<f64> {
    match kind {
        StudyKind::Profile => Vec::new(),
        StudyKind::ChDisk => vec![0.08, 0.04, 0.02],
        StudyKind::ChPlanar | StudyKind::GtCheck | StudyKind::OkDisk => vec![0.02],
        StudyKind::OkLamellar | StudyKind::Multiplicity => vec![0.01],
        StudyKind::Subsolution => vec![0.02, 0.01],
        StudyKind::Gap => vec![0.01, 0.005, 0.0025],
    }
}

fn build_config(command: &Command) -> Result<(StudyConfig, Option<PathBuf>)> {
    let (Command::Profile(c)
    | Command::SolveCh(c)
    | Command::SolveOk(c)
    | Command::GtCheck(c)
    | Command::SubsolutionCheck(c)
    | Command::Multiplicity(c)
    | Command::Gap(c)
    | Command::Study(c)) = command;
    let seed = c.seed_geometry.as_deref().map(parse_seed).transpose()?;
    let kind = kind_for(command, seed);
    let mut cfg = match (&c.config, kind) {
        (Some(path), _) => {
            let cfg = StudyConfig::from_path(path).with_context(|| format!("reading config {}", path.display()))?;
            if let Some(k) = kind {
                if cfg.kind != k {
                    bail!("config kind `{}` does not match this subcommand (expected `{}`)", cfg.kind.name(), k.name());
                }
            }
            cfg
        }
        (None, Some(k)) => StudyConfig::new(k, default_eps(k)),
        (None, None) => bail!("`study` needs --config"),
    };
    if let Some(eps) = &c.eps {
        cfg.eps = eps.clone();
    }
    if let Some(k) = c.grid_k {
        cfg.grid_k = k;
    }
    if let Some(f) = c.fy1 {
        cfg.geometry.fy1 = f;
    }
    match seed {
        Some(Seed::Disk(r)) => cfg.geometry.radius = r,
        Some(Seed::Planar(x)) => {
            cfg.geometry.interface = Some(x);
            cfg.geometry.dim = Some(2);
        }
        Some(Seed::Lamellar(x)) => {
            cfg.geometry.interface = Some(x);
            cfg.geometry.dim = Some(1);
        }
        None => {}
    }
    cfg.validate()?;
    let out = c.out.clone().or_else(|| cfg.output.clone());
    Ok((cfg, out))
}

fn summarize(run: &StudyRun) {
    for row in &run.report.rows {
        match (&row.error, row.eps) {
            (Some(e), eps) => println!("eps {eps:?}: error: {e}"),
            (None, eps) => {
                let shown: Vec<String> = row.metrics.iter().take(8).map(|m| format!("{}={:.6e}", m.name, m.value)).collect();
                match eps {
                    Some(e) => println!("eps {e}: {}", shown.join(" ")),
                    None => println!("{}", shown.join(" ")),
                }
            }
        }
    }
    for r in &run.report.rules {
        println!("{} {} ({}): {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.anchor, r.detail);
    }
}

fn run(cli: Cli) -> Result<bool> {
    let (cfg, out) = build_config(&cli.command)?;
    let run = run_study(&cfg, out.as_deref())?;
    summarize(&run);
    match out {
        Some(dir) => println!("report written to {}", dir.join("report.json").display()),
        None => println!("{}", run.report.to_json()?),
    }
    Ok(run.report.pass)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
