//! `edtn`: run scenarios and inspect the energy and link models.
//!
//! Exit status is 0 on success, 1 on I/O failure and 2 on invalid input.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use edtn_core::energy::required_capacitance;
use edtn_core::format::sig6;
use edtn_core::links::{fit_gprs_curve, sweep_buffer};
use edtn_core::sim::{self, SimError};
use edtn_core::{GprsModel, Scenario, Technology};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Parser)]
#[command(
    name = "edtn",
    version,
    about = "Energy-negotiated DTN transfer simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario, writing the event trace and metrics.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's seed; 0 when neither is given.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Metrics file; printed to stdout when absent.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Tabulate GPRS cost against buffer size.
    SweepBuffer {
        #[arg(long)]
        min: u64,
        #[arg(long)]
        max: u64,
        /// CSV file; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Take the GPRS model from this scenario instead of the defaults.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Smallest capacitance whose usable window holds the target energy.
    SizeCapacitor {
        #[arg(long = "target-j")]
        target_j: f64,
        #[arg(long = "v-max", default_value_t = 5.0)]
        v_max: f64,
        #[arg(long = "v-cutoff", default_value_t = 2.0)]
        v_cutoff: f64,
    },
    /// Fit the energy-per-packet curve to measured samples.
    Calibrate {
        /// CSV with columns buffer_packets,energy_per_packet_j.
        #[arg(long)]
        samples: PathBuf,
        /// Write a scenario fragment with the fitted GPRS model.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the active link and GPRS model parameters.
    LinkTable {
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Invalid(_) => 2,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn load(path: Option<&Path>) -> Result<Scenario, CliError> {
    match path {
        Some(p) => Ok(Scenario::load(p)?),
        None => Ok(Scenario::default()),
    }
}

fn cmd_run(
    scenario: &Path,
    seed: Option<u64>,
    trace: Option<&Path>,
    metrics: Option<&Path>,
) -> Result<(), CliError> {
    let s = Scenario::load(scenario)?;
    let seed = seed.or(s.seed).unwrap_or(0);
    let report = sim::run(&s, seed)?;
    if let Some(p) = trace {
        write_file(p, &report.trace_csv())?;
    }
    let doc = report.metrics_document();
    match metrics {
        Some(p) => write_file(p, &doc),
        None => {
            print!("{doc}");
            Ok(())
        }
    }
}

fn cmd_sweep(
    min: u64,
    max: u64,
    out: Option<&Path>,
    scenario: Option<&Path>,
) -> Result<(), CliError> {
    if min < 1 || max < min {
        return Err(CliError::Invalid(format!(
            "need 1 <= min <= max, got min={min} max={max}"
        )));
    }
    let gprs = load(scenario)?.gprs;
    let rows = sweep_buffer(&gprs, min, max).map_err(invalid)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record([
        "buffer_packets",
        "energy_per_packet_j",
        "total_time_s",
        "total_energy_j",
    ])
    .map_err(io)?;
    for r in &rows {
        w.write_record([
            r.buffer_packets.to_string(),
            sig6(r.energy_per_packet_j),
            sig6(r.total_time_s),
            sig6(r.total_energy_j),
        ])
        .map_err(io)?;
    }
    let csv =
        String::from_utf8(w.into_inner().map_err(|e| CliError::Io(e.to_string()))?).expect("ascii");
    let best = rows
        .iter()
        .min_by(|a, b| a.energy_per_packet_j.total_cmp(&b.energy_per_packet_j))
        .expect("range is non-empty");
    let summary = format!(
        "argmin buffer_packets={} energy_per_packet_j={}",
        best.buffer_packets,
        sig6(best.energy_per_packet_j)
    );
    match out {
        Some(p) => {
            write_file(p, &csv)?;
            println!("{summary}");
        }
        None => {
            print!("{csv}");
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn cmd_size(target: f64, v_max: f64, v_cutoff: f64) -> Result<(), CliError> {
    let c = required_capacitance(target, v_max, v_cutoff).map_err(invalid)?;
    println!("capacitance_f={}", sig6(c));
    Ok(())
}

/// Scenario fragment carrying only the fitted model.
#[derive(Serialize)]
struct Fragment<'a> {
    gprs: &'a GprsModel,
}

#[derive(Deserialize)]
struct Sample {
    buffer_packets: u64,
    energy_per_packet_j: f64,
}

fn cmd_calibrate(samples: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let text = fs::read_to_string(samples)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", samples.display())))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut points = Vec::new();
    for (i, row) in rdr.deserialize::<Sample>().enumerate() {
        let s = row
            .map_err(|e| CliError::Invalid(format!("{}: row {}: {e}", samples.display(), i + 1)))?;
        points.push((s.buffer_packets, s.energy_per_packet_j));
    }
    let fit = fit_gprs_curve(&points).map_err(invalid)?;
    // search only where there is data
    let lo = points.iter().map(|p| p.0).min().expect("fit needs samples");
    let hi = points.iter().map(|p| p.0).max().expect("fit needs samples");
    let argmin = fit.argmin(lo, hi);
    let mut doc = String::new();
    let _ = writeln!(doc, "epp_a={}", sig6(fit.epp_a));
    let _ = writeln!(doc, "epp_b={}", sig6(fit.epp_b));
    let _ = writeln!(doc, "epp_c={}", sig6(fit.epp_c));
    let _ = writeln!(doc, "residual={}", sig6(fit.residual));
    let _ = writeln!(doc, "argmin_buffer_packets={argmin}");
    let _ = writeln!(doc, "argmin_energy_per_packet_j={}", sig6(fit.eval(argmin)));
    print!("{doc}");
    if let Some(p) = out {
        let gprs = GprsModel {
            buffer_packets: argmin,
            ..fit.apply(&GprsModel::default())
        };
        let text = serde_json::to_string_pretty(&Fragment { gprs: &gprs })
            .expect("model serialises")
            + "\n";
        write_file(p, &text)?;
    }
    Ok(())
}

fn cmd_link_table(scenario: Option<&Path>) -> Result<(), CliError> {
    let s = load(scenario)?;
    let mut doc = String::from("tech,size_bytes,time_s,energy_j\n");
    for tech in [Technology::Bluetooth, Technology::WiFi] {
        let link = s.links.link(tech).map_err(invalid)?;
        for &(size, secs) in link.anchors.points() {
            let _ = writeln!(
                doc,
                "{},{size},{},{}",
                tech.as_str(),
                sig6(secs),
                sig6(secs * link.active_watts)
            );
        }
    }
    let g = &s.gprs;
    let _ = writeln!(
        doc,
        "\ngprs packet_bytes={} buffer_packets={} epp_a={} epp_b={} epp_c={} t_setup_s={} t_per_packet_s={}",
        g.packet_bytes,
        g.buffer_packets,
        sig6(g.epp_a),
        sig6(g.epp_b),
        sig6(g.epp_c),
        sig6(g.t_setup),
        sig6(g.t_per_packet)
    );
    if let Ok(c) = g.buffer_cost(g.buffer_packets) {
        let _ = writeln!(
            doc,
            "gprs flush_s={} flush_j={}",
            sig6(c.seconds),
            sig6(c.joules)
        );
    }
    print!("{doc}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            scenario,
            seed,
            trace,
            metrics,
        } => cmd_run(scenario, *seed, trace.as_deref(), metrics.as_deref()),
        Command::SweepBuffer {
            min,
            max,
            out,
            scenario,
        } => cmd_sweep(*min, *max, out.as_deref(), scenario.as_deref()),
        Command::SizeCapacitor {
            target_j,
            v_max,
            v_cutoff,
        } => cmd_size(*target_j, *v_max, *v_cutoff),
        Command::Calibrate { samples, out } => cmd_calibrate(samples, out.as_deref()),
        Command::LinkTable { scenario } => cmd_link_table(scenario.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("edtn: {e}");
            ExitCode::from(e.code())
        }
    }
}
