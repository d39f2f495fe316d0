use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use hhoflow::config::{read_config, stepper_name, MeshSource};
use hhoflow::output::{
    fmt, write_coefficients_csv, write_diagnostics, write_field_csv, write_recovery_series, write_summary,
};
use hhoflow::{fvca5, mesh_io, Error};
use hhoflow_core::mesh::BBox;
use hhoflow_core::simulator::Simulation;

#[derive(Parser)]
#[command(
    name = "hhoflow",
    version,
    about = "Hybrid high-order miscible displacement simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation described by a TOML config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Mesh file overriding the config's `[mesh]` section.
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Check conservation, energy and stability bounds after every step.
        #[arg(long)]
        check_invariants: bool,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Convert an FVCA5 benchmark mesh to the polymesh2d format.
    ConvertFvca5 {
        input: PathBuf,
        output: PathBuf,
        /// Target bounding box `x0,y0,x1,y1`.
        #[arg(long, value_delimiter = ',', num_args = 4, default_values_t = [0.0, 0.0, 1000.0, 1000.0])]
        bbox: Vec<f64>,
        /// Keep the original coordinates.
        #[arg(long, conflicts_with = "bbox")]
        no_scale: bool,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_INVARIANT: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Core(hhoflow_core::Error::Invariant { .. } | hhoflow_core::Error::Unstable { .. }) => EXIT_INVARIANT,
        Error::Core(hhoflow_core::Error::InvalidArgument(_) | hhoflow_core::Error::OutOfDomain { .. }) => EXIT_CONFIG,
        Error::Core(_) => EXIT_SOLVER,
        Error::Io { .. } | Error::Parse { .. } | Error::Config { .. } | Error::Csv { .. } => EXIT_CONFIG,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            config,
            mesh,
            out,
            check_invariants,
            quiet,
        } => simulate(&config, mesh.as_deref(), &out, check_invariants, quiet),
        Command::ConvertFvca5 {
            input,
            output,
            bbox,
            no_scale,
        } => convert(
            &input,
            &output,
            (!no_scale).then(|| BBox::new(bbox[0], bbox[1], bbox[2], bbox[3])),
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn convert(input: &Path, output: &Path, bbox: Option<BBox>) -> Result<(), Error> {
    let text = std::fs::read_to_string(input).map_err(|source| Error::Io {
        path: input.to_path_buf(),
        source,
    })?;
    let out = fvca5::convert(&text, &input.display().to_string(), bbox)?;
    std::fs::write(output, out).map_err(|source| Error::Io {
        path: output.to_path_buf(),
        source,
    })
}

fn simulate(config: &Path, mesh_override: Option<&Path>, out: &Path, check: bool, quiet: bool) -> Result<(), Error> {
    let mut cfg = read_config(config)?;
    if let Some(m) = mesh_override {
        cfg.mesh = MeshSource::File(m.to_path_buf());
    }
    cfg.check_invariants |= check;
    let mesh = cfg.mesh.build()?;
    std::fs::create_dir_all(out).map_err(|source| Error::Io {
        path: out.to_path_buf(),
        source,
    })?;
    mesh_io::write_mesh(&mesh, &out.join("mesh.polymesh"))?;

    let c0 = cfg.c0;
    let mut sim = Simulation::new(&mesh, cfg.simulation_config(&mesh), |_| c0)?;
    write_field_csv(sim.current(), &mesh, &out.join("field_initial.csv"))?;
    let n = sim.n_steps();
    let start = Instant::now();
    while !sim.is_finished() {
        let t0 = Instant::now();
        let step = sim.step();
        let step = match step {
            Ok(d) => d.step,
            Err(e) => {
                // Keep whatever was computed for post-mortem inspection.
                write_diagnostics(sim.report(), &out.join("diagnostics.csv"))?;
                return Err(e.into());
            }
        };
        sim.set_last_wall_seconds(t0.elapsed().as_secs_f64());
        if !quiet {
            let (t, r) = *sim.report().recovery.last().expect("recovery recorded");
            eprintln!("step {step}/{n}  t = {t:.1}  recovery = {:.4}%", 100.0 * r);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let report = sim.into_report();

    write_field_csv(&report.final_field, &mesh, &out.join("field_final.csv"))?;
    write_coefficients_csv(&report.final_field, &mesh, &out.join("coefficients_final.csv"))?;
    for (t, field) in &report.snapshots {
        write_field_csv(field, &mesh, &out.join(format!("field_t{t}.csv")))?;
    }
    write_recovery_series(&report, &out.join("recovery.csv"))?;
    write_diagnostics(&report, &out.join("diagnostics.csv"))?;
    let final_recovery = report.recovery.last().map_or(0.0, |r| r.1);
    write_summary(
        &[
            ("cells", mesh.n_cells().to_string()),
            ("faces", mesh.n_faces().to_string()),
            ("k", cfg.k.to_string()),
            ("stepper", stepper_name(cfg.stepper)),
            ("steps", report.steps.len().to_string()),
            ("final_recovery", fmt(final_recovery)),
            ("stability_bound", fmt(report.stability_bound)),
            ("wall_seconds", fmt(elapsed)),
        ],
        &out.join("summary.txt"),
    )?;
    if !quiet {
        eprintln!("final recovery {:.3}% after {elapsed:.1} s", 100.0 * final_recovery);
    }
    Ok(())
}
