use std::process::ExitCode;

use quadamr::config::{ArgsError, OutputFormat, RunConfig};
use quadamr::output;
use quadamr::solver::Simulation;

fn run(cfg: RunConfig) -> quadamr::Result<()> {
    let mut sim = Simulation::new(cfg)?;
    let stats = sim.run()?.clone();
    let forest = sim.forest().clone();
    eprintln!(
        "{} steps, {} leaves on {} ranks, max CFL {:.4}, wall {:.3}s",
        stats.steps,
        forest.len(),
        stats.ranks,
        stats.max_cfl,
        stats.wall
    );
    if let Some(path) = &sim.config.timing {
        output::write_file(path, &output::timing_csv(&stats))?;
    }
    if let Some(path) = &sim.config.out {
        let patches = sim.patches();
        let text = match sim.config.format {
            OutputFormat::PatchDump => output::patch_dump(&patches),
            OutputFormat::Vtk => output::vtk(&patches, forest.connectivity()),
        };
        output::write_file(path, &text)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cfg = match RunConfig::from_args(std::env::args_os()) {
        Ok(cfg) => cfg,
        Err(ArgsError::Clap(e)) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
        Err(ArgsError::Config(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
