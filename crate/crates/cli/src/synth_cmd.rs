use physio_core::synth::{generate_cohort, write_cohort, CohortConfig};

use crate::config::{create_dir, RunConfig};
use crate::error::CliError;

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    let s = &cfg.synth;
    let cohort = generate_cohort(&CohortConfig {
        n_runners: s.n_runners,
        sessions_per_runner: s.sessions_per_runner,
        min_duration_s: s.min_duration_s,
        max_duration_s: s.max_duration_s,
        seed: cfg.seed,
    })?;
    create_dir(out)?;
    let paths = write_cohort(&cohort, out)?;
    cfg.write(out)?;
    eprintln!(
        "wrote {} sessions for {} runners to {}",
        paths.len(),
        cohort.runners.len(),
        out.display()
    );
    Ok(())
}
