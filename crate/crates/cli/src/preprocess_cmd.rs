use physio_core::ingest::{write_features, FeatureConfig};
use serde::Serialize;

use crate::config::{create_dir, write_json, RunConfig};
use crate::data::{features, load_sessions};
use crate::error::CliError;

#[derive(Serialize)]
struct SessionEntry {
    session_id: String,
    runner_id: String,
    samples: usize,
    observed: usize,
}

#[derive(Serialize)]
struct Manifest {
    feature_names: Vec<String>,
    sessions: Vec<SessionEntry>,
}

/// Validates every session and writes its model-ready feature table.
pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    let raws = load_sessions(cfg.data_dir()?)?;
    let mode = cfg.preprocess.mode;
    create_dir(out)?;
    let mut sessions = Vec::with_capacity(raws.len());
    for raw in &raws {
        let fs = features(raw, mode, FeatureConfig::new(mode).window_len)?;
        let path = out.join(format!("{}.features.csv", fs.session_id));
        write_features(&fs, &path)?;
        sessions.push(SessionEntry {
            session_id: fs.session_id.clone(),
            runner_id: fs.runner_id.clone(),
            samples: fs.len(),
            observed: fs.mask.iter().filter(|m| **m > 0.0).count(),
        });
    }
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            feature_names: FeatureConfig::new(mode).feature_names(),
            sessions,
        },
    )?;
    cfg.write(out)?;
    eprintln!(
        "preprocessed {} sessions into {}",
        raws.len(),
        out.display()
    );
    Ok(())
}
