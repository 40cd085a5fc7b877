use std::path::{Path, PathBuf};

use physio_core::ingest::{
    load_session, transform_features, FeatureConfig, FeatureMode, FeatureSession, RawSession,
};

use crate::error::CliError;

/// Session CSVs in `dir`, sorted by file name. Breath files and feature
/// tables sharing the directory are skipped.
pub fn session_paths(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(CliError::read(dir))?;
    let mut paths = Vec::new();
    for e in entries {
        let p = e.map_err(CliError::read(dir))?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.ends_with(".csv")
            && !name.ends_with(".breath.csv")
            && !name.ends_with(".features.csv")
        {
            paths.push(p);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!(
            "{} contains no session CSVs",
            dir.display()
        )));
    }
    Ok(paths)
}

pub fn load_sessions(dir: &Path) -> Result<Vec<RawSession>, CliError> {
    session_paths(dir)?
        .iter()
        .map(|p| load_session(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display()))))
        .collect()
}

pub fn features(
    raw: &RawSession,
    mode: FeatureMode,
    window_len: usize,
) -> Result<FeatureSession, CliError> {
    let cfg = FeatureConfig {
        window_len,
        ..FeatureConfig::new(mode)
    };
    transform_features(raw, &cfg)
        .map_err(|e| CliError::Data(format!("session `{}`: {e}", raw.meta.session_id)))
}
