use std::path::{Path, PathBuf};

use anyhow::Context;
use nmfsep::datagen::{gen_dataset, load_case, write_dataset, DatasetManifest, MixtureCase};

use crate::config::ProtocolConfig;

pub const MANIFEST_NAME: &str = "manifest.json";

/// Generates `n_cases` mixtures for every configured overlap class.
pub fn generate_cases(config: &ProtocolConfig) -> anyhow::Result<Vec<MixtureCase<f64>>> {
    let mut cases = Vec::new();
    for &class in &config.classes {
        let mut batch = gen_dataset::<f64>(config.n_cases, class, config.seed, &config.datagen)
            .with_context(|| format!("generating the {class} set"))?;
        cases.append(&mut batch);
    }
    Ok(cases)
}

/// Writes the cases as WAV files plus `manifest.json` under `dir`.
pub fn save_cases(cases: &[MixtureCase<f64>], dir: &Path) -> anyhow::Result<PathBuf> {
    let manifest = write_dataset(cases, dir)?;
    let path = dir.join(MANIFEST_NAME);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

/// Loads a dataset given its manifest file or the directory holding it.
/// Only cases of the configured classes are kept.
pub fn load_cases(path: &Path, config: &ProtocolConfig) -> anyhow::Result<Vec<MixtureCase<f64>>> {
    let manifest_path = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&manifest_path).with_context(|| format!("reading {}", manifest_path.display()))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", manifest_path.display()))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    manifest
        .cases
        .iter()
        .filter(|e| config.classes.contains(&e.overlap_class))
        .map(|e| load_case::<f64>(e, base).with_context(|| format!("loading case {}", e.id)))
        .collect()
}

/// The dataset named by the config, or freshly generated cases.
pub fn cases_for(config: &ProtocolConfig) -> anyhow::Result<Vec<MixtureCase<f64>>> {
    match &config.dataset {
        Some(path) => load_cases(path, config),
        None => generate_cases(config),
    }
}
