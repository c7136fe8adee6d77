use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use edgespot::dsp::{melspec, read_wav, MelConfig};
use edgespot::model::Model;
use edgespot::weights::load_bundle_any;
use edgespot::Embedding;
use rayon::prelude::*;

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).with_context(|| format!("reading weights {}", path.display()))?;
    let bundle = load_bundle_any(&bytes).with_context(|| format!("loading {}", path.display()))?;
    Ok(Model::from_bundle(&bundle)?)
}

fn is_wav(p: &Path) -> bool {
    p.is_file()
        && p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

/// WAV files directly inside `dir`, sorted by path.
pub fn wavs_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = entry?.path();
        if is_wav(&p) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Expands files and directories into a sorted, de-duplicated WAV list.
pub fn collect_wavs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            out.extend(wavs_in(p)?);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            bail!("{}: no such file or directory", p.display());
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// Label-directory layout: one subdirectory per label holding WAV files.
/// Subdirectories without WAVs are reported as layout errors.
pub fn label_dirs(root: &Path) -> Result<BTreeMap<String, Vec<PathBuf>>> {
    if !root.is_dir() {
        bail!("{}: not a directory", root.display());
    }
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(root).with_context(|| format!("listing {}", root.display()))? {
        let dir = entry?.path();
        if !dir.is_dir() {
            continue;
        }
        let label = dir_label(&dir)?;
        let files = wavs_in(&dir)?;
        if files.is_empty() {
            bail!("{}: label directory contains no .wav files", dir.display());
        }
        out.insert(label, files);
    }
    if out.is_empty() {
        bail!("{}: no label directories found", root.display());
    }
    Ok(out)
}

pub fn dir_label(dir: &Path) -> Result<String> {
    let name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .with_context(|| format!("{}: directory name is not valid UTF-8", dir.display()))?;
    if name.is_empty() || name.chars().any(char::is_whitespace) {
        bail!("{}: label names may not contain whitespace", dir.display());
    }
    Ok(name.to_string())
}

pub fn embed_file(model: &Model, path: &Path) -> Result<Embedding> {
    let wave = read_wav(path).with_context(|| format!("reading {}", path.display()))?;
    let mel = melspec(&wave, &MelConfig::default()).with_context(|| path.display().to_string())?;
    model.embed(&mel).with_context(|| format!("embedding {}", path.display()))
}

/// Embeds every path in parallel; results keep the input order.
pub fn embed_all(model: &Model, paths: &[PathBuf]) -> Result<Vec<Embedding>> {
    paths.par_iter().map(|p| embed_file(model, p)).collect()
}
