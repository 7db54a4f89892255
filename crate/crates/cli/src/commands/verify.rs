//! `gridtalk verify`: audit that every artifact in an output directory
//! carries the manifest's config digest and parses cleanly.

use std::path::{Path, PathBuf};

use gridtalk_core::diffcore::checkpoint_digest;
use gridtalk_core::trainer::EpisodeLog;

use crate::outputs::Manifest;
use crate::CliError;

pub fn run(dir: &Path) -> Result<(), CliError> {
    let manifest = Manifest::read(dir)?;
    let digest = &manifest.config_digest;
    let mut checked = 0usize;

    for path in walk(dir) {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        let rel = path.strip_prefix(dir).unwrap_or(&path).display().to_string();
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => {
                let text = read(&path)?;
                let first = text.lines().next().unwrap_or("");
                match first.split("digest=").nth(1) {
                    Some(d) if d.trim() == digest => checked += 1,
                    Some(d) => {
                        return Err(CliError::Artifact(format!(
                            "{rel}: digest {} != manifest {digest}",
                            d.trim()
                        )))
                    }
                    None => {
                        return Err(CliError::Artifact(format!(
                            "{rel}: missing digest header line"
                        )))
                    }
                }
            }
            Some("jsonl") => {
                let text = read(&path)?;
                let log = EpisodeLog::from_jsonl(&text)
                    .map_err(|e| CliError::Artifact(format!("{rel}: {e}")))?;
                if log.header.config_digest != *digest {
                    return Err(CliError::Artifact(format!(
                        "{rel}: digest {} != manifest {digest}",
                        log.header.config_digest
                    )));
                }
                checked += 1;
            }
            Some("ckpt") => {
                let d = checkpoint_digest(&path)
                    .map_err(|e| CliError::Artifact(format!("{rel}: {e}")))?;
                if d != *digest {
                    return Err(CliError::Artifact(format!(
                        "{rel}: digest {d} != manifest {digest}"
                    )));
                }
                checked += 1;
            }
            Some("txt") if name.starts_with("pair_") => {
                let text = read(&path)?;
                let first = text.lines().next().unwrap_or("");
                if !first.contains(&format!("digest={digest}")) {
                    return Err(CliError::Artifact(format!("{rel}: digest mismatch")));
                }
                checked += 1;
            }
            _ => {}
        }
    }
    println!("ok: {checked} artifacts consistent with digest {digest}");
    Ok(())
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("read {}: {e}", path.display())))
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&d) else {
            continue;
        };
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    out
}
