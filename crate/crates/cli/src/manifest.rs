use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to every set of output files.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
    /// Only recorded with `--record-time`, since it breaks byte-identical reruns.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub struct ManifestBuilder {
    subcommand: String,
    config: serde_json::Value,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<PathBuf>,
    started: Instant,
    record_time: bool,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str, config: serde_json::Value, record_time: bool) -> Self {
        ManifestBuilder {
            subcommand: subcommand.to_string(),
            config,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            started: Instant::now(),
            record_time,
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) -> &mut Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    /// Digests `outputs` (relative to `dir`) and writes `dir/manifest.json`.
    pub fn write(&self, dir: &Path, outputs: &[String]) -> Result<()> {
        let inputs = self
            .inputs
            .iter()
            .map(|p| {
                Ok(FileDigest {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut names = outputs.to_vec();
        names.sort();
        names.dedup();
        let outputs = names
            .into_iter()
            .map(|name| {
                let sha256 = sha256_file(&dir.join(&name))?;
                Ok(FileDigest { path: name, sha256 })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            tool: "soundex",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: self.subcommand.clone(),
            config: self.config.clone(),
            seeds: self.seeds.clone(),
            inputs,
            outputs,
            wall_clock_seconds: self.record_time.then(|| self.started.elapsed().as_secs_f64()),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        std::fs::write(&p, "abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_lists_outputs_sorted() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("b.csv"), "x").unwrap();
        std::fs::write(dir.path().join("a.csv"), "y").unwrap();
        let mut m = ManifestBuilder::new("gen", serde_json::json!({"k": 1}), false);
        m.seed("master", 7);
        m.write(dir.path(), &["b.csv".into(), "a.csv".into()]).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(v["outputs"][0]["path"], "a.csv");
        assert_eq!(v["seeds"]["master"], 7);
        assert!(v.get("wall_clock_seconds").is_none());
    }
}
