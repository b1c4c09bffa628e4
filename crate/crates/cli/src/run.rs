use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{usage_msg, write_err, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub core_version: &'static str,
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_file(path: &Path, label: String) -> CliResult<FileDigest> {
    let bytes = fs::read(path).map_err(|e| usage_msg(format!("cannot read {}: {e}", path.display())))?;
    Ok(FileDigest {
        path: label,
        bytes: bytes.len() as u64,
        sha256: sha256_hex(&bytes),
    })
}

/// Output directory that only appears once the command has succeeded.
/// Files are staged in a hidden sibling directory and renamed into place by
/// [`RunDir::finish`]; dropping an unfinished `RunDir` discards the stage.
pub struct RunDir {
    target: PathBuf,
    staging: PathBuf,
    finished: bool,
}

impl RunDir {
    pub fn create(target: &Path) -> CliResult<Self> {
        if target.exists() {
            return Err(usage_msg(format!(
                "output directory {} already exists; outputs are write-once",
                target.display()
            )));
        }
        let name = target
            .file_name()
            .ok_or_else(|| usage_msg(format!("invalid output directory {}", target.display())))?
            .to_string_lossy()
            .into_owned();
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(write_err)?;
        let staging = parent.join(format!(".{name}.staging-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(write_err)?;
        }
        fs::create_dir(&staging).map_err(write_err)?;
        Ok(RunDir {
            target: target.to_path_buf(),
            staging,
            finished: false,
        })
    }

    /// Staged location of `rel`, with parent directories created.
    pub fn path(&self, rel: &str) -> CliResult<PathBuf> {
        let p = self.staging.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(write_err)?;
        }
        Ok(p)
    }

    pub fn write_bytes(&self, rel: &str, bytes: &[u8]) -> CliResult<()> {
        fs::write(self.path(rel)?, bytes).map_err(write_err)
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, rel: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(write_err)?;
        text.push('\n');
        self.write_bytes(rel, text.as_bytes())
    }

    pub fn write_csv(&self, rel: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(write_err)?;
        for row in rows {
            w.write_record(row).map_err(write_err)?;
        }
        let bytes = w.into_inner().map_err(|e| write_err(anyhow::anyhow!("{e}")))?;
        self.write_bytes(rel, &bytes)
    }

    /// Writes `manifest.json` listing every staged file, then moves the stage
    /// into place.
    pub fn finish(mut self, mut manifest: Manifest) -> CliResult<PathBuf> {
        let mut files = Vec::new();
        collect_files(&self.staging, &mut files).map_err(write_err)?;
        files.sort();
        manifest.outputs = files
            .iter()
            .map(|f| {
                let rel = f.strip_prefix(&self.staging).expect("inside stage");
                let label = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                digest_file(f, label).map_err(|e| write_err(anyhow::anyhow!("{e}")))
            })
            .collect::<CliResult<_>>()?;
        self.write_json("manifest.json", &manifest)?;
        if self.target.exists() {
            return Err(usage_msg(format!("output directory {} appeared during the run", self.target.display())));
        }
        fs::rename(&self.staging, &self.target).map_err(write_err)?;
        self.finished = true;
        Ok(self.target.clone())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        if !self.finished {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Shortest round-trip decimal form.
pub fn num(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_abc() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn unfinished_run_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("run");
        {
            let run = RunDir::create(&target).unwrap();
            run.write_bytes("a/b.txt", b"x").unwrap();
        }
        assert!(!target.exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn finished_run_lists_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("run");
        let run = RunDir::create(&target).unwrap();
        run.write_bytes("b.txt", b"b").unwrap();
        run.write_csv("sub/a.csv", &["x"], &[vec!["1".into()]]).unwrap();
        let manifest = Manifest {
            tool: "p300",
            version: "0",
            core_version: "0",
            command: "test".into(),
            seed: None,
            config: serde_json::Value::Null,
            inputs: vec![],
            outputs: vec![],
        };
        run.finish(manifest).unwrap();
        let text = fs::read_to_string(target.join("manifest.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let paths: Vec<&str> = v["outputs"].as_array().unwrap().iter().map(|o| o["path"].as_str().unwrap()).collect();
        assert_eq!(paths, vec!["b.txt", "sub/a.csv"]);
        assert_eq!(fs::read_to_string(target.join("sub/a.csv")).unwrap(), "x\n1\n");
        assert!(RunDir::create(&target).is_err());
    }
}
