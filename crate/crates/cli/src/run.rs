use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Content hash of a file, or of every file under a directory (sorted by
/// relative path, each path hashed along with its contents).
pub fn content_hash(path: &Path) -> Result<String> {
    if path.is_file() {
        return sha256_file(path);
    }
    let mut files = Vec::new();
    collect_files(path, path, &mut files)?;
    let mut h = Sha256::new();
    for rel in files {
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(sha256_file(&path.join(&rel))?.as_bytes());
    }
    Ok(hex(&h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).unwrap().to_path_buf());
        }
    }
    Ok(())
}

/// Peak resident set size of this process in KiB (Linux only).
pub fn peak_rss_kib() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    command: &'a str,
    argv: &'a [String],
    status: &'a str,
    started_unix: u64,
    finished_unix: Option<u64>,
    wall_seconds: Option<f64>,
    threads: usize,
    seeds: BTreeMap<&'static str, u64>,
    inputs: &'a BTreeMap<String, String>,
    counters: &'a BTreeMap<String, u64>,
    config: &'a RunConfig,
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct ManifestEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

/// One CLI invocation: the output directory, its metadata and manifest.
pub struct Run {
    pub out_dir: PathBuf,
    pub config: RunConfig,
    command: String,
    argv: Vec<String>,
    threads: usize,
    started: Instant,
    started_unix: u64,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
    pub counters: BTreeMap<String, u64>,
}

impl Run {
    pub fn start(out_dir: &Path, command: &str, argv: Vec<String>, config: RunConfig, threads: usize) -> Result<Self> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        let run = Self {
            out_dir: out_dir.to_path_buf(),
            config,
            command: command.to_string(),
            argv,
            threads,
            started: Instant::now(),
            started_unix: unix_now(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            counters: BTreeMap::new(),
        };
        run.write_metadata("running", None)?;
        Ok(run)
    }

    /// Records the content hash of an input file or directory.
    pub fn input(&mut self, name: &str, path: &Path) -> Result<()> {
        let hash = content_hash(path)?;
        self.inputs.insert(name.to_string(), hash);
        self.write_metadata("running", None)
    }

    /// Resolves `name` under the output directory (absolute paths are kept).
    pub fn path(&self, name: &Path) -> PathBuf {
        if name.is_absolute() {
            name.to_path_buf()
        } else {
            self.out_dir.join(name)
        }
    }

    pub fn write(&mut self, name: &Path, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        write_atomic(&path, bytes)?;
        self.track(&path);
        Ok(path)
    }

    /// Adds a file written by other code to the manifest.
    pub fn track(&mut self, path: &Path) {
        if !self.outputs.iter().any(|p| p == path) {
            self.outputs.push(path.to_path_buf());
        }
    }

    fn write_metadata(&self, status: &str, error: Option<&str>) -> Result<()> {
        let done = status != "running";
        let seeds = BTreeMap::from([
            ("model", self.config.model.seed),
            ("train", self.config.train.seed),
            ("subset", self.config.subset.seed),
            ("generate", self.config.generate.seed),
        ]);
        let meta = RunMetadata {
            command: &self.command,
            argv: &self.argv,
            status,
            started_unix: self.started_unix,
            finished_unix: done.then(unix_now),
            wall_seconds: done.then(|| self.started.elapsed().as_secs_f64()),
            threads: self.threads,
            seeds,
            inputs: &self.inputs,
            counters: &self.counters,
            config: &self.config,
            error,
        };
        write_atomic(&self.out_dir.join("run.json"), &serde_json::to_vec_pretty(&meta)?)
    }

    /// Writes the manifest of tracked outputs and the final metadata.
    pub fn finish(mut self, error: Option<&anyhow::Error>) -> Result<()> {
        if let Some(kib) = peak_rss_kib() {
            self.counters.insert("peak_rss_kib".into(), kib);
        }
        let mut entries = Vec::new();
        for p in &self.outputs {
            if !p.is_file() {
                continue;
            }
            let rel = p.strip_prefix(&self.out_dir).unwrap_or(p);
            entries.push(ManifestEntry {
                path: rel.to_string_lossy().into_owned(),
                bytes: fs::metadata(p)?.len(),
                sha256: sha256_file(p)?,
            });
        }
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        write_atomic(&self.out_dir.join("manifest.json"), &serde_json::to_vec_pretty(&entries)?)?;
        let msg = error.map(|e| format!("{e:#}"));
        self.write_metadata(if error.is_some() { "failed" } else { "ok" }, msg.as_deref())
    }
}
