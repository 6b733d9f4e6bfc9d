//! Run directories, artifact hashing and the per-run manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// A failed command: exit code plus a one-line diagnostic.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: EXIT_DATA, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<flarecdr::Error> for Failure {
    fn from(e: flarecdr::Error) -> Self {
        use flarecdr::Error as E;
        let code = match e {
            E::Config(_) => EXIT_CONFIG,
            E::Numerical(_) | E::UndefinedMetric(_) => EXIT_NUMERICAL,
            _ => EXIT_DATA,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::data(format!("I/O error: {e}"))
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::data(format!("csv error: {e}"))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::data(format!("json error: {e}"))
    }
}

pub type CliResult<T> = Result<T, Failure>;

pub fn basename(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut file = File::open(path).map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn open_data(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::data(format!("cannot open {}: {e}", path.display())))
}

/// Reads a JSON config file; any failure is a configuration error.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let file = File::open(path).map_err(|e| Failure::config(format!("cannot open config {}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Failure::config(format!("invalid config {}: {e}", path.display())))
}

/// Reads a JSON artifact produced by an earlier command.
pub fn read_artifact<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_reader(open_data(path)?).map_err(|e| Failure::data(format!("invalid artifact {}: {e}", path.display())))
}

/// Config echo, seed and content hashes for one command invocation.
/// Files are keyed by basename so manifests do not depend on where the run
/// directory lives.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub struct Run {
    dir: PathBuf,
    command: String,
    seed: u64,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
}

impl Run {
    pub fn new(dir: &Path, command: &str, seed: u64) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Failure::data(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), command: command.into(), seed, inputs: Vec::new(), outputs: Vec::new() })
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        if !path.is_file() {
            return Err(Failure::data(format!("input {} does not exist", path.display())));
        }
        self.inputs.push(path.to_path_buf());
        Ok(())
    }

    /// Opens a new output file in the run directory, refusing to overwrite
    /// any input of this run.
    pub fn create(&mut self, name: &str) -> CliResult<BufWriter<File>> {
        let path = self.dir.join(name);
        if path.exists() {
            let target = path.canonicalize()?;
            for input in &self.inputs {
                if input.canonicalize()? == target {
                    return Err(Failure::config(format!("output {} would overwrite an input", path.display())));
                }
            }
        }
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
        let file = File::create(&path).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))?;
        Ok(BufWriter::new(file))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    /// Hashes every input and output and writes `manifest.json`.
    pub fn finish(mut self, config: serde_json::Value) -> CliResult<PathBuf> {
        let mut inputs = BTreeMap::new();
        for path in &self.inputs {
            let mut key = basename(path);
            let mut k = 1;
            while inputs.contains_key(&key) {
                key = format!("{}[{k}]", basename(path));
                k += 1;
            }
            inputs.insert(key, sha256_file(path)?);
        }
        let mut outputs = BTreeMap::new();
        for name in &self.outputs {
            outputs.insert(name.clone(), sha256_file(&self.dir.join(name))?);
        }
        let manifest = Manifest { command: self.command.clone(), seed: self.seed, config, inputs, outputs };
        self.outputs.clear();
        let path = self.dir.join("manifest.json");
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        writeln!(w)?;
        w.flush()?;
        Ok(path)
    }
}
