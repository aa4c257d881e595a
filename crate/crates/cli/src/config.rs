//! Run configuration, its hash, and the output directory writer.

use std::fs;
use std::path::{Path, PathBuf};

use metapop_core::meanfield::TruncatedState;
use metapop_core::stochastic::{Stream, GENERATOR};
use metapop_core::ModelSpec;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{bundled, ExitStatus, Failure};

/// Effective parameters of one command; everything that can change an
/// output is in here, so equal hashes mean equal outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub model: Option<ModelSpec>,
    pub seed: u64,
    pub tol: f64,
    pub t_end: Option<f64>,
    pub n: Option<usize>,
    pub patches: Option<usize>,
    pub grid: Option<Vec<f64>>,
    pub init: Option<String>,
    pub quick: bool,
}

impl RunConfig {
    pub fn new(command: &str, seed: u64, tol: f64) -> Result<Self, Failure> {
        if !(tol > 0.0) || !tol.is_finite() {
            return Err(Failure::usage(format!("--tol must be positive and finite, got {tol}")));
        }
        Ok(Self {
            command: command.to_string(),
            model: None,
            seed,
            tol,
            t_end: None,
            n: None,
            patches: None,
            grid: None,
            init: None,
            quick: false,
        })
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of [`RunConfig::canonical_json`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

/// Resolves `--model`: `builtin:NAME`, inline JSON starting with `{`, or a
/// file path.
pub fn load_model(arg: &str) -> Result<ModelSpec, Failure> {
    let text = if let Some(name) = arg.strip_prefix("builtin:") {
        bundled::source(name)
            .ok_or_else(|| {
                let known: Vec<&str> = bundled::names().collect();
                Failure::usage(format!("unknown bundled model {name:?}; available: {}", known.join(", ")))
            })?
            .to_string()
    } else if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).map_err(|e| Failure::usage(format!("cannot read model file {arg}: {e}")))?
    };
    let spec = ModelSpec::from_json(&text).map_err(|e| Failure::usage(e.to_string()))?;
    spec.build()?;
    Ok(spec)
}

/// Parses `a:b:step` into `a, a + step, ...` up to `b` inclusive.
pub fn parse_grid(text: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::usage(format!("--grid expects a:b:step with step > 0 and b >= a, got {text:?}"));
    let parts: Vec<&str> = text.split(':').collect();
    let [a, b, step] = parts.as_slice() else { return Err(bad()) };
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let (a, b, step) = (parse(a)?, parse(b)?, parse(step)?);
    if !(step > 0.0) || !(b >= a) || !a.is_finite() || !b.is_finite() {
        return Err(bad());
    }
    let count = ((b - a) / step + 1e-9).floor() as usize + 1;
    if count > 1_000_000 {
        return Err(Failure::usage(format!("--grid {text:?} has {count} points; at most 10^6 allowed")));
    }
    Ok((0..count).map(|k| a + k as f64 * step).collect())
}

/// Initial condition of `integrate` and `simulate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitSpec {
    /// Every patch holds `k` individuals.
    Point(usize),
    /// Patches spread evenly over `a..=b`.
    Uniform(usize, usize),
}

impl InitSpec {
    /// Accepts `delta:K`, `uniform:A:B` and `empty` (= `delta:0`).
    pub fn parse(text: &str) -> Result<Self, Failure> {
        let bad = || Failure::usage(format!("--init expects delta:K, uniform:A:B or empty, got {text:?}"));
        let parts: Vec<&str> = text.split(':').collect();
        let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
        match parts.as_slice() {
            ["empty"] => Ok(Self::Point(0)),
            ["delta", k] => Ok(Self::Point(num(k)?)),
            ["uniform", a, b] => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(bad());
                }
                Ok(Self::Uniform(a, b))
            }
            _ => Err(bad()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Point(k) => format!("delta:{k}"),
            Self::Uniform(a, b) => format!("uniform:{a}:{b}"),
        }
    }

    pub fn max_state(&self) -> usize {
        match self {
            Self::Point(k) => *k,
            Self::Uniform(_, b) => *b,
        }
    }

    /// Frequencies on `0..=n`.
    pub fn state(&self, n: usize) -> Result<TruncatedState, Failure> {
        if self.max_state() > n {
            return Err(Failure::usage(format!(
                "initial condition {} lies beyond the truncation N = {n}",
                self.label()
            )));
        }
        let mut p = vec![0.0; n + 1];
        match *self {
            Self::Point(k) => p[k] = 1.0,
            Self::Uniform(a, b) => {
                let w = 1.0 / (b - a + 1) as f64;
                p[a..=b].iter_mut().for_each(|v| *v = w);
            }
        }
        Ok(TruncatedState::new(p, 0.0)?)
    }

    /// Occupancy histogram of `patches` patches; under `Uniform` patch `k`
    /// holds `a + k mod (b - a + 1)`.
    pub fn histogram(&self, patches: usize) -> Vec<usize> {
        let mut hist = vec![0; self.max_state() + 1];
        match *self {
            Self::Point(k) => hist[k] = patches,
            Self::Uniform(a, b) => {
                let width = b - a + 1;
                for k in 0..patches {
                    hist[a + k % width] += 1;
                }
            }
        }
        hist
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileRecord {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    generator: &'static str,
    streams: Vec<(u64, &'static str)>,
    exit_status: i32,
    config: &'a RunConfig,
    files: &'a [FileRecord],
}

/// Collects the files of one run and writes `manifest.json` beside them.
/// Without a directory nothing is written.
#[derive(Debug)]
pub struct Output {
    dir: Option<PathBuf>,
    config_hash: String,
    seed: u64,
    command: String,
    files: Vec<FileRecord>,
}

impl Output {
    pub fn new(dir: Option<&Path>, config: &RunConfig) -> Result<Self, Failure> {
        if let Some(d) = dir {
            fs::create_dir_all(d)
                .map_err(|e| Failure::usage(format!("cannot create output directory {}: {e}", d.display())))?;
        }
        Ok(Self {
            dir: dir.map(Path::to_path_buf),
            config_hash: config.hash(),
            seed: config.seed,
            command: config.command.clone(),
            files: Vec::new(),
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    fn write(&mut self, name: &str, body: &str) -> Result<(), Failure> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(FileRecord {
            name: name.to_string(),
            sha256: hex::encode(Sha256::digest(body.as_bytes())),
            bytes: body.len(),
        });
        Ok(())
    }

    /// CSV body prefixed with a `# config_hash=... seed=...` comment line.
    pub fn csv(&mut self, name: &str, body: &str) -> Result<(), Failure> {
        let text = format!("# config_hash={} seed={}\n{body}", self.config_hash, self.seed);
        self.write(name, &text)
    }

    /// Wraps `report` with the command, hash and seed.
    pub fn stamp(&self, report: &impl Serialize) -> serde_json::Value {
        serde_json::json!({
            "command": self.command,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "report": serde_json::to_value(report).expect("report serializes"),
        })
    }

    /// Writes `<name>` with the stamped report and returns the text.
    pub fn report(&mut self, name: &str, report: &impl Serialize) -> Result<String, Failure> {
        let text = serde_json::to_string_pretty(&self.stamp(report)).expect("report serializes") + "\n";
        self.write(name, &text)?;
        Ok(text)
    }

    pub fn finish(self, config: &RunConfig, status: ExitStatus) -> Result<(), Failure> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let manifest = Manifest {
            tool: "metapop",
            version: env!("CARGO_PKG_VERSION"),
            command: &self.command,
            config_hash: &self.config_hash,
            seed: self.seed,
            generator: GENERATOR,
            streams: Stream::ALL.iter().map(|s| (*s as u64, s.name())).collect(),
            exit_status: status.code(),
            config,
            files: &self.files,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        let path = dir.join("manifest.json");
        fs::write(&path, text).map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))
    }
}
