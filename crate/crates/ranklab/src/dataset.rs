//! Dataset layout on disk: JSONL entity files, a metadata sidecar, fitted
//! model files and a run manifest with input hashes.
//!
//! A dataset directory holds `users.jsonl`, `listings.jsonl`,
//! `searches.jsonl` and `meta.json`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::domain::{Listing, SearchLog, UserProfile, WinsorCaps, X2_DIM};
use crate::error::{Error, Result};
use crate::estimate::{ClickParams, NormalizedReport, ProjectionModel, RequestParams};
use crate::synth::{MarketConfig, SimMeta};

pub const USERS_FILE: &str = "users.jsonl";
pub const LISTINGS_FILE: &str = "listings.jsonl";
pub const SEARCHES_FILE: &str = "searches.jsonl";
pub const META_FILE: &str = "meta.json";
pub const PARAMS_FILE: &str = "params.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Dataset-level facts every downstream stage needs to reproduce a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub page_capacity: usize,
    pub baseline_district: usize,
    pub winsor_caps: WinsorCaps,
    pub x2_means: Vec<f64>,
    pub click_threshold: f64,
    pub request_threshold: f64,
    pub true_request_params: Vec<f64>,
    pub true_click_params: Vec<f64>,
}

impl DatasetMeta {
    pub fn from_sim(config: &MarketConfig, sim: &SimMeta) -> DatasetMeta {
        DatasetMeta {
            seed: config.seed,
            page_capacity: config.page_capacity,
            baseline_district: config.baseline_district,
            winsor_caps: sim.winsor_caps,
            x2_means: sim.x2_means.to_vec(),
            click_threshold: sim.click_threshold,
            request_threshold: sim.request_threshold,
            true_request_params: config.true_request_params.clone(),
            true_click_params: config.true_click_params.clone(),
        }
    }

    pub fn x2_means_array(&self) -> Result<[f64; X2_DIM]> {
        self.x2_means
            .clone()
            .try_into()
            .map_err(|_| Error::Validation("meta x2_means has wrong length".into()))
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub users: Vec<UserProfile>,
    pub listings: Vec<Listing>,
    pub searches: Vec<SearchLog>,
    pub meta: DatasetMeta,
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| {
            Error::Validation(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_jsonl(&dir.join(USERS_FILE), &dataset.users)?;
    write_jsonl(&dir.join(LISTINGS_FILE), &dataset.listings)?;
    write_jsonl(&dir.join(SEARCHES_FILE), &dataset.searches)?;
    let meta = serde_json::to_string_pretty(&dataset.meta)?;
    fs::write(dir.join(META_FILE), meta + "\n")?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_raw = fs::read_to_string(dir.join(META_FILE)).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", dir.join(META_FILE).display()),
        ))
    })?;
    let meta: DatasetMeta = serde_json::from_str(&meta_raw)
        .map_err(|e| Error::Validation(format!("{}: {e}", dir.join(META_FILE).display())))?;
    Ok(Dataset {
        users: read_jsonl(&dir.join(USERS_FILE))?,
        listings: read_jsonl(&dir.join(LISTINGS_FILE))?,
        searches: read_jsonl(&dir.join(SEARCHES_FILE))?,
        meta,
    })
}

/// Everything the estimation stage produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedModel {
    pub request: RequestParams,
    pub projection: ProjectionModel,
    pub click: ClickParams,
    pub normalized: NormalizedReport,
}

pub fn save_params(path: &Path, model: &FittedModel) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let json = serde_json::to_string_pretty(model)?;
    fs::write(path, json + "\n")?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<FittedModel> {
    let raw = fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    serde_json::from_str(&raw).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub threads: usize,
    /// Input path -> sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, threads: usize) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            seed,
            threads,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn add_dataset_inputs(&mut self, dir: &Path) -> Result<()> {
        for name in [USERS_FILE, LISTINGS_FILE, SEARCHES_FILE, META_FILE] {
            self.add_input(&dir.join(name))?;
        }
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n")?;
        Ok(())
    }
}

/// CSV writer shared by the report and frontier outputs.
pub struct CsvWriter {
    path: PathBuf,
    w: BufWriter<File>,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &str) -> Result<CsvWriter> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{header}")?;
        Ok(CsvWriter {
            path: path.to_path_buf(),
            w,
        })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        writeln!(self.w, "{}", fields.join(","))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.w.flush()?;
        Ok(self.path)
    }
}
