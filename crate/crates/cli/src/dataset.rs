//! On-disk multilevel dataset.
//!
//! Layout: a directory holding `manifest.json` plus one raw binary file per
//! `(level, array)` pair:
//!
//! ```text
//! <out>/
//!   manifest.json
//!   level_01/kappa.bin        N_1 records of dof_1 little-endian f64
//!   level_01/solution.bin
//!   level_01/correction.bin
//!   level_02/...
//! ```
//!
//! Records are row-major coefficient vectors; sample `i` appears in the
//! level-`l` files iff `i < N_l`, so every file is a dense prefix of the
//! sample list. The manifest carries per-file FNV-1a checksums, the
//! normalisation constants, and everything needed to regenerate the data
//! bit-for-bit. Generation writes into a `.partial` sibling directory and
//! renames at the end, so an aborted run leaves no half-written dataset.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use convmg_core::grid::GridHierarchy;
use convmg_core::mldata::{
    decay_schedule, generate_sample_to_level, CoarseDerivation, MultilevelSample, SampleSettings,
};

use crate::config::{RunConfig, SolverConfig};
use crate::CliError;

pub const FORMAT_VERSION: u32 = 1;

/// FNV-1a 64-bit running checksum.
#[derive(Clone, Copy)]
pub struct Fnv1a64(u64);

impl Fnv1a64 {
    pub fn new() -> Self {
        Fnv1a64(0xcbf2_9ce4_8422_2325)
    }

    pub fn update(&mut self, bytes: &[u8]) {
        let mut h = self.0;
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self.0 = h;
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a64 {
    fn default() -> Self {
        Self::new()
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = Fnv1a64::new();
    h.update(bytes);
    h.finish()
}

/// The coefficient-family configuration object stored in the manifest:
/// `{kind, p, seed, coarse_cells, L}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FieldSpecConfig {
    pub kind: String,
    pub p: usize,
    pub seed: u64,
    pub coarse_cells: usize,
    #[serde(rename = "L")]
    pub l: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub path: String,
    pub records: usize,
    pub record_len: usize,
    pub checksum: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub spec: FieldSpecConfig,
    /// Per-level sample counts `N_l`.
    pub counts: Vec<usize>,
    /// Normalisation constants `delta_l` (Euclidean, over the `N_l` samples
    /// present on level `l`).
    pub deltas: Vec<f64>,
    pub solver: SolverConfig,
    pub galerkin_coarse: bool,
    pub f_const: f64,
    pub dtype: String,
    pub layout: String,
    pub checksum_algorithm: String,
    /// Generation cost relative to full-resolution samples under a
    /// cost-per-cell model: `sum_l N_l 4^(l - L)`.
    pub relative_cost: f64,
    pub files: Vec<FileEntry>,
}

fn level_dir(l: usize) -> String {
    format!("level_{l:02}")
}

const ARRAY_NAMES: [&str; 3] = ["kappa", "solution", "correction"];

struct ArrayWriter {
    rel_path: String,
    file: std::io::BufWriter<fs::File>,
    hash: Fnv1a64,
    records: usize,
    record_len: usize,
}

impl ArrayWriter {
    fn create(root: &Path, rel_path: String, record_len: usize) -> Result<Self, CliError> {
        let full = root.join(&rel_path);
        let file = fs::File::create(&full)?;
        Ok(ArrayWriter {
            rel_path,
            file: std::io::BufWriter::new(file),
            hash: Fnv1a64::new(),
            records: 0,
            record_len,
        })
    }

    fn write_record(&mut self, values: &[f64]) -> Result<(), CliError> {
        debug_assert_eq!(values.len(), self.record_len);
        let mut bytes = Vec::with_capacity(values.len() * 8);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.hash.update(&bytes);
        self.file.write_all(&bytes)?;
        self.records += 1;
        Ok(())
    }

    fn finish(mut self) -> Result<FileEntry, CliError> {
        self.file.flush()?;
        Ok(FileEntry {
            path: self.rel_path,
            records: self.records,
            record_len: self.record_len,
            checksum: format!("{:016x}", self.hash.finish()),
        })
    }
}

/// Top level carried by sample `index` under the given per-level counts.
fn top_level_for(counts: &[usize], index: usize) -> usize {
    let mut top = 1;
    for (li, &n) in counts.iter().enumerate() {
        if index < n {
            top = li + 1;
        }
    }
    top
}

fn sample_settings(cfg: &RunConfig) -> SampleSettings {
    SampleSettings {
        solver: cfg.solver_vcycle(),
        derivation: if cfg.dataset.galerkin_coarse {
            CoarseDerivation::GalerkinSolve
        } else {
            CoarseDerivation::NodalInterpolation
        },
        f_const: 1.0,
    }
}

/// Generates the dataset under `out_dir` with `workers` parallel sample
/// builders. Output is byte-identical for any worker count: samples are
/// deterministic in `(seed, index)` and written in index order.
pub fn generate_dataset(
    cfg: &RunConfig,
    out_dir: &Path,
    workers: usize,
) -> Result<DatasetManifest, CliError> {
    let spec = cfg.field_spec()?;
    let hier = GridHierarchy::build(cfg.grid.coarse_cells, cfg.grid.levels)?;
    let settings = sample_settings(cfg);
    let lcount = hier.level_count();
    let counts = if cfg.dataset.decay {
        decay_schedule(cfg.dataset.n1, lcount)
    } else {
        vec![cfg.dataset.n1; lcount]
    };
    let n_total = counts[0];

    if out_dir.exists() {
        return Err(CliError::Dataset(format!(
            "refusing to overwrite existing {}",
            out_dir.display()
        )));
    }
    let partial: PathBuf = {
        let mut name = out_dir.file_name().unwrap_or_default().to_os_string();
        name.push(".partial");
        out_dir.with_file_name(name)
    };
    if partial.exists() {
        fs::remove_dir_all(&partial)?;
    }

    let result = write_all(cfg, &spec, &hier, &settings, &counts, n_total, &partial, workers);
    match result {
        Ok(manifest) => {
            fs::rename(&partial, out_dir)?;
            Ok(manifest)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&partial);
            Err(e)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn write_all(
    cfg: &RunConfig,
    spec: &convmg_core::fields::FieldSpec,
    hier: &GridHierarchy,
    settings: &SampleSettings,
    counts: &[usize],
    n_total: usize,
    partial: &Path,
    workers: usize,
) -> Result<DatasetManifest, CliError> {
    let lcount = hier.level_count();
    fs::create_dir_all(partial)?;
    for l in 1..=lcount {
        fs::create_dir_all(partial.join(level_dir(l)))?;
    }

    // per (level, array) writers
    let mut writers: Vec<Vec<ArrayWriter>> = Vec::with_capacity(lcount);
    for l in 1..=lcount {
        let dof = hier.level(l)?.dof();
        let mut per_level = Vec::with_capacity(3);
        for name in ARRAY_NAMES {
            per_level.push(ArrayWriter::create(
                partial,
                format!("{}/{}.bin", level_dir(l), name),
                dof,
            )?);
        }
        writers.push(per_level);
    }

    let mut delta_sq = vec![0.0f64; lcount];
    let mut write_sample = |s: &MultilevelSample| -> Result<(), CliError> {
        for l in 1..=s.top_level {
            let w = &mut writers[l - 1];
            w[0].write_record(s.kappa[l - 1].as_slice())?;
            w[1].write_record(s.solutions[l - 1].as_slice())?;
            w[2].write_record(s.corrections[l - 1].as_slice())?;
            let c = s.corrections[l - 1].as_slice();
            delta_sq[l - 1] += c.iter().map(|v| v * v).sum::<f64>();
        }
        Ok(())
    };

    let seed = cfg.seed;
    if workers <= 1 {
        for i in 0..n_total {
            let top = top_level_for(counts, i);
            let s = generate_sample_to_level(spec, hier, settings, seed, i as u64, top)?;
            write_sample(&s)?;
        }
    } else {
        let next = AtomicUsize::new(0);
        let stop = AtomicBool::new(false);
        let (tx, rx) = mpsc::channel::<(usize, Result<MultilevelSample, CliError>)>();
        let worker_count = workers.min(n_total).max(1);
        let mut outcome: Result<(), CliError> = Ok(());
        std::thread::scope(|scope| {
            for _ in 0..worker_count {
                let tx = tx.clone();
                let next = &next;
                let stop = &stop;
                let counts = &counts;
                scope.spawn(move || loop {
                    if stop.load(Ordering::Relaxed) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n_total {
                        break;
                    }
                    let top = top_level_for(counts, i);
                    let r = generate_sample_to_level(spec, hier, settings, seed, i as u64, top)
                        .map_err(CliError::from);
                    if tx.send((i, r)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);

            // reorder buffer: flush strictly in index order
            let mut pending: BTreeMap<usize, MultilevelSample> = BTreeMap::new();
            let mut expected = 0usize;
            for (i, r) in rx.iter() {
                match r {
                    Ok(s) => {
                        pending.insert(i, s);
                    }
                    Err(e) => {
                        stop.store(true, Ordering::Relaxed);
                        outcome = Err(e);
                        break;
                    }
                }
                while let Some(s) = pending.remove(&expected) {
                    if let Err(e) = write_sample(&s) {
                        stop.store(true, Ordering::Relaxed);
                        outcome = Err(e);
                        break;
                    }
                    expected += 1;
                }
                if outcome.is_err() {
                    break;
                }
            }
            if outcome.is_ok() {
                while let Some(s) = pending.remove(&expected) {
                    if let Err(e) = write_sample(&s) {
                        outcome = Err(e);
                        break;
                    }
                    expected += 1;
                }
            }
            if outcome.is_ok() && expected != n_total {
                outcome = Err(CliError::Dataset(format!(
                    "expected {n_total} samples, wrote {expected}"
                )));
            }
        });
        outcome?;
    }

    let mut files = Vec::with_capacity(3 * lcount);
    for per_level in writers {
        for w in per_level {
            files.push(w.finish()?);
        }
    }

    let deltas: Vec<f64> = delta_sq
        .iter()
        .zip(counts)
        .map(|(&sq, &n)| if n > 0 { (sq / n as f64).sqrt() } else { 0.0 })
        .collect();

    let relative_cost: f64 = counts
        .iter()
        .enumerate()
        .map(|(li, &n)| n as f64 * 4f64.powi(li as i32 + 1 - lcount as i32))
        .sum();

    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        spec: FieldSpecConfig {
            kind: cfg.field.kind.clone(),
            p: cfg.field.p,
            seed: cfg.seed,
            coarse_cells: cfg.grid.coarse_cells,
            l: lcount,
        },
        counts: counts.to_vec(),
        deltas,
        solver: cfg.solver.clone(),
        galerkin_coarse: cfg.dataset.galerkin_coarse,
        f_const: settings.f_const,
        dtype: "f64-le".into(),
        layout: "row-major".into(),
        checksum_algorithm: "fnv1a-64".into(),
        relative_cost,
        files,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(partial.join("manifest.json"), json)?;
    Ok(manifest)
}

/// One level's arrays, flattened; `record(i)` slices sample `i`.
#[derive(Debug, Clone)]
pub struct LevelArrays {
    pub records: usize,
    pub record_len: usize,
    pub kappa: Vec<f64>,
    pub solution: Vec<f64>,
    pub correction: Vec<f64>,
}

impl LevelArrays {
    pub fn kappa_record(&self, i: usize) -> &[f64] {
        &self.kappa[i * self.record_len..(i + 1) * self.record_len]
    }

    pub fn solution_record(&self, i: usize) -> &[f64] {
        &self.solution[i * self.record_len..(i + 1) * self.record_len]
    }

    pub fn correction_record(&self, i: usize) -> &[f64] {
        &self.correction[i * self.record_len..(i + 1) * self.record_len]
    }
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub levels: Vec<LevelArrays>,
}

impl LoadedDataset {
    /// Euclidean normalisation constants recomputed from the stored
    /// corrections.
    pub fn recompute_deltas(&self) -> Vec<f64> {
        self.levels
            .iter()
            .map(|l| {
                if l.records == 0 {
                    0.0
                } else {
                    let sq: f64 = l.correction.iter().map(|v| v * v).sum();
                    (sq / l.records as f64).sqrt()
                }
            })
            .collect()
    }
}

fn read_array(dir: &Path, entry: &FileEntry) -> Result<Vec<f64>, CliError> {
    let full = dir.join(&entry.path);
    let bytes = fs::read(&full)?;
    if bytes.len() != entry.records * entry.record_len * 8 {
        return Err(CliError::Dataset(format!(
            "{}: expected {} bytes, found {}",
            entry.path,
            entry.records * entry.record_len * 8,
            bytes.len()
        )));
    }
    let sum = format!("{:016x}", fnv1a64(&bytes));
    if sum != entry.checksum {
        return Err(CliError::Dataset(format!(
            "{}: checksum mismatch (manifest {}, file {})",
            entry.path, entry.checksum, sum
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Loads a dataset directory, validating every checksum and the manifest's
/// structural invariants (counts non-increasing per level, positive
/// normalisation constants wherever samples exist).
pub fn load_dataset(dir: &Path) -> Result<LoadedDataset, CliError> {
    let manifest_text = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: DatasetManifest = serde_json::from_str(&manifest_text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(CliError::Dataset(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    for w in manifest.counts.windows(2) {
        if w[1] > w[0] {
            return Err(CliError::Dataset(format!(
                "per-level counts must be non-increasing, got {:?}",
                manifest.counts
            )));
        }
    }
    for (li, (&n, &d)) in manifest.counts.iter().zip(&manifest.deltas).enumerate() {
        if n > 0 && !(d > 0.0) {
            return Err(CliError::Dataset(format!(
                "normalisation constant on level {} must be positive, got {d}",
                li + 1
            )));
        }
    }
    let lcount = manifest.counts.len();
    let mut levels = Vec::with_capacity(lcount);
    for l in 1..=lcount {
        let mut arrays: Vec<Vec<f64>> = Vec::with_capacity(3);
        let mut records = 0;
        let mut record_len = 0;
        for name in ARRAY_NAMES {
            let rel = format!("{}/{}.bin", level_dir(l), name);
            let entry = manifest
                .files
                .iter()
                .find(|f| f.path == rel)
                .ok_or_else(|| CliError::Dataset(format!("manifest lacks {rel}")))?;
            records = entry.records;
            record_len = entry.record_len;
            arrays.push(read_array(dir, entry)?);
        }
        let correction = arrays.pop().unwrap();
        let solution = arrays.pop().unwrap();
        let kappa = arrays.pop().unwrap();
        levels.push(LevelArrays { records, record_len, kappa, solution, correction });
    }
    Ok(LoadedDataset { manifest, levels })
}
