//! Dataset directories: an `index.json` manifest plus one binary
//! voxel file per volume.
//!
//! Volume files are `CTSV` + u32 version + u32 slices/height/width,
//! followed by the voxels as little-endian f32 in [slice, row, column]
//! order. Labels live in the manifest, not the voxel files. Voxels are
//! generated in f64 and stored as f32; readers get the f32-rounded
//! values, which is what training consumes, so runs that read the same
//! dataset see identical bytes.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{generate_one, SynthConfig, SyntheticVolume};

const MAGIC: &[u8; 4] = b"CTSV";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumeEntry {
    pub file: String,
    pub labels: Vec<u8>,
    pub seed: u64,
    pub index: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetIndex {
    /// Generator settings the volumes were drawn from.
    pub config: SynthConfig,
    pub count: usize,
    pub volumes: Vec<VolumeEntry>,
}

fn index_path(dir: &Path) -> PathBuf {
    dir.join("index.json")
}

fn volume_file_name(index: u64) -> String {
    format!("vol_{index:05}.bin")
}

fn write_volume_file(path: &Path, cfg: &SynthConfig, voxels: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(cfg.slices as u32).to_le_bytes())?;
    w.write_all(&(cfg.slice_height as u32).to_le_bytes())?;
    w.write_all(&(cfg.slice_width as u32).to_le_bytes())?;
    for &v in voxels {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one voxel file, checking magic, version, and dimensions.
pub fn read_volume_file(path: &Path, cfg: &SynthConfig) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let n = cfg.voxels_per_volume();
    let expected = 20 + 4 * n;
    if bytes.len() != expected {
        return Err(Error::load(format!(
            "{}: {} bytes, expected {expected}",
            path.display(),
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::load(format!("{}: bad magic", path.display())));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    if word(4) != VERSION {
        return Err(Error::load(format!(
            "{}: version {} unsupported",
            path.display(),
            word(4)
        )));
    }
    let dims = (word(8) as usize, word(12) as usize, word(16) as usize);
    if dims != (cfg.slices, cfg.slice_height, cfg.slice_width) {
        return Err(Error::load(format!(
            "{}: dimensions {dims:?} do not match the index config",
            path.display()
        )));
    }
    Ok(bytes[20..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect())
}

/// Generates `count` volumes into `dir` and writes the manifest.
/// Refuses to touch a directory that already holds a dataset unless
/// `force` is set; with `force` the manifest is replaced and only the
/// newly indexed files are meaningful.
pub fn write_dataset(
    dir: &Path,
    cfg: &SynthConfig,
    count: usize,
    force: bool,
) -> Result<DatasetIndex> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::validation("dataset needs at least one volume".to_string()));
    }
    if index_path(dir).exists() && !force {
        return Err(Error::validation(format!(
            "{} already holds a dataset; pass force to replace it",
            dir.display()
        )));
    }
    fs::create_dir_all(dir)?;
    let mut volumes = Vec::with_capacity(count);
    for i in 0..count as u64 {
        let vol = generate_one(cfg, i)?;
        let file = volume_file_name(i);
        write_volume_file(&dir.join(&file), cfg, &vol.voxels)?;
        volumes.push(VolumeEntry {
            file,
            labels: vol.labels,
            seed: cfg.seed,
            index: i,
        });
    }
    let index = DatasetIndex {
        config: cfg.clone(),
        count,
        volumes,
    };
    let json = serde_json::to_string_pretty(&index)?;
    fs::write(index_path(dir), json)?;
    Ok(index)
}

pub fn read_index(dir: &Path) -> Result<DatasetIndex> {
    let path = index_path(dir);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::load(format!("{}: {e}", path.display())))?;
    let index: DatasetIndex = serde_json::from_str(&text)?;
    if index.volumes.len() != index.count {
        return Err(Error::load(format!(
            "{}: lists {} volumes, count says {}",
            path.display(),
            index.volumes.len(),
            index.count
        )));
    }
    let labels = index.config.labels.len();
    for entry in &index.volumes {
        if entry.labels.len() != labels {
            return Err(Error::load(format!(
                "{}: entry {} has {} labels, config defines {labels}",
                path.display(),
                entry.file,
                entry.labels.len()
            )));
        }
    }
    Ok(index)
}

/// Loads every volume listed in a dataset directory's manifest.
pub fn read_dataset(dir: &Path) -> Result<(DatasetIndex, Vec<SyntheticVolume>)> {
    let index = read_index(dir)?;
    let mut volumes = Vec::with_capacity(index.count);
    for entry in &index.volumes {
        let voxels = read_volume_file(&dir.join(&entry.file), &index.config)?;
        volumes.push(SyntheticVolume {
            voxels,
            labels: entry.labels.clone(),
            seed: entry.seed,
            index: entry.index,
        });
    }
    Ok((index, volumes))
}
