//! JSON-Lines dataset manifests: one header record, then one record per
//! sample. Sample paths are relative to the manifest's directory.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crackfpn_core::preprocess::SplitParams;
use crackfpn_core::train::{DatasetPreset, SampleSource};
use crackfpn_core::{BinaryMask, RasterImage, TileRecord};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{load_pair, DEFAULT_CRACK_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetMode {
    Resize,
    Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ManifestParams {
    Resize { target_h: usize, target_w: usize },
    Split { tile_h: usize, tile_w: usize, stride_r: usize, stride_c: usize, background_sample: usize },
}

impl ManifestParams {
    pub fn split(p: &SplitParams) -> Self {
        Self::Split {
            tile_h: p.tile_h,
            tile_w: p.tile_w,
            stride_r: p.stride_r,
            stride_c: p.stride_c,
            background_sample: p.background_sample,
        }
    }

    /// Extent of every sample in the manifest.
    pub fn sample_extent(&self) -> (usize, usize) {
        match *self {
            Self::Resize { target_h, target_w } => (target_h, target_w),
            Self::Split { tile_h, tile_w, .. } => (tile_h, tile_w),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    preset: DatasetPreset,
    mode: DatasetMode,
    params: ManifestParams,
    seed: u64,
    count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image: String,
    pub mask: String,
    pub tile: TileRecord,
}

/// A validated training set description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    preset: DatasetPreset,
    mode: DatasetMode,
    params: ManifestParams,
    seed: u64,
    entries: Vec<ManifestEntry>,
}

fn preset_rule(preset: DatasetPreset, mode: DatasetMode, params: &ManifestParams) -> std::result::Result<(), String> {
    let ok = match preset {
        DatasetPreset::Ts1 => {
            mode == DatasetMode::Resize && *params == ManifestParams::Resize { target_h: 1600, target_w: 2400 }
        }
        DatasetPreset::Ts2 => {
            mode == DatasetMode::Resize && *params == ManifestParams::Resize { target_h: 2112, target_w: 3168 }
        }
        DatasetPreset::Ts3 | DatasetPreset::Ts4 => {
            mode == DatasetMode::Split
                && matches!(
                    params,
                    ManifestParams::Split { tile_h: 480, tile_w: 640, stride_r: 320, stride_c: 320, .. }
                )
        }
        DatasetPreset::Custom => matches!(
            (mode, params),
            (DatasetMode::Resize, ManifestParams::Resize { .. }) | (DatasetMode::Split, ManifestParams::Split { .. })
        ),
    };
    if ok {
        Ok(())
    } else {
        Err(format!("preset {preset:?} does not allow mode {mode:?} with {params:?}"))
    }
}

impl DatasetManifest {
    pub fn new(
        preset: DatasetPreset,
        mode: DatasetMode,
        params: ManifestParams,
        seed: u64,
        entries: Vec<ManifestEntry>,
    ) -> std::result::Result<Self, String> {
        preset_rule(preset, mode, &params)?;
        let (h, w) = params.sample_extent();
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(format!("sample extent {h}x{w} must be a positive multiple of 32"));
        }
        for e in &entries {
            if (e.tile.tile_h, e.tile.tile_w) != (h, w) {
                return Err(format!("entry {} is {}x{}, expected {h}x{w}", e.image, e.tile.tile_h, e.tile.tile_w));
            }
            if preset == DatasetPreset::Ts3 && !e.tile.contains_crack {
                return Err(format!("crack-only preset lists crack-free entry {}", e.image));
            }
        }
        Ok(Self { preset, mode, params, seed, entries })
    }

    pub fn preset(&self) -> DatasetPreset {
        self.preset
    }

    pub fn mode(&self) -> DatasetMode {
        self.mode
    }

    pub fn params(&self) -> &ManifestParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    render(manifest, &mut buf).map_err(|e| Error::io(path, e))?;
    crate::io::write_atomic(path, &buf)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::input(path, "manifest not found"),
        _ => Error::io(path, e),
    })?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let bad = |n: usize, msg: String| Error::input(path, format!("line {}: {msg}", n + 1));
    let (n, first) = lines.next().ok_or_else(|| Error::input(path, "empty manifest"))?;
    let first = first.map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_str(&first).map_err(|e| bad(n, e.to_string()))?;
    let mut entries = Vec::with_capacity(header.count);
    for (n, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str::<ManifestEntry>(&line).map_err(|e| bad(n, e.to_string()))?);
    }
    if entries.len() != header.count {
        return Err(Error::input(path, format!("header announces {} entries, found {}", header.count, entries.len())));
    }
    DatasetManifest::new(header.preset, header.mode, header.params, header.seed, entries)
        .map_err(|m| Error::input(path, m))
}

/// Streams samples of a manifest from disk on demand.
pub struct ManifestSource {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl ManifestSource {
    pub fn new(manifest: &DatasetManifest, manifest_path: &Path) -> Self {
        let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self { root, entries: manifest.entries.clone() }
    }

    pub fn image_path(&self, index: usize) -> PathBuf {
        self.root.join(&self.entries[index].image)
    }

    pub fn mask_path(&self, index: usize) -> PathBuf {
        self.root.join(&self.entries[index].mask)
    }
}

impl SampleSource for ManifestSource {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn load(&self, index: usize) -> crackfpn_core::Result<(RasterImage, BinaryMask)> {
        if index >= self.entries.len() {
            return Err(crackfpn_core::Error::InvalidArgument(format!("sample {index} out of range")));
        }
        load_pair(&self.image_path(index), &self.mask_path(index), DEFAULT_CRACK_THRESHOLD)
            .map_err(|e| crackfpn_core::Error::InvalidArgument(e.to_string()))
    }

    fn contains_crack(&self, index: usize) -> bool {
        self.entries.get(index).is_some_and(|e| e.tile.contains_crack)
    }
}

/// Manifest text for inspection or piping.
pub fn render(manifest: &DatasetManifest, mut out: impl Write) -> std::io::Result<()> {
    let header = Header {
        preset: manifest.preset,
        mode: manifest.mode,
        params: manifest.params,
        seed: manifest.seed,
        count: manifest.entries.len(),
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for e in &manifest.entries {
        writeln!(out, "{}", serde_json::to_string(e)?)?;
    }
    Ok(())
}
