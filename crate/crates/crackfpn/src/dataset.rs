//! Builds resize-mode or split-mode training sets from paired directories.

use std::collections::BTreeSet;
use std::path::Path;

use crackfpn_core::preprocess::{
    pad_to_tile_multiple, resize_pair, sample_background_tiles, select_crack_tiles, split_training_tiles, SplitParams,
};
use crackfpn_core::train::DatasetPreset;
use crackfpn_core::TileRecord;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{load_pair, pair_directories, save_image, save_mask};
use crate::manifest::{write_manifest, DatasetManifest, DatasetMode, ManifestEntry, ManifestParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuildPlan {
    Resize {
        target_h: usize,
        target_w: usize,
    },
    /// `params.background_sample` crack-free tiles are drawn over the whole
    /// set, or all of them when fewer exist.
    Split {
        params: SplitParams,
    },
}

impl BuildPlan {
    /// The preset's fixed geometry; `None` for custom sets.
    pub fn for_preset(preset: DatasetPreset, seed: u64) -> Option<Self> {
        let split = SplitParams { seed, ..SplitParams::default() };
        match preset {
            DatasetPreset::Ts1 => Some(Self::Resize { target_h: 1600, target_w: 2400 }),
            DatasetPreset::Ts2 => Some(Self::Resize { target_h: 2112, target_w: 3168 }),
            DatasetPreset::Ts3 => Some(Self::Split { params: SplitParams { background_sample: 0, ..split } }),
            DatasetPreset::Ts4 => Some(Self::Split { params: split }),
            DatasetPreset::Custom => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BuildSummary {
    pub images: usize,
    pub candidate_tiles: usize,
    pub crack_tiles: usize,
    pub background_tiles: usize,
}

fn tile_stem(t: &TileRecord) -> String {
    format!("{}/r{}_c{}", t.image_id, t.row_off, t.col_off)
}

/// Writes the sample files and `manifest.jsonl` under `out_dir`.
pub fn build_dataset(
    images: &Path,
    labels: &Path,
    out_dir: &Path,
    preset: DatasetPreset,
    plan: BuildPlan,
    seed: u64,
    crack_threshold: u8,
) -> Result<(DatasetManifest, BuildSummary)> {
    let pairs = pair_directories(images, labels)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (mode, params, entries, summary) = match plan {
        BuildPlan::Resize { target_h, target_w } => {
            let entries = pairs
                .par_iter()
                .map(|(id, img_path, mask_path)| -> Result<ManifestEntry> {
                    let (img, mask) = load_pair(img_path, mask_path, crack_threshold)?;
                    let (img, mask) = resize_pair(&img, &mask, target_h, target_w)?;
                    let stem = format!("{id}/resized");
                    save_image(&img, &out_dir.join(format!("{stem}.png")))?;
                    save_mask(&mask, &out_dir.join(format!("{stem}_mask.png")))?;
                    Ok(ManifestEntry {
                        image: format!("{stem}.png"),
                        mask: format!("{stem}_mask.png"),
                        tile: TileRecord {
                            image_id: id.clone(),
                            row_off: 0,
                            col_off: 0,
                            tile_h: target_h,
                            tile_w: target_w,
                            contains_crack: mask.count_ones() > 0,
                            touches_padding: false,
                        },
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let crack = entries.iter().filter(|e| e.tile.contains_crack).count();
            let summary = BuildSummary {
                images: pairs.len(),
                candidate_tiles: entries.len(),
                crack_tiles: crack,
                background_tiles: entries.len() - crack,
            };
            (DatasetMode::Resize, ManifestParams::Resize { target_h, target_w }, entries, summary)
        }
        BuildPlan::Split { params } => {
            params.validate()?;
            let per_image = pairs
                .par_iter()
                .map(|(id, img_path, mask_path)| -> Result<Vec<TileRecord>> {
                    let (img, mask) = load_pair(img_path, mask_path, crack_threshold)?;
                    let padded = pad_to_tile_multiple(&img, &mask, params.tile_h, params.tile_w)?;
                    Ok(split_training_tiles(&padded, &params, id)?)
                })
                .collect::<Result<Vec<_>>>()?;
            let all: Vec<TileRecord> = per_image.into_iter().flatten().collect();
            let crack = select_crack_tiles(&all);
            let available = all.len() - crack.len();
            let wanted = params.background_sample.min(available);
            if wanted < params.background_sample {
                log::warn!("only {available} background tiles available, keeping all of them");
            }
            let background = sample_background_tiles(&all, wanted, seed)?;
            let keep: BTreeSet<String> = crack.iter().chain(&background).map(tile_stem).collect();
            let selected: Vec<TileRecord> = all.iter().filter(|t| keep.contains(&tile_stem(t))).cloned().collect();
            pairs.par_iter().try_for_each(|(id, img_path, mask_path)| -> Result<()> {
                let mine: Vec<&TileRecord> = selected.iter().filter(|t| &t.image_id == id).collect();
                if mine.is_empty() {
                    return Ok(());
                }
                let (img, mask) = load_pair(img_path, mask_path, crack_threshold)?;
                let padded = pad_to_tile_multiple(&img, &mask, params.tile_h, params.tile_w)?;
                for t in mine {
                    let (ti, tm) = padded.tile(t);
                    let stem = tile_stem(t);
                    save_image(&ti, &out_dir.join(format!("{stem}.png")))?;
                    save_mask(&tm, &out_dir.join(format!("{stem}_mask.png")))?;
                }
                Ok(())
            })?;
            let summary = BuildSummary {
                images: pairs.len(),
                candidate_tiles: all.len(),
                crack_tiles: crack.len(),
                background_tiles: background.len(),
            };
            let entries = selected
                .into_iter()
                .map(|t| {
                    let stem = tile_stem(&t);
                    ManifestEntry { image: format!("{stem}.png"), mask: format!("{stem}_mask.png"), tile: t }
                })
                .collect();
            (DatasetMode::Split, ManifestParams::split(&params), entries, summary)
        }
    };
    let manifest = DatasetManifest::new(preset, mode, params, seed, entries).map_err(Error::Usage)?;
    write_manifest(&manifest, &out_dir.join("manifest.jsonl"))?;
    Ok((manifest, summary))
}
