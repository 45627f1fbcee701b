//! Epoch loop with history and best-loss checkpointing.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crackfpn_core::train::{SampleSource, TrainConfig, Trainer};
use crackfpn_core::FpnNet;
use serde::Serialize;

use crate::checkpoint::{save_checkpoint, RngState};
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ManifestSource};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub loss: f64,
    pub train_miou: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::io(path, e.into()))?;
        }
        if self.records.is_empty() {
            w.write_record(["epoch", "loss", "train_miou", "seconds"]).map_err(|e| Error::io(path, e.into()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub struct FitOutcome {
    /// Parameters of the best-loss epoch (initial weights when no epoch ran).
    pub model: FpnNet,
    pub history: TrainHistory,
    pub checkpoint: PathBuf,
}

/// Trains on an in-memory or streamed source, writing `model.ckpt` (best
/// loss) and `history.csv` under `out_dir`. Starts from `init` when given,
/// otherwise from weights seeded by `config.seed`.
pub fn fit_source(
    source: &dyn SampleSource,
    config: &TrainConfig,
    init: Option<FpnNet>,
    out_dir: &Path,
) -> Result<FitOutcome> {
    config.validate()?;
    let model = match init {
        Some(m) if m.config() != &config.model => {
            return Err(Error::Usage("initial model does not match the configured architecture".into()))
        }
        Some(m) => m,
        None => FpnNet::new(config.model.clone(), config.seed)?,
    };
    if source.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let checkpoint = out_dir.join("model.ckpt");
    let mut trainer = Trainer::with_model(model, config.clone());
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, FpnNet)> = None;
    save_checkpoint(&mut trainer.model, 0, RngState { seed: config.seed, next_epoch: 0 }, &checkpoint)?;
    for epoch in 0..config.epochs as u64 {
        let start = Instant::now();
        let stats = trainer.run_epoch(source, epoch)?;
        let record = EpochRecord {
            epoch,
            loss: stats.loss,
            train_miou: stats.train_miou,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} train mIoU {:.4} ({:.1}s)",
            record.loss,
            record.train_miou,
            record.seconds
        );
        history.records.push(record);
        if best.as_ref().is_none_or(|(l, _)| stats.loss < *l) {
            let rng = RngState { seed: config.seed, next_epoch: epoch + 1 };
            let step = trainer.steps();
            save_checkpoint(&mut trainer.model, step, rng, &checkpoint)?;
            best = Some((stats.loss, trainer.model.clone()));
        }
    }
    history.write_csv(&out_dir.join("history.csv"))?;
    let model = best.map(|b| b.1).unwrap_or(trainer.model);
    Ok(FitOutcome { model, history, checkpoint })
}

/// Checks the preset pairing, then trains on the manifest's samples.
pub fn fit(
    manifest: &DatasetManifest,
    manifest_path: &Path,
    config: &TrainConfig,
    init: Option<FpnNet>,
    out_dir: &Path,
) -> Result<FitOutcome> {
    if !config.preset.accepts(manifest.preset()) {
        return Err(Error::input(
            manifest_path,
            format!("training preset {:?} cannot use a {:?} manifest", config.preset, manifest.preset()),
        ));
    }
    if manifest.is_empty() {
        return Err(Error::input(manifest_path, "manifest has no samples"));
    }
    fit_source(&ManifestSource::new(manifest, manifest_path), config, init, out_dir)
}
