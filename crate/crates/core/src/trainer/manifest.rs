//! Run manifest: everything needed to re-launch an identical run.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::data::{ClassCatalog, DomainPairDataset};
use crate::error::Result;

use super::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubstrateInfo {
    pub package: String,
    pub package_version: String,
    pub os: String,
    pub arch: String,
    pub float: String,
}

impl SubstrateInfo {
    pub fn current() -> Self {
        SubstrateInfo {
            package: env!("CARGO_PKG_NAME").to_string(),
            package_version: env!("CARGO_PKG_VERSION").to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            float: "f32".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub dataset_fingerprint: String,
    pub class_frequencies: Vec<f64>,
    pub substrate: SubstrateInfo,
    /// Source revision the run was produced from; taken from the
    /// SEMADAPT_REVISION environment variable when set.
    pub revision: String,
    pub started_unix_ms: u64,
    pub wall_clock_secs: f64,
    pub finalized: bool,
}

impl RunManifest {
    pub fn new(
        config: TrainConfig,
        dataset: &DomainPairDataset,
        catalog: &ClassCatalog,
    ) -> Result<Self> {
        let class_frequencies =
            catalog.entries.iter().map(|e| e.frequency.unwrap_or(0.0)).collect();
        Ok(RunManifest {
            config,
            dataset_fingerprint: dataset_fingerprint(dataset),
            class_frequencies,
            substrate: SubstrateInfo::current(),
            revision: std::env::var("SEMADAPT_REVISION").unwrap_or_else(|_| "unknown".into()),
            started_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
            wall_clock_secs: 0.0,
            finalized: false,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn finalize(&mut self, path: &Path, wall_clock_secs: f64) -> Result<()> {
        self.wall_clock_secs = wall_clock_secs;
        self.finalized = true;
        self.write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// FNV-1a content hash over every sample (ids, labels, 8-bit quantized
/// pixels) and the catalog. Stable across runs and platforms.
pub fn dataset_fingerprint(dataset: &DomainPairDataset) -> String {
    let mut h = Fnv::new();
    for img in &dataset.source {
        h.update(img.id.as_bytes());
        h.update_pixels(&img.pixels);
        h.update(img.labels.as_slice().unwrap());
    }
    for img in &dataset.target {
        h.update(img.id.as_bytes());
        h.update_pixels(&img.pixels);
    }
    if let Some(eval) = &dataset.target_eval {
        for img in eval {
            h.update(img.id.as_bytes());
            h.update_pixels(&img.pixels);
            h.update(img.labels.as_slice().unwrap());
        }
    }
    for e in &dataset.catalog.entries {
        h.update(e.name.as_bytes());
        h.update(&e.color);
    }
    format!("fnv1a64:{:016x}", h.finish())
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }

    fn update_pixels(&mut self, pixels: &ndarray::Array3<f32>) {
        for &v in pixels.iter() {
            self.0 ^= (v.clamp(0.0, 1.0) * 255.0).round() as u8 as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}
