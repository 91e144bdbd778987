//! Training configuration: TOML file, named profiles and flag overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::AugmentConfig;
use crate::error::{Result, SodError};
use crate::losses::{LossConfig, SSIM_WINDOW};
use crate::net::{NetConfig, STRIDE};
use crate::preset::Preset;

/// Network widths, independent of the preset's toggles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetWidths {
    pub widths: [usize; 4],
    pub stem: usize,
    pub c_flow: usize,
    pub encoder_stem: usize,
}

impl Default for NetWidths {
    fn default() -> Self {
        let t = NetConfig::toy(Preset::B7);
        NetWidths { widths: t.widths, stem: t.stem, c_flow: t.c_flow, encoder_stem: t.encoder_stem }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub preset: Preset,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_backbone: f64,
    pub lr_head: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    /// Rescale gradients whose global norm exceeds this (0 = off).
    pub max_grad_norm: f64,
    pub input_size: usize,
    pub seed: u64,
    pub ssim_window: usize,
    /// Augmentation on/off; parameters below.
    pub augment: bool,
    pub augmentation: AugmentConfig,
    /// Samples held out from the training set for best-checkpoint selection.
    pub val_size: usize,
    /// Save a checkpoint every this many epochs (0 = only the final one).
    pub checkpoint_every: usize,
    pub net: NetWidths,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

impl TrainConfig {
    /// Desk scale: 96x96 inputs, batch 8, 20 epochs, peak rates 0.001 / 0.01.
    pub fn desk() -> Self {
        TrainConfig {
            preset: Preset::B7,
            epochs: 20,
            batch_size: 8,
            lr_backbone: 0.001,
            lr_head: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            warmup_fraction: 0.05,
            max_grad_norm: 5.0,
            input_size: 96,
            seed: 7,
            ssim_window: SSIM_WINDOW,
            augment: true,
            augmentation: AugmentConfig::default(),
            val_size: 0,
            checkpoint_every: 0,
            net: NetWidths::default(),
        }
    }

    /// The full-scale schedule: 352x352 inputs, batch 32, 50 epochs.
    pub fn paper() -> Self {
        TrainConfig { epochs: 50, batch_size: 32, input_size: 352, lr_backbone: 0.005, lr_head: 0.05, ..TrainConfig::desk() }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(TrainConfig::desk()),
            "paper" => Ok(TrainConfig::paper()),
            other => Err(SodError::Config(format!("unknown profile `{other}` (expected desk or paper)"))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| SodError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SodError::io(path, e))?;
        TrainConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SodError::Config(m));
        if !(self.lr_backbone > 0.0 && self.lr_head > 0.0) {
            return bad(format!("learning rates must be positive (got {} and {})", self.lr_backbone, self.lr_head));
        }
        if !self.input_size.is_multiple_of(STRIDE) || self.input_size < 64 {
            return bad(format!("input_size {} must be a multiple of 32 and at least 64", self.input_size));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad(format!("warmup_fraction {} outside [0, 1)", self.warmup_fraction));
        }
        if self.max_grad_norm.is_nan() || self.max_grad_norm < 0.0 {
            return bad(format!("max_grad_norm {} must be non-negative", self.max_grad_norm));
        }
        if self.net.c_flow == 0 || self.net.stem == 0 || self.net.encoder_stem == 0 || self.net.widths.contains(&0) {
            return bad("network widths must be positive".into());
        }
        Ok(())
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig { arch: self.preset.arch(), widths: self.net.widths, stem: self.net.stem, c_flow: self.net.c_flow, encoder_stem: self.net.encoder_stem }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig { flags: self.preset.losses(), ssim_window: self.ssim_window }
    }

    /// Content hash in the style of git's blob ids, over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        content_hash("config", json.as_bytes())
    }
}

/// `sha256("<kind> <len>\0<bytes>")` in hex.
pub fn content_hash(kind: &str, bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("{kind} {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_partial_files() {
        let cfg = TrainConfig::paper();
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let partial = TrainConfig::from_toml("preset = \"full\"\nepochs = 3\n").unwrap();
        assert_eq!(partial.preset, Preset::B7);
        assert_eq!(partial.epochs, 3);
        assert_eq!(partial.input_size, 96);
        assert!(TrainConfig::from_toml("input_size = 100").is_err());
        assert!(TrainConfig::from_toml("lr_head = 0.0").is_err());
        assert!(TrainConfig::from_toml("max_grad_norm = -1.0").is_err());
        assert!(TrainConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = TrainConfig::desk();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn profiles() {
        let p = TrainConfig::profile("paper").unwrap();
        assert_eq!((p.input_size, p.batch_size, p.epochs), (352, 32, 50));
        assert_eq!((p.lr_backbone, p.lr_head), (0.005, 0.05));
        assert!(TrainConfig::profile("huge").is_err());
    }
}
