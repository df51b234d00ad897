//! Run configuration: versioned `key = value` text with a full default
//! dump, so every hyperparameter of a run is auditable.

use std::path::Path;

use crate::au_table::{builtin_table, AUPartitionTable};
use crate::error::{Error, Result};
use crate::model::BackboneProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynamicMode {
    None,
    ConvLstm,
    TwoStream,
}

impl DynamicMode {
    pub fn tag(&self) -> &'static str {
        match self {
            DynamicMode::None => "none",
            DynamicMode::ConvLstm => "convlstm",
            DynamicMode::TwoStream => "two_stream",
        }
    }

    pub fn from_tag(tag: &str) -> Result<DynamicMode> {
        match tag {
            "none" => Ok(DynamicMode::None),
            "convlstm" => Ok(DynamicMode::ConvLstm),
            "two_stream" => Ok(DynamicMode::TwoStream),
            other => Err(Error::Config(format!("unknown dynamic mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Dataset profile: bp4d | disfa | synth. Picks the partition table.
    pub dataset: String,
    pub resolution: u32,
    pub channels: usize,
    /// Backbone profile name: standard | toy.
    pub backbone: String,
    /// 0 = profile default.
    pub roi_size: usize,
    /// 0 = profile default.
    pub fc_hidden: usize,
    pub mean_box: bool,
    pub dynamic: DynamicMode,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_every: u32,
    pub lr_decay_factor: f64,
    pub epochs: u32,
    pub batch_size: usize,
    pub mirror_augment: bool,
    pub seed: u64,
    // synthetic data generation
    pub synth_frames: usize,
    pub synth_test_frames: usize,
    pub synth_video_len: usize,
    pub synth_base_rate: f64,
    /// Optional per-AU base-rate overrides (comma list in file form).
    pub synth_base_rates: Vec<f64>,
    pub synth_segment_len: usize,
    /// Per-AU spread of segment lengths: 0 plants every AU with exactly
    /// `synth_segment_len` frames; 0.5 spreads lengths 0.5x..1.5x across
    /// the AU columns (for duration-correlation studies).
    pub synth_duration_spread: f64,
    pub synth_gap_jitter: f64,
    pub synth_texture_amp: f64,
    pub synth_noise: f64,
    // dynamic extension
    pub time_steps: usize,
    pub frame_skip: usize,
    /// 0 = non-overlapping (one window span).
    pub window_stride: usize,
    pub lstm_channels: usize,
    pub lstm_kernel: usize,
    /// Keep backbone weights fixed during dynamic-head training (useful
    /// when initializing from a trained static checkpoint).
    pub freeze_backbone: bool,
    /// Global-norm gradient clip for recurrent training; 0 disables.
    pub grad_clip: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: "synth".into(),
            resolution: 512,
            channels: 3,
            backbone: "standard".into(),
            roi_size: 0,
            fc_hidden: 0,
            mean_box: false,
            dynamic: DynamicMode::None,
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 0.0005,
            lr_decay_every: 10,
            lr_decay_factor: 0.1,
            epochs: 25,
            batch_size: 5,
            mirror_augment: true,
            seed: 1,
            synth_frames: 600,
            synth_test_frames: 200,
            synth_video_len: 200,
            synth_base_rate: 0.35,
            synth_base_rates: Vec::new(),
            synth_segment_len: 30,
            synth_duration_spread: 0.0,
            synth_gap_jitter: 0.5,
            synth_texture_amp: 0.55,
            synth_noise: 0.05,
            time_steps: 10,
            frame_skip: 4,
            window_stride: 0,
            lstm_channels: 8,
            lstm_kernel: 3,
            freeze_backbone: false,
            grad_clip: 0.0,
        }
    }
}

impl RunConfig {
    pub fn table(&self) -> Result<&'static AUPartitionTable> {
        builtin_table(&self.dataset)
    }

    pub fn profile(&self) -> Result<BackboneProfile> {
        let mut p = BackboneProfile::by_name(&self.backbone)?;
        if self.roi_size > 0 {
            p.roi_size = self.roi_size;
        }
        if self.fc_hidden > 0 {
            p.fc_hidden = self.fc_hidden;
        }
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 {
            return Err(Error::Config("resolution must be positive".into()));
        }
        if self.channels == 0 {
            return Err(Error::Config("channels must be positive".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.synth_base_rate) {
            return Err(Error::Config("synth_base_rate must be in [0, 1]".into()));
        }
        if self.time_steps == 0 {
            return Err(Error::Config("time_steps must be >= 1".into()));
        }
        self.table()?;
        self.profile()?;
        Ok(())
    }

    /// Full dump in the config file format; `--print-config` emits this.
    pub fn dump(&self) -> String {
        let mut s = String::from("aurk-config v1\n");
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("dataset", self.dataset.clone());
        kv("resolution", self.resolution.to_string());
        kv("channels", self.channels.to_string());
        kv("backbone", self.backbone.clone());
        kv("roi_size", self.roi_size.to_string());
        kv("fc_hidden", self.fc_hidden.to_string());
        kv("mean_box", self.mean_box.to_string());
        kv("dynamic", self.dynamic.tag().to_string());
        kv("lr", self.lr.to_string());
        kv("momentum", self.momentum.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("lr_decay_every", self.lr_decay_every.to_string());
        kv("lr_decay_factor", self.lr_decay_factor.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("mirror_augment", self.mirror_augment.to_string());
        kv("seed", self.seed.to_string());
        kv("synth_frames", self.synth_frames.to_string());
        kv("synth_test_frames", self.synth_test_frames.to_string());
        kv("synth_video_len", self.synth_video_len.to_string());
        kv("synth_base_rate", self.synth_base_rate.to_string());
        kv(
            "synth_base_rates",
            self.synth_base_rates
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("synth_segment_len", self.synth_segment_len.to_string());
        kv(
            "synth_duration_spread",
            self.synth_duration_spread.to_string(),
        );
        kv("synth_gap_jitter", self.synth_gap_jitter.to_string());
        kv("synth_texture_amp", self.synth_texture_amp.to_string());
        kv("synth_noise", self.synth_noise.to_string());
        kv("time_steps", self.time_steps.to_string());
        kv("frame_skip", self.frame_skip.to_string());
        kv("window_stride", self.window_stride.to_string());
        kv("lstm_channels", self.lstm_channels.to_string());
        kv("lstm_kernel", self.lstm_kernel.to_string());
        kv("freeze_backbone", self.freeze_backbone.to_string());
        kv("grad_clip", self.grad_clip.to_string());
        s
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut lines = text.lines().enumerate();
        let header = loop {
            match lines.next() {
                Some((_, l)) if l.trim().is_empty() || l.trim_start().starts_with('#') => continue,
                Some((_, l)) => break l.trim().to_string(),
                None => return Err(Error::Config("empty config file".into())),
            }
        };
        if header != "aurk-config v1" {
            return Err(Error::Config(format!(
                "config must start with `aurk-config v1`, got {header:?}"
            )));
        }
        for (lineno, raw) in lines {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::parse(&text)
    }

    /// Apply one `key = value` assignment (file line or CLI override).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        match key {
            "dataset" => self.dataset = value.to_string(),
            "resolution" => self.resolution = num(key, value)?,
            "channels" => self.channels = num(key, value)?,
            "backbone" => self.backbone = value.to_string(),
            "roi_size" => self.roi_size = num(key, value)?,
            "fc_hidden" => self.fc_hidden = num(key, value)?,
            "mean_box" => self.mean_box = num(key, value)?,
            "dynamic" => self.dynamic = DynamicMode::from_tag(value)?,
            "lr" => self.lr = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "lr_decay_every" => self.lr_decay_every = num(key, value)?,
            "lr_decay_factor" => self.lr_decay_factor = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "mirror_augment" => self.mirror_augment = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "synth_frames" => self.synth_frames = num(key, value)?,
            "synth_test_frames" => self.synth_test_frames = num(key, value)?,
            "synth_video_len" => self.synth_video_len = num(key, value)?,
            "synth_base_rate" => self.synth_base_rate = num(key, value)?,
            "synth_base_rates" => {
                self.synth_base_rates = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|t| num::<f64>(key, t.trim()))
                        .collect::<Result<_>>()?
                };
            }
            "synth_segment_len" => self.synth_segment_len = num(key, value)?,
            "synth_duration_spread" => self.synth_duration_spread = num(key, value)?,
            "synth_gap_jitter" => self.synth_gap_jitter = num(key, value)?,
            "synth_texture_amp" => self.synth_texture_amp = num(key, value)?,
            "synth_noise" => self.synth_noise = num(key, value)?,
            "time_steps" => self.time_steps = num(key, value)?,
            "frame_skip" => self.frame_skip = num(key, value)?,
            "window_stride" => self.window_stride = num(key, value)?,
            "lstm_channels" => self.lstm_channels = num(key, value)?,
            "lstm_kernel" => self.lstm_kernel = num(key, value)?,
            "freeze_backbone" => self.freeze_backbone = num(key, value)?,
            "grad_clip" => self.grad_clip = num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_published_recipe() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.resolution, 512);
        assert_eq!(cfg.lr, 0.001);
        assert_eq!(cfg.momentum, 0.9);
        assert_eq!(cfg.weight_decay, 0.0005);
        assert_eq!(cfg.epochs, 25);
        assert_eq!(cfg.batch_size, 5);
        assert_eq!(cfg.lr_decay_every, 10);
        assert_eq!(cfg.lr_decay_factor, 0.1);
        assert_eq!(cfg.time_steps, 10);
        assert_eq!(cfg.frame_skip, 4);
        cfg.validate().unwrap();
    }

    #[test]
    fn dump_parse_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.dataset = "bp4d".into();
        cfg.resolution = 128;
        cfg.dynamic = DynamicMode::ConvLstm;
        cfg.seed = 991;
        let text = cfg.dump();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::parse("aurk-config v1\nbogus = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn bad_header_is_rejected() {
        assert!(RunConfig::parse("config v2\n").is_err());
    }
}
