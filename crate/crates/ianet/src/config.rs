//! Flat key=value config files (UTF-8, `#` comments) and the typed
//! configs parsed out of them. Every run writes back its effective config
//! with [`KvConfig::echo`]; parse(echo(cfg)) round-trips exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::attention::{AttentionConfig, Orientation, Placement, Probe, Strategy};
use crate::detector::{ModelSpec, Padding, Task};
use crate::error::{Error, Result};
use crate::synth::{CorruptionSpec, SceneSpec, ShapeKind};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvConfig {
    map: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn new() -> KvConfig {
        KvConfig::default()
    }

    pub fn parse(text: &str) -> Result<KvConfig> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected 'key = value', got '{raw}'",
                    lineno + 1
                )));
            };
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(KvConfig { map })
    }

    pub fn from_file(path: &Path) -> Result<KvConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        KvConfig::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
    }

    fn parse_with<T: std::str::FromStr>(&self, key: &str, raw: &str) -> Result<T> {
        raw.parse()
            .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{raw}'")))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            Some(raw) => self.parse_with(key, raw),
            None => Ok(default),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            Some(raw) => self.parse_with(key, raw),
            None => Ok(default),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            Some(raw) => self.parse_with(key, raw),
            None => Ok(default),
        }
    }

    pub fn usize_list(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.get(key) {
            Some(raw) => raw
                .split(',')
                .map(|s| self.parse_with(key, s.trim()))
                .collect(),
            None => Ok(default.to_vec()),
        }
    }

    /// Sorted `key = value` lines; parse(echo(x)) == x.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

// ---------------------------------------------------------------------------
// scene spec

impl SceneSpec {
    pub fn from_kv(cfg: &KvConfig) -> Result<SceneSpec> {
        let size = cfg.usize_or("image_size", 48)?;
        let classes = match cfg.get("classes") {
            Some(raw) => raw
                .split(',')
                .map(|s| ShapeKind::parse(s.trim()))
                .collect::<Result<Vec<_>>>()?,
            None => vec![ShapeKind::Disk, ShapeKind::Square, ShapeKind::Triangle],
        };
        let spec = SceneSpec {
            height: size,
            width: size,
            classes,
            objects: (cfg.usize_or("objects_min", 1)?, cfg.usize_or("objects_max", 1)?),
            object_size: (
                cfg.f64_or("object_size_min", 0.12)?,
                cfg.f64_or("object_size_max", 0.2)?,
            ),
            intensity: (
                cfg.f64_or("intensity_min", 0.55)?,
                cfg.f64_or("intensity_max", 0.95)?,
            ),
            background: (
                cfg.f64_or("background_min", 0.05)?,
                cfg.f64_or("background_max", 0.4)?,
            ),
            corruption: CorruptionSpec {
                occlusion_prob: cfg.f64_or("occlusion_prob", 0.0)?,
                occluder_size: (
                    cfg.f64_or("occluder_size_min", 0.15)?,
                    cfg.f64_or("occluder_size_max", 0.3)?,
                ),
                noise_sigma: cfg.f64_or("noise_sigma", 0.0)?,
                blur_radius: cfg.usize_or("blur_radius", 0)?,
            },
            seed: cfg.u64_or("seed", 0)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("image_size", self.height);
        let classes: Vec<&str> = self.classes.iter().map(|c| c.as_str()).collect();
        kv.set("classes", classes.join(","));
        kv.set("objects_min", self.objects.0);
        kv.set("objects_max", self.objects.1);
        kv.set("object_size_min", self.object_size.0);
        kv.set("object_size_max", self.object_size.1);
        kv.set("intensity_min", self.intensity.0);
        kv.set("intensity_max", self.intensity.1);
        kv.set("background_min", self.background.0);
        kv.set("background_max", self.background.1);
        kv.set("occlusion_prob", self.corruption.occlusion_prob);
        kv.set("occluder_size_min", self.corruption.occluder_size.0);
        kv.set("occluder_size_max", self.corruption.occluder_size.1);
        kv.set("noise_sigma", self.corruption.noise_sigma);
        kv.set("blur_radius", self.corruption.blur_radius);
        kv.set("seed", self.seed);
        kv
    }
}

// ---------------------------------------------------------------------------
// train config

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub task: Task,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub lr_decay_factor: f64,
    /// Epoch index (0-based) from which the decayed rate applies.
    pub lr_decay_epoch: usize,
    pub train_data: PathBuf,
    pub test_data: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Write a checkpoint every this many epochs (0 = only the final one).
    pub checkpoint_every: usize,
    pub model: ModelSpec,
    /// None = baseline training.
    pub ia: Option<AttentionConfig>,
    pub n_per_gt: usize,
    pub n_background: usize,
    pub jitter: f64,
}

impl TrainConfig {
    pub fn from_kv(cfg: &KvConfig) -> Result<TrainConfig> {
        let task = Task::parse(cfg.get("task").unwrap_or("classify"))?;
        let seed = cfg.u64_or("seed", 0)?;
        let epochs = cfg.usize_or("epochs", 8)?;
        let image_size = cfg.usize_or("model.image_size", 48)?;
        let model = ModelSpec {
            in_channels: 3,
            image_hw: (image_size, image_size),
            conv_channels: cfg.usize_list("model.conv_channels", &[8, 16])?,
            kernel: cfg.usize_or("model.kernel", 3)?,
            padding: Padding::parse(cfg.get("model.padding").unwrap_or("same"))?,
            roi_out: {
                let r = cfg.usize_or("model.roi_out", 4)?;
                (r, r)
            },
            fc_dims: cfg.usize_list("model.fc_dims", &[64])?,
            num_classes: cfg.usize_or("model.num_classes", 3)?,
        };
        model.validate()?;
        let ia = match cfg.get("ia.strategy") {
            None => None,
            Some("baseline") => None,
            Some(raw) => {
                // classifiers have no ROIs: attention always attaches to
                // the whole-image feature map
                let default_placement = match task {
                    Task::Classify => "full_feature",
                    Task::Detect => "roi_feature",
                };
                let placement =
                    Placement::parse(cfg.get("ia.placement").unwrap_or(default_placement))?;
                // restrict reweighting to 20% of feature maps in
                // full-feature mode, no restriction in ROI mode
                let default_prob = match placement {
                    Placement::RoiFeature => 1.0,
                    Placement::FullFeature => 0.2,
                };
                let att = AttentionConfig {
                    strategy: Strategy::parse(raw)?,
                    orientation: Orientation::parse(
                        cfg.get("ia.orientation").unwrap_or("spatial_and_channel"),
                    )?,
                    spatial_drop_ratio: cfg.f64_or("ia.spatial_drop_ratio", 0.33)?,
                    t_s: cfg.f64_or("ia.t_s", 0.5)?,
                    channel_select_ratio: cfg.f64_or("ia.channel_select_ratio", 0.8)?,
                    placement,
                    apply_probability: cfg.f64_or("ia.apply_probability", default_prob)?,
                    probe: Probe::parse(cfg.get("ia.probe").unwrap_or("gt_score"))?,
                    rng_seed: cfg.u64_or("ia.seed", seed)?,
                };
                att.validate()?;
                Some(att)
            }
        };
        let epochs_f = epochs as f64;
        let out = TrainConfig {
            task,
            seed,
            epochs,
            batch_size: cfg.usize_or("batch_size", 16)?,
            lr: cfg.f64_or("lr", 0.01)?,
            momentum: cfg.f64_or("momentum", 0.9)?,
            lr_decay_factor: cfg.f64_or("lr_decay_factor", 0.1)?,
            lr_decay_epoch: cfg.usize_or("lr_decay_epoch", (epochs_f * 2.0 / 3.0).floor() as usize)?,
            train_data: PathBuf::from(cfg.require("train_data")?),
            test_data: cfg.get("test_data").map(PathBuf::from),
            out_dir: PathBuf::from(cfg.require("out_dir")?),
            checkpoint_every: cfg.usize_or("checkpoint_every", 0)?,
            model,
            ia,
            n_per_gt: cfg.usize_or("proposals.n_per_gt", 8)?,
            n_background: cfg.usize_or("proposals.n_background", 8)?,
            jitter: cfg.f64_or("proposals.jitter", 0.15)?,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn from_file(path: &Path) -> Result<TrainConfig> {
        TrainConfig::from_kv(&KvConfig::from_file(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("lr = {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum = {} outside [0, 1]", self.momentum)));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("task", self.task.as_str());
        kv.set("seed", self.seed);
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("lr", self.lr);
        kv.set("momentum", self.momentum);
        kv.set("lr_decay_factor", self.lr_decay_factor);
        kv.set("lr_decay_epoch", self.lr_decay_epoch);
        kv.set("train_data", self.train_data.display());
        if let Some(p) = &self.test_data {
            kv.set("test_data", p.display());
        }
        kv.set("out_dir", self.out_dir.display());
        kv.set("checkpoint_every", self.checkpoint_every);
        kv.set("model.image_size", self.model.image_hw.0);
        let chans: Vec<String> = self.model.conv_channels.iter().map(|c| c.to_string()).collect();
        kv.set("model.conv_channels", chans.join(","));
        kv.set("model.kernel", self.model.kernel);
        kv.set("model.padding", self.model.padding.as_str());
        kv.set("model.roi_out", self.model.roi_out.0);
        let fcs: Vec<String> = self.model.fc_dims.iter().map(|c| c.to_string()).collect();
        kv.set("model.fc_dims", fcs.join(","));
        kv.set("model.num_classes", self.model.num_classes);
        match &self.ia {
            None => kv.set("ia.strategy", "baseline"),
            Some(att) => {
                kv.set("ia.strategy", att.strategy.as_str());
                kv.set("ia.orientation", att.orientation.as_str());
                kv.set("ia.spatial_drop_ratio", att.spatial_drop_ratio);
                kv.set("ia.t_s", att.t_s);
                kv.set("ia.channel_select_ratio", att.channel_select_ratio);
                kv.set("ia.placement", att.placement.as_str());
                kv.set("ia.apply_probability", att.apply_probability);
                kv.set("ia.probe", att.probe.as_str());
                kv.set("ia.seed", att.rng_seed);
            }
        }
        kv.set("proposals.n_per_gt", self.n_per_gt);
        kv.set("proposals.n_background", self.n_background);
        kv.set("proposals.jitter", self.jitter);
        kv
    }

    pub fn echo(&self) -> String {
        self.to_kv().echo()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_handles_comments_and_whitespace() {
        let cfg = KvConfig::parse("# header\n  lr = 0.5 # trailing\n\nname = x\n").unwrap();
        assert_eq!(cfg.get("lr"), Some("0.5"));
        assert_eq!(cfg.get("name"), Some("x"));
    }

    #[test]
    fn parse_rejects_missing_equals() {
        assert!(KvConfig::parse("just words\n").is_err());
    }

    #[test]
    fn train_config_round_trips_through_echo() {
        let mut kv = KvConfig::new();
        kv.set("task", "detect");
        kv.set("train_data", "data/train");
        kv.set("out_dir", "runs/x");
        kv.set("ia.strategy", "soft");
        kv.set("epochs", 5);
        kv.set("seed", 11);
        let cfg = TrainConfig::from_kv(&kv).unwrap();
        let echoed = TrainConfig::from_kv(&KvConfig::parse(&cfg.echo()).unwrap()).unwrap();
        assert_eq!(cfg, echoed);
        assert_eq!(cfg.echo(), echoed.echo());
    }

    #[test]
    fn baseline_round_trips_too() {
        let mut kv = KvConfig::new();
        kv.set("train_data", "d");
        kv.set("out_dir", "o");
        let cfg = TrainConfig::from_kv(&kv).unwrap();
        assert!(cfg.ia.is_none());
        let echoed = TrainConfig::from_kv(&KvConfig::parse(&cfg.echo()).unwrap()).unwrap();
        assert_eq!(cfg, echoed);
    }

    #[test]
    fn full_feature_defaults_apply_probability() {
        let mut kv = KvConfig::new();
        kv.set("train_data", "d");
        kv.set("out_dir", "o");
        kv.set("ia.strategy", "soft");
        kv.set("ia.placement", "full_feature");
        let cfg = TrainConfig::from_kv(&kv).unwrap();
        assert_eq!(cfg.ia.unwrap().apply_probability, 0.2);
        kv.set("ia.placement", "roi_feature");
        let cfg = TrainConfig::from_kv(&kv).unwrap();
        assert_eq!(cfg.ia.unwrap().apply_probability, 1.0);
    }

    #[test]
    fn scene_spec_round_trips() {
        let mut kv = KvConfig::new();
        kv.set("image_size", 32);
        kv.set("objects_max", 2);
        kv.set("noise_sigma", 0.05);
        kv.set("seed", 9);
        let spec = SceneSpec::from_kv(&kv).unwrap();
        let echoed = SceneSpec::from_kv(&KvConfig::parse(&spec.to_kv().echo()).unwrap()).unwrap();
        assert_eq!(spec, echoed);
    }
}
