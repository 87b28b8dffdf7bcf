//! Run configuration files (TOML). Every key is optional; missing keys take
//! the defaults below. Relative paths resolve against the config file's
//! directory.
//!
//! ```toml
//! [scene]
//! preset = "desk"            # desk (default) | slab, or file = "scene.toml"
//!
//! [model]
//! first_width = 128
//! first_layers = 8
//! second_width = 64
//! second_layers = 4
//! storage = "lowrank"        # lowrank | direct | encdec
//! score_bias = 2.0
//!
//! [train]
//! warmup_steps = 4000
//! consistency_steps = 2000
//! batch_rays = 128
//! learning_rate = 5e-4
//! final_lr_fraction = 0.1
//! lambda = 1e-8
//! latent_variance = 1.0
//! seed = 0
//! checkpoint_every = 0       # 0 writes only the final checkpoint
//!
//! [reuse]
//! tau = 0.5
//! tau_sigma = 0.9
//! tau_grad = 0.0
//! skip_rule = "score+density"   # or "density-only"
//!
//! [cache]
//! bins = 100
//! background_rgb = false
//!
//! [output]
//! dir = "runs/desk"
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fieldcache_core::fields::{FieldConfig, Storage};
use fieldcache_core::presets::{self, Preset};
use fieldcache_core::render::SamplingConfig;
use fieldcache_core::reuse::{ReuseConfig, SkipRule};
use fieldcache_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::scene_file::SceneFile;

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub reuse: ReuseSection,
    pub cache: CacheSection,
    pub output: OutputSection,
    /// Directory the config was loaded from.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub preset: Option<String>,
    pub file: Option<PathBuf>,
    pub box_samples: usize,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self {
            preset: None,
            file: None,
            box_samples: 7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StorageName {
    #[serde(rename = "lowrank")]
    LowRank,
    #[serde(rename = "direct")]
    Direct,
    #[serde(rename = "encdec")]
    EncDec,
}

impl StorageName {
    pub fn storage(self) -> Storage {
        match self {
            StorageName::LowRank => Storage::LowRank,
            StorageName::Direct => Storage::Feature,
            StorageName::EncDec => Storage::EncoderDecoder,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "lowrank" => StorageName::LowRank,
            "direct" => StorageName::Direct,
            "encdec" => StorageName::EncDec,
            _ => bail!("unknown storage {s:?} (expected lowrank, direct or encdec)"),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            StorageName::LowRank => "lowrank",
            StorageName::Direct => "direct",
            StorageName::EncDec => "encdec",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub first_width: usize,
    pub first_layers: usize,
    pub second_width: usize,
    pub second_layers: usize,
    pub position_freqs: usize,
    pub direction_freqs: usize,
    pub location_freqs: usize,
    pub latent_len: usize,
    pub feature_len: usize,
    pub rank: usize,
    pub storage: StorageName,
    pub score_bias: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let f = FieldConfig::default();
        Self {
            first_width: f.first_width,
            first_layers: f.first_layers,
            second_width: f.second_width,
            second_layers: f.second_layers,
            position_freqs: f.position_freqs,
            direction_freqs: f.direction_freqs,
            location_freqs: f.location_freqs,
            latent_len: f.latent_len,
            feature_len: f.feature_len,
            rank: f.rank,
            storage: StorageName::LowRank,
            score_bias: f.score_bias,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub warmup_steps: usize,
    pub consistency_steps: usize,
    pub batch_rays: usize,
    pub learning_rate: f64,
    pub final_lr_fraction: f64,
    pub lambda: f64,
    pub latent_variance: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            warmup_steps: t.warmup_steps,
            consistency_steps: t.consistency_steps,
            batch_rays: t.batch_rays,
            learning_rate: t.learning_rate,
            final_lr_fraction: t.final_lr_fraction,
            lambda: t.lambda,
            latent_variance: t.latent_variance,
            seed: t.seed,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkipRuleName {
    #[serde(rename = "score+density")]
    ScoreAndDensity,
    #[serde(rename = "density-only")]
    DensityOnly,
}

impl SkipRuleName {
    pub fn rule(self) -> SkipRule {
        match self {
            SkipRuleName::ScoreAndDensity => SkipRule::ScoreAndDensity,
            SkipRuleName::DensityOnly => SkipRule::DensityOnly,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "score+density" => SkipRuleName::ScoreAndDensity,
            "density-only" => SkipRuleName::DensityOnly,
            _ => bail!("unknown skip rule {s:?} (expected score+density or density-only)"),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            SkipRuleName::ScoreAndDensity => "score+density",
            SkipRuleName::DensityOnly => "density-only",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReuseSection {
    pub tau: f64,
    pub tau_sigma: f64,
    pub tau_grad: f64,
    pub skip_rule: SkipRuleName,
}

impl Default for ReuseSection {
    fn default() -> Self {
        let r = ReuseConfig::default();
        Self {
            tau: r.tau,
            tau_sigma: r.tau_sigma,
            tau_grad: r.tau_grad,
            skip_rule: SkipRuleName::ScoreAndDensity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheSection {
    pub bins: usize,
    pub background_rgb: bool,
}

impl Default for CacheSection {
    fn default() -> Self {
        Self {
            bins: fieldcache_core::cache::DEFAULT_BINS,
            background_rgb: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs/default") }
    }
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut c: RunConfig = toml::from_str(text)?;
        c.base_dir = base_dir.to_path_buf();
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, &base).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.scene.preset, &self.scene.file) {
            (Some(_), Some(_)) => bail!("scene: give either preset or file, not both"),
            (Some(p), None) if preset(p).is_none() => bail!("scene: unknown preset {p:?} (expected desk or slab)"),
            (None, Some(f)) => {
                let f = self.resolve(f);
                if !f.exists() {
                    bail!("scene file {} does not exist", f.display());
                }
            }
            _ => {}
        }
        if self.scene.box_samples == 0 {
            bail!("scene: box_samples must be at least 1");
        }
        self.fields().validate()?;
        self.train_config().validate()?;
        self.reuse_config().validate().map_err(anyhow::Error::msg)?;
        Ok(())
    }

    pub fn preset(&self) -> Result<Preset> {
        match (&self.scene.preset, &self.scene.file) {
            (Some(p), _) => preset(p).with_context(|| format!("unknown preset {p:?}"))?,
            (None, Some(f)) => SceneFile::load(&self.resolve(f))?.build(),
            (None, None) => Ok(presets::desk()?),
        }
    }

    pub fn fields(&self) -> FieldConfig {
        let m = &self.model;
        FieldConfig {
            first_width: m.first_width,
            first_layers: m.first_layers,
            second_width: m.second_width,
            second_layers: m.second_layers,
            position_freqs: m.position_freqs,
            direction_freqs: m.direction_freqs,
            location_freqs: m.location_freqs,
            latent_len: m.latent_len,
            feature_len: m.feature_len,
            rank: m.rank,
            storage: m.storage.storage(),
            score_bias: m.score_bias,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lambda: t.lambda,
            latent_variance: t.latent_variance,
            learning_rate: t.learning_rate,
            final_lr_fraction: t.final_lr_fraction,
            batch_rays: t.batch_rays,
            warmup_steps: t.warmup_steps,
            consistency_steps: t.consistency_steps,
            seed: t.seed,
            bins: self.cache.bins,
            background_rgb: self.cache.background_rgb,
            ..TrainConfig::default()
        }
    }

    pub fn reuse_config(&self) -> ReuseConfig {
        ReuseConfig {
            tau: self.reuse.tau,
            tau_sigma: self.reuse.tau_sigma,
            tau_grad: self.reuse.tau_grad,
            skip_rule: self.reuse.skip_rule.rule(),
            allow_reuse: true,
        }
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            box_samples: self.scene.box_samples,
            ..SamplingConfig::default()
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output.dir)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.output_dir().join("model.ckpt")
    }

    pub fn snapshot_path(&self) -> PathBuf {
        self.output_dir().join("cache.snap")
    }
}

/// Built-in scene by name.
pub fn preset(name: &str) -> Option<Result<Preset>> {
    match name {
        "desk" => Some(presets::desk().map_err(Into::into)),
        "slab" => Some(presets::translucent_slab().map_err(Into::into)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_takes_reference_defaults() {
        let c = RunConfig::parse("", Path::new(".")).unwrap();
        assert_eq!(c.fields(), FieldConfig::default());
        assert_eq!(c.reuse_config(), ReuseConfig::default());
        let t = c.train_config();
        assert_eq!((t.lambda, t.warmup_steps, t.consistency_steps, t.bins), (1e-8, 4000, 2000, 100));
    }

    #[test]
    fn doc_example_parses() {
        let doc = include_str!("config.rs");
        let example: String = doc
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start_matches(' '))
            .collect::<Vec<_>>()
            .join("\n");
        let c = RunConfig::parse(&example, Path::new("/tmp")).unwrap();
        assert_eq!(c.output_dir(), Path::new("/tmp/runs/desk"));
        assert_eq!(c.reuse.skip_rule, SkipRuleName::ScoreAndDensity);
    }

    #[test]
    fn rejects_invalid_values() {
        let base = Path::new(".");
        assert!(RunConfig::parse("[reuse]\ntau = 1.5", base).is_err());
        assert!(RunConfig::parse("[train]\nlambda = -1.0", base).is_err());
        assert!(RunConfig::parse("[model]\nstorage = \"lowrank\"\nrank = 3", base).is_err());
        assert!(RunConfig::parse("[scene]\npreset = \"kitchen\"", base).is_err());
        let e = RunConfig::parse("[scene]\npreset = \"\"\nfile = \"x.toml\"", base).unwrap_err();
        assert!(e.to_string().contains("either"));
        let e = RunConfig::parse("[scene]\nfile = \"/nonexistent/scene.toml\"", base).unwrap_err();
        assert!(e.to_string().contains("/nonexistent/scene.toml"));
        assert!(RunConfig::parse("[train]\nbogus = 1", base).is_err());
    }

    #[test]
    fn scene_file_is_loaded_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        let slab = presets::translucent_slab().unwrap();
        let scene = crate::scene_file::SceneFile::from_preset(&slab);
        std::fs::write(dir.path().join("s.toml"), scene.to_toml().unwrap()).unwrap();
        let c = RunConfig::parse("[scene]\nfile = \"s.toml\"", dir.path()).unwrap();
        assert_eq!(c.preset().unwrap().spec, slab.spec);
        assert_eq!(RunConfig::default().preset().unwrap().spec, presets::desk().unwrap().spec);
    }
}
