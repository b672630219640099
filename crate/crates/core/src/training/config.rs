//! Training configuration: a TOML file plus dotted `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::ResizeRule;
use crate::error::{Error, Result};
use crate::networks::{NetworkConfig, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs_total: usize,
    pub epochs_lr_fixed: usize,
    pub epochs_no_perceptual_tail: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub seed: u64,
    /// `withSeg`, `noSeg` or `synth`; `upComp` is evaluated from `withSeg`
    /// weights and is never trained on its own.
    pub variant: Variant,
    /// Stop each epoch after this many steps.
    pub max_steps_per_epoch: Option<usize>,
    /// VGG-19 weights for the perceptual term; without them the term is 0.
    pub vgg_weights: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub network: NetworkSection,
    pub dataset: DatasetSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub alpha: usize,
    pub base_filters: usize,
    pub res_blocks: usize,
    pub disc_filters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub root: PathBuf,
    pub resize: ResizeRule,
    pub num_labels: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs_total: 150,
            epochs_lr_fixed: 100,
            epochs_no_perceptual_tail: 50,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 2,
            lambda: 10.0,
            seed: 0,
            variant: Variant::WithSeg,
            max_steps_per_epoch: None,
            vgg_weights: None,
            output_dir: PathBuf::from("runs/dsslic"),
            network: NetworkSection::default(),
            dataset: DatasetSection::default(),
        }
    }
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            alpha: 8,
            base_filters: 64,
            res_blocks: 9,
            disc_filters: 64,
        }
    }
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            root: PathBuf::from("data"),
            resize: ResizeRule::Cityscapes,
            num_labels: 30,
        }
    }
}

impl TrainingConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `a.b.c=value` overrides. Values are read as TOML literals,
    /// falling back to a bare string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut table: toml::Table =
            toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let value = parse_value(raw.trim());
            let path: Vec<&str> = key.trim().split('.').collect();
            set_path(&mut table, &path, value)
                .map_err(|m| Error::Config(format!("override {o:?}: {m}")))?;
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs_total == 0 {
            return bad("epochs_total must be positive".into());
        }
        if self.epochs_lr_fixed > self.epochs_total {
            return bad(format!(
                "epochs_lr_fixed {} exceeds epochs_total {}",
                self.epochs_lr_fixed, self.epochs_total
            ));
        }
        if self.epochs_no_perceptual_tail > self.epochs_total {
            return bad(format!(
                "epochs_no_perceptual_tail {} exceeds epochs_total {}",
                self.epochs_no_perceptual_tail, self.epochs_total
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate {} must be finite and ≥ 0", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} not in [0, 1)"));
            }
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return bad(format!("lambda {} must be finite and positive", self.lambda));
        }
        if self.variant == Variant::UpComp {
            return bad("upComp has no weights of its own; train withSeg".into());
        }
        if self.max_steps_per_epoch == Some(0) {
            return bad("max_steps_per_epoch must be positive".into());
        }
        self.network_config().validate()
    }

    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            num_labels: self.dataset.num_labels,
            alpha: self.network.alpha,
            base_filters: self.network.base_filters,
            res_blocks: self.network.res_blocks,
            disc_filters: self.network.disc_filters,
            use_segmentation: self.variant.uses_segmentation(),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, path: &[&str], value: toml::Value) -> std::result::Result<(), String> {
    match path {
        [] => Err("empty key".into()),
        [last] => {
            table.insert(last.to_string(), value);
            Ok(())
        }
        [head, rest @ ..] => {
            let entry = table
                .entry(head.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            match entry {
                toml::Value::Table(t) => set_path(t, rest, value),
                _ => Err(format!("`{head}` is not a table")),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_roundtrip() {
        let c = TrainingConfig::default();
        c.validate().unwrap();
        assert_eq!(TrainingConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = TrainingConfig::from_toml(
            "epochs_total = 10\nepochs_lr_fixed = 5\nepochs_no_perceptual_tail = 2\n[dataset]\nresize = \"ade20k\"\nnum_labels = 150\n",
        )
        .unwrap();
        assert_eq!(c.epochs_total, 10);
        assert_eq!(c.dataset.resize, ResizeRule::Ade20k);
        assert_eq!(c.learning_rate, 2e-4);
    }

    #[test]
    fn overrides_set_nested_keys() {
        let c = TrainingConfig::default()
            .with_overrides(&[
                "learning_rate=1e-3",
                "network.alpha=4",
                "variant=noSeg",
                "output_dir=out/x",
                "dataset.resize={ custom = { height = 32, width = 64 } }",
            ])
            .unwrap();
        assert_eq!(c.learning_rate, 1e-3);
        assert_eq!(c.network.alpha, 4);
        assert_eq!(c.variant, Variant::NoSeg);
        assert_eq!(c.output_dir, PathBuf::from("out/x"));
        assert_eq!(c.dataset.resize, ResizeRule::Custom { height: 32, width: 64 });
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let d = TrainingConfig::default();
        for o in [
            "batch_size=0",
            "epochs_lr_fixed=200",
            "beta1=1.0",
            "variant=upComp",
            "network.alpha=6",
            "dataset.num_labels=0",
            "no_such_key=1",
            "learning_rate",
        ] {
            assert!(matches!(d.with_overrides(&[o]), Err(Error::Config(_))), "{o}");
        }
        assert!(TrainingConfig::from_toml("epochs_total = \"many\"").is_err());
    }
}
