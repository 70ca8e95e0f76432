//! Flat `key = value` experiment configuration.
//!
//! Every key has a default; unknown keys are errors. The fully resolved
//! configuration is echoed into the output directory so a run can be
//! reproduced from its artifacts alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use topogan_core::gan::{GanMode, GanTrainConfig, GenObjective, Profile};
use topogan_core::phantom::DEFAULT_CLASS_COUNTS;

#[derive(Clone, Debug, PartialEq, Eq, Copy)]
pub enum DataCondition {
    Original,
    Synthesized,
    OriginalPlusSynthesized,
}

impl DataCondition {
    pub fn name(self) -> &'static str {
        match self {
            DataCondition::Original => "original",
            DataCondition::Synthesized => "synthesized",
            DataCondition::OriginalPlusSynthesized => "original+synthesized",
        }
    }

    pub fn uses_synthesis(self) -> bool {
        !matches!(self, DataCondition::Original)
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "original" => DataCondition::Original,
            "synthesized" => DataCondition::Synthesized,
            "original+synthesized" => DataCondition::OriginalPlusSynthesized,
            other => bail!("unknown data condition '{other}'"),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Copy)]
pub enum Balancing {
    None,
    Oversample,
    Undersample,
}

impl Balancing {
    pub fn name(self) -> &'static str {
        match self {
            Balancing::None => "none",
            Balancing::Oversample => "ovs",
            Balancing::Undersample => "uns",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => Balancing::None,
            "ovs" => Balancing::Oversample,
            "uns" => Balancing::Undersample,
            other => bail!("unknown balancing '{other}'"),
        })
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub profile: Profile,
    pub classes: usize,
    pub class_counts: Vec<usize>,
    pub margin: f64,
    pub noise: f64,
    pub data_conditions: Vec<DataCondition>,
    pub balancing: Vec<Balancing>,
    pub cv_folds: usize,
    pub val_fraction: f64,
    pub synthetic_per_class: usize,
    pub quality_pairs: usize,
    pub att_repetitions: usize,
    pub gan_epochs: usize,
    pub gan_lr: f64,
    pub gan_batch_size: usize,
    pub gan_init_std: f64,
    pub gan_mode: GanMode,
    pub gan_objective: GenObjective,
    pub gan_class_head: Option<bool>,
    pub gan_class_head_weight: f64,
    pub clf_epochs: usize,
    pub clf_batch_size: usize,
    pub clf_lr: f64,
    pub clf_widths: Vec<usize>,
    pub out_dir: PathBuf,
    pub formats: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 42,
            profile: Profile::Desk,
            classes: 8,
            class_counts: DEFAULT_CLASS_COUNTS.to_vec(),
            margin: 0.5,
            noise: 0.015,
            data_conditions: vec![DataCondition::Original],
            balancing: vec![Balancing::None],
            cv_folds: 8,
            val_fraction: 0.1,
            synthetic_per_class: 400,
            quality_pairs: 100,
            att_repetitions: 0,
            gan_epochs: 20,
            gan_lr: 1e-4,
            gan_batch_size: 32,
            gan_init_std: 0.02,
            gan_mode: GanMode::PerClass,
            gan_objective: GenObjective::NonSaturating,
            gan_class_head: None,
            gan_class_head_weight: 1.0,
            clf_epochs: 20,
            clf_batch_size: 32,
            clf_lr: 1e-3,
            clf_widths: vec![16],
            out_dir: PathBuf::from("runs/out"),
            formats: vec!["csv".into(), "json".into(), "png".into()],
        }
    }
}

impl ExperimentConfig {
    /// Parse a config file; keys not listed in the schema are errors.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("read {path:?}"))?;
        Self::from_str_contents(&text)
    }

    pub fn from_str_contents(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut explicit_counts = false;
        let mut kvs: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("line {}: expected 'key = value', got '{raw}'", lineno + 1);
            };
            let key = k.trim().to_string();
            if kvs.insert(key.clone(), v.trim().to_string()).is_some() {
                bail!("line {}: duplicate key '{key}'", lineno + 1);
            }
        }
        for (key, value) in &kvs {
            match key.as_str() {
                "master_seed" => cfg.master_seed = parse_num(key, value)?,
                "profile" => cfg.profile = parse_profile(value)?,
                "classes" => cfg.classes = parse_num(key, value)?,
                "class_counts" => {
                    cfg.class_counts = parse_list(key, value)?;
                    explicit_counts = true;
                }
                "margin" => cfg.margin = parse_num(key, value)?,
                "noise" => cfg.noise = parse_num(key, value)?,
                "data_conditions" => {
                    cfg.data_conditions = value
                        .split(',')
                        .map(|s| DataCondition::parse(s.trim()))
                        .collect::<Result<_>>()?;
                }
                "balancing" => {
                    cfg.balancing = value
                        .split(',')
                        .map(|s| Balancing::parse(s.trim()))
                        .collect::<Result<_>>()?;
                }
                "cv_folds" => cfg.cv_folds = parse_num(key, value)?,
                "val_fraction" => cfg.val_fraction = parse_num(key, value)?,
                "synthetic_per_class" => cfg.synthetic_per_class = parse_num(key, value)?,
                "quality_pairs" => cfg.quality_pairs = parse_num(key, value)?,
                "att_repetitions" => cfg.att_repetitions = parse_num(key, value)?,
                "gan.epochs" => cfg.gan_epochs = parse_num(key, value)?,
                "gan.lr" => cfg.gan_lr = parse_num(key, value)?,
                "gan.batch_size" => cfg.gan_batch_size = parse_num(key, value)?,
                "gan.init_std" => cfg.gan_init_std = parse_num(key, value)?,
                "gan.mode" => {
                    cfg.gan_mode = match value.as_str() {
                        "per_class" => GanMode::PerClass,
                        "conditional" => GanMode::Conditional,
                        other => bail!("unknown gan.mode '{other}'"),
                    }
                }
                "gan.objective" => {
                    cfg.gan_objective = match value.as_str() {
                        "nonsaturating" => GenObjective::NonSaturating,
                        "saturating" => GenObjective::Saturating,
                        other => bail!("unknown gan.objective '{other}'"),
                    }
                }
                "gan.class_head" => {
                    cfg.gan_class_head = match value.as_str() {
                        "auto" => None,
                        "on" => Some(true),
                        "off" => Some(false),
                        other => bail!("unknown gan.class_head '{other}'"),
                    }
                }
                "gan.class_head_weight" => cfg.gan_class_head_weight = parse_num(key, value)?,
                "clf.epochs" => cfg.clf_epochs = parse_num(key, value)?,
                "clf.batch_size" => cfg.clf_batch_size = parse_num(key, value)?,
                "clf.lr" => cfg.clf_lr = parse_num(key, value)?,
                "clf.widths" => cfg.clf_widths = parse_list(key, value)?,
                "out_dir" => cfg.out_dir = PathBuf::from(value),
                "formats" => {
                    cfg.formats = value.split(',').map(|s| s.trim().to_string()).collect();
                }
                other => bail!("unknown configuration key '{other}'"),
            }
        }
        if !explicit_counts {
            cfg.class_counts = default_counts(cfg.classes)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes != 2 && self.classes != 8 {
            bail!("classes must be 2 or 8, got {}", self.classes);
        }
        if self.class_counts.len() != self.classes {
            bail!(
                "class_counts has {} entries for {} classes",
                self.class_counts.len(),
                self.classes
            );
        }
        if self.cv_folds == 0 {
            bail!("cv_folds must be >= 1");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            bail!("val_fraction must lie in [0, 1)");
        }
        if self.data_conditions.is_empty() || self.balancing.is_empty() {
            bail!("data_conditions and balancing must be nonempty");
        }
        if self.clf_widths.is_empty() || self.clf_widths.contains(&0) {
            bail!("clf.widths must be nonempty positive integers");
        }
        for f in &self.formats {
            if !matches!(f.as_str(), "csv" | "json" | "png") {
                bail!("unknown format '{f}' (expected csv, json, png)");
            }
        }
        if self.gan_lr <= 0.0 || self.clf_lr <= 0.0 {
            bail!("learning rates must be > 0");
        }
        if self.gan_epochs == 0 || self.clf_epochs == 0 {
            bail!("epochs must be >= 1");
        }
        Ok(())
    }

    pub fn gan_train_config(&self, seed: u64) -> GanTrainConfig {
        GanTrainConfig {
            epochs: self.gan_epochs,
            lr: self.gan_lr,
            init_std: self.gan_init_std,
            batch_size: self.gan_batch_size,
            mode: self.gan_mode,
            objective: self.gan_objective,
            profile: self.profile,
            seed,
            class_head: self.gan_class_head,
            class_head_weight: self.gan_class_head_weight,
        }
    }

    /// Canonical `key = value` rendering of every resolved field, echoed
    /// into the output directory.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "master_seed = {}", self.master_seed);
        let _ = writeln!(s, "profile = {}", self.profile.name());
        let _ = writeln!(s, "classes = {}", self.classes);
        let _ = writeln!(s, "class_counts = {}", join_nums(&self.class_counts));
        let _ = writeln!(s, "margin = {}", self.margin);
        let _ = writeln!(s, "noise = {}", self.noise);
        let _ = writeln!(
            s,
            "data_conditions = {}",
            self.data_conditions
                .iter()
                .map(|c| c.name())
                .collect::<Vec<_>>()
                .join(",")
        );
        let _ = writeln!(
            s,
            "balancing = {}",
            self.balancing
                .iter()
                .map(|b| b.name())
                .collect::<Vec<_>>()
                .join(",")
        );
        let _ = writeln!(s, "cv_folds = {}", self.cv_folds);
        let _ = writeln!(s, "val_fraction = {}", self.val_fraction);
        let _ = writeln!(s, "synthetic_per_class = {}", self.synthetic_per_class);
        let _ = writeln!(s, "quality_pairs = {}", self.quality_pairs);
        let _ = writeln!(s, "att_repetitions = {}", self.att_repetitions);
        let _ = writeln!(s, "gan.epochs = {}", self.gan_epochs);
        let _ = writeln!(s, "gan.lr = {}", self.gan_lr);
        let _ = writeln!(s, "gan.batch_size = {}", self.gan_batch_size);
        let _ = writeln!(s, "gan.init_std = {}", self.gan_init_std);
        let _ = writeln!(
            s,
            "gan.mode = {}",
            match self.gan_mode {
                GanMode::PerClass => "per_class",
                GanMode::Conditional => "conditional",
            }
        );
        let _ = writeln!(
            s,
            "gan.objective = {}",
            match self.gan_objective {
                GenObjective::NonSaturating => "nonsaturating",
                GenObjective::Saturating => "saturating",
            }
        );
        let _ = writeln!(
            s,
            "gan.class_head = {}",
            match self.gan_class_head {
                None => "auto",
                Some(true) => "on",
                Some(false) => "off",
            }
        );
        let _ = writeln!(s, "gan.class_head_weight = {}", self.gan_class_head_weight);
        let _ = writeln!(s, "clf.epochs = {}", self.clf_epochs);
        let _ = writeln!(s, "clf.batch_size = {}", self.clf_batch_size);
        let _ = writeln!(s, "clf.lr = {}", self.clf_lr);
        let _ = writeln!(s, "clf.widths = {}", join_nums(&self.clf_widths));
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(s, "formats = {}", self.formats.join(","));
        s
    }
}

pub fn parse_profile(s: &str) -> Result<Profile> {
    Ok(match s {
        "desk" => Profile::Desk,
        "full" => Profile::Full,
        other => bail!("unknown profile '{other}' (expected desk or full)"),
    })
}

fn default_counts(classes: usize) -> Result<Vec<usize>> {
    Ok(match classes {
        8 => DEFAULT_CLASS_COUNTS.to_vec(),
        2 => vec![128, 128],
        other => bail!("classes must be 2 or 8, got {other}"),
    })
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| anyhow::anyhow!("bad value for {key}: '{v}' ({e})"))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|s| parse_num::<usize>(key, s.trim()))
        .collect()
}

fn join_nums(xs: &[usize]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}
