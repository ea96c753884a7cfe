//! Run configuration: one flat key-value text format covering every tunable
//! in the pipeline. Keys use dotted namespaces (`world.d`, `plu.epsilon`);
//! unknown keys are hard errors so sweep scripts can't silently typo a
//! hyperparameter. Later assignments override earlier ones.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{ApInterpolation, MetricConfig};
use crate::protocol::{ProtocolConfig, TaskRunConfig};
use crate::scalar::{sc, Scalar};
use crate::uda::{PluConfig, TargetNorm};
use crate::world::{SceneParams, WorldConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {detail}")]
    BadValue { key: String, detail: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Predictor architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden1: usize,
    pub hidden2: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden1: 64,
            hidden2: 32,
        }
    }
}

/// Run-level knobs that don't belong to a single subsystem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub seed: u64,
    /// Dataset file name; relative paths resolve against the output
    /// directory.
    pub dataset: String,
    pub iou_threshold: f64,
    pub fg_threshold: f64,
    pub finetune_fraction: f64,
    pub finetune_samples: usize,
    pub enable_finetune: bool,
    /// Top-k budget; `None` means "derive from the dataset header"
    /// (per-scene mean count of true unknown objects).
    pub k: Option<usize>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 42,
            dataset: "dataset.jsonl".into(),
            iou_threshold: 0.5,
            fg_threshold: 0.5,
            finetune_fraction: 0.1,
            finetune_samples: 1024,
            enable_finetune: true,
            k: None,
        }
    }
}

/// Ablation sweep settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblateSection {
    /// Number of seeds per sweep cell.
    pub seeds: u64,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection { seeds: 5 }
    }
}

/// Every tunable in the pipeline, grouped by subsystem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig<S: Scalar> {
    pub world: WorldConfig<S>,
    pub scene: SceneParams<S>,
    pub protocol: ProtocolConfig,
    pub plu: PluConfig<S>,
    pub model: ModelConfig,
    pub metrics: MetricConfig,
    pub run: RunSection,
    pub ablate: AblateSection,
}

impl<S: Scalar> Default for RunConfig<S> {
    fn default() -> Self {
        RunConfig {
            world: WorldConfig {
                n_known: 20,
                n_unknown: 5,
                d: 32,
                shift_min: sc(1.0),
                shift_max: sc(2.0),
                spread: sc(0.25),
            },
            scene: SceneParams {
                objects_min: 2,
                objects_max: 6,
                copies_min: 2,
                copies_max: 4,
                n_bg: 30,
                jitter: sc(0.15),
                sigma_bg: sc(0.15),
                noise: sc(0.05),
            },
            protocol: ProtocolConfig::default(),
            plu: PluConfig {
                epsilon: sc(0.9),
                lambda: sc(1.0),
                bg_per_fg: sc(1.0),
                batch_size: 8,
                train_samples: 4096,
                lr: sc(0.01),
                momentum: sc(0.9),
                head_lr: sc(0.3),
                sigma_weak: sc(0.05),
                sigma_strong: sc(0.2),
                p_drop: sc(0.3),
                target_norm: TargetNorm::Unmasked,
            },
            model: ModelConfig::default(),
            metrics: MetricConfig::default(),
            run: RunSection::default(),
            ablate: AblateSection::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| ConfigError::BadValue {
        key: key.to_string(),
        detail: format!("{e}"),
    })
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(ConfigError::BadValue {
            key: key.to_string(),
            detail: format!("expected true/false, got {v:?}"),
        }),
    }
}

fn parse_scalar<S: Scalar>(key: &str, v: &str) -> Result<S, ConfigError> {
    parse_num::<f64>(key, v).map(sc)
}

impl<S: Scalar> RunConfig<S> {
    /// Applies one `key = value` assignment.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value;
        match key {
            "world.n_known" => self.world.n_known = parse_num(key, v)?,
            "world.n_unknown" => self.world.n_unknown = parse_num(key, v)?,
            "world.d" => self.world.d = parse_num(key, v)?,
            "world.shift_min" => self.world.shift_min = parse_scalar(key, v)?,
            "world.shift_max" => self.world.shift_max = parse_scalar(key, v)?,
            "world.spread" => self.world.spread = parse_scalar(key, v)?,
            "scene.objects_min" => self.scene.objects_min = parse_num(key, v)?,
            "scene.objects_max" => self.scene.objects_max = parse_num(key, v)?,
            "scene.copies_min" => self.scene.copies_min = parse_num(key, v)?,
            "scene.copies_max" => self.scene.copies_max = parse_num(key, v)?,
            "scene.n_bg" => self.scene.n_bg = parse_num(key, v)?,
            "scene.jitter" => self.scene.jitter = parse_scalar(key, v)?,
            "scene.sigma_bg" => self.scene.sigma_bg = parse_scalar(key, v)?,
            "scene.noise" => self.scene.noise = parse_scalar(key, v)?,
            "protocol.n_tasks" => self.protocol.n_tasks = parse_num(key, v)?,
            "protocol.classes_per_task" => self.protocol.classes_per_task = parse_num(key, v)?,
            "protocol.train_scenes_per_task" => {
                self.protocol.train_scenes_per_task = parse_num(key, v)?
            }
            "protocol.test_scenes_per_task" => {
                self.protocol.test_scenes_per_task = parse_num(key, v)?
            }
            "protocol.train_mix_current" => self.protocol.train_mix.current = parse_num(key, v)?,
            "protocol.train_mix_previous" => self.protocol.train_mix.previous = parse_num(key, v)?,
            "protocol.train_mix_unknown" => self.protocol.train_mix.unknown = parse_num(key, v)?,
            "protocol.test_mix_known" => self.protocol.test_mix.known = parse_num(key, v)?,
            "protocol.test_mix_unknown" => self.protocol.test_mix.unknown = parse_num(key, v)?,
            "plu.epsilon" => self.plu.epsilon = parse_scalar(key, v)?,
            "plu.lambda" => self.plu.lambda = parse_scalar(key, v)?,
            "plu.bg_per_fg" => self.plu.bg_per_fg = parse_scalar(key, v)?,
            "plu.batch_size" => self.plu.batch_size = parse_num(key, v)?,
            "plu.train_samples" => self.plu.train_samples = parse_num(key, v)?,
            "plu.lr" => self.plu.lr = parse_scalar(key, v)?,
            "plu.momentum" => self.plu.momentum = parse_scalar(key, v)?,
            "plu.head_lr" => self.plu.head_lr = parse_scalar(key, v)?,
            "plu.sigma_weak" => self.plu.sigma_weak = parse_scalar(key, v)?,
            "plu.sigma_strong" => self.plu.sigma_strong = parse_scalar(key, v)?,
            "plu.p_drop" => self.plu.p_drop = parse_scalar(key, v)?,
            "plu.target_norm" => {
                self.plu.target_norm = match v {
                    "unmasked" => TargetNorm::Unmasked,
                    "all" => TargetNorm::All,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.to_string(),
                            detail: format!("expected unmasked|all, got {v:?}"),
                        })
                    }
                }
            }
            "model.hidden1" => self.model.hidden1 = parse_num(key, v)?,
            "model.hidden2" => self.model.hidden2 = parse_num(key, v)?,
            "metrics.iou_threshold" => self.metrics.iou_threshold = parse_num(key, v)?,
            "metrics.wi_recall_point" => self.metrics.wi_recall_point = parse_num(key, v)?,
            "metrics.ap_interpolation" => {
                self.metrics.ap_interpolation = match v {
                    "all_point" => ApInterpolation::AllPoint,
                    "eleven_point" => ApInterpolation::ElevenPoint,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.to_string(),
                            detail: format!("expected all_point|eleven_point, got {v:?}"),
                        })
                    }
                }
            }
            "run.seed" => self.run.seed = parse_num(key, v)?,
            "run.dataset" => self.run.dataset = v.to_string(),
            "run.iou_threshold" => self.run.iou_threshold = parse_num(key, v)?,
            "run.fg_threshold" => self.run.fg_threshold = parse_num(key, v)?,
            "run.finetune_fraction" => self.run.finetune_fraction = parse_num(key, v)?,
            "run.finetune_samples" => self.run.finetune_samples = parse_num(key, v)?,
            "run.enable_finetune" => self.run.enable_finetune = parse_bool(key, v)?,
            "run.k" => {
                self.run.k = if v == "auto" {
                    None
                } else {
                    Some(parse_num(key, v)?)
                }
            }
            "ablate.seeds" => self.ablate.seeds = parse_num(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Parses the flat text format: `key = value` per line, `#` comments.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line: i + 1,
                    text: raw.to_string(),
                });
            };
            cfg.apply(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Renders the full configuration in the same flat format, every key
    /// present, in fixed order — the canonical config snapshot for
    /// manifests.
    pub fn to_text(&self) -> String {
        let tn = match self.plu.target_norm {
            TargetNorm::Unmasked => "unmasked",
            TargetNorm::All => "all",
        };
        let interp = match self.metrics.ap_interpolation {
            ApInterpolation::AllPoint => "all_point",
            ApInterpolation::ElevenPoint => "eleven_point",
        };
        let k = match self.run.k {
            None => "auto".to_string(),
            Some(k) => k.to_string(),
        };
        format!(
            "world.n_known = {}\nworld.n_unknown = {}\nworld.d = {}\nworld.shift_min = {}\n\
             world.shift_max = {}\nworld.spread = {}\nscene.objects_min = {}\n\
             scene.objects_max = {}\nscene.copies_min = {}\nscene.copies_max = {}\n\
             scene.n_bg = {}\nscene.jitter = {}\nscene.sigma_bg = {}\nscene.noise = {}\n\
             protocol.n_tasks = {}\nprotocol.classes_per_task = {}\n\
             protocol.train_scenes_per_task = {}\nprotocol.test_scenes_per_task = {}\n\
             protocol.train_mix_current = {}\nprotocol.train_mix_previous = {}\n\
             protocol.train_mix_unknown = {}\nprotocol.test_mix_known = {}\n\
             protocol.test_mix_unknown = {}\nplu.epsilon = {}\nplu.lambda = {}\n\
             plu.bg_per_fg = {}\nplu.batch_size = {}\nplu.train_samples = {}\nplu.lr = {}\n\
             plu.momentum = {}\nplu.head_lr = {}\nplu.sigma_weak = {}\nplu.sigma_strong = {}\n\
             plu.p_drop = {}\n\
             plu.target_norm = {tn}\nmodel.hidden1 = {}\nmodel.hidden2 = {}\n\
             metrics.iou_threshold = {}\nmetrics.wi_recall_point = {}\n\
             metrics.ap_interpolation = {interp}\nrun.seed = {}\nrun.dataset = {}\n\
             run.iou_threshold = {}\nrun.fg_threshold = {}\nrun.finetune_fraction = {}\n\
             run.finetune_samples = {}\nrun.enable_finetune = {}\nrun.k = {k}\n\
             ablate.seeds = {}\n",
            self.world.n_known,
            self.world.n_unknown,
            self.world.d,
            self.world.shift_min,
            self.world.shift_max,
            self.world.spread,
            self.scene.objects_min,
            self.scene.objects_max,
            self.scene.copies_min,
            self.scene.copies_max,
            self.scene.n_bg,
            self.scene.jitter,
            self.scene.sigma_bg,
            self.scene.noise,
            self.protocol.n_tasks,
            self.protocol.classes_per_task,
            self.protocol.train_scenes_per_task,
            self.protocol.test_scenes_per_task,
            self.protocol.train_mix.current,
            self.protocol.train_mix.previous,
            self.protocol.train_mix.unknown,
            self.protocol.test_mix.known,
            self.protocol.test_mix.unknown,
            self.plu.epsilon,
            self.plu.lambda,
            self.plu.bg_per_fg,
            self.plu.batch_size,
            self.plu.train_samples,
            self.plu.lr,
            self.plu.momentum,
            self.plu.head_lr,
            self.plu.sigma_weak,
            self.plu.sigma_strong,
            self.plu.p_drop,
            self.model.hidden1,
            self.model.hidden2,
            self.metrics.iou_threshold,
            self.metrics.wi_recall_point,
            self.run.seed,
            self.run.dataset,
            self.run.iou_threshold,
            self.run.fg_threshold,
            self.run.finetune_fraction,
            self.run.finetune_samples,
            self.run.enable_finetune,
            self.ablate.seeds,
        )
    }

    /// Range checks across all sections.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.plu
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.protocol
            .validate(self.world.n_known)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let w = &self.world;
        if w.n_known == 0 || w.d < 2 {
            return Err(ConfigError::Invalid(
                "world needs n_known >= 1 and d >= 2".into(),
            ));
        }
        if w.shift_min > w.shift_max || w.shift_min < S::zero() {
            return Err(ConfigError::Invalid("bad world shift range".into()));
        }
        if w.spread <= S::zero() {
            return Err(ConfigError::Invalid("world.spread must be > 0".into()));
        }
        let s = &self.scene;
        if s.objects_min < 1 || s.objects_min > s.objects_max {
            return Err(ConfigError::Invalid("bad scene object count range".into()));
        }
        if s.copies_min < 1 || s.copies_min > s.copies_max {
            return Err(ConfigError::Invalid("bad scene copy count range".into()));
        }
        if s.jitter < S::zero() || s.sigma_bg <= S::zero() || s.noise < S::zero() {
            return Err(ConfigError::Invalid(
                "scene.jitter/noise must be >= 0 and scene.sigma_bg > 0".into(),
            ));
        }
        let m = &self.metrics;
        if !(m.iou_threshold > 0.0 && m.iou_threshold <= 1.0) {
            return Err(ConfigError::Invalid(
                "metrics.iou_threshold must lie in (0, 1]".into(),
            ));
        }
        if !(m.wi_recall_point > 0.0 && m.wi_recall_point <= 1.0) {
            return Err(ConfigError::Invalid(
                "metrics.wi_recall_point must lie in (0, 1]".into(),
            ));
        }
        let r = &self.run;
        if !(r.iou_threshold > 0.0 && r.iou_threshold <= 1.0) {
            return Err(ConfigError::Invalid(
                "run.iou_threshold must lie in (0, 1]".into(),
            ));
        }
        if !(r.fg_threshold > 0.0 && r.fg_threshold < 1.0) {
            return Err(ConfigError::Invalid(
                "run.fg_threshold must lie in (0, 1)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&r.finetune_fraction) {
            return Err(ConfigError::Invalid(
                "run.finetune_fraction must lie in [0, 1]".into(),
            ));
        }
        if self.model.hidden1 == 0 || self.model.hidden2 == 0 {
            return Err(ConfigError::Invalid(
                "model hidden sizes must be >= 1".into(),
            ));
        }
        if self.ablate.seeds == 0 {
            return Err(ConfigError::Invalid("ablate.seeds must be >= 1".into()));
        }
        Ok(())
    }

    /// Assembles the per-task run parameters from the relevant sections.
    pub fn task_run_config(&self) -> TaskRunConfig<S> {
        TaskRunConfig {
            plu: self.plu.clone(),
            iou_threshold: sc(self.run.iou_threshold),
            fg_threshold: sc(self.run.fg_threshold),
            finetune_fraction: self.run.finetune_fraction,
            finetune_samples: self.run.finetune_samples,
            enable_finetune: self.run.enable_finetune,
            k_override: self.run.k,
            metrics: self.metrics.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        RunConfig::<f64>::default().validate().unwrap();
    }

    #[test]
    fn parse_applies_overrides_and_comments() {
        let cfg: RunConfig<f64> = RunConfig::parse(
            "# comment\n\
             plu.epsilon = 0.8\n\
             world.d = 16   # trailing comment\n\
             \n\
             run.k = 3\n\
             plu.target_norm = all\n",
        )
        .unwrap();
        assert_eq!(cfg.plu.epsilon, 0.8);
        assert_eq!(cfg.world.d, 16);
        assert_eq!(cfg.run.k, Some(3));
        assert_eq!(cfg.plu.target_norm, TargetNorm::All);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let err = RunConfig::<f64>::parse("plu.epsilonn = 0.8\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey(k) if k == "plu.epsilonn"));
    }

    #[test]
    fn malformed_line_is_an_error_with_line_number() {
        let err = RunConfig::<f64>::parse("plu.epsilon = 0.8\njust words\n").unwrap_err();
        assert!(matches!(err, ConfigError::Malformed { line: 2, .. }));
    }

    #[test]
    fn bad_value_is_an_error() {
        let err = RunConfig::<f64>::parse("world.d = sixteen\n").unwrap_err();
        assert!(matches!(err, ConfigError::BadValue { key, .. } if key == "world.d"));
    }

    #[test]
    fn out_of_range_epsilon_fails_validation() {
        assert!(RunConfig::<f64>::parse("plu.epsilon = 0.4\n").is_err());
        assert!(RunConfig::<f64>::parse("plu.epsilon = 1.0\n").is_err());
    }

    #[test]
    fn infeasible_task_partition_fails_validation() {
        let err = RunConfig::<f64>::parse("world.n_known = 3\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
    }

    #[test]
    fn to_text_round_trips_every_key() {
        let mut cfg = RunConfig::<f64>::default();
        cfg.plu.epsilon = 0.75;
        cfg.run.k = Some(7);
        cfg.scene.n_bg = 17;
        cfg.metrics.ap_interpolation = ApInterpolation::ElevenPoint;
        let back: RunConfig<f64> = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn later_assignments_override_earlier_ones() {
        let cfg: RunConfig<f64> =
            RunConfig::parse("plu.lambda = 0.5\nplu.lambda = 0.2\n").unwrap();
        assert_eq!(cfg.plu.lambda, 0.2);
    }
}
