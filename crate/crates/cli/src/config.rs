//! Pipeline configuration: one TOML file whose sections feed the stages.
//!
//! Every section is optional; a stage reads only the sections it uses and
//! command-line flags override individual keys.

use serde::{Deserialize, Serialize};
use stiction_core::labeling::{Ridge, SlopeRatioConfig, T2Config};
use stiction_core::loopsim::{alternating_episodes, Episode, LoopConfig, SetpointProfile, StictionParams};
use stiction_core::models::{balanced_class_weight, ArchitectureSpec, ModelKind, SvmConfig};
use stiction_core::neural::TrainConfig;
use stiction_core::windowing::Sample;

use crate::error::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(rename = "loop")]
    pub loop_: Option<LoopSection>,
    pub stiction: Option<StictionSection>,
    pub alternating: Option<AlternatingSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub episode: Vec<EpisodeSection>,
    pub labeling: Option<LabelingSection>,
    pub windowing: Option<WindowingSection>,
    pub architecture: Option<ArchitectureSection>,
    pub train: Option<TrainSection>,
    pub svm: Option<SvmSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSection {
    pub kp: Option<f64>,
    pub ti: Option<f64>,
    pub process_gain: Option<f64>,
    pub process_tau: Option<f64>,
    pub noise_sigma: Option<f64>,
    pub seed: Option<u64>,
    pub setpoint: Option<f64>,
    /// `[[minute, value], ...]`; overrides `setpoint`.
    pub setpoint_steps: Option<Vec<(usize, f64)>>,
}

impl LoopSection {
    fn apply(&self, mut cfg: LoopConfig) -> Result<LoopConfig, CliError> {
        cfg.kp = self.kp.unwrap_or(cfg.kp);
        cfg.ti = self.ti.unwrap_or(cfg.ti);
        cfg.process_gain = self.process_gain.unwrap_or(cfg.process_gain);
        cfg.process_tau = self.process_tau.unwrap_or(cfg.process_tau);
        cfg.noise_sigma = self.noise_sigma.unwrap_or(cfg.noise_sigma);
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        if let Some(sp) = self.setpoint {
            cfg.sp_profile = SetpointProfile::constant(sp);
        }
        if let Some(steps) = &self.setpoint_steps {
            cfg.sp_profile = SetpointProfile::new(steps.clone())?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StictionSection {
    pub deadband_s: f64,
    pub slip_jump_j: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlternatingSection {
    pub episode_minutes: usize,
    pub total_minutes: usize,
}

/// One explicit episode; loop keys override `[loop]` for this episode only.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSection {
    pub minutes: usize,
    #[serde(default)]
    pub deadband_s: f64,
    #[serde(default)]
    pub slip_jump_j: f64,
    pub kp: Option<f64>,
    pub ti: Option<f64>,
    pub process_gain: Option<f64>,
    pub process_tau: Option<f64>,
    pub noise_sigma: Option<f64>,
    pub seed: Option<u64>,
    pub setpoint: Option<f64>,
    pub setpoint_steps: Option<Vec<(usize, f64)>>,
}

impl EpisodeSection {
    fn overrides(&self) -> LoopSection {
        LoopSection {
            kp: self.kp,
            ti: self.ti,
            process_gain: self.process_gain,
            process_tau: self.process_tau,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
            setpoint: self.setpoint,
            setpoint_steps: self.setpoint_steps.clone(),
        }
    }
}

/// Episode schedule from `[[episode]]` tables or the `[alternating]` pattern.
pub fn episodes(cfg: &ConfigFile) -> Result<Vec<Episode>, CliError> {
    let base = match &cfg.loop_ {
        Some(l) => l.apply(LoopConfig::default())?,
        None => LoopConfig::default(),
    };
    match (&cfg.alternating, cfg.episode.is_empty()) {
        (Some(_), false) => Err(CliError::usage("InvalidConfig", "use either [alternating] or [[episode]], not both")),
        (None, true) => Err(CliError::usage("InvalidConfig", "config defines no episodes ([alternating] or [[episode]])")),
        (Some(alt), true) => {
            let s = cfg.stiction.as_ref().ok_or_else(|| CliError::usage("InvalidConfig", "[alternating] needs a [stiction] section"))?;
            if alt.episode_minutes == 0 || alt.total_minutes == 0 {
                return Err(CliError::usage("InvalidConfig", "episode_minutes and total_minutes must be positive"));
            }
            let sticky = StictionParams::new(s.deadband_s, s.slip_jump_j)?;
            Ok(alternating_episodes(&base, sticky, alt.episode_minutes, alt.total_minutes))
        }
        (None, false) => {
            let mut start = 0;
            let mut out = Vec::with_capacity(cfg.episode.len());
            for (k, ep) in cfg.episode.iter().enumerate() {
                let seeded = LoopConfig { seed: base.seed.wrapping_add(k as u64), duration: ep.minutes, ..base.clone() };
                let config = LoopConfig { duration: ep.minutes, ..ep.overrides().apply(seeded)? };
                out.push(Episode { config, stiction: StictionParams::new(ep.deadband_s, ep.slip_jump_j)?, start });
                start += ep.minutes;
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelingSection {
    pub window_minutes: Option<usize>,
    pub n_consecutive: Option<usize>,
    pub pv_slope_epsilon: Option<f64>,
    pub percentile: Option<f64>,
    /// `"auto"` or a fixed ridge value.
    pub ridge: Option<RidgeValue>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RidgeValue {
    Fixed(f64),
    Named(String),
}

impl LabelingSection {
    pub fn slope_ratio(&self) -> SlopeRatioConfig {
        let d = SlopeRatioConfig::default();
        SlopeRatioConfig {
            window_minutes: self.window_minutes.unwrap_or(d.window_minutes),
            n_consecutive: self.n_consecutive.unwrap_or(d.n_consecutive),
            pv_slope_epsilon: self.pv_slope_epsilon.unwrap_or(d.pv_slope_epsilon),
        }
    }

    pub fn t2(&self) -> Result<T2Config, CliError> {
        let d = T2Config::default();
        let ridge = match &self.ridge {
            None => d.ridge,
            Some(RidgeValue::Fixed(v)) => Ridge::Fixed(*v),
            Some(RidgeValue::Named(s)) if s == "auto" => Ridge::Auto,
            Some(RidgeValue::Named(s)) => {
                return Err(CliError::usage("InvalidConfig", format!("ridge must be \"auto\" or a number, got {s:?}")))
            }
        };
        Ok(T2Config {
            window_minutes: self.window_minutes.unwrap_or(d.window_minutes),
            percentile_p: self.percentile.unwrap_or(d.percentile_p),
            ridge,
        })
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowingSection {
    pub base_minutes: Option<usize>,
    pub model_len: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSection {
    /// Divide every layer width by this factor.
    pub reduce: Option<usize>,
    pub pooling: Option<bool>,
}

impl ArchitectureSection {
    pub fn spec(&self, kind: ModelKind, reduce_flag: Option<usize>) -> ArchitectureSpec {
        let factor = reduce_flag.or(self.reduce).unwrap_or(1);
        let mut spec = if factor > 1 { ArchitectureSpec::reduced(kind, factor) } else { ArchitectureSpec::full(kind) };
        spec.pooling = self.pooling.unwrap_or(false);
        spec
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassWeight {
    Fixed(f64),
    Named(String),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub max_epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub patience: Option<usize>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    /// A positive number or `"balanced"` (negatives per positive in the training split).
    pub class_weight: Option<ClassWeight>,
}

impl TrainSection {
    pub fn resolve(&self, seed_flag: Option<u64>, epochs_flag: Option<usize>, train: &[Sample]) -> Result<TrainConfig, CliError> {
        let d = TrainConfig::default();
        let class_weight = match &self.class_weight {
            None => d.class_weight,
            Some(ClassWeight::Fixed(w)) => *w,
            Some(ClassWeight::Named(s)) if s == "balanced" => balanced_class_weight(train),
            Some(ClassWeight::Named(s)) => {
                return Err(CliError::usage("InvalidConfig", format!("class_weight must be \"balanced\" or a number, got {s:?}")))
            }
        };
        let cfg = TrainConfig {
            max_epochs: epochs_flag.or(self.max_epochs).unwrap_or(d.max_epochs),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            patience: self.patience.unwrap_or(d.patience),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            seed: seed_flag.or(self.seed).unwrap_or(d.seed),
            class_weight,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmSection {
    pub c: Option<f64>,
    pub gamma: Option<f64>,
    pub tol: Option<f64>,
    pub max_iterations: Option<usize>,
    pub max_train_rows: Option<usize>,
    pub seed: Option<u64>,
}

impl SvmSection {
    pub fn resolve(&self, train_seed: u64) -> SvmConfig {
        let d = SvmConfig::default();
        SvmConfig {
            c: self.c.unwrap_or(d.c),
            gamma: self.gamma.or(d.gamma),
            tol: self.tol.unwrap_or(d.tol),
            max_iterations: self.max_iterations.unwrap_or(d.max_iterations),
            max_train_rows: self.max_train_rows.unwrap_or(d.max_train_rows),
            seed: self.seed.unwrap_or(train_seed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alternating_schedule_from_toml() {
        let cfg: ConfigFile = toml::from_str(
            "[loop]\nkp = 0.3\nseed = 5\n[stiction]\ndeadband_s = 4.0\nslip_jump_j = 1.0\n[alternating]\nepisode_minutes = 60\ntotal_minutes = 150\n",
        )
        .unwrap();
        let eps = episodes(&cfg).unwrap();
        assert_eq!(eps.len(), 3);
        assert_eq!((eps[2].start, eps[2].config.duration, eps[2].config.seed), (120, 30, 7));
        assert_eq!(eps[1].stiction.deadband_s, 4.0);
        assert_eq!(eps[0].config.kp, 0.3);
    }

    #[test]
    fn explicit_episodes_with_overrides() {
        let cfg: ConfigFile = toml::from_str(
            "[loop]\nnoise_sigma = 0.1\n[[episode]]\nminutes = 30\n[[episode]]\nminutes = 20\ndeadband_s = 3.0\nslip_jump_j = 1.0\nkp = 2.0\n",
        )
        .unwrap();
        let eps = episodes(&cfg).unwrap();
        assert_eq!((eps[1].start, eps[1].config.duration, eps[1].config.kp), (30, 20, 2.0));
        assert_eq!(eps[1].config.noise_sigma, 0.1);
        assert!(eps[0].stiction.is_ideal());
    }

    #[test]
    fn unknown_keys_and_missing_schedules_are_rejected() {
        assert!(toml::from_str::<ConfigFile>("[train]\nepochs = 3\n").is_err());
        assert!(episodes(&ConfigFile::default()).is_err());
    }

    #[test]
    fn class_weight_and_ridge_forms() {
        let cfg: ConfigFile = toml::from_str("[train]\nclass_weight = \"balanced\"\n[labeling]\nridge = 0.5\n").unwrap();
        assert!(matches!(cfg.train.unwrap().class_weight, Some(ClassWeight::Named(_))));
        assert_eq!(cfg.labeling.unwrap().t2().unwrap().ridge, Ridge::Fixed(0.5));
        let bad: ConfigFile = toml::from_str("[labeling]\nridge = \"big\"\n").unwrap();
        assert!(bad.labeling.unwrap().t2().is_err());
    }
}
