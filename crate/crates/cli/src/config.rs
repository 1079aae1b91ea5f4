//! Run configuration: one human-editable TOML file drives every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use doatrack::array::MicArray;
use doatrack::enhance::{Backend, OutputShape};
use doatrack::scene::{ScenarioParams, SpeechSource};
use doatrack::trackers::{KfConfig, MotionModel, PfConfig, TrackerKind, TrackerMode, TrackerSpec};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSection,
    pub tracker: TrackerSection,
    pub enhancer: EnhancerSection,
    pub output: OutputSection,
    pub sweep: SweepSection,
    /// Path to an array geometry file; the built-in 3-mic circle otherwise.
    pub array_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub n_scenes: usize,
    pub base_seed: u64,
    pub duration: f64,
    pub n_speakers: usize,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    /// Directory of mono 16 kHz WAVs; the synthetic generator otherwise.
    pub corpus_dir: Option<PathBuf>,
    /// Non-physical stress knob; leave unset for the clean free-field setup.
    pub late_reverb_drr_db: Option<f64>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            n_scenes: 50,
            base_seed: 0,
            duration: 10.0,
            n_speakers: 2,
            snr_min_db: 20.0,
            snr_max_db: 30.0,
            corpus_dir: None,
            late_reverb_drr_db: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerSection {
    /// "kf" or "pf".
    pub filter: String,
    /// "concat", "miso-ar" or "mimo-ar".
    pub mode: String,
    pub sigma_nu_deg: f64,
    pub sigma_phi_deg: f64,
    /// Watson concentration; unset picks the per-mode sweep default
    /// (0.1 concatenative, 5 autoregressive).
    pub kappa: Option<f64>,
    pub n_particles: usize,
    pub tau_eff: f64,
    pub alpha_ema: f64,
    pub min_resultant: f64,
    /// Grid resolution for the narrowband estimator; unset uses the
    /// closed-form least squares.
    pub grid_resolution_deg: Option<f64>,
    pub estimate_with_pre_update_weights: bool,
}

impl Default for TrackerSection {
    fn default() -> Self {
        Self {
            filter: "pf".into(),
            mode: "miso-ar".into(),
            sigma_nu_deg: 150.0,
            sigma_phi_deg: 15.0,
            kappa: None,
            n_particles: 50,
            tau_eff: 0.5,
            alpha_ema: 0.95,
            min_resultant: 0.5,
            grid_resolution_deg: None,
            estimate_with_pre_update_weights: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhancerSection {
    /// "oracle", "oracle-corrupted", "delay-and-sum", "mvdr" or "none".
    pub backend: String,
    pub perturb_snr_db: f64,
    pub p_confuse: f64,
    pub confuse_threshold_deg: f64,
}

impl Default for EnhancerSection {
    fn default() -> Self {
        Self {
            backend: "oracle-corrupted".into(),
            perturb_snr_db: 15.0,
            p_confuse: 0.8,
            confuse_threshold_deg: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub write_enhanced_wav: bool,
    pub acc_threshold_deg: f64,
    /// Score only frames where the target's direct path carries energy.
    pub gate_silent_frames: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            write_enhanced_wav: false,
            acc_threshold_deg: 10.0,
            gate_silent_frames: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub sigma_nu_deg: Vec<f64>,
    /// sigma_phi (KF, deg) or kappa (PF).
    pub likelihood_param: Vec<f64>,
    pub tau_eff: Vec<f64>,
    pub alpha_ema: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            sigma_nu_deg: vec![30.0, 100.0, 150.0, 300.0],
            likelihood_param: vec![0.1, 5.0, 15.0],
            tau_eff: vec![0.5],
            alpha_ema: vec![0.95],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.tracker_mode()?;
        let _ = self.tracker_spec()?;
        let _ = self.backend()?;
        if self.scenario.n_scenes == 0 {
            anyhow::bail!("scenario.n_scenes must be positive");
        }
        if self.scenario.duration <= 0.0 {
            anyhow::bail!("scenario.duration must be positive");
        }
        if self.scenario.snr_min_db > self.scenario.snr_max_db {
            anyhow::bail!("scenario snr range is inverted");
        }
        if self.enhancer.backend == "none" && self.tracker.mode != "concat" {
            anyhow::bail!("autoregressive modes need an enhancer backend");
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, toml::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn array(&self) -> anyhow::Result<MicArray> {
        Ok(match &self.array_file {
            Some(p) => MicArray::from_toml_file(p)?,
            None => MicArray::default_three_mic(),
        })
    }

    pub fn scenario_params(&self) -> ScenarioParams {
        ScenarioParams {
            duration: self.scenario.duration,
            n_speakers: self.scenario.n_speakers,
            snr_range: (self.scenario.snr_min_db, self.scenario.snr_max_db),
            speech: match &self.scenario.corpus_dir {
                Some(d) => SpeechSource::CorpusDir(d.clone()),
                None => SpeechSource::Synthetic,
            },
            late_reverb_drr_db: self.scenario.late_reverb_drr_db,
            ..ScenarioParams::default()
        }
    }

    pub fn tracker_mode(&self) -> anyhow::Result<TrackerMode> {
        match self.tracker.mode.as_str() {
            "concat" => Ok(TrackerMode::Concat),
            "miso-ar" => Ok(TrackerMode::MisoAr),
            "mimo-ar" => Ok(TrackerMode::MimoAr),
            other => anyhow::bail!("unknown tracker mode '{other}' (concat|miso-ar|mimo-ar)"),
        }
    }

    pub fn tracker_spec(&self) -> anyhow::Result<TrackerSpec> {
        let mode = self.tracker_mode()?;
        let t = &self.tracker;
        let motion = MotionModel { dt: 0.016, sigma_nu: t.sigma_nu_deg.to_radians() };
        let method = match t.grid_resolution_deg {
            Some(deg) => doatrack::doa::NarrowbandMethod::GridSearch { resolution_deg: deg },
            None => doatrack::doa::NarrowbandMethod::LinearLs,
        };
        let kind = match t.filter.as_str() {
            "kf" => TrackerKind::Kf(KfConfig {
                sigma_phi: t.sigma_phi_deg.to_radians(),
                motion,
                method,
                min_resultant: t.min_resultant,
                ..KfConfig::default()
            }),
            "pf" => {
                let kappa = t.kappa.unwrap_or(match mode {
                    TrackerMode::Concat => 0.1,
                    _ => 5.0,
                });
                TrackerKind::Pf(PfConfig {
                    n_particles: t.n_particles,
                    kappa,
                    tau_eff: t.tau_eff,
                    alpha_ema: t.alpha_ema,
                    min_resultant: t.min_resultant,
                    motion,
                    estimate_with_pre_update_weights: t.estimate_with_pre_update_weights,
                })
            }
            other => anyhow::bail!("unknown tracker filter '{other}' (kf|pf)"),
        };
        Ok(TrackerSpec { kind, mode })
    }

    /// Enhancer backend, `None` when disabled.
    pub fn backend(&self) -> anyhow::Result<Option<Backend>> {
        let e = &self.enhancer;
        Ok(match e.backend.as_str() {
            "none" => None,
            "oracle" => Some(Backend::Oracle),
            "oracle-corrupted" => Some(Backend::OracleCorrupted {
                perturb_snr_db: e.perturb_snr_db,
                p_confuse: e.p_confuse,
                confuse_threshold_deg: e.confuse_threshold_deg,
            }),
            "delay-and-sum" => Some(Backend::DelayAndSum),
            "mvdr" => Some(Backend::Mvdr),
            other => anyhow::bail!(
                "unknown enhancer backend '{other}' (oracle|oracle-corrupted|delay-and-sum|mvdr|none)"
            ),
        })
    }

    pub fn enhancer_shape(&self) -> OutputShape {
        match self.tracker.mode.as_str() {
            "mimo-ar" => OutputShape::Mimo,
            _ => OutputShape::Miso,
        }
    }
}
