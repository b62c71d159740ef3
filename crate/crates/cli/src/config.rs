use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stopscan_core::ingest::FormatDescriptor;
use stopscan_core::pipeline::PipelineParams;
use stopscan_core::scoring::{BaselineMode, Indicator};
use stopscan_core::stop::DetectorMode;
use stopscan_core::synth::{DwellRange, Schedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub gps: PathBuf,
    pub route: PathBuf,
    /// Ground-truth stop spots: a synth truth JSON, or `lng,lat` lines.
    pub truth: Option<PathBuf>,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            gps: "gps.csv".into(),
            route: "route.txt".into(),
            truth: None,
            output: "out".into(),
        }
    }
}

/// Layout of the raw GPS file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputFormat {
    pub columns: String,
    pub delimiter: char,
    pub header: bool,
}

impl Default for InputFormat {
    fn default() -> Self {
        Self {
            columns: "coach_id,t,lng,lat,v,of".into(),
            delimiter: ',',
            header: true,
        }
    }
}

impl InputFormat {
    pub fn descriptor(&self) -> Result<FormatDescriptor> {
        if !self.delimiter.is_ascii() {
            bail!("input delimiter must be a single ASCII character");
        }
        Ok(FormatDescriptor::new(&self.columns, self.delimiter as u8, self.header)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Segments within this distance of a ground-truth spot are positives.
    pub label_radius_m: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { label_radius_m: 100.0 }
    }
}

/// Scenario generated by the `synth` subcommand on the demo route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub journeys: usize,
    pub schedule: Schedule,
    pub injections: usize,
    pub injection_dwell: DwellRange,
    pub injection_probability: f64,
    pub clearance_m: f64,
    pub period_s: u32,
    pub noise_sigma_m: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            journeys: 24,
            schedule: Schedule::default(),
            injections: 3,
            injection_dwell: DwellRange::new(60, 180),
            injection_probability: 0.5,
            clearance_m: 400.0,
            period_s: 30,
            noise_sigma_m: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads; all cores when unset.
    pub jobs: Option<usize>,
    pub paths: Paths,
    pub input: InputFormat,
    pub pipeline: PipelineParams,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: None,
            paths: Paths::default(),
            input: InputFormat::default(),
            pipeline: PipelineParams::default(),
            eval: EvalConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.pipeline;
        p.cleaning.validate()?;
        p.solver.validate()?;
        if !(p.segment_length_m > 0.0 && p.segment_length_m.is_finite()) {
            bail!("segment length must be > 0");
        }
        if p.k == 0 {
            bail!("k must be >= 1");
        }
        if !(self.eval.label_radius_m > 0.0) {
            bail!("label radius must be > 0");
        }
        if self.jobs == Some(0) {
            bail!("jobs must be >= 1");
        }
        self.input.descriptor()?;
        Ok(())
    }

    /// Hex sha256 of the canonical JSON form. The output directory is left
    /// out so the same experiment written elsewhere keeps its identity.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.paths.output = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Literal,
    Physical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    Full,
    Wst,
    Wsa,
    Uis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IndicatorArg {
    Ast,
    Mst,
    Tat,
}

/// Flags shared by every subcommand; each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Configuration file (TOML)
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory for all artifacts
    #[arg(long, global = true, value_name = "DIR")]
    pub output: Option<PathBuf>,
    /// Stop detector mode
    #[arg(long, global = true)]
    pub mode: Option<ModeArg>,
    /// Scoring strategy
    #[arg(long, global = true)]
    pub baseline: Option<BaselineArg>,
    /// Road segment length
    #[arg(long, global = true, value_name = "METERS")]
    pub segment_length: Option<f64>,
    /// Weight of the sparse anomaly term
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Weight of the group-sparse term
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Segment indicator used for ranking and evaluation
    #[arg(long, global = true)]
    pub indicator: Option<IndicatorArg>,
    /// Number of largest entries averaged by the tat indicator
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Seed for synthetic data
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Cap on worker threads
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Require the touch time to fall inside the sampling interval
    #[arg(long, global = true)]
    pub strict_feasibility: bool,
}

impl Overrides {
    /// Loads the config file when given, else defaults, then applies flags.
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        self.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&self, cfg: &mut PipelineConfig) {
        let p = &mut cfg.pipeline;
        if let Some(dir) = &self.output {
            cfg.paths.output = dir.clone();
        }
        if let Some(m) = self.mode {
            p.detector.mode = match m {
                ModeArg::Literal => DetectorMode::Literal,
                ModeArg::Physical => DetectorMode::Physical,
            };
        }
        if let Some(b) = self.baseline {
            p.baseline = match b {
                BaselineArg::Full => BaselineMode::Full,
                BaselineArg::Wst => BaselineMode::Wst,
                BaselineArg::Wsa => BaselineMode::Wsa,
                BaselineArg::Uis => BaselineMode::Uis,
            };
        }
        if let Some(i) = self.indicator {
            p.indicator = match i {
                IndicatorArg::Ast => Indicator::Ast,
                IndicatorArg::Mst => Indicator::Mst,
                IndicatorArg::Tat => Indicator::Tat,
            };
        }
        if let Some(d) = self.segment_length {
            p.segment_length_m = d;
        }
        if let Some(l) = self.lambda {
            p.solver.lambda = l;
        }
        if let Some(b) = self.beta {
            p.solver.beta = b;
        }
        if let Some(k) = self.k {
            p.k = k;
        }
        if self.strict_feasibility {
            p.detector.strict_feasibility = true;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(j) = self.jobs {
            cfg.jobs = Some(j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn stated_defaults() {
        let p = PipelineConfig::default().pipeline;
        assert_eq!(p.segment_length_m, 200.0);
        assert_eq!((p.solver.lambda, p.solver.beta, p.solver.rho0, p.solver.mu), (0.1, 0.1, 1.0, 1.2));
        assert_eq!((p.indicator, p.k), (Indicator::Ast, 2));
        assert_eq!(p.baseline, BaselineMode::Full);
        assert!(!p.clustering.enabled);
        assert_eq!(PipelineConfig::default().eval.label_radius_m, 100.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml("sede = 3").is_err());
        assert!(PipelineConfig::from_toml("[pipeline.solver]\nlamda = 0.2").is_err());
        let ok = PipelineConfig::from_toml("seed = 3\n[pipeline.solver]\nlambda = 0.2").unwrap();
        assert_eq!((ok.seed, ok.pipeline.solver.lambda, ok.pipeline.solver.beta), (3, 0.2, 0.1));
    }

    #[test]
    fn flags_override_file_values() {
        let mut cfg = PipelineConfig::default();
        let o = Overrides {
            mode: Some(ModeArg::Physical),
            baseline: Some(BaselineArg::Wsa),
            lambda: Some(0.3),
            k: Some(5),
            strict_feasibility: true,
            ..Default::default()
        };
        o.apply(&mut cfg);
        assert_eq!(cfg.pipeline.detector.mode, DetectorMode::Physical);
        assert_eq!(cfg.pipeline.baseline, BaselineMode::Wsa);
        assert_eq!((cfg.pipeline.solver.lambda, cfg.pipeline.k), (0.3, 5));
        assert!(cfg.pipeline.detector.strict_feasibility);
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.paths.output = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn invalid_values_rejected() {
        let mut cfg = PipelineConfig::default();
        cfg.pipeline.segment_length_m = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.pipeline.solver.lambda = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.input.columns = "t,t,lng,lat,v,of".into();
        assert!(cfg.validate().is_err());
    }
}
