//! Run configuration (TOML).
//!
//! ```toml
//! seed = 0
//! prior_samples = 512
//!
//! [scenario]
//! kind = "doa"            # or "ofdm"; remaining keys are the scenario fields
//! m_tx = 16
//! ...
//!
//! [solver]                # optional, every key has a default
//! [sweep]                 # n_points, include_bcrb
//! [montecarlo]            # n_block, trials, grid_size, delta_band, input, ...
//! [output]                # dir, format = "csv" | "json"
//! ```
//!
//! Unknown keys are rejected everywhere. Angles are in radians, SNRs in dB.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cams::model::DEFAULT_PRIOR_SAMPLES;
use cams::scenarios::{build_doa, build_ofdm, DoaConfig, OfdmConfig};
use cams::solver::SolverConfig;
use cams::Scenario;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioConfig {
    Doa(DoaConfig),
    Ofdm(OfdmConfig),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_points")]
    pub n_points: usize,
    #[serde(default)]
    pub include_bcrb: bool,
}

fn default_points() -> usize {
    16
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { n_points: default_points(), include_bcrb: false }
    }
}

/// Which input covariance the Monte Carlo run transmits with.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InputChoice {
    /// `(P/M) I`.
    Isotropic,
    SensingOptimal,
    Capacity,
    /// Optimal input of the trade-off problem at this MSE target.
    Delta(f64),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    #[serde(default = "default_block")]
    pub n_block: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    /// Draw codewords from the covariance band of this half-width instead of i.i.d.
    pub delta_band: Option<f64>,
    #[serde(default = "default_input")]
    pub input: InputChoice,
    /// Band half-width for the concentration check, relative to `lambda_max(Q)`.
    #[serde(default = "default_concentration")]
    pub concentration_delta: f64,
    #[serde(default)]
    pub per_trial_csv: bool,
}

fn default_block() -> usize {
    512
}
fn default_trials() -> usize {
    2000
}
fn default_grid() -> usize {
    cams::montecarlo::DEFAULT_GRID_SIZE
}
fn default_input() -> InputChoice {
    InputChoice::Isotropic
}
fn default_concentration() -> f64 {
    0.25
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig {
            n_block: default_block(),
            trials: default_trials(),
            grid_size: default_grid(),
            delta_band: None,
            input: default_input(),
            concentration_delta: default_concentration(),
            per_trial_csv: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub format: OutputFormat,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_dir(), format: OutputFormat::default() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub montecarlo: MonteCarloConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_prior_samples")]
    pub prior_samples: usize,
}

fn default_prior_samples() -> usize {
    DEFAULT_PRIOR_SAMPLES
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        match &self.scenario {
            ScenarioConfig::Doa(c) => c.validate()?,
            ScenarioConfig::Ofdm(c) => c.validate()?,
        }
        self.solver.validate()?;
        if self.sweep.n_points < 2 {
            bail!("sweep.n_points must be at least 2");
        }
        let mc = &self.montecarlo;
        if mc.n_block == 0 || mc.trials == 0 || mc.grid_size < 3 {
            bail!("montecarlo.n_block and trials must be positive and grid_size at least 3");
        }
        if mc.delta_band.is_some_and(|d| !(d > 0.0)) {
            bail!("montecarlo.delta_band must be positive");
        }
        if !(mc.concentration_delta > 0.0) {
            bail!("montecarlo.concentration_delta must be positive");
        }
        if let InputChoice::Delta(d) = mc.input {
            if !(d > 0.0) {
                bail!("montecarlo.input delta must be positive");
            }
        }
        if self.prior_samples == 0 {
            bail!("prior_samples must be positive");
        }
        Ok(())
    }

    pub fn build_scenario(&self) -> Result<Scenario> {
        let s = match &self.scenario {
            ScenarioConfig::Doa(c) => build_doa(c)?,
            ScenarioConfig::Ofdm(c) => build_ofdm(c)?,
        };
        Ok(s.with_prior_samples(self.prior_samples)?.with_seed(self.seed))
    }

    pub fn is_doa(&self) -> bool {
        matches!(self.scenario, ScenarioConfig::Doa(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOA: &str = r#"
        seed = 3
        [scenario]
        kind = "doa"
        m_tx = 4
        t_rx = 4
        user_aod = 0.0
        comm_snr_db = 15.0
        sens_snr_db = -25.0
        prior = { kind = "tapered_uniform", s = 1.5707963267948966, kappa = 0.7 }
    "#;

    #[test]
    fn minimal_doa_config_uses_defaults() {
        let cfg = RunConfig::parse(DOA).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.sweep.n_points, 16);
        assert_eq!(cfg.montecarlo.input, InputChoice::Isotropic);
        assert_eq!(cfg.output.format, OutputFormat::Csv);
        assert!(cfg.is_doa());
        assert_eq!(cfg.build_scenario().unwrap().seed, 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = DOA.replace("m_tx = 4", "m_tx = 4\nbogus = 1");
        assert!(RunConfig::parse(&bad).is_err());
        let bad = format!("{DOA}\n[solver]\nkkt = 1e-6\n");
        assert!(RunConfig::parse(&bad).is_err());
        let bad = format!("{DOA}\n[sweep]\npoints = 3\n");
        assert!(RunConfig::parse(&bad).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let bad = DOA.replace("kappa = 0.7", "kappa = 1.7");
        assert!(RunConfig::parse(&bad).is_err());
        let bad = format!("{DOA}\n[sweep]\nn_points = 1\n");
        assert!(RunConfig::parse(&bad).is_err());
    }

    #[test]
    fn parse_errors_carry_line_and_column() {
        let err = RunConfig::parse("seed = \n[scenario]").unwrap_err();
        assert!(format!("{err:#}").contains("line 1"), "{err:#}");
    }

    #[test]
    fn input_choices_parse() {
        let cfg = RunConfig::parse(&format!("{DOA}\n[montecarlo]\ninput = {{ delta = 0.5 }}\n")).unwrap();
        assert_eq!(cfg.montecarlo.input, InputChoice::Delta(0.5));
        let cfg = RunConfig::parse(&format!("{DOA}\n[montecarlo]\ninput = \"sensing_optimal\"\n")).unwrap();
        assert_eq!(cfg.montecarlo.input, InputChoice::SensingOptimal);
    }

    #[test]
    fn ofdm_config_parses() {
        let text = r#"
            [scenario]
            kind = "ofdm"
            k_sub = 8
            alpha = 10.0
            phase_seed = 1
            comm_snr_db = 10.0
            sens_snr_db = -10.0
            [output]
            format = "json"
        "#;
        let cfg = RunConfig::parse(text).unwrap();
        assert!(!cfg.is_doa());
        assert_eq!(cfg.output.format, OutputFormat::Json);
        assert_eq!(cfg.build_scenario().unwrap().power, 8.0);
    }
}
