//! Run configuration files.
//!
//! A config is TOML whose tables mirror the module configs. Only `system` is
//! required:
//!
//! ```toml
//! system = "pendulum"
//! seed = 0
//! guidance.gamma2 = 0.1
//!
//! [training]
//! epochs = 30
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clbf::CertificateConfig;
use crate::diffusion::{GuidanceConfig, SamplerConfig};
use crate::dynamics::{IntegratorConfig, SystemSpec};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::training::{TrainConfig, TrainSetup};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Built-in system name.
    pub system: String,
    /// Master seed for every random stream.
    #[serde(default)]
    pub seed: u64,
    /// Output root; the `S2DIFF_OUT` variable and `--out` flag take precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Constants file replacing the bundled one for `system`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<PathBuf>,
    #[serde(default)]
    pub certificate: CertificateConfig,
    #[serde(default)]
    pub guidance: GuidanceConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    /// All defaults for `system`.
    pub fn defaults(system: &str) -> Self {
        RunConfig {
            system: system.to_string(),
            seed: 0,
            out: None,
            constants: None,
            certificate: CertificateConfig::default(),
            guidance: GuidanceConfig::default(),
            sampler: SamplerConfig::default(),
            integrator: IntegratorConfig::default(),
            training: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            match msg.strip_prefix("missing field `").and_then(|r| r.split('`').next()) {
                Some(field) => Error::config(field, "missing required field"),
                None => Error::Parse(e.to_string()),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        // Relative constants paths are taken relative to the config file.
        if let (Some(c), Some(dir)) = (&cfg.constants, path.parent()) {
            if c.is_relative() {
                cfg.constants = Some(dir.join(c));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn build_system(&self) -> Result<SystemSpec> {
        match &self.constants {
            Some(path) => SystemSpec::from_constants_file(&self.system, path),
            None => SystemSpec::builtin(&self.system),
        }
    }

    pub fn setup<'a>(&self, sys: &'a SystemSpec) -> TrainSetup<'a> {
        TrainSetup {
            sys,
            ccfg: self.certificate,
            gcfg: self.guidance.clone(),
            scfg: self.sampler,
            integ: self.integrator,
            tcfg: self.training.clone(),
            seed: self.seed,
        }
    }

    /// Builds the system and checks every section.
    pub fn validate(&self) -> Result<SystemSpec> {
        let sys = self.build_system()?;
        self.setup(&sys).validate()?;
        self.eval.validate()?;
        Ok(sys)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_names_only_the_system() {
        let cfg = RunConfig::parse("system = \"pendulum\"").unwrap();
        assert_eq!(cfg, RunConfig::defaults("pendulum"));
        cfg.validate().unwrap();
    }

    #[test]
    fn dotted_keys_and_tables() {
        let cfg = RunConfig::parse(
            "system = \"segway\"\nseed = 4\nguidance.gamma2 = 0.5\n[training]\nepochs = 3\n[integrator]\nscheme = \"euler\"\n",
        )
        .unwrap();
        assert_eq!(cfg.guidance.gamma2, 0.5);
        assert_eq!(cfg.training.epochs, 3);
        assert_eq!(cfg.seed, 4);
    }

    #[test]
    fn errors_name_the_field() {
        match RunConfig::parse("seed = 1") {
            Err(Error::Config { field, .. }) => assert_eq!(field, "system"),
            other => panic!("{other:?}"),
        }
        assert!(RunConfig::parse("system = \"pendulum\"\nbogus = 1").is_err());
        let bad = RunConfig::parse("system = \"pendulum\"\ntraining.learning_rate = -1.0").unwrap();
        match bad.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "training.learning_rate"),
            other => panic!("{other:?}"),
        }
        let unknown = RunConfig::parse("system = \"nope\"").unwrap();
        assert!(unknown.validate().unwrap_err().is_configuration());
    }

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = RunConfig::defaults("quad2d");
        cfg.guidance.nominal = Some(vec![vec![1.0, 2.0]; 5]);
        let again = RunConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }
}
