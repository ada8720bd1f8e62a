//! Run configuration: a single JSON document with the physical parameters,
//! Monte-Carlo settings, and the efficiency budget. Unknown keys are
//! rejected; every block re-validates its module-level invariants at load.

use std::path::Path;

use serde::{Deserialize, Serialize};
use spincluster::model::{PulseOptions, QDParams};
use spincluster::overhauser::MonteCarloConfig;
use spincluster::rates::EfficiencyBudget;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "QDParams::fitted")]
    pub qd: QDParams,
    #[serde(default = "default_mc")]
    pub monte_carlo: MonteCarloConfig,
    #[serde(default = "EfficiencyBudget::measured")]
    pub budget: EfficiencyBudget,
    #[serde(default)]
    pub pulse: PulseOptions,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
}

fn default_mc() -> MonteCarloConfig {
    MonteCarloConfig::new(1000, 20_220_831)
}

fn default_output_dir() -> String {
    "out".into()
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            qd: QDParams::fitted(),
            monte_carlo: default_mc(),
            budget: EfficiencyBudget::measured(),
            pulse: PulseOptions::default(),
            output_dir: default_output_dir(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    /// Re-validate all module invariants, reporting field paths.
    pub fn validate(&self) -> Result<(), String> {
        self.qd.validate().map_err(|e| format!("qd: {e}"))?;
        self.monte_carlo
            .validate()
            .map_err(|e| format!("monte_carlo: {e}"))?;
        self.budget.validate().map_err(|e| format!("budget: {e}"))?;
        Ok(())
    }

    /// Echo the resolved configuration into the run directory.
    pub fn write_echo(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(dir.join("config.json"), text + "\n")
    }
}
