//! Built-in experiment configurations.

use anyhow::{anyhow, Result};

use crate::config::ExperimentConfig;

pub struct Preset {
    pub name: &'static str,
    pub toml: &'static str,
}

pub const PRESETS: [Preset; 5] = [
    Preset {
        name: "fig2",
        toml: include_str!("../presets/fig2.toml"),
    },
    Preset {
        name: "fig3",
        toml: include_str!("../presets/fig3.toml"),
    },
    Preset {
        name: "fig4",
        toml: include_str!("../presets/fig4.toml"),
    },
    Preset {
        name: "fig8",
        toml: include_str!("../presets/fig8.toml"),
    },
    Preset {
        name: "fig9",
        toml: include_str!("../presets/fig9.toml"),
    },
];

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

pub fn load(name: &str) -> Result<ExperimentConfig> {
    let p = find(name).ok_or_else(|| anyhow!("unknown preset {name:?}"))?;
    ExperimentConfig::from_toml(p.toml)
}
