//! Experiment presets compiled into the binary.

use crate::config::{ConfigError, RunConfig};

pub struct Preset {
    pub name: &'static str,
    pub source: &'static str,
}

impl Preset {
    /// First comment line of the preset file.
    pub fn description(&self) -> &'static str {
        self.source
            .lines()
            .find_map(|l| l.strip_prefix('#'))
            .map(str::trim)
            .unwrap_or("")
    }

    pub fn config(&self) -> Result<RunConfig, ConfigError> {
        RunConfig::from_toml(self.source)
    }
}

macro_rules! preset {
    ($name:literal) => {
        Preset {
            name: $name,
            source: include_str!(concat!("../presets/", $name, ".toml")),
        }
    };
}

pub static PRESETS: &[Preset] = &[
    preset!("fig4_loss_vs_rounds"),
    preset!("fig5_loss_vs_bits"),
    preset!("fig6_E_sweep"),
    preset!("fig7_v_sweep"),
    preset!("fig8_9_hex"),
    preset!("fig10_pu_sweep"),
    preset!("fig11_su_sweep"),
    preset!("fig12_bus_trace"),
];

static BUS: [&str; 4] = [
    include_str!("../presets/traces/bus_1.csv"),
    include_str!("../presets/traces/bus_2.csv"),
    include_str!("../presets/traces/bus_3.csv"),
    include_str!("../presets/traces/bus_4.csv"),
];

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

/// Route files of a shipped trace set.
pub fn builtin_traces(name: &str) -> Option<&'static [&'static str]> {
    match name {
        "bus" => Some(&BUS),
        _ => None,
    }
}
