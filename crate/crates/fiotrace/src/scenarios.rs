//! Built-in scenarios: three that satisfy both trace conditions and three
//! that each violate exactly one.

use crate::config::{parse_config, ConfigError, Overrides, ScenarioConfig};

/// Which hypothesis a built-in scenario is designed to violate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Expectation {
    Passes,
    FailsCondition1,
    FailsCondition2,
}

impl Expectation {
    pub fn describe(self) -> &'static str {
        match self {
            Expectation::Passes => "passes",
            Expectation::FailsCondition1 => "fails condition 1 (clean intersection)",
            Expectation::FailsCondition2 => "fails condition 2 (conormal bundle)",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BuiltinScenario {
    pub name: &'static str,
    pub toml: &'static str,
    pub expectation: Expectation,
}

pub const BUILTINS: &[BuiltinScenario] = &[
    BuiltinScenario { name: "rotation", toml: include_str!("../scenarios/rotation.toml"), expectation: Expectation::Passes },
    BuiltinScenario { name: "halfwave", toml: include_str!("../scenarios/halfwave.toml"), expectation: Expectation::Passes },
    BuiltinScenario { name: "fiberpair", toml: include_str!("../scenarios/fiberpair.toml"), expectation: Expectation::Passes },
    BuiltinScenario {
        name: "shift_along_x",
        toml: include_str!("../scenarios/shift_along_x.toml"),
        expectation: Expectation::FailsCondition2,
    },
    BuiltinScenario {
        name: "parabola_tangency",
        toml: include_str!("../scenarios/parabola_tangency.toml"),
        expectation: Expectation::FailsCondition1,
    },
    BuiltinScenario {
        name: "pdo_conormal",
        toml: include_str!("../scenarios/pdo_conormal.toml"),
        expectation: Expectation::FailsCondition2,
    },
];

pub fn builtin(name: &str) -> Option<&'static BuiltinScenario> {
    BUILTINS.iter().find(|b| b.name == name)
}

/// Materializes a built-in scenario with overrides applied.
pub fn load_builtin(name: &str, overrides: &Overrides) -> Result<ScenarioConfig, ConfigError> {
    let b = builtin(name).ok_or_else(|| ConfigError::UnknownScenario(name.into()))?;
    parse_config(b.toml, &format!("builtin:{name}"), overrides)
}
