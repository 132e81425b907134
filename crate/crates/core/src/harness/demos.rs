use crate::sensors::{parse_scenario, Scenario, ScenarioError};

macro_rules! demo {
    ($name:literal) => {
        ($name, include_str!(concat!("../../scenarios/", $name, ".toml")))
    };
}

/// Shipped scenarios by name, with their TOML source.
pub const DEMOS: &[(&str, &str)] = &[
    demo!("two-exceedance"),
    demo!("cancel"),
    demo!("quick-alarm"),
    demo!("lossy-sync"),
    demo!("reminders-medicine"),
    demo!("reminders-climate"),
    demo!("doctor-retune"),
];

pub fn demo_names() -> impl Iterator<Item = &'static str> {
    DEMOS.iter().map(|(name, _)| *name)
}

/// `None` when no demo has that name.
pub fn demo_scenario(name: &str) -> Option<Result<Scenario, ScenarioError>> {
    DEMOS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| parse_scenario(text))
}
