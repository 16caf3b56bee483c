//! Experiment orchestration over the core library: config parsing, pipeline
//! wiring and deterministic result emission.

pub mod config;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use pipeline::Pipeline;

/// Shipped experiment presets, selectable by name.
pub const PRESETS: &[(&str, &str)] = &[
    (
        "hedgehog-dirichlet",
        include_str!("../presets/hedgehog-dirichlet.toml"),
    ),
    ("hedgehog-f1", include_str!("../presets/hedgehog-f1.toml")),
    ("cylinder", include_str!("../presets/cylinder.toml")),
    (
        "two-hedgehogs",
        include_str!("../presets/two-hedgehogs.toml"),
    ),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}
