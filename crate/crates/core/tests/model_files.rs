//! The TOML files shipped under `models/` must build exactly the same models
//! as the programmatic constructors.

use std::fs;
use std::path::PathBuf;

use factor_core::models::{
    burglary_model, lg_ssm_1d, lg_ssm_2d, quadrant_model, simulate, QuadrantModelConfig,
};
use factor_core::{parse_model, serialize_model, BuiltModel};

fn model_text(file: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../models")
        .join(file);
    fs::read_to_string(&path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

#[test]
fn shipped_burglary_file_matches_the_builder() {
    let parsed = parse_model(&model_text("burglary.toml")).unwrap();
    let from_file = parsed.as_graph().expect("factor graph");
    let built = burglary_model();
    assert_eq!(from_file.variables(), built.variables());
    // Factor declaration order differs from scope order in the file, so
    // compare as sets keyed by scope.
    assert_eq!(from_file.factors().len(), built.factors().len());
    for f in built.factors() {
        let twin = from_file
            .factors()
            .iter()
            .find(|g| g.scope() == f.scope())
            .unwrap_or_else(|| panic!("no factor over {}", f.scope()));
        assert_eq!(twin, f);
    }
}

#[test]
fn shipped_linear_gaussian_files_match_the_builders() {
    for (file, builder) in [("lg1d.toml", lg_ssm_1d()), ("lg2d.toml", lg_ssm_2d())] {
        let parsed = parse_model(&model_text(file)).unwrap();
        let from_file = parsed.as_state_space().expect("state-space model");
        assert_eq!(from_file, &builder, "{file}");
    }
}

#[test]
fn shipped_quadrant_file_matches_the_default_config() {
    let parsed = parse_model(&model_text("quadrant.toml")).unwrap();
    assert_eq!(parsed.quadrant_config().unwrap(), QuadrantModelConfig::default());
    let from_file = parsed.as_state_space().expect("state-space model");
    let built = quadrant_model(&QuadrantModelConfig::default()).unwrap();
    assert_eq!(from_file, &built);
    // Same model, same seed, same draws.
    let a = simulate(from_file, 10, 3).unwrap();
    let b = simulate(&built, 10, 3).unwrap();
    assert_eq!(a.states, b.states);
    assert_eq!(a.observations, b.observations);
}

#[test]
fn shipped_files_round_trip() {
    for file in ["burglary.toml", "lg1d.toml", "lg2d.toml", "quadrant.toml"] {
        let first = parse_model(&model_text(file)).unwrap();
        let second = parse_model(&serialize_model(&first).unwrap()).unwrap();
        assert_eq!(first.doc(), second.doc(), "{file}");
        match (first.built(), second.built()) {
            (BuiltModel::Graph(a), BuiltModel::Graph(b)) => assert_eq!(a, b, "{file}"),
            (BuiltModel::StateSpace(a), BuiltModel::StateSpace(b)) => assert_eq!(a, b, "{file}"),
            _ => panic!("{file}: round trip changed the model kind"),
        }
    }
}
