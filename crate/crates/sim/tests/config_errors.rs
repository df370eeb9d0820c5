use blockcloud_sim::{run_scenario, ConfigError, ScenarioConfig};

#[test]
fn unknown_keys_are_rejected() {
    let err = ScenarioConfig::from_toml("[nodes]\nsupers = 4\ncolour = 1\n").unwrap_err();
    assert!(
        matches!(err, ConfigError::Parse(ref m) if m.contains("colour")),
        "{err}"
    );
}

#[test]
fn every_bad_field_is_reported() {
    let text = r#"
[nodes]
supers = 2
validators_per_task = 4

[latency]
min_us = 10
max_us = 5

[[behaviors]]
node = "nobody"
behavior = "silent"
"#;
    let Err(ConfigError::Invalid(fields)) = ScenarioConfig::from_toml(text) else {
        panic!("expected field errors");
    };
    let names: Vec<&str> = fields.iter().map(|f| f.field.as_str()).collect();
    assert!(names.contains(&"nodes.validators_per_task"), "{names:?}");
    assert!(names.contains(&"latency.max_us"), "{names:?}");
    assert!(names.contains(&"behaviors[0].node"), "{names:?}");
}

#[test]
fn run_validates_programmatic_configs() {
    let mut cfg = ScenarioConfig::from_toml("[nodes]\nsupers = 4\n").unwrap();
    cfg.nodes.validators_per_task = 0;
    assert!(matches!(run_scenario(&cfg, 0), Err(ConfigError::Invalid(_))));
}

#[test]
fn config_round_trips_through_text() {
    let cfg = blockcloud_sim::attacks::majority_scenario(7, 2, 3);
    assert_eq!(ScenarioConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
}
