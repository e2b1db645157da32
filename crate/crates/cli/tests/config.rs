use kglattice_cli::config::{ExperimentConfig, MetricFamily};

#[test]
fn default_config_round_trips() {
    let cfg = ExperimentConfig::default();
    let text = cfg.to_toml();
    let back = ExperimentConfig::parse(&text).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.to_toml(), text);
}

#[test]
fn edited_config_round_trips() {
    let mut cfg = ExperimentConfig::default();
    cfg.metric.family = MetricFamily::Cosmological;
    cfg.field.xi = 0.125;
    cfg.run.seed = 7;
    cfg.perturbation.amp_a = -0.015625;
    let back = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn missing_keys_take_defaults() {
    let cfg = ExperimentConfig::parse("[grid]\nn_t = 160\n\n[metric]\nfamily = \"bump\"\n").unwrap();
    assert_eq!(cfg.grid.n_t, 160);
    assert_eq!(cfg.metric.family, MetricFamily::Bump);
    assert_eq!(cfg.field, ExperimentConfig::default().field);
}

#[test]
fn unknown_keys_are_rejected_with_line_numbers() {
    let err = ExperimentConfig::parse("[grid]\nn_t = 64\n\n[field]\nmass = 2.0\n").unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.contains("line 5"), "{msg}");
    assert!(msg.contains("mass"), "{msg}");

    let err = ExperimentConfig::parse("[grid]\n[gird]\nn_t = 3\n").unwrap_err();
    assert!(format!("{err:#}").contains("line 2"), "{err:#}");
}

#[test]
fn syntax_errors_report_line_numbers() {
    let err = ExperimentConfig::parse("[run]\nseed = 1\ntol_scale = \n").unwrap_err();
    assert!(format!("{err:#}").contains("line 3"), "{err:#}");
    let err = ExperimentConfig::parse("[metric]\nfamily = \"sphere\"\n").unwrap_err();
    assert!(format!("{err:#}").contains("line 2"), "{err:#}");
}

#[test]
fn out_of_range_values_are_rejected() {
    for text in [
        "[grid]\nn_t = 4\n",
        "[grid]\ndx = -0.1\n",
        "[run]\nt_ref = 1000\n",
        "[run]\ntol_scale = 0.0\n",
        "[region]\nband_lo = 70\nband_hi = 60\n",
        "[field]\nm_sq = -1.0\n",
    ] {
        let parsed = ExperimentConfig::parse(text).and_then(|c| c.kg().map(|_| c));
        assert!(parsed.is_err(), "accepted {text:?}");
    }
}
