use std::time::Duration;

use proptest::prelude::*;
use r2o_core::config::{
    default_config, parse_config, parse_config_with, serialize_config, OverrideLevel, ParseOptions, CANONICAL_DOCUMENT,
};

#[test]
fn canonical_document_consumed_in_full() {
    let parsed = parse_config_with(CANONICAL_DOCUMENT, ParseOptions::default()).unwrap();
    assert!(parsed.warnings.is_empty(), "{:?}", parsed.warnings);
    let lenient = parse_config_with(
        CANONICAL_DOCUMENT,
        ParseOptions {
            strict: false,
            fill_defaults: false,
        },
    )
    .unwrap();
    assert!(lenient.warnings.is_empty());
    assert_eq!(lenient.config, parsed.config);
}

#[test]
fn default_thresholds_are_the_documented_values() {
    let t = default_config().thresholds;
    assert_eq!(t.disparity, 1.2);
    assert_eq!(t.hazard_per_hour, 1e-4);
    assert_eq!(t.accessibility_minutes, 30.0);
}

proptest! {
    #[test]
    fn serialized_config_parses_back_equal(
        disparity in 1.0..10.0f64,
        hazard in 1e-7..1e-2f64,
        access in 1.0..600.0f64,
        qdef in 0.0..1.0f64,
        quality in proptest::collection::btree_map("[a-z][a-z_]{0,8}", 0.0..1.0f64, 0..4),
        l1_min in 1u64..600,
        l2_extra in 1u64..6000,
        l3_extra in 1u64..60000,
        l3_whole_days in any::<bool>(),
        model_card in any::<bool>(),
        datasheet in any::<bool>(),
    ) {
        let mut cfg = default_config();
        cfg.thresholds.disparity = disparity;
        cfg.thresholds.hazard_per_hour = hazard;
        cfg.thresholds.accessibility_minutes = access;
        cfg.thresholds.quality_default = qdef;
        cfg.thresholds.quality = quality;
        let l1 = l1_min * 60;
        let l2 = l1 + l2_extra * 60;
        let mut l3 = l2 + l3_extra * 60;
        if l3_whole_days {
            l3 = l3.div_ceil(86_400) * 86_400;
        }
        for (level, secs) in [(OverrideLevel::L1, l1), (OverrideLevel::L2, l2), (OverrideLevel::L3, l3)] {
            cfg.levels.get_mut(&level).unwrap().max_duration = Duration::from_secs(secs);
        }
        cfg.documentation.model_card = model_card;
        cfg.documentation.datasheet = datasheet;

        let text = serialize_config(&cfg).unwrap();
        let back = parse_config(&text).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
