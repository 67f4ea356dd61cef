use qmirror::engine::Fault;
use qmirror::harness::{validate_suite, ValidateOptions};

#[test]
fn clean_build_passes() {
    let report = validate_suite(ValidateOptions::default()).unwrap();
    print!("{report}");
    assert!(report.passed(), "{:?}", report.failed());
}

#[test]
fn dropped_beta_factor_is_caught() {
    let report = validate_suite(ValidateOptions {
        fault: Fault::DropBetaFactor,
    })
    .unwrap();
    let failed: Vec<_> = report.failed().iter().map(|i| i.name.clone()).collect();
    assert!(
        failed.iter().any(|n| n.contains("mid_value_update")),
        "{failed:?}"
    );
}

#[test]
fn single_level_quantizer_is_caught() {
    let report = validate_suite(ValidateOptions {
        fault: Fault::SingleLevelQuantizer,
    })
    .unwrap();
    let failed: Vec<_> = report.failed().iter().map(|i| i.name.clone()).collect();
    assert!(
        failed.iter().any(|n| n.contains("resolution")),
        "{failed:?}"
    );
}
