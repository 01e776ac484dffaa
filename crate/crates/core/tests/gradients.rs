mod common;

use ddrecon::gradcheck::GradCheckOptions;

#[test]
fn every_op_matches_finite_differences() {
    for (name, report) in common::op_gradient_reports() {
        assert!(report.checked > 0, "{name} checked nothing");
        assert!(
            report.passed() && report.max_relative_error < 1e-4,
            "{name}: max relative error {:.3e}, failures {:?}",
            report.max_relative_error,
            report.failures.first()
        );
    }
}

#[test]
fn se_block_gradients() {
    let report = common::se_block_report(&GradCheckOptions::default());
    assert!(report.passed(), "{:?}", report.failures.first());
}

#[test]
fn senet_gradients() {
    let options = GradCheckOptions {
        tolerance: 1e-3,
        ..Default::default()
    };
    let report = common::senet_report(&options);
    assert!(
        report.passed(),
        "max {:.3e}: {:?}",
        report.max_relative_error,
        report.failures.first()
    );
}

#[test]
fn cascade_gradients() {
    let options = GradCheckOptions {
        refine_step: Some(1e-7),
        tolerance: 1e-3,
        max_entries_per_param: Some(24),
        ..Default::default()
    };
    let report = common::cascade_report(&options);
    assert!(report.checked > 1000);
    assert!(
        report.refined.len() * 100 < report.checked,
        "{} refined",
        report.refined.len()
    );
    assert!(
        report.passed(),
        "max {:.3e}: {:?}",
        report.max_relative_error,
        report.failures.first()
    );
}
