use std::time::Instant;

use tensorkit::gradcheck::kernel_suite;

#[test]
fn every_kernel_passes_finite_difference_check_over_20_seeds() {
    let start = Instant::now();
    let checks = kernel_suite(20).unwrap();
    for c in &checks {
        println!(
            "{:<24} seeds={} coords={:<5} max_rel={:.3e} max_abs={:.3e}",
            c.kernel, c.seeds, c.report.coords, c.report.max_rel_err, c.report.max_abs_err
        );
    }
    for c in &checks {
        assert!(c.report.max_rel_err <= 1e-3, "{} rel err {}", c.kernel, c.report.max_rel_err);
    }
    assert!(start.elapsed().as_secs() < 120);
}
