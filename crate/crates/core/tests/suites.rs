use himosa::verify::{degeneracy_suite, grad_suite, oracle_suite};

fn assert_all(reports: Vec<himosa::oracle::OracleReport>) {
    for r in &reports {
        println!("{r}");
    }
    let failed: Vec<_> = reports.iter().filter(|r| !r.pass).map(|r| r.op.clone()).collect();
    assert!(failed.is_empty(), "failing checks: {failed:?}");
}

#[test]
fn gradients_match_finite_differences() {
    assert_all(grad_suite());
}

#[test]
fn kernels_match_oracles() {
    assert_all(oracle_suite());
}

#[test]
fn degenerate_settings_have_known_outputs() {
    assert_all(degeneracy_suite());
}
