mod support;

use support::PROPERTIES;

fn run(name: &str) {
    let (_, property) = PROPERTIES.iter().find(|(n, _)| *n == name).expect("known property");
    if let Err(e) = property() {
        panic!("{name}: {e}");
    }
}

#[test]
fn every_property_is_listed() {
    assert_eq!(PROPERTIES.len(), 7);
}

#[test]
fn tucker_factors_are_orthonormal() {
    run("orthonormal tucker factors");
}

#[test]
fn basis_updates_are_orthonormal() {
    run("orthonormal basis updates");
}

#[test]
fn fitted_bases_are_orthonormal() {
    run("orthonormal fitted bases");
}

#[test]
fn bspline_partition_of_unity() {
    run("b-spline partition of unity");
}

#[test]
fn smspe_scale_invariance() {
    run("smspe scale invariance");
}

#[test]
fn fold_unfold_round_trip() {
    run("fold/unfold round trip");
}

#[test]
fn gp_covariance_monte_carlo() {
    run("gp covariance monte carlo");
}
