//! The acceptance suites as individual tests.

mod common;

fn run(check: fn() -> common::Check) {
    match check() {
        Ok(detail) => println!("{detail}"),
        Err(reason) => panic!("{reason}"),
    }
}

#[test]
fn trace_2d() {
    run(common::check_trace_2d);
}

#[test]
fn canonical_n20() {
    run(common::check_canonical_n20);
}

#[test]
fn ordering() {
    run(common::check_ordering);
}

#[test]
fn per_barrier_accuracy() {
    run(common::check_per_barrier_accuracy);
}

#[test]
fn stationarity_identity() {
    run(common::check_stationarity_identity);
}

#[test]
fn consensus_qp() {
    run(common::check_consensus_qp);
}

#[test]
fn barrier_minimizer() {
    run(common::check_barrier_minimizer);
}

#[test]
fn smooth_agreement() {
    run(common::check_smooth_agreement);
}

#[test]
fn derivatives() {
    run(common::check_derivatives);
}

#[test]
fn determinism() {
    run(common::check_determinism);
}
