mod common;

use common::gradcheck;

#[test]
fn finite_differences_over_at_least_100_configurations() {
    let configs = gradcheck::finite_difference_suite();
    assert!(configs >= 100, "only {configs} configurations");
}

#[test]
fn adam_three_steps_match_closed_form() {
    gradcheck::adam_three_steps_match_closed_form();
}

#[test]
fn one_two_one_mlp_by_hand() {
    gradcheck::one_two_one_mlp_by_hand();
}
