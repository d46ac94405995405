//! Analytic gradients of the flow loss against central finite differences.

mod common;

use common::{check_gradients, perturbed_toy, LossCase};

const TOLERANCE: f64 = 1e-4;

fn assert_close(checks: &[common::GradCheck]) {
    for c in checks {
        assert!(c.analytic.abs() > 1e-9, "{} has a vanishing gradient", c.name);
        assert!(c.rel_error() < TOLERANCE, "{c:?} rel {:e}", c.rel_error());
    }
}

#[test]
fn every_parameter_group_with_a_prompt() {
    let mut model = perturbed_toy(11);
    let case = LossCase::new(&model, 3, false);
    let checks = check_gradients(&mut model, &case, |n| n != "text.null");
    assert_eq!(checks.len(), model.params.len() - 1);
    assert!(checks.iter().any(|c| c.name.starts_with("adapter.")));
    assert_close(&checks);
}

#[test]
fn null_text_embedding() {
    let mut model = perturbed_toy(12);
    let case = LossCase::new(&model, 4, true);
    let checks = check_gradients(&mut model, &case, |n| n == "text.null" || n.contains("cross.kv"));
    assert_eq!(checks.len(), 1 + 2 * model.config.layers);
    assert_close(&checks);
}
