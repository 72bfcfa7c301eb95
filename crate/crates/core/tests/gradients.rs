use infwide::gradcheck::{end_to_end, op_suite};

#[test]
fn every_op_and_loss_matches_central_differences() {
    let checks = op_suite(7).unwrap();
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed()).collect();
    assert!(failed.is_empty(), "{failed:#?}");
    let names: std::collections::BTreeSet<_> = checks.iter().map(|c| c.name.as_str()).collect();
    assert!(checks.len() >= 3 * names.len());
}

#[test]
fn end_to_end_gradient_matches_central_differences() {
    let check = end_to_end(11, 2).unwrap();
    assert!(check.passed(), "{check:?}");
}
