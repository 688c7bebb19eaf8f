use mfegan::app::selftest::{default_checks, grad_case, print_table, run_checks};
use mfegan::tensor::Tensor;

#[test]
fn builtin_checks_pass() {
    let results = run_checks(&default_checks());
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
    assert!(failed.is_empty(), "{failed:?}");
}

#[test]
fn broken_gradient_is_reported_by_layer() {
    // x² with one factor cut off from the graph: the backward pass sees x, the
    // true derivative is 2x
    let broken = grad_case("square (detached)", Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap(), |t, x| {
        let c = t.constant(t.value(x).clone());
        let y = t.mul(x, c)?;
        t.sum(y)
    });
    let results = run_checks(&[broken]);
    let mut out = Vec::new();
    assert!(!print_table(&results, &mut out).unwrap());
    let out = String::from_utf8(out).unwrap();
    assert!(out.contains("square (detached)  FAIL"), "{out}");
    assert!(out.contains("1 failed"));
}
