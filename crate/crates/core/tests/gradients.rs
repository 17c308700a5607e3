use dlen_core::gradcheck::{block_suite, model_check, op_suite};

#[test]
fn operations_match_finite_differences() {
    for r in op_suite(17, 5).unwrap() {
        println!("{:<28} {:.3e}  ({})", r.name, r.rel_error, r.worst_input);
        assert!(r.passed(), "{r:?}");
    }
}

#[test]
fn blocks_match_finite_differences() {
    for r in block_suite(23, 5).unwrap() {
        println!("{:<28} {:.3e}  ({})", r.name, r.rel_error, r.worst_input);
        assert!(r.passed(), "{r:?}");
    }
}

#[test]
fn whole_model_matches_finite_differences() {
    let r = model_check(31, Some(32)).unwrap();
    println!("{:<28} {:.3e}  ({})", r.name, r.rel_error, r.worst_input);
    assert!(r.passed(), "{r:?}");
}
