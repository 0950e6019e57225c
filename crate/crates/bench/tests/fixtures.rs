use selfdual_bench::{problem, wavy_path};

#[test]
fn wavy_path_has_finite_value() {
    for name in ["gl_skew", "ham_bilaplacian", "nls_cubic"] {
        let p = problem(name, 8, 8).unwrap();
        let path = wavy_path(&p);
        assert_eq!(path.intervals(), 8);
        assert!(p.functional.value(&path).is_finite(), "{name}");
    }
}

#[test]
fn resizing_changes_dimension() {
    let small = problem("gl_skew", 8, 4).unwrap();
    let large = problem("gl_skew", 16, 4).unwrap();
    assert_eq!(2 * small.dim(), large.dim());
}
