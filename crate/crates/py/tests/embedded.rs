use pyo3::prelude::*;
use pyo3::types::PyModule;

#[test]
fn module_imports_and_computes() {
    Python::initialize();
    Python::attach(|py| {
        let m = PyModule::new(py, "mutforge").unwrap();
        mutforge_py::init_module(&m).unwrap();
        let cost: f64 = m.getattr("cost").unwrap().call1((22276u64, 2500u64)).unwrap().extract().unwrap();
        assert!((cost - 0.08069).abs() < 1e-9);
        let seed = m.getattr("SeedProgram").unwrap().call1(("fn f(a,b){a+b}",)).unwrap();
        let json: String = seed.call_method0("to_json").unwrap().extract().unwrap();
        let back = m.getattr("SeedProgram").unwrap().call_method1("from_json", (json,)).unwrap();
        assert!(back.eq(&seed).unwrap());
        let label: String = m
            .getattr("classify_build_errors")
            .unwrap()
            .call1(("error[E0308]: mismatched types",))
            .unwrap()
            .extract()
            .unwrap();
        assert_eq!(label, "operand_type_mismatch");
    });
}
