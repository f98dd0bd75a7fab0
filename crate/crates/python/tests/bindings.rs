use pyo3::prelude::*;
use pyo3::types::PyDict;

use fdaregion_py::fdaregion_py;

#[test]
fn module_round_trip() {
    pyo3::append_to_inittab!(fdaregion_py);
    Python::attach(|py| {
        let globals = PyDict::new(py);
        py.run(
            cr#"
import fdaregion as f
grid = [i / 29 for i in range(30)]
mean = [f.poly_mean(t) for t in grid]
s = f.sample_gp(grid, mean, nu=1.5, n=40, seed=3)
r = f.Region.build(s, kind="r_z")
p_true = r.pvalue(mean)
p_far = r.pvalue([m + 1.0 for m in mean])
band = f.Band.build(s, kind="naive_t")
width_ok = all(lo < hi for lo, hi in zip(band.lower, band.upper))
q = f.wchisq_quantile([1.0, 1.0], 0.5, method="gamma")
"#,
            Some(&globals),
            None,
        )
        .unwrap();
        let get = |k: &str| globals.get_item(k).unwrap().unwrap();
        let p_true: f64 = get("p_true").extract().unwrap();
        let p_far: f64 = get("p_far").extract().unwrap();
        assert!((0.0..=1.0).contains(&p_true));
        assert!(p_far < 1e-6);
        assert!(get("width_ok").extract::<bool>().unwrap());
        // two unit weights make a chi-square with 2 df, which the gamma fit matches exactly
        let q: f64 = get("q").extract().unwrap();
        assert!((q - 2.0 * std::f64::consts::LN_2).abs() < 1e-9);

        let err = py
            .run(c"f.Region.build(s, kind='nope')", Some(&globals), None)
            .unwrap_err();
        assert!(err.is_instance_of::<pyo3::exceptions::PyValueError>(py));
    });
}
