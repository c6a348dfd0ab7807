use pyct3vae::pyct3vae;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module<F: FnOnce(Python<'_>, &Bound<'_, PyDict>)>(f: F) {
    pyo3::append_to_inittab!(pyct3vae);
    Python::initialize();
    Python::attach(|py| {
        let globals = PyDict::new(py);
        py.run(c"import pyct3vae as ct", Some(&globals), None)
            .unwrap();
        f(py, &globals);
    });
}

#[test]
fn module_exposes_divergence_sampling_and_errors() {
    with_module(|py, g| {
        let code = c"
q = ct.TDist([0.0, 0.0], [[1.0, 0.3], [0.3, 2.0]], 7.0)
p = ct.TDist.diagonal([1.0, -1.0], [0.5, 1.5], 7.0)
assert abs(ct.gamma_power_divergence(q, q)) < 1e-10
assert ct.gamma_power_divergence(q, p, form='original') > 0
assert len(q.sample(4, seed=1)) == 4
assert abs(q.covariance()[1][1] - 2.8) < 1e-12
assert ct.exponential_decay_counts(100, 4.0, 2) == [100, 25]
try:
    ct.gamma_power_divergence(q, p, form='bogus')
    raise AssertionError('accepted unknown form')
except ct.Ct3vaeError:
    pass
try:
    ct.TDist([0.0], [[1.0, 0.0]], 5.0)
    raise AssertionError('accepted ragged scale')
except ct.Ct3vaeError:
    pass
";
        py.run(code, Some(g), None).unwrap();
    });
}
