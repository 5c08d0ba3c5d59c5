use pyo3::ffi::c_str;
use pyo3::prelude::*;
use shen::shen;

fn with_module<R>(f: impl FnOnce(Python<'_>) -> PyResult<R>) -> R {
    static INIT: std::sync::Once = std::sync::Once::new();
    INIT.call_once(|| {
        pyo3::append_to_inittab!(shen);
        pyo3::prepare_freethreaded_python();
    });
    Python::with_gil(|py| f(py).unwrap_or_else(|e| panic!("{e}")))
}

#[test]
fn config_phi_and_simulation_round_trip() {
    with_module(|py| {
        let code = c_str!(
            r#"
import math, shen
cfg = shen.Config.from_json('{"horizon": 1.0}')
assert abs(cfg.phi(1.0) - math.sqrt(1 / (2 * math.pi))) < 1e-12
assert shen.Config.from_json(cfg.to_json()).hash() == cfg.hash()
sim = cfg.simulator()
states = sim.solve(3, 0)
assert len(states) == cfg.steps + 1 and states[0] == [0.0] * len(states[0])
assert sim.solve(3, 0) == states
ok = sim.linear_identity(0)["relative_error"] < 0.1
"#
        );
        let locals = pyo3::types::PyDict::new(py);
        py.run(code, None, Some(&locals))?;
        assert!(locals.get_item("ok")?.unwrap().extract::<bool>()?);
        Ok(())
    });
}

#[test]
fn invalid_configs_raise_value_error() {
    with_module(|py| {
        let code = c_str!(
            r#"
import shen
try:
    shen.Config.from_json('{"dt": -1}')
    raised = False
except ValueError as e:
    raised = "dt" in str(e)
"#
        );
        let locals = pyo3::types::PyDict::new(py);
        py.run(code, None, Some(&locals))?;
        assert!(locals.get_item("raised")?.unwrap().extract::<bool>()?);
        Ok(())
    });
}
