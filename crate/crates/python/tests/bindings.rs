use pyo3::ffi::c_str;
use pyo3::prelude::*;

#[test]
fn module_round_trip() {
    use regime_clt_py::regime_clt_py;
    pyo3::append_to_inittab!(regime_clt_py);
    Python::initialize();
    Python::attach(|py| {
        py.run(
            c_str!(
                r#"
import regime_clt_py as rc
p = rc.TransitionMatrix([[0.9, 0.1], [0.2, 0.8]])
pi = p.stationary()
assert abs(pi[0] - 2 / 3) < 1e-12 and abs(pi[1] - 1 / 3) < 1e-12
assert abs(p.slem() - 0.7) < 1e-12
assert p.is_ergodic()["ergodic"]
m = rc.Model(p, [{"family": "gaussian", "mu": -1.0, "sigma": 1.0},
                 {"family": "gaussian", "mu": 1.0, "sigma": 1.0}])
assert abs(m.stationary_mean() + 1 / 3) < 1e-12
states, xs = m.sample_path(100, seed=3)
assert len(states) == len(xs) == 100
assert m.sample_path(100, seed=3) == (states, xs)
g = rc.conditional_gap(m, {"states": [0]}, {"states": [0]}, 3)
assert abs(g["gap_estimate"] - 0.7 ** 3 / 3) < 1e-12
d = rc.decompose(1000, 0.25, 2)
assert (d["k"], d["nu"]) == (5, 200)
try:
    rc.decompose(1000, 0.25, 5)
    raise AssertionError("expected ValueError")
except ValueError:
    pass
assert rc.Model.from_json(m.to_json()).n_states == 2
"#
            ),
            None,
            None,
        )
        .inspect_err(|e| e.print(py))
        .unwrap();
    });
}
