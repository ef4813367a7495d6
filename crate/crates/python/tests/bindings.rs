use std::ffi::CString;
use std::sync::Once;

use pyo3::prelude::*;

use kamlab_py::kamlab_module;

fn python(code: &str) -> PyResult<()> {
    static INIT: Once = Once::new();
    INIT.call_once(|| {
        pyo3::append_to_inittab!(kamlab_module);
        Python::initialize();
    });
    let code = CString::new(code).unwrap();
    Python::attach(|py| py.run(&code, None, None))
}

#[test]
fn grid_and_models() {
    python(
        r#"
import kamlab
assert "shifted_quadratic" in kamlab.list_models()
g = kamlab.Grid(2, 4)
assert len(g) == 16 and g.dim == 2 and g.spacing == 0.25
assert g.coords(5) == [0.25, 0.25]
assert g.nearest_node([-0.01, 0.0]) == 0
"#,
    )
    .unwrap();
}

#[test]
fn problem_pipeline() {
    python(
        r#"
import kamlab
p = kamlab.Problem("mechanical", 16, m=9, potential_u="cos(1)")
c = p.anchor()
assert abs(c - 1.0) < 1e-6, c
u, rep = p.solve(0.5)
assert rep.converged and rep.lambda_ == 0.5 and len(u) == 16
h = p.barrier()
assert h.aubry_set() == [0]
assert len(h.to_list()) == 16
assert h.triangle_defect([(1, 2, 3), (4, 0, 8)]) < 1e-6
assert len(p.mather_measure()) == 16
"#,
    )
    .unwrap();
}

#[test]
fn errors_map_to_python_exceptions() {
    python(
        r#"
import kamlab
for bad in (lambda: kamlab.Grid(0, 8), lambda: kamlab.Problem("mechanical", 8, potential_u="cos(")):
    try:
        bad()
    except ValueError:
        pass
    else:
        raise AssertionError("accepted bad input")
p = kamlab.Problem("mechanical", 8, m=5)
try:
    p.barrier(t_max=2.0)
except ValueError as e:
    assert "Tmax" in str(e)
else:
    raise AssertionError("short horizon accepted")
"#,
    )
    .unwrap();
}
