use pyo3::prelude::*;

#[pymodule]
fn fedmv_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
