//! Python bindings. Group elements cross the boundary as normal-form strings.

use std::collections::BTreeMap;

use maharam_core::cocycle::{gibbs_cocycle, rn_cocycle};
use maharam_core::construction::{build_phi, PhiMap, PhiOptions};
use maharam_core::report::{parse_sign, run, ExperimentConfig};
use maharam_core::{sample, Configuration, GroupKind, GroupModel, LabError, MarginalFamily, Side};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: LabError) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

#[pyclass(name = "GroupModel", module = "maharam")]
#[derive(Clone)]
struct PyGroupModel {
    inner: GroupModel,
}

#[pymethods]
impl PyGroupModel {
    #[new]
    fn new(kind: &str) -> PyResult<Self> {
        let kind: GroupKind = kind.parse().map_err(err)?;
        Ok(PyGroupModel { inner: GroupModel::new(kind) })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().name()
    }

    fn ball(&self, radius: u32) -> PyResult<Vec<String>> {
        Ok(self.inner.ball(radius).map_err(err)?.iter().map(|g| g.normal_form()).collect())
    }

    fn ball_size(&self, radius: u32) -> PyResult<u128> {
        self.inner.ball_size(radius).map_err(err)
    }

    fn mul(&self, a: &str, b: &str) -> PyResult<String> {
        let (a, b) = (self.inner.parse_element(a).map_err(err)?, self.inner.parse_element(b).map_err(err)?);
        Ok(self.inner.mul(&a, &b).map_err(err)?.normal_form())
    }

    fn inv(&self, a: &str) -> PyResult<String> {
        let a = self.inner.parse_element(a).map_err(err)?;
        Ok(self.inner.inv(&a).map_err(err)?.normal_form())
    }

    fn word_length(&self, a: &str) -> PyResult<u64> {
        Ok(self.inner.parse_element(a).map_err(err)?.word_length())
    }
}

#[pyclass(name = "MarginalFamily", module = "maharam")]
#[derive(Clone)]
struct PyFamily {
    inner: MarginalFamily,
}

#[pymethods]
impl PyFamily {
    #[staticmethod]
    #[pyo3(signature = (delta=0.1, lambda0=0.5))]
    fn z_demo(delta: f64, lambda0: f64) -> PyResult<Self> {
        Ok(PyFamily { inner: MarginalFamily::z_demo(delta, lambda0).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (base=2.0, delta=0.1, lambda0=0.5))]
    fn f2_radial(base: f64, delta: f64, lambda0: f64) -> PyResult<Self> {
        Ok(PyFamily { inner: MarginalFamily::f2_radial(base, delta, lambda0).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (kind, lambda0=0.5, delta=0.1))]
    fn constant(kind: &str, lambda0: f64, delta: f64) -> PyResult<Self> {
        let model = PyGroupModel::new(kind)?.inner;
        Ok(PyFamily { inner: MarginalFamily::constant(model, lambda0, delta).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (kind, values, lambda0=0.5, delta=0.1))]
    fn finitely_perturbed(kind: &str, values: BTreeMap<String, f64>, lambda0: f64, delta: f64) -> PyResult<Self> {
        let model = PyGroupModel::new(kind)?.inner;
        let mut m = BTreeMap::new();
        for (k, v) in values {
            m.insert(model.parse_element(&k).map_err(err)?, v);
        }
        Ok(PyFamily { inner: MarginalFamily::finitely_perturbed(model, lambda0, delta, m).map_err(err)? })
    }

    #[getter]
    fn model(&self) -> PyGroupModel {
        PyGroupModel { inner: self.inner.model().clone() }
    }

    fn mu0(&self, g: &str) -> PyResult<f64> {
        Ok(self.inner.mu0(&self.inner.model().parse_element(g).map_err(err)?))
    }

    fn eta(&self, g: &str) -> PyResult<(f64, f64)> {
        let e = self.inner.eta(&self.inner.model().parse_element(g).map_err(err)?);
        Ok((e.eta0, e.eta1))
    }

    fn kakutani_partial(&self, g: &str, radius: u32) -> PyResult<f64> {
        let g = self.inner.model().parse_element(g).map_err(err)?;
        self.inner.kakutani_partial(&g, radius).map_err(err)
    }

    fn divergence_partial(&self, radius: u32) -> PyResult<f64> {
        self.inner.divergence_partial(radius, Side::All).map_err(err)
    }

    fn l2_tail_profile(&self, radius: u32) -> PyResult<f64> {
        self.inner.l2_tail_profile(radius).map_err(err)
    }

    fn sample(&self, seed: u64) -> PyConfiguration {
        PyConfiguration { inner: sample(&self.inner, seed) }
    }

    /// `(value, radius, tail_mean_bound, tail_std_bound)`.
    fn rn_cocycle(&self, g: &str, x: &PyConfiguration, radius: u32) -> PyResult<(f64, u32, f64, f64)> {
        let g = self.inner.model().parse_element(g).map_err(err)?;
        let r = rn_cocycle(&self.inner, &g, &x.inner, radius).map_err(err)?;
        Ok((r.value, r.radius, r.tail_mean_bound, r.tail_std_bound))
    }

    fn gibbs_cocycle(&self, x: &PyConfiguration, x2: &PyConfiguration) -> PyResult<f64> {
        gibbs_cocycle(&self.inner, &x.inner, &x2.inner).map_err(err)
    }

    #[pyo3(signature = (t, eps, window=Vec::new(), sign="+", budget=20000, seed=0))]
    fn build_phi(&self, t: f64, eps: f64, window: Vec<String>, sign: &str, budget: usize, seed: u64) -> PyResult<PyPhi> {
        let model = self.inner.model();
        let window = window.iter().map(|w| model.parse_element(w)).collect::<Result<Vec<_>, _>>().map_err(err)?;
        let mut opts = PhiOptions { budget, seed, ..Default::default() };
        opts.horizon.seed = seed;
        let phi = build_phi(&self.inner, &window, t, eps, parse_sign(sign).map_err(err)?, &opts).map_err(err)?;
        Ok(PyPhi { inner: phi })
    }
}

#[pyclass(name = "Configuration", module = "maharam")]
#[derive(Clone)]
struct PyConfiguration {
    inner: Configuration,
}

#[pymethods]
impl PyConfiguration {
    fn value(&self, h: &str) -> PyResult<u8> {
        Ok(self.inner.value(&self.inner.family().model().parse_element(h).map_err(err)?))
    }

    fn act(&self, g: &str) -> PyResult<Self> {
        let g = self.inner.family().model().parse_element(g).map_err(err)?;
        Ok(PyConfiguration { inner: self.inner.act(&g).map_err(err)? })
    }

    fn with_values(&self, changes: BTreeMap<String, u8>) -> PyResult<Self> {
        let model = self.inner.family().model();
        let mut c = Vec::new();
        for (k, v) in changes {
            if v > 1 {
                return Err(PyValueError::new_err("symbols are 0 or 1"));
            }
            c.push((model.parse_element(&k).map_err(err)?, v));
        }
        Ok(PyConfiguration { inner: self.inner.with_values(c) })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed()
    }
}

#[pyclass(name = "PhiMap", module = "maharam")]
struct PyPhi {
    inner: PhiMap,
}

#[pymethods]
impl PyPhi {
    #[getter]
    fn horizon(&self) -> usize {
        self.inner.n()
    }

    fn contains(&self, x: &PyConfiguration) -> bool {
        self.inner.contains(&x.inner)
    }

    fn apply(&self, x: &PyConfiguration) -> PyResult<PyConfiguration> {
        Ok(PyConfiguration { inner: self.inner.apply(&x.inner).map_err(err)? })
    }

    fn rn(&self, x: &PyConfiguration) -> PyResult<f64> {
        self.inner.rn(&x.inner).map_err(err)
    }

    fn support(&self) -> Vec<String> {
        self.inner.support().iter().map(|g| g.normal_form()).collect()
    }

    /// `(successes, trials, estimate, lower)` of the Monte Carlo domain estimate.
    fn domain_estimate(&self) -> Option<(u64, u64, f64, f64)> {
        self.inner.domain_estimate().map(|p| (p.successes, p.trials, p.estimate, p.lower))
    }
}

/// Runs an experiment config given as JSON and returns the report as JSON.
#[pyfunction]
fn run_report(config_json: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json_str(config_json).map_err(err)?;
    let rep = run(&cfg).map_err(err)?;
    serde_json::to_string(&rep).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn maharam(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGroupModel>()?;
    m.add_class::<PyFamily>()?;
    m.add_class::<PyConfiguration>()?;
    m.add_class::<PyPhi>()?;
    m.add_function(wrap_pyfunction!(run_report, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
