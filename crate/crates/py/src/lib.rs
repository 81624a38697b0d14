//! Python bindings: a thin `Engine` wrapper over the core crate.

use std::collections::BTreeMap;
use std::path::PathBuf;

use hmgi_core::engine::{self, EngineConfig, EngineError, QuantMode};
use hmgi_core::graph::PropValue;
use hmgi_core::query::FusedResult;
use hmgi_core::Modality;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyFloat, PyInt, PyString};

fn err(e: EngineError) -> PyErr {
    match e {
        EngineError::Snapshot(hmgi_core::codec::SnapshotError::Io(io)) => {
            PyIOError::new_err(io.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

fn modality(name: &str) -> Modality {
    name.parse().unwrap_or_else(|e| match e {})
}

fn prop(v: &Bound<'_, PyAny>) -> PyResult<PropValue> {
    if v.is_instance_of::<PyBool>() {
        Ok(PropValue::Bool(v.extract()?))
    } else if v.is_instance_of::<PyInt>() {
        Ok(PropValue::Int(v.extract()?))
    } else if v.is_instance_of::<PyFloat>() {
        Ok(PropValue::Float(v.extract()?))
    } else if v.is_instance_of::<PyString>() {
        Ok(PropValue::Str(v.extract()?))
    } else {
        Err(PyValueError::new_err(format!(
            "unsupported property type {}",
            v.get_type().name()?
        )))
    }
}

fn result_dict<'py>(py: Python<'py>, r: &FusedResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("id", r.id)?;
    d.set_item("score", r.score)?;
    d.set_item("d_v", r.d_v)?;
    d.set_item("hops", r.hops.clone())?;
    d.set_item("community", r.community)?;
    d.set_item("partition", r.partition.map(|p| p.0))?;
    Ok(d)
}

#[pyclass(name = "Engine", module = "hmgi")]
struct PyEngine {
    inner: engine::Engine,
}

#[pymethods]
impl PyEngine {
    #[new]
    #[pyo3(signature = (*, partitions=None, quant="off", partitioning=true, fusion=true, delta=true, tuner=false, seed=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        partitions: Option<usize>,
        quant: &str,
        partitioning: bool,
        fusion: bool,
        delta: bool,
        tuner: bool,
        seed: Option<u64>,
    ) -> PyResult<Self> {
        let base = EngineConfig::default();
        let config = EngineConfig {
            partitions: partitions.unwrap_or(base.partitions),
            quant: quant.parse::<QuantMode>().map_err(PyValueError::new_err)?,
            partitioning,
            fusion,
            delta,
            tuner,
            seed: seed.unwrap_or(base.seed),
            ..base
        };
        Ok(Self {
            inner: engine::Engine::new(config),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: engine::Engine::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn register_modality(&self, name: &str, dim: usize) -> PyResult<()> {
        self.inner
            .register_modality(modality(name), dim)
            .map_err(err)
    }

    #[pyo3(signature = (modality_name, embedding=None, labels=Vec::new(), properties=None))]
    fn add_node(
        &self,
        modality_name: &str,
        embedding: Option<Vec<f32>>,
        labels: Vec<String>,
        properties: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<u64> {
        let mut props = BTreeMap::new();
        if let Some(d) = properties {
            for (k, v) in d.iter() {
                props.insert(k.extract::<String>()?, prop(&v)?);
            }
        }
        self.inner
            .add_node(labels, modality(modality_name), embedding.as_deref(), props)
            .map_err(err)
    }

    #[pyo3(signature = (src, dst, edge_type="related", weight=1.0))]
    fn add_edge(&self, src: u64, dst: u64, edge_type: &str, weight: f64) -> PyResult<()> {
        self.inner
            .add_edge(src, dst, edge_type, weight)
            .map_err(err)
    }

    fn set_property(&self, id: u64, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        self.inner.set_property(id, key, prop(value)?).map_err(err)
    }

    fn update_embedding(&self, id: u64, embedding: Vec<f32>) -> PyResult<()> {
        self.inner.update_embedding(id, &embedding).map_err(err)
    }

    fn delete_node(&self, id: u64) -> PyResult<()> {
        self.inner.delete_node(id).map_err(err)
    }

    fn build(&self) -> PyResult<()> {
        self.inner.build().map_err(err)
    }

    fn vacuum(&self) -> PyResult<()> {
        self.inner.vacuum().map_err(err)
    }

    /// Runs a query; `params` maps parameter names to vectors.
    #[pyo3(signature = (text, params=BTreeMap::new()))]
    fn query<'py>(
        &self,
        py: Python<'py>,
        text: &str,
        params: BTreeMap<String, Vec<f32>>,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let out = self.inner.query(text, &params).map_err(err)?;
        out.results.iter().map(|r| result_dict(py, r)).collect()
    }

    fn explain(&self, text: &str) -> PyResult<String> {
        self.inner.explain(text).map_err(err)
    }

    fn memory_report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let m = self.inner.memory_report();
        let d = PyDict::new(py);
        d.set_item("embedding_payload_bytes", m.embedding_payload_bytes)?;
        d.set_item("descriptor_bytes", m.descriptor_bytes)?;
        d.set_item("index_graph_bytes", m.index_graph_bytes)?;
        d.set_item("vectors", m.vectors)?;
        Ok(d)
    }
}

/// Parses query text and returns its canonical printed form.
#[pyfunction]
fn canonical_query(text: &str) -> PyResult<String> {
    hmgi_core::query::parse(text)
        .map(|a| a.to_string())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn hmgi(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEngine>()?;
    m.add_function(wrap_pyfunction!(canonical_query, m)?)?;
    Ok(())
}
