use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

use mlscope_core::audio::{self as au, AnalysisParams};
use mlscope_core::isochrome::{self as iso, KMeansParams};
use mlscope_core::qlearn::{self as ql, RewardSpec, TrainingConfig};

create_exception!(mlscope, MlscopeError, PyException);

fn err(code: &str, message: impl std::fmt::Display) -> PyErr {
    MlscopeError::new_err(format!("{code}: {message}"))
}

trait Coded: std::fmt::Display {
    fn code(&self) -> &'static str;
}

impl Coded for iso::IsochromeError {
    fn code(&self) -> &'static str {
        iso::IsochromeError::code(self)
    }
}

impl Coded for au::AudioError {
    fn code(&self) -> &'static str {
        au::AudioError::code(self)
    }
}

impl Coded for ql::QLearnError {
    fn code(&self) -> &'static str {
        ql::QLearnError::code(self)
    }
}

fn w<E: Coded>(e: E) -> PyErr {
    err(e.code(), e)
}

// Round-trips through the json module so callers get plain dicts and lists.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| err("Encode", e))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Result of splitting an image into isochromatic layers.
#[pyclass(module = "mlscope")]
struct Decomposition {
    inner: iso::Decomposition,
    seed: u64,
}

#[pymethods]
impl Decomposition {
    /// Model summary: k, centroids, inertia, iterations and per-layer counts.
    fn summary(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.summary(self.seed))
    }

    #[getter]
    fn inertia(&self) -> f64 {
        self.inner.model.inertia
    }

    #[getter]
    fn centroids(&self) -> Vec<[f64; 3]> {
        self.inner.model.centroids.clone()
    }

    #[getter]
    fn assignments(&self) -> Vec<usize> {
        self.inner.model.assignments.clone()
    }

    /// PNG bytes for each layer, darkest first.
    fn layer_pngs<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyBytes>>> {
        self.inner
            .layers
            .iter()
            .map(|l| Ok(PyBytes::new(py, &l.to_png(&self.inner.raster).map_err(w)?)))
            .collect()
    }

    fn point_cloud(&self) -> String {
        self.inner.point_cloud()
    }

    fn __len__(&self) -> usize {
        self.inner.layers.len()
    }
}

/// Decodes a PNG or JPEG and clusters its colors into `k` layers.
#[pyfunction]
#[pyo3(signature = (image, k, seed=0, stride=1))]
fn decompose(image: &[u8], k: usize, seed: u64, stride: usize) -> PyResult<Decomposition> {
    let raster = iso::decode_image(image).map_err(w)?;
    let params = KMeansParams {
        k,
        seed,
        ..KMeansParams::default()
    };
    let inner = iso::decompose(raster, stride, &params).map_err(w)?;
    Ok(Decomposition { inner, seed })
}

/// K-means over raw RGB triples. Returns (centroids, assignments, inertia).
#[pyfunction]
#[pyo3(signature = (points, k, seed=0))]
fn kmeans(points: Vec<[f64; 3]>, k: usize, seed: u64) -> PyResult<(Vec<[f64; 3]>, Vec<usize>, f64)> {
    let pts: Vec<iso::ColorPoint> = points.iter().map(|p| iso::ColorPoint::new(p[0], p[1], p[2])).collect();
    let m = iso::kmeans_fit(&pts, &KMeansParams { k, seed, ..KMeansParams::default() }).map_err(w)?;
    Ok((m.centroids, m.assignments, m.inertia))
}

#[pyclass(module = "mlscope")]
struct HapticScript {
    inner: au::HapticScript,
}

#[pymethods]
impl HapticScript {
    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration
    }

    /// Events as dicts with t, kind, finger, intensity and, on notes, pitch_class.
    fn events(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.events)
    }

    fn count(&self, kind: &str) -> PyResult<usize> {
        let kind = match kind {
            "beat" => au::EventKind::Beat,
            "note" => au::EventKind::Note,
            "accent" => au::EventKind::Accent,
            other => return Err(err("InvalidKind", format!("unknown event kind '{other}'"))),
        };
        Ok(self.inner.count(kind))
    }

    #[pyo3(signature = (source=""))]
    fn to_records(&self, source: &str) -> String {
        self.inner.to_records(source)
    }

    #[staticmethod]
    fn from_records(text: &str) -> PyResult<Self> {
        let (_, inner) = au::HapticScript::from_records(text).map_err(w)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.events.len()
    }
}

/// Runs the full audio-to-haptics pipeline on WAV bytes.
#[pyfunction]
fn analyze_wav(wav: &[u8]) -> PyResult<HapticScript> {
    let buffer = au::decode_wav(wav).map_err(w)?;
    let inner = au::analyze(&buffer, &AnalysisParams::default()).map_err(w)?;
    Ok(HapticScript { inner })
}

#[pyfunction]
fn tutorial(kind: &str) -> PyResult<HapticScript> {
    let kind: au::TutorialKind = kind.parse().map_err(|e| err("InvalidKind", e))?;
    Ok(HapticScript {
        inner: au::tutorial_script(kind),
    })
}

/// Finger name for a pitch class, 0 = C through 11 = B.
#[pyfunction]
fn finger_for_pitch_class(pc: u8) -> PyResult<&'static str> {
    let pc = au::PitchClass::new(pc).ok_or_else(|| err("InvalidPitchClass", format!("{pc} is not in 0..12")))?;
    Ok(au::finger_for_pitch_class(pc).name())
}

#[pyfunction]
fn pitch_class_of(hz: f64) -> &'static str {
    au::PitchClass::nearest(hz).name()
}

#[pyclass(module = "mlscope", from_py_object)]
#[derive(Clone)]
struct GridWorld {
    inner: ql::GridWorld,
}

#[pymethods]
impl GridWorld {
    /// `rows` use `.` empty, `R` rock, `L` lava, `G` goal.
    #[new]
    fn new(rows: Vec<String>, start: (usize, usize)) -> PyResult<Self> {
        let rows: Vec<&str> = rows.iter().map(String::as_str).collect();
        let inner = ql::GridWorld::from_rows(&rows, ql::Pos::new(start.0, start.1)).map_err(w)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn level(n: u32) -> PyResult<Self> {
        Ok(Self {
            inner: ql::builtin_level(n).map_err(w)?.grid,
        })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ql::GridWorld::parse(text).map_err(w)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn start(&self) -> (usize, usize) {
        let p = self.inner.start();
        (p.x, p.y)
    }

    /// Length of the shortest start-to-goal path, or None.
    fn shortest_path(&self) -> Option<usize> {
        ql::bfs_shortest_path(&self.inner)
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }
}

type Cellxy = (usize, usize);

#[pyclass(module = "mlscope")]
struct TrainingSession {
    inner: ql::TrainingSession,
}

#[pymethods]
impl TrainingSession {
    /// Config keys match the engine's: alpha, gamma, epsilon_start,
    /// epsilon_decay, epsilon_min, max_steps_per_episode, max_episodes.
    #[new]
    #[pyo3(signature = (grid, seed=0, config=None))]
    fn new(py: Python<'_>, grid: GridWorld, seed: u64, config: Option<Bound<'_, PyAny>>) -> PyResult<Self> {
        let mut cfg: TrainingConfig = match config {
            Some(c) => {
                let text: String = py.import("json")?.call_method1("dumps", (c,))?.extract()?;
                serde_json::from_str(&text).map_err(|e| err("InvalidConfig", e))?
            }
            None => TrainingConfig::default(),
        };
        cfg.seed = seed;
        let inner = ql::TrainingSession::new(grid.inner, cfg, RewardSpec::default()).map_err(w)?;
        Ok(Self { inner })
    }

    fn start(&mut self) {
        self.inner.start();
    }

    fn pause(&mut self) {
        self.inner.pause();
    }

    fn reset(&mut self) {
        self.inner.reset();
    }

    #[getter]
    fn status(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.status())
    }

    /// Advances one step of a running session and returns the snapshot.
    fn step(&mut self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let snap = self.inner.step().map_err(w)?;
        to_py(py, &snap)
    }

    fn snapshot(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.snapshot())
    }

    /// Trains until `episodes` episodes have completed in total.
    fn train(&mut self, py: Python<'_>, episodes: u64) -> PyResult<()> {
        py.detach(|| self.inner.train_episodes(episodes)).map_err(w)
    }

    #[getter]
    fn episode(&self) -> u64 {
        self.inner.episode()
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon()
    }

    /// Q-values per cell in row-major order, actions up, down, left, right.
    fn qtable(&self) -> Vec<Vec<f64>> {
        let q = self.inner.qtable();
        (0..q.cells()).map(|s| q.row(s).to_vec()).collect()
    }

    fn qtable_json(&self) -> String {
        self.inner.qtable().to_json()
    }

    /// Follows the greedy policy from the start: (outcome, steps, path).
    fn greedy_rollout(&self, py: Python<'_>) -> PyResult<(Py<PyAny>, Vec<Cellxy>)> {
        let grid = self.inner.grid();
        let (outcome, path) = ql::rollout(&ql::greedy_policy(self.inner.qtable(), grid), grid, grid.len());
        Ok((to_py(py, &outcome)?, path.iter().map(|p| (p.x, p.y)).collect()))
    }
}

#[pymodule]
fn mlscope(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MlscopeError", m.py().get_type::<MlscopeError>())?;
    m.add_class::<Decomposition>()?;
    m.add_class::<HapticScript>()?;
    m.add_class::<GridWorld>()?;
    m.add_class::<TrainingSession>()?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(analyze_wav, m)?)?;
    m.add_function(wrap_pyfunction!(tutorial, m)?)?;
    m.add_function(wrap_pyfunction!(finger_for_pitch_class, m)?)?;
    m.add_function(wrap_pyfunction!(pitch_class_of, m)?)?;
    m.add("LEVEL_COUNT", ql::LEVEL_COUNT)?;
    Ok(())
}
