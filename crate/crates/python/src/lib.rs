//! Python bindings for the `acpo` crate.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ::acpo::env::{self, OutcomeModel, Task, CONTENT_SYMBOLS};
use ::acpo::grpo::{self, SurrogateConfig, SurrogateSample, TokenLogProbs};
use ::acpo::policy::{self, PolicyParams};
use ::acpo::reward::{self, RewardWeights};
use ::acpo::trace::{self, Mode, SymbolTable};
use ::acpo::trainer::{self, EvalConfig, EvalReport, SftConfig, TrainConfig};
use ::acpo::wire::{self, RolloutRecord};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn symbols() -> SymbolTable {
    SymbolTable::numbered(CONTENT_SYMBOLS as usize)
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Fast => "fast",
        Mode::Slow => "slow",
        Mode::Untagged => "untagged",
    }
}

/// A parsed response. Content words are interned as they are seen.
#[pyclass(name = "Trace", module = "acpo", frozen)]
struct PyTrace {
    inner: trace::Trace,
    symbols: SymbolTable,
}

#[pymethods]
impl PyTrace {
    #[new]
    fn new(text: &str) -> Self {
        let mut symbols = symbols();
        let inner = trace::parse_trace(&trace::lex(text, &mut symbols));
        PyTrace { inner, symbols }
    }

    fn __len__(&self) -> usize {
        self.inner.tokens.len()
    }

    #[getter]
    fn malformed(&self) -> bool {
        self.inner.malformed
    }

    #[getter]
    fn tokens(&self) -> Vec<String> {
        self.inner
            .tokens
            .iter()
            .map(|t| trace::render_tokens(std::slice::from_ref(t), &self.symbols))
            .collect()
    }

    /// `(mode, start, end)` spans of the think segments.
    #[getter]
    fn segments(&self) -> Vec<(&'static str, usize, usize)> {
        self.inner
            .segments
            .iter()
            .map(|s| (mode_name(s.mode), s.span.start, s.span.end))
            .collect()
    }

    #[getter]
    fn slow_segments(&self) -> usize {
        self.inner.slow_segments()
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = trace::trace_stats(&self.inner);
        let d = PyDict::new(py);
        d.set_item("total_len", s.total_len)?;
        d.set_item("think_len", s.think_len)?;
        d.set_item("fast_tokens", s.fast_tokens)?;
        d.set_item("slow_tokens", s.slow_tokens)?;
        d.set_item("rho_fast", s.rho_fast)?;
        d.set_item("rho_slow", s.rho_slow)?;
        Ok(d)
    }

    fn render(&self) -> String {
        trace::render_trace(&self.inner, &self.symbols)
    }

    fn __repr__(&self) -> String {
        format!("Trace({:?})", self.render())
    }
}

#[pyclass(name = "GroupStats", module = "acpo", frozen, get_all)]
struct PyGroupStats {
    size: usize,
    correct: usize,
    success_rate: f64,
    mean_correct_len: f64,
    max_len: f64,
    budget: f64,
}

#[pymethods]
impl PyGroupStats {
    fn deviation(&self, length: f64) -> PyResult<f64> {
        let g = ::acpo::budget::GroupStats {
            size: self.size,
            correct: self.correct,
            success_rate: self.success_rate,
            mean_correct_len: self.mean_correct_len,
            max_len: self.max_len,
            budget: self.budget,
        };
        ::acpo::budget::deviation(length, &g).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "GroupStats(size={}, correct={}, p={}, L_r={}, L_max={}, L_budget={})",
            self.size, self.correct, self.success_rate, self.mean_correct_len, self.max_len, self.budget
        )
    }
}

/// Group statistics and length budget from response lengths and outcomes.
#[pyfunction]
fn group_stats(lengths: Vec<usize>, correct: Vec<bool>) -> PyResult<PyGroupStats> {
    if lengths.len() != correct.len() {
        return Err(PyValueError::new_err("lengths and correct differ in length"));
    }
    let g = ::acpo::budget::GroupStats::from_outcomes(lengths.into_iter().zip(correct)).map_err(value_err)?;
    Ok(PyGroupStats {
        size: g.size,
        correct: g.correct,
        success_rate: g.success_rate,
        mean_correct_len: g.mean_correct_len,
        max_len: g.max_len,
        budget: g.budget,
    })
}

#[pyclass(name = "RewardWeights", module = "acpo", get_all, set_all, skip_from_py_object)]
#[derive(Clone)]
struct PyRewardWeights {
    w_acc: f64,
    w_len: f64,
    w_think: f64,
    p_thresh: f64,
    clip_pos: f64,
    clip_neg: f64,
    zero_think_if_malformed: bool,
}

impl From<RewardWeights> for PyRewardWeights {
    fn from(w: RewardWeights) -> Self {
        PyRewardWeights {
            w_acc: w.w_acc,
            w_len: w.w_len,
            w_think: w.w_think,
            p_thresh: w.p_thresh,
            clip_pos: w.clip_pos,
            clip_neg: w.clip_neg,
            zero_think_if_malformed: w.zero_think_if_malformed,
        }
    }
}

impl PyRewardWeights {
    fn to_rust(&self) -> PyResult<RewardWeights> {
        let w = RewardWeights {
            w_acc: self.w_acc,
            w_len: self.w_len,
            w_think: self.w_think,
            p_thresh: self.p_thresh,
            clip_pos: self.clip_pos,
            clip_neg: self.clip_neg,
            zero_think_if_malformed: self.zero_think_if_malformed,
        };
        w.validate().map_err(PyValueError::new_err)?;
        Ok(w)
    }
}

#[pymethods]
impl PyRewardWeights {
    #[new]
    #[pyo3(signature = (w_acc=0.6, w_len=0.3, w_think=0.1, p_thresh=0.5, clip_pos=0.1, clip_neg=-0.1, zero_think_if_malformed=false))]
    fn new(
        w_acc: f64,
        w_len: f64,
        w_think: f64,
        p_thresh: f64,
        clip_pos: f64,
        clip_neg: f64,
        zero_think_if_malformed: bool,
    ) -> PyResult<Self> {
        let w = PyRewardWeights {
            w_acc,
            w_len,
            w_think,
            p_thresh,
            clip_pos,
            clip_neg,
            zero_think_if_malformed,
        };
        w.to_rust()?;
        Ok(w)
    }

    #[staticmethod]
    fn accuracy_only() -> Self {
        RewardWeights::accuracy_only().into()
    }

    fn __repr__(&self) -> String {
        format!(
            "RewardWeights(w_acc={}, w_len={}, w_think={}, p_thresh={}, clip_pos={}, clip_neg={})",
            self.w_acc, self.w_len, self.w_think, self.p_thresh, self.clip_pos, self.clip_neg
        )
    }
}

fn weights_or_default(w: Option<PyRef<'_, PyRewardWeights>>) -> PyResult<RewardWeights> {
    w.map_or(Ok(RewardWeights::default()), |w| w.to_rust())
}

#[pyfunction]
fn accuracy_reward(correct: bool) -> f64 {
    reward::accuracy_reward(correct)
}

#[pyfunction]
fn tlb_reward(correct: bool, lam: f64) -> f64 {
    reward::tlb_reward(correct, lam)
}

#[pyfunction]
#[pyo3(signature = (p, rho_fast, rho_slow, p_thresh=0.5))]
fn system_pattern_reward(p: f64, rho_fast: f64, rho_slow: f64, p_thresh: f64) -> f64 {
    reward::system_pattern_reward(p, rho_fast, rho_slow, p_thresh)
}

#[pyfunction]
#[pyo3(signature = (acc, tlb, think, correct, weights=None))]
fn composite_reward(
    acc: f64,
    tlb: f64,
    think: f64,
    correct: bool,
    weights: Option<PyRef<'_, PyRewardWeights>>,
) -> PyResult<f64> {
    Ok(reward::composite_reward(acc, tlb, think, &weights_or_default(weights)?, correct))
}

/// Accuracy per computation unit (percent accuracy, billions of parameters).
#[pyfunction]
fn acu(accuracy_percent: f64, params_billions: f64, avg_tokens: f64) -> PyResult<f64> {
    reward::acu(accuracy_percent, params_billions, avg_tokens).map_err(value_err)
}

/// Scores `(query_id, text, correct)` records; returns one dict per record
/// in input order with the same keys as the `score` command.
#[pyfunction]
#[pyo3(signature = (records, weights=None, eps_std=1e-8))]
fn score<'py>(
    py: Python<'py>,
    records: Vec<(String, String, bool)>,
    weights: Option<PyRef<'_, PyRewardWeights>>,
    eps_std: f64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let w = weights_or_default(weights)?;
    let recs: Vec<RolloutRecord> = records
        .into_iter()
        .map(|(query_id, text, correct)| RolloutRecord { query_id, text, correct })
        .collect();
    let scored = wire::score_records(&recs, &w, eps_std).map_err(value_err)?;
    scored
        .iter()
        .map(|s| {
            let d = PyDict::new(py);
            d.set_item("query_id", &s.query_id)?;
            d.set_item("index", s.index)?;
            d.set_item("L", s.len)?;
            d.set_item("rho_fast", s.rho_fast)?;
            d.set_item("rho_slow", s.rho_slow)?;
            d.set_item("malformed", s.malformed)?;
            d.set_item("p", s.p)?;
            d.set_item("L_budget", s.budget)?;
            d.set_item("lambda", s.lambda)?;
            d.set_item("R_acc", s.r_acc)?;
            d.set_item("R_tlb", s.r_tlb)?;
            d.set_item("R_think", s.r_think)?;
            d.set_item("R_final", s.r_final)?;
            d.set_item("advantage", s.advantage)?;
            Ok(d)
        })
        .collect()
}

/// Returns `(advantages, degenerate)`.
#[pyfunction]
#[pyo3(signature = (rewards, eps_std=1e-8))]
fn normalize_advantages(rewards: Vec<f64>, eps_std: f64) -> PyResult<(Vec<f64>, bool)> {
    let a = grpo::normalize_advantages(&rewards, eps_std).map_err(value_err)?;
    Ok((a.advantages, a.degenerate))
}

#[pyfunction]
#[pyo3(signature = (ratio, advantage, eps_clip=0.2))]
fn clipped_term(ratio: f64, advantage: f64, eps_clip: f64) -> f64 {
    grpo::clipped_term(ratio, advantage, eps_clip)
}

#[pyfunction]
fn kl_estimate(lp_current: f64, lp_reference: f64) -> f64 {
    grpo::kl_estimate(lp_current, lp_reference)
}

/// Group objective from `(current, behavior, reference, advantage)` tuples of
/// per-token log-probabilities. Returns `(objective, clip_fraction, kl_mean)`.
type RawSample = (Vec<f64>, Vec<f64>, Vec<f64>, f64);

#[pyfunction]
#[pyo3(signature = (group, eps_clip=0.2, beta=1e-3))]
fn surrogate_objective(
    group: Vec<RawSample>,
    eps_clip: f64,
    beta: f64,
) -> PyResult<(f64, f64, f64)> {
    let samples: Vec<SurrogateSample> = group
        .into_iter()
        .map(|(current, behavior, reference, advantage)| SurrogateSample {
            logprobs: TokenLogProbs {
                current,
                behavior,
                reference,
            },
            advantage,
        })
        .collect();
    let cfg = SurrogateConfig {
        eps_clip,
        beta,
        ..SurrogateConfig::default()
    };
    let v = grpo::surrogate_objective(&samples, &cfg).map_err(value_err)?;
    Ok((v.objective, v.clip_fraction, v.kl_mean))
}

#[pyclass(name = "Task", module = "acpo", frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyTask {
    id: u64,
    difficulty: u8,
    features: Vec<f64>,
    answer: u32,
}

impl PyTask {
    fn to_rust(&self) -> Task {
        Task {
            id: self.id,
            difficulty: self.difficulty,
            features: self.features.clone(),
            answer: self.answer,
        }
    }
}

impl From<Task> for PyTask {
    fn from(t: Task) -> Self {
        PyTask {
            id: t.id,
            difficulty: t.difficulty,
            features: t.features,
            answer: t.answer,
        }
    }
}

#[pymethods]
impl PyTask {
    /// The scripted teacher response for this task.
    fn teacher_trace(&self) -> String {
        trace::render_trace(&env::teacher_trace(&self.to_rust()), &symbols())
    }

    fn __repr__(&self) -> String {
        format!("Task(id={}, difficulty={}, answer={})", self.id, self.difficulty, self.answer)
    }
}

#[pyfunction]
#[pyo3(signature = (count, seed=0, mix=None, first_id=0))]
fn generate_tasks(count: usize, seed: u64, mix: Option<Vec<f64>>, first_id: u64) -> PyResult<Vec<PyTask>> {
    let mix = mix.unwrap_or_else(|| vec![1.0 / env::DIFFICULTY_LEVELS as f64; env::DIFFICULTY_LEVELS]);
    let tasks = env::generate_tasks(count, &mix, first_id, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(value_err)?;
    Ok(tasks.into_iter().map(Into::into).collect())
}

#[pyfunction]
fn load_tasks(path: PathBuf) -> PyResult<Vec<PyTask>> {
    let f = std::fs::File::open(&path).map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
    let tasks = env::read_tasks(std::io::BufReader::new(f)).map_err(value_err)?;
    Ok(tasks.into_iter().map(Into::into).collect())
}

fn tasks_to_rust(tasks: &[PyRef<'_, PyTask>]) -> Vec<Task> {
    tasks.iter().map(|t| t.to_rust()).collect()
}

#[pyclass(name = "Policy", module = "acpo")]
struct PyPolicy {
    inner: PolicyParams,
}

#[pymethods]
impl PyPolicy {
    /// All-zero parameters: uniform over legal symbols at every step.
    #[new]
    fn new() -> Self {
        PyPolicy {
            inner: PolicyParams::zeros(),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = PolicyParams::load(&path).map_err(value_err)?;
        Ok(PyPolicy { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyPolicy {
            inner: PolicyParams::from_json(text).map_err(value_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(value_err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(value_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.inner.theta.clone()
    }

    #[setter]
    fn set_theta(&mut self, theta: Vec<f64>) -> PyResult<()> {
        if theta.len() != self.inner.len() || theta.iter().any(|x| !x.is_finite()) {
            return Err(PyValueError::new_err(format!("theta needs {} finite values", self.inner.len())));
        }
        self.inner.theta = theta;
        Ok(())
    }

    /// Samples one response. Returns `(text, correct, logprobs)`.
    #[pyo3(signature = (task, seed=0, temperature=1.0, max_tokens=64))]
    fn sample(&self, task: PyRef<'_, PyTask>, seed: u64, temperature: f64, max_tokens: usize) -> PyResult<(String, bool, Vec<f64>)> {
        let t = task.to_rust();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut judge = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let s = policy::sample_trace(
            &self.inner,
            &t,
            "py",
            &OutcomeModel::default(),
            max_tokens,
            temperature,
            &mut r,
            &mut judge,
        )
        .map_err(value_err)?;
        Ok((trace::render_trace(&s.rollout.trace, &symbols()), s.rollout.correct, s.logprobs))
    }

    /// Per-token log-probabilities of `text` as a response to `task`.
    #[pyo3(signature = (task, text, temperature=1.0))]
    fn logprobs(&self, task: PyRef<'_, PyTask>, text: &str, temperature: f64) -> PyResult<Vec<f64>> {
        let mut sy = symbols();
        let tr = trace::parse_trace(&trace::lex(text, &mut sy));
        policy::logprobs(&self.inner, &tr, &task.to_rust(), temperature).map_err(value_err)
    }
}

/// Cold start on teacher traces for `tasks`. Returns the fitted policy and
/// the per-epoch mean negative log-likelihood.
#[pyfunction]
#[pyo3(signature = (tasks, epochs=150, learning_rate=0.5))]
fn sft_fit(tasks: Vec<PyRef<'_, PyTask>>, epochs: usize, learning_rate: f64) -> PyResult<(PyPolicy, Vec<f64>)> {
    let data = trainer::teacher_dataset(&tasks_to_rust(&tasks));
    let cfg = SftConfig {
        tasks: data.len(),
        epochs,
        learning_rate,
    };
    let (p, curve) = trainer::sft_fit(&PolicyParams::zeros(), &data, &cfg).map_err(value_err)?;
    Ok((PyPolicy { inner: p }, curve))
}

#[pyclass(name = "EvalReport", module = "acpo", frozen)]
struct PyEvalReport {
    inner: EvalReport,
}

#[pymethods]
impl PyEvalReport {
    #[getter]
    fn pass1(&self) -> f64 {
        self.inner.pass1
    }

    #[getter]
    fn avg_tokens(&self) -> f64 {
        self.inner.avg_tokens
    }

    #[getter]
    fn acu(&self) -> f64 {
        self.inner.acu
    }

    #[getter]
    fn rows<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .rows
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("difficulty", r.difficulty)?;
                d.set_item("tasks", r.tasks)?;
                d.set_item("pass1", r.pass1)?;
                d.set_item("avg_tokens", r.avg_tokens)?;
                d.set_item("rho_fast", r.rho_fast)?;
                d.set_item("rho_slow", r.rho_slow)?;
                d.set_item("slow_segments", r.slow_segments)?;
                d.set_item("malformed", r.malformed)?;
                Ok(d)
            })
            .collect()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "EvalReport(pass1={:.4}, avg_tokens={:.2}, acu={:.4})",
            self.inner.pass1, self.inner.avg_tokens, self.inner.acu
        )
    }
}

#[pyfunction]
#[pyo3(signature = (policy, tasks, samples=16, temperature=0.6, seed=0, max_tokens=64))]
fn evaluate(
    py: Python<'_>,
    policy: PyRef<'_, PyPolicy>,
    tasks: Vec<PyRef<'_, PyTask>>,
    samples: usize,
    temperature: f64,
    seed: u64,
    max_tokens: usize,
) -> PyResult<PyEvalReport> {
    let tasks = tasks_to_rust(&tasks);
    let params = policy.inner.clone();
    let cfg = EvalConfig {
        samples_per_task: samples,
        temperature,
        max_tokens,
        outcome: OutcomeModel::default(),
        seed,
    };
    let inner = py.detach(|| trainer::evaluate(&params, &tasks, &cfg)).map_err(value_err)?;
    Ok(PyEvalReport { inner })
}

/// Run configuration. Build from TOML text, or take the defaults and adjust
/// attributes.
#[pyclass(name = "TrainConfig", module = "acpo", skip_from_py_object)]
#[derive(Clone)]
struct PyTrainConfig {
    inner: TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    #[new]
    fn new() -> Self {
        PyTrainConfig {
            inner: TrainConfig::default(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner = ::acpo::cli::parse_config(text).map_err(PyValueError::new_err)?;
        Ok(PyTrainConfig { inner })
    }

    fn to_toml(&self) -> PyResult<String> {
        toml::to_string(&self.inner).map_err(value_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }

    #[getter]
    fn group_size(&self) -> usize {
        self.inner.group_size
    }

    #[setter]
    fn set_group_size(&mut self, v: usize) {
        self.inner.group_size = v;
    }

    #[getter]
    fn batch_queries(&self) -> usize {
        self.inner.batch_queries
    }

    #[setter]
    fn set_batch_queries(&mut self, v: usize) {
        self.inner.batch_queries = v;
    }

    #[getter]
    fn learning_rate(&self) -> f64 {
        self.inner.learning_rate
    }

    #[setter]
    fn set_learning_rate(&mut self, v: f64) {
        self.inner.learning_rate = v;
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }

    #[setter]
    fn set_epochs(&mut self, v: usize) {
        self.inner.epochs = v;
    }

    #[getter]
    fn max_tokens(&self) -> usize {
        self.inner.max_tokens
    }

    #[setter]
    fn set_max_tokens(&mut self, v: usize) {
        self.inner.max_tokens = v;
    }

    #[getter]
    fn train_tasks(&self) -> usize {
        self.inner.train_tasks
    }

    #[setter]
    fn set_train_tasks(&mut self, v: usize) {
        self.inner.train_tasks = v;
    }

    #[getter]
    fn eval_tasks(&self) -> usize {
        self.inner.eval_tasks
    }

    #[setter]
    fn set_eval_tasks(&mut self, v: usize) {
        self.inner.eval_tasks = v;
    }

    #[getter]
    fn eval_samples_per_task(&self) -> usize {
        self.inner.eval_samples_per_task
    }

    #[setter]
    fn set_eval_samples_per_task(&mut self, v: usize) {
        self.inner.eval_samples_per_task = v;
    }

    #[getter]
    fn log_rollouts(&self) -> bool {
        self.inner.log_rollouts
    }

    #[setter]
    fn set_log_rollouts(&mut self, v: bool) {
        self.inner.log_rollouts = v;
    }

    #[getter]
    fn weights(&self) -> PyRewardWeights {
        self.inner.weights.into()
    }

    #[setter]
    fn set_weights(&mut self, w: PyRef<'_, PyRewardWeights>) -> PyResult<()> {
        self.inner.weights = w.to_rust()?;
        Ok(())
    }

    #[getter]
    fn sft_epochs(&self) -> usize {
        self.inner.sft.epochs
    }

    #[setter]
    fn set_sft_epochs(&mut self, v: usize) {
        self.inner.sft.epochs = v;
    }

    #[getter]
    fn sft_tasks(&self) -> usize {
        self.inner.sft.tasks
    }

    #[setter]
    fn set_sft_tasks(&mut self, v: usize) {
        self.inner.sft.tasks = v;
    }
}

/// Runs the full pipeline into `out_dir`. Returns `(sft_report, final_report,
/// sft_loss)`.
#[pyfunction]
#[pyo3(signature = (config, out_dir, verbose=false))]
fn train(
    py: Python<'_>,
    config: PyRef<'_, PyTrainConfig>,
    out_dir: PathBuf,
    verbose: bool,
) -> PyResult<(PyEvalReport, PyEvalReport, Vec<f64>)> {
    let cfg = config.inner.clone();
    let summary = py
        .detach(|| {
            trainer::run_pipeline(&cfg, &out_dir, None, |line| {
                if verbose {
                    eprintln!("{line}");
                }
            })
        })
        .map_err(value_err)?;
    Ok((
        PyEvalReport { inner: summary.sft_eval },
        PyEvalReport { inner: summary.final_eval },
        summary.sft_loss,
    ))
}

#[pymodule]
#[pyo3(name = "acpo")]
pub fn acpo_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTrace>()?;
    m.add_class::<PyGroupStats>()?;
    m.add_class::<PyRewardWeights>()?;
    m.add_class::<PyTask>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyEvalReport>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_function(wrap_pyfunction!(group_stats, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy_reward, m)?)?;
    m.add_function(wrap_pyfunction!(tlb_reward, m)?)?;
    m.add_function(wrap_pyfunction!(system_pattern_reward, m)?)?;
    m.add_function(wrap_pyfunction!(composite_reward, m)?)?;
    m.add_function(wrap_pyfunction!(acu, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_advantages, m)?)?;
    m.add_function(wrap_pyfunction!(clipped_term, m)?)?;
    m.add_function(wrap_pyfunction!(kl_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(surrogate_objective, m)?)?;
    m.add_function(wrap_pyfunction!(generate_tasks, m)?)?;
    m.add_function(wrap_pyfunction!(load_tasks, m)?)?;
    m.add_function(wrap_pyfunction!(sft_fit, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
