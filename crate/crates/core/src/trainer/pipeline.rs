use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::env::{generate_tasks, write_tasks, Task};
use crate::policy::PolicyParams;
use crate::seeding::{stream, Purpose};

use super::{evaluate, sft_fit, teacher_dataset, EvalReport, RlTrainer, StepMetrics, TrainConfig, TrainError};

/// Task id offsets keep the three task pools disjoint.
pub const EVAL_ID_BASE: u64 = 1_000_000;
pub const SFT_ID_BASE: u64 = 2_000_000;

pub const METRICS_HEADER: &str = "step,mean_reward,mean_len,mean_p,clip_frac,kl,pass1_train";

/// Output file layout of a run directory.
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        RunFiles { dir: dir.into() }
    }
    pub fn config(&self) -> PathBuf {
        self.dir.join("config.toml")
    }
    pub fn eval_tasks(&self) -> PathBuf {
        self.dir.join("eval_tasks.jsonl")
    }
    pub fn sft_loss(&self) -> PathBuf {
        self.dir.join("sft_loss.csv")
    }
    pub fn sft_checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoint_sft.json")
    }
    pub fn sft_eval(&self) -> PathBuf {
        self.dir.join("eval_sft.json")
    }
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }
    pub fn rollouts(&self) -> PathBuf {
        self.dir.join("rollouts.jsonl")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoint_final.json")
    }
    pub fn report(&self) -> PathBuf {
        self.dir.join("eval_report.json")
    }
}

#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub sft_loss: Vec<f64>,
    pub sft_eval: EvalReport,
    pub final_eval: EvalReport,
    pub metrics: Vec<StepMetrics>,
    /// Steps skipped because every group in the batch was degenerate.
    pub skipped_steps: usize,
    pub params: PolicyParams,
    pub files: RunFiles,
}

#[derive(Serialize)]
struct RolloutLine<'a> {
    query_id: &'a str,
    text: &'a str,
    correct: bool,
    #[serde(rename = "R_final")]
    r_final: f64,
    advantage: f64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, TrainError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), TrainError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| TrainError::Config(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn pool(config: &TrainConfig, count: usize, first_id: u64, coord: u64) -> Result<Vec<Task>, TrainError> {
    let mut rng = stream(config.seed, Purpose::Tasks, &[coord]);
    Ok(generate_tasks(count, &config.difficulty_mix, first_id, &mut rng)?)
}

/// Runs cold start, evaluation, RL, and a final evaluation, writing every
/// artifact into `out_dir`. `eval_tasks` overrides the generated held-out set.
pub fn run_pipeline(
    config: &TrainConfig,
    out_dir: &Path,
    eval_tasks: Option<Vec<Task>>,
    mut progress: impl FnMut(&str),
) -> Result<PipelineSummary, TrainError> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let files = RunFiles::new(out_dir);

    let config_text = toml::to_string(config).map_err(|e| TrainError::Config(e.to_string()))?;
    fs::write(files.config(), config_text).map_err(io_err(&files.config()))?;

    let mut train = pool(config, config.train_tasks, 0, 0)?;
    let held_out = match eval_tasks {
        Some(t) if t.is_empty() => return Err(TrainError::Config("evaluation task set is empty".into())),
        Some(t) => t,
        None => pool(config, config.eval_tasks, EVAL_ID_BASE, 1)?,
    };
    {
        let path = files.eval_tasks();
        let mut w = create(&path)?;
        write_tasks(&held_out, &mut w)?;
        w.flush().map_err(io_err(&path))?;
    }

    let mut params = PolicyParams::zeros();
    let mut sft_loss = Vec::new();
    if config.sft.epochs > 0 {
        let sft_tasks = pool(config, config.sft.tasks, SFT_ID_BASE, 2)?;
        progress(&format!("sft: {} teacher traces, {} epochs", sft_tasks.len(), config.sft.epochs));
        let (p, curve) = sft_fit(&params, &teacher_dataset(&sft_tasks), &config.sft)?;
        params = p;
        sft_loss = curve;
        if let (Some(first), Some(last)) = (sft_loss.first(), sft_loss.last()) {
            progress(&format!("sft: nll {first:.4} -> {last:.4}"));
        }
    }
    {
        let path = files.sft_loss();
        let mut w = create(&path)?;
        let mut body = String::from("epoch,nll\n");
        for (i, l) in sft_loss.iter().enumerate() {
            body.push_str(&format!("{},{}\n", i + 1, l));
        }
        w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(io_err(&path))?;
    }
    params.save(&files.sft_checkpoint())?;

    let eval_cfg = config.eval_config();
    let sft_eval = evaluate(&params, &held_out, &eval_cfg)?;
    write_json(&files.sft_eval(), &sft_eval)?;
    progress(&format!(
        "sft eval: pass@1 {:.4}, mean length {:.2}",
        sft_eval.pass1, sft_eval.avg_tokens
    ));

    let metrics_path = files.metrics();
    let rollouts_path = files.rollouts();
    let mut metrics_out = create(&metrics_path)?;
    writeln!(metrics_out, "{METRICS_HEADER}").map_err(io_err(&metrics_path))?;
    let mut rollouts_out = if config.log_rollouts {
        Some(create(&rollouts_path)?)
    } else {
        None
    };

    let mut trainer = RlTrainer::new(params, config.clone());
    let mut metrics = Vec::new();
    let mut skipped_steps = 0;
    for epoch in 0..config.epochs as u64 {
        train.shuffle(&mut stream(config.seed, Purpose::Shuffle, &[epoch]));
        for batch in train.chunks(config.batch_queries) {
            let out = trainer.step(batch)?;
            let m = out.metrics;
            if !out.updated {
                skipped_steps += 1;
            }
            writeln!(
                metrics_out,
                "{},{},{},{},{},{},{}",
                m.step, m.mean_reward, m.mean_len, m.mean_p, m.clip_frac, m.kl, m.pass1_train
            )
            .map_err(io_err(&metrics_path))?;
            if let Some(w) = rollouts_out.as_mut() {
                for r in &out.rollouts {
                    let line = RolloutLine {
                        query_id: &r.query_id,
                        text: &r.text,
                        correct: r.correct,
                        r_final: r.reward,
                        advantage: r.advantage,
                    };
                    serde_json::to_writer(&mut *w, &line)
                        .map_err(std::io::Error::from)
                        .and_then(|_| w.write_all(b"\n"))
                        .map_err(io_err(&rollouts_path))?;
                }
            }
            progress(&format!(
                "step {}: reward {:.4}, length {:.2}, train pass@1 {:.4}",
                m.step, m.mean_reward, m.mean_len, m.pass1_train
            ));
            metrics.push(m);
        }
    }
    metrics_out.flush().map_err(io_err(&metrics_path))?;
    if let Some(w) = rollouts_out.as_mut() {
        w.flush().map_err(io_err(&rollouts_path))?;
    }

    let params = trainer.params;
    params.save(&files.checkpoint())?;
    let final_eval = evaluate(&params, &held_out, &eval_cfg)?;
    write_json(&files.report(), &final_eval)?;
    progress(&format!(
        "final eval: pass@1 {:.4}, mean length {:.2}, acu {:.4}",
        final_eval.pass1, final_eval.avg_tokens, final_eval.acu
    ));

    Ok(PipelineSummary {
        sft_loss,
        sft_eval,
        final_eval,
        metrics,
        skipped_steps,
        params,
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::SftConfig;

    fn tiny() -> TrainConfig {
        TrainConfig {
            train_tasks: 16,
            eval_tasks: 10,
            batch_queries: 8,
            group_size: 4,
            eval_samples_per_task: 2,
            sft: SftConfig {
                tasks: 20,
                epochs: 10,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut lines = 0;
        let s = run_pipeline(&tiny(), dir.path(), None, |_| lines += 1).unwrap();
        assert!(lines > 0);
        assert_eq!(s.metrics.len(), 2);
        let f = &s.files;
        for p in [
            f.config(),
            f.eval_tasks(),
            f.sft_loss(),
            f.sft_checkpoint(),
            f.sft_eval(),
            f.metrics(),
            f.rollouts(),
            f.checkpoint(),
            f.report(),
        ] {
            assert!(p.exists(), "{}", p.display());
        }
        let metrics = fs::read_to_string(f.metrics()).unwrap();
        assert_eq!(metrics.lines().next().unwrap(), METRICS_HEADER);
        assert_eq!(metrics.lines().count(), 3);
        let rollouts = fs::read_to_string(f.rollouts()).unwrap();
        assert_eq!(rollouts.lines().count(), 16 * 4);
        let back = PolicyParams::load(&f.checkpoint()).unwrap();
        assert_eq!(back, s.params);
        let cfg: TrainConfig = toml::from_str(&fs::read_to_string(f.config()).unwrap()).unwrap();
        assert_eq!(cfg, tiny());
    }

    #[test]
    fn reruns_are_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_pipeline(&tiny(), a.path(), None, |_| {}).unwrap();
        run_pipeline(&tiny(), b.path(), None, |_| {}).unwrap();
        for name in ["metrics.csv", "rollouts.jsonl", "checkpoint_final.json", "eval_report.json"] {
            assert_eq!(
                fs::read(a.path().join(name)).unwrap(),
                fs::read(b.path().join(name)).unwrap(),
                "{name}"
            );
        }
    }
}
