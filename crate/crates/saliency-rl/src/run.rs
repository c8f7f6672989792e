//! Training runs, evaluation and the run directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use saliency_core::agent::{scripted_return, Agent, AgentError, PerceptionLog, Variant};
use saliency_core::metrics::{categorization_accuracy, detection_rate, greedy_match, mean_iou, mean_std};
use saliency_core::raster::BBox;
use saliency_core::relevance::CategoryStat;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::RunConfig;

/// Scores of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub returns: Vec<f64>,
    /// Per env category; `None` for the baseline, which has no segments.
    pub det_rate: Vec<Option<f64>>,
    pub mean_iou: Option<f64>,
    pub cat_acc: Option<f64>,
}

impl EvalSummary {
    pub fn mean_std(&self) -> (f64, f64) {
        mean_std(&self.returns)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    pub step: u64,
    pub episode: u64,
    pub summary: EvalSummary,
    pub epsilon: f64,
    pub loss_mean: Option<f64>,
}

pub struct SeedRun {
    pub seed: u64,
    pub points: Vec<EvalPoint>,
    pub relevance: Vec<(u64, CategoryStat)>,
    /// Mean scripted-policy return over this seed's evaluation episodes.
    pub scripted_return: f64,
    pub final_log: PerceptionLog,
    pub agent: Agent,
}

/// Scores perception output against the recorded ground truth.
pub fn score_perception(log: &PerceptionLog, categories: usize) -> (Vec<Option<f64>>, Option<f64>, Option<f64>) {
    let boxes: Vec<Vec<BBox>> = log.boxes.iter().map(|f| f.iter().map(|b| b.0).collect()).collect();
    let det = match detection_rate(&log.truth, &boxes, categories) {
        Ok(d) => d.iter().map(|c| Some(c.rate())).collect(),
        Err(_) => vec![None; categories],
    };
    let mut matches = Vec::new();
    let mut pairs = Vec::new();
    for (truth, found) in log.truth.iter().zip(&log.boxes) {
        let tb: Vec<BBox> = truth.iter().map(|t| t.bbox).collect();
        let fb: Vec<BBox> = found.iter().map(|f| f.0).collect();
        for m in greedy_match(&tb, &fb) {
            pairs.push((found[m.detection].1, truth[m.truth].category));
            matches.push(m);
        }
    }
    let (iou, n) = mean_iou(&matches);
    (det, (n > 0).then_some(iou), categorization_accuracy(&pairs).ok())
}

/// Plays `episodes` evaluation episodes. Perception is scored for the
/// variants that produce segments.
pub fn evaluate(agent: &mut Agent, episodes: usize) -> Result<(EvalSummary, PerceptionLog), AgentError> {
    let record = agent.config().variant != Variant::Baseline;
    let categories = agent.config().env.categories.len();
    let mut returns = Vec::with_capacity(episodes);
    let mut log = PerceptionLog::default();
    let mut first = None;
    for k in 0..episodes {
        let ep = agent.evaluate_episode(k as u64, record)?;
        returns.push(ep.episode_return);
        log.truth.extend(ep.log.truth.iter().cloned());
        log.boxes.extend(ep.log.boxes.iter().cloned());
        if first.is_none() {
            first = Some(ep.log);
        }
    }
    let (det_rate, mean_iou, cat_acc) = if record { score_perception(&log, categories) } else { (vec![None; categories], None, None) };
    Ok((EvalSummary { returns, det_rate, mean_iou, cat_acc }, first.unwrap_or_default()))
}

/// Trains one seed, evaluating at step 0 and every `eval_every` steps.
pub fn train_seed(cfg: &RunConfig, seed: u64, progress: bool) -> Result<SeedRun, AgentError> {
    let mut agent = Agent::new(cfg.agent_config(), seed)?;
    let eval_seeds: Vec<u64> = (0..cfg.eval_episodes as u64).map(|k| agent.eval_seed(k)).collect();
    let scripted = scripted_return(&cfg.env, &eval_seeds)?;
    let mut points = Vec::new();
    let mut relevance = Vec::new();
    let mut losses = Vec::new();
    let mut final_log = PerceptionLog::default();
    loop {
        let step = agent.env_steps();
        if step % cfg.eval_every == 0 || step == cfg.train_steps {
            let (summary, log) = evaluate(&mut agent, cfg.eval_episodes)?;
            final_log = log;
            let loss_mean = (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64);
            losses.clear();
            if progress {
                let (m, s) = summary.mean_std();
                eprintln!("[{} seed {seed}] step {step}: return {m:.3} ± {s:.3}", cfg.variant.name());
            }
            points.push(EvalPoint { step, episode: agent.episodes(), summary, epsilon: agent.epsilon(), loss_mean });
            if cfg.variant != Variant::Baseline {
                relevance.extend(agent.perception.relevance_report().into_iter().map(|s| (step, s)));
            }
        }
        if step >= cfg.train_steps {
            break;
        }
        let r = agent.train_env_step()?;
        losses.extend(r.loss);
    }
    Ok(SeedRun { seed, points, relevance, scripted_return: scripted, final_log, agent })
}

/// Worker count: `SALIENCY_RL_THREADS` if set, else the available cores.
pub fn worker_count(jobs: usize) -> usize {
    let cap = std::env::var("SALIENCY_RL_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    cap.min(jobs).max(1)
}

/// Runs `f` over `items` on a bounded pool, keeping input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..worker_count(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                out.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    out.into_inner().expect("no poisoned workers").into_iter().map(|r| r.expect("every job ran")).collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn metrics_header(category_names: &[String]) -> Vec<String> {
    let mut h: Vec<String> = ["step", "episode", "variant", "seed", "eval_return_mean", "eval_return_std"].iter().map(|s| s.to_string()).collect();
    h.extend(category_names.iter().map(|n| format!("det_rate_{n}")));
    h.extend(["mean_iou", "cat_acc", "epsilon", "loss_mean"].iter().map(|s| s.to_string()));
    h
}

pub fn write_metrics(path: &Path, cfg: &RunConfig, runs: &[SeedRun]) -> Result<()> {
    let names: Vec<String> = cfg.env.categories.iter().map(|c| c.name.clone()).collect();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(metrics_header(&names))?;
    for run in runs {
        for p in &run.points {
            let (m, s) = p.summary.mean_std();
            let mut rec = vec![p.step.to_string(), p.episode.to_string(), cfg.variant.name().to_string(), run.seed.to_string(), m.to_string(), s.to_string()];
            rec.extend(p.summary.det_rate.iter().map(|d| opt(*d)));
            rec.extend([opt(p.summary.mean_iou), opt(p.summary.cat_acc), p.epsilon.to_string(), opt(p.loss_mean)]);
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_relevance(path: &Path, runs: &[SeedRun]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "seed", "category", "pcc", "samples", "selected"])?;
    for run in runs {
        for (step, s) in &run.relevance {
            w.write_record([step.to_string(), run.seed.to_string(), s.category.to_string(), s.pcc.to_string(), s.samples.to_string(), (s.selected as u8).to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Sidecar describing the run for `eval` and `compare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub code_version: String,
    pub variant: Variant,
    pub seeds: Vec<u64>,
    pub scripted_return: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedState {
    pub selected: Vec<usize>,
    pub env_steps: u64,
    pub train_steps: u64,
    pub episodes: u64,
}

pub fn checkpoint_paths(dir: &Path, seed: u64) -> (PathBuf, PathBuf, PathBuf) {
    let c = dir.join("checkpoints");
    (c.join(format!("seed{seed}_net.bin")), c.join(format!("seed{seed}_knowledge.bin")), c.join(format!("seed{seed}_state.json")))
}

fn write_seed_artifacts(dir: &Path, run: &SeedRun) -> Result<()> {
    let (net, kd, state) = checkpoint_paths(dir, run.seed);
    checkpoint::save_network(&net, &run.agent.online)?;
    if run.agent.config().variant == Variant::Proposed {
        checkpoint::save_knowledge(&kd, &run.agent.perception.knowledge)?;
    }
    let st = SeedState {
        selected: run.agent.perception.selected().to_vec(),
        env_steps: run.agent.env_steps(),
        train_steps: run.agent.train_steps(),
        episodes: run.agent.episodes(),
    };
    fs::write(state, serde_json::to_string_pretty(&st)?)?;
    // boxes of the first final-evaluation episode, one line per frame
    let mut text = String::from("frame\ttruth (category x y w h)\tdetected (category x y w h)\n");
    for (f, (truth, found)) in run.final_log.truth.iter().zip(&run.final_log.boxes).enumerate() {
        let t: Vec<String> = truth.iter().map(|t| format!("{} {} {} {} {}", t.category, t.bbox.x0, t.bbox.y0, t.bbox.w, t.bbox.h)).collect();
        let d: Vec<String> = found
            .iter()
            .map(|(b, c)| format!("{} {} {} {} {}", c.map_or_else(|| "-".to_string(), |c| c.to_string()), b.x0, b.y0, b.w, b.h))
            .collect();
        text.push_str(&format!("{f}\t{}\t{}\n", t.join(", "), d.join(", ")));
    }
    fs::write(dir.join("dumps").join(format!("seed{}_final_boxes.tsv", run.seed)), text)?;
    Ok(())
}

/// Trains every seed of `cfg` and writes the run directory.
pub fn run_experiment(cfg: &RunConfig, out: &Path, progress: bool) -> Result<Vec<SeedRun>> {
    cfg.validate()?;
    fs::create_dir_all(out.join("checkpoints")).with_context(|| format!("creating {}", out.display()))?;
    fs::create_dir_all(out.join("dumps"))?;
    fs::write(out.join("config.json"), cfg.to_json())?;
    let results = parallel_map(&cfg.seeds, |&seed| train_seed(cfg, seed, progress));
    let mut runs = Vec::with_capacity(results.len());
    for (seed, r) in cfg.seeds.iter().zip(results) {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => bail!("seed {seed}: {e}"),
        }
    }
    write_metrics(&out.join("metrics.csv"), cfg, &runs)?;
    write_relevance(&out.join("relevance.csv"), &runs)?;
    for run in &runs {
        write_seed_artifacts(out, run)?;
    }
    let info = RunInfo {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        variant: cfg.variant,
        seeds: cfg.seeds.clone(),
        scripted_return: runs.iter().map(|r| r.scripted_return).collect(),
    };
    fs::write(out.join("run.json"), serde_json::to_string_pretty(&info)?)?;
    Ok(runs)
}

pub fn read_run_info(dir: &Path) -> Result<RunInfo> {
    let p = dir.join("run.json");
    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Restores each seed's final agent from a run directory and evaluates it.
pub fn evaluate_run(dir: &Path, episodes: Option<usize>) -> Result<Vec<(u64, EvalSummary)>> {
    let cfg = RunConfig::load(&dir.join("config.json"))?;
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let mut agent = Agent::new(cfg.agent_config(), seed)?;
        let (net, kd, state) = checkpoint_paths(dir, seed);
        let arch = *agent.online.arch();
        agent.online = checkpoint::decode_network_for(&fs::read(&net).with_context(|| format!("reading {}", net.display()))?, arch.planes, arch.actions)?;
        if cfg.variant == Variant::Proposed {
            agent.perception.knowledge = checkpoint::load_knowledge(&kd, seed)?;
        }
        let st: SeedState = serde_json::from_str(&fs::read_to_string(&state)?)?;
        agent.perception.set_selected(st.selected);
        let (summary, _) = evaluate(&mut agent, episodes.unwrap_or(cfg.eval_episodes))?;
        out.push((seed, summary));
    }
    Ok(out)
}
