//! The learning loop: ε-greedy acting, sequence replay, recurrent
//! Q-learning, and the per-variant perception pipeline.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channels::{encode, ObservationTensor, NET_PIXELS};
use crate::drqn::{sync_target, Adam, AdamParams, Arch, DrqnError, LstmState, QNetwork};
use crate::env::{Action, EnvConfig, EnvError, Gallery, StepOutcome};
use crate::flow::{estimate_flow, flow_gradient, FlowError, FlowField, FlowParams, FlowSource};
use crate::flowseg::{extract_background, segment_foreground, BackgroundOutcome, SegLabeling, SegParams};
use crate::hog::{extract_patch, hog_descriptor, HogParams};
use crate::knowledge::{ClusterParams, KnowledgeDataset, KnowledgeError};
use crate::metrics::TruthInstance;
use crate::raster::{to_grayscale, BBox, GrayImage};
use crate::relevance::{CategoryStat, RelevanceParams, RelevanceState, Sighting};
use crate::rng::{mix_seed, stream_rng};
use crate::track::{propagate, reconcile, Propagation, Segment, TrackParams};
use crate::SeedRng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Net(#[from] DrqnError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error("replay holds {have} sampleable sequences, need {need}")]
    InsufficientBuffer { have: usize, need: usize },
    #[error("invalid agent parameters: {0}")]
    Params(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// RGB planes only.
    Baseline,
    /// RGB plus planes for discovered, relevant categories.
    Proposed,
    /// RGB plus planes built from ground-truth segments.
    Oracle,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Proposed => "proposed",
            Variant::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// ε = start − decrement·k
    Subtractive,
    /// ε = start·(1 − decrement)^k
    Multiplicative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub decrement: f64,
    pub period: u64,
    pub floor: f64,
    pub mode: DecayMode,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule { start: 1.0, decrement: 0.15, period: 300, floor: 0.1, mode: DecayMode::Subtractive }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, iteration: u64) -> f64 {
        let k = iteration / self.period.max(1);
        let raw = match self.mode {
            DecayMode::Subtractive => self.start - self.decrement * k as f64,
            DecayMode::Multiplicative => self.start * libm::pow(1.0 - self.decrement, k as f64),
        };
        // land exactly on the floor despite rounding in the decrements
        if raw <= self.floor + 1e-9 { self.floor } else { raw.min(self.start) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentParams {
    pub gamma: f64,
    pub batch_size: usize,
    pub seq_len: usize,
    /// Leading steps of each sequence excluded from the loss.
    pub burn_in: usize,
    /// Transitions stored before training starts.
    pub warmup: usize,
    pub target_sync: u64,
    pub replay_capacity: usize,
    /// Environment steps per gradient step.
    pub train_every: u64,
    pub huber_delta: f64,
    pub eval_epsilon: f64,
    /// LSTM width.
    pub hidden: usize,
    pub adam: AdamParams,
    pub epsilon: EpsilonSchedule,
}

impl Default for AgentParams {
    fn default() -> Self {
        AgentParams {
            gamma: 0.99,
            batch_size: 32,
            seq_len: 10,
            burn_in: 5,
            warmup: 1000,
            target_sync: 100,
            replay_capacity: 10000,
            train_every: 1,
            huber_delta: 1.0,
            eval_epsilon: 0.05,
            hidden: 128,
            adam: AdamParams::default(),
            epsilon: EpsilonSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionParams {
    pub flow_source: FlowSource,
    pub flow: FlowParams,
    pub seg: SegParams,
    pub track: TrackParams,
    pub hog: HogParams,
    pub cluster: ClusterParams,
    pub relevance: RelevanceParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub variant: Variant,
    pub env: EnvConfig,
    #[serde(default)]
    pub agent: AgentParams,
    #[serde(default)]
    pub perception: PerceptionParams,
}

impl AgentConfig {
    pub fn new(variant: Variant, env: EnvConfig) -> Self {
        AgentConfig { variant, env, agent: AgentParams::default(), perception: PerceptionParams::default() }
    }

    /// Category planes fed to the network: none for the baseline.
    pub fn category_planes(&self) -> usize {
        match self.variant {
            Variant::Baseline => 0,
            _ => self.perception.relevance.top_m,
        }
    }

    pub fn arch(&self) -> Arch {
        Arch { hidden: self.agent.hidden, ..Arch::standard(3 + self.category_planes(), Action::COUNT) }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        self.env.validate()?;
        let a = &self.agent;
        if a.seq_len == 0 || a.burn_in >= a.seq_len {
            return Err(AgentError::Params("burn_in must be below seq_len"));
        }
        if a.hidden == 0 || a.batch_size == 0 || a.train_every == 0 || a.target_sync == 0 {
            return Err(AgentError::Params("hidden, batch_size, train_every and target_sync must be positive"));
        }
        if !(0.0..=1.0).contains(&a.gamma) {
            return Err(AgentError::Params("gamma must be in [0,1]"));
        }
        if self.perception.cluster.k_max < 2 || self.perception.relevance.horizon == 0 {
            return Err(AgentError::Params("k_max must be at least 2 and horizon positive"));
        }
        Ok(())
    }
}

/// ε-greedy action; the LSTM state advances in both branches. Greedy ties
/// go to the lowest action index.
pub fn act(net: &QNetwork, state: &mut LstmState, obs: &[f64], epsilon: f64, rng: &mut SeedRng) -> Result<(Action, Vec<f64>), DrqnError> {
    let q = net.forward_step(obs, state)?;
    let explore = rng.random::<f64>() < epsilon;
    let idx = if explore { rng.random_range(0..q.len()) } else { argmax(&q) };
    Ok((Action::from_index(idx).unwrap_or(Action::Noop), q))
}

pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StoredEpisode {
    /// One more observation than transitions: `obs[t+1]` follows action t.
    pub obs: Vec<ObservationTensor>,
    pub actions: Vec<u8>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

impl StoredEpisode {
    pub fn transitions(&self) -> usize {
        self.actions.len()
    }
}

/// A window of `len` consecutive transitions inside one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sequence<'a> {
    /// `len + 1` observations.
    pub obs: &'a [ObservationTensor],
    pub actions: &'a [u8],
    pub rewards: &'a [f64],
    pub dones: &'a [bool],
}

/// Finished episodes, evicted oldest-first beyond `capacity` transitions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplayBuffer {
    episodes: VecDeque<StoredEpisode>,
    current: Option<StoredEpisode>,
    capacity: usize,
    transitions: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer { capacity, ..Default::default() }
    }

    pub fn begin_episode(&mut self, first: ObservationTensor) {
        self.current = Some(StoredEpisode { obs: vec![first], ..Default::default() });
    }

    pub fn push(&mut self, action: Action, reward: f64, done: bool, next: ObservationTensor) {
        if let Some(ep) = self.current.as_mut() {
            ep.actions.push(action.index() as u8);
            ep.rewards.push(reward);
            ep.dones.push(done);
            ep.obs.push(next);
        }
    }

    pub fn end_episode(&mut self) {
        let Some(ep) = self.current.take() else { return };
        if ep.transitions() == 0 {
            return;
        }
        self.transitions += ep.transitions();
        self.episodes.push_back(ep);
        while self.transitions > self.capacity && self.episodes.len() > 1 {
            if let Some(old) = self.episodes.pop_front() {
                self.transitions -= old.transitions();
            }
        }
    }

    /// Transitions in finished episodes.
    pub fn len(&self) -> usize {
        self.transitions
    }

    pub fn is_empty(&self) -> bool {
        self.transitions == 0
    }

    pub fn episodes(&self) -> impl Iterator<Item = &StoredEpisode> {
        self.episodes.iter()
    }

    /// Number of distinct length-`len` windows.
    pub fn windows(&self, len: usize) -> usize {
        self.episodes.iter().map(|e| (e.transitions() + 1).saturating_sub(len)).sum()
    }

    /// Uniform over all windows of `len` transitions that fit in one episode.
    pub fn sample(&self, len: usize, rng: &mut SeedRng) -> Option<Sequence<'_>> {
        let total = self.windows(len);
        if total == 0 {
            return None;
        }
        let mut j = rng.random_range(0..total);
        for e in &self.episodes {
            let n = (e.transitions() + 1).saturating_sub(len);
            if j < n {
                return Some(Sequence {
                    obs: &e.obs[j..j + len + 1],
                    actions: &e.actions[j..j + len],
                    rewards: &e.rewards[j..j + len],
                    dones: &e.dones[j..j + len],
                });
            }
            j -= n;
        }
        None
    }
}

fn huber(x: f64, delta: f64) -> (f64, f64) {
    if x.abs() <= delta { (0.5 * x * x, x) } else { (delta * (x.abs() - 0.5 * delta), delta * x.signum()) }
}

/// One gradient step on a batch of sequences. The loss is the batch mean
/// of the Huber TD error summed over the steps after burn-in; targets come
/// from `target` and carry no gradient.
pub fn train_step(online: &mut QNetwork, target: &QNetwork, opt: &mut Adam, batch: &[Sequence<'_>], params: &AgentParams) -> Result<f64, AgentError> {
    if batch.is_empty() {
        return Err(AgentError::InsufficientBuffer { have: 0, need: 1 });
    }
    let mut grads = vec![0.0; online.layout().total];
    let hidden = online.arch().hidden;
    let mut total = 0.0;
    let planes = online.arch().planes;
    for seq in batch {
        let len = seq.actions.len();
        let inputs: Vec<Vec<f64>> = seq.obs.iter().map(|o| o.to_f64()).collect();
        if inputs.iter().any(|x| x.len() != planes * NET_PIXELS) {
            return Err(AgentError::Net(DrqnError::ShapeMismatch { expected: planes * NET_PIXELS, got: inputs[0].len() }));
        }
        let refs: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
        let zero = LstmState::zeros(hidden);
        let tr = online.forward(&refs[..len], &zero)?;
        let tt = target.forward(&refs, &zero)?;
        let mut dq = vec![vec![0.0; Action::COUNT]; len];
        for t in params.burn_in.min(len.saturating_sub(1))..len {
            let next_max = tt.q(t + 1).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let y = seq.rewards[t] + if seq.dones[t] { 0.0 } else { params.gamma * next_max };
            let a = seq.actions[t] as usize;
            let (l, g) = huber(tr.q(t)[a] - y, params.huber_delta);
            total += l;
            dq[t][a] = g / batch.len() as f64;
        }
        online.backward(&refs[..len], &tr, &dq, &mut grads)?;
    }
    let loss = total / batch.len() as f64;
    if !loss.is_finite() {
        return Err(AgentError::Net(DrqnError::NonFinite("loss")));
    }
    opt.step(online.params_mut(), &grads)?;
    Ok(loss)
}

/// How often each perception stage ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counters {
    pub flow_estimates: u64,
    pub segmentations: u64,
    pub frames_skipped: u64,
    pub descriptors: u64,
    pub reclusters: u64,
    pub selections: u64,
}

/// Per-episode tracking state.
#[derive(Debug, Clone, Default)]
pub struct Tracker {
    segments: Vec<Segment>,
    prev_gray: Option<GrayImage>,
    last_boxes: Vec<(BBox, Option<usize>)>,
}

impl Tracker {
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }
}

/// What perception produced for one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameView {
    pub boxes: Vec<(BBox, Option<usize>)>,
    pub sightings: Vec<Sighting>,
    pub skipped: bool,
}

/// A segment per foreground region: the region box moved by the region's
/// mean flow onto the current frame, described on the current frame.
pub fn region_segments(labels: &SegLabeling, flow: &FlowField, gray: &GrayImage, params: &PerceptionParams) -> Vec<Segment> {
    let (w, h) = (gray.width(), gray.height());
    let mut detected = Vec::new();
    for r in &labels.regions {
        let (mut su, mut sv, mut n) = (0.0, 0.0, 0usize);
        for y in r.bbox.y0 as usize..r.bbox.y1() as usize {
            for x in r.bbox.x0 as usize..r.bbox.x1() as usize {
                if labels.labels[y * w + x] == r.id && flow.is_valid(x, y) {
                    su += flow.u(x, y);
                    sv += flow.v(x, y);
                    n += 1;
                }
            }
        }
        let (du, dv) = if n > 0 { (su / n as f64, sv / n as f64) } else { (0.0, 0.0) };
        let Some(bbox) = r.bbox.translated(libm::round(du) as i32, libm::round(dv) as i32).clamped(w, h) else { continue };
        let Ok(patch) = extract_patch(&gray, &bbox) else { continue };
        detected.push(Segment::detected(bbox, hog_descriptor(&patch, &params.hog), &params.track));
    }
    detected
}

/// Learned perception state shared across episodes.
#[derive(Debug, Clone)]
pub struct Perception {
    variant: Variant,
    params: PerceptionParams,
    categories: usize,
    planes: usize,
    seed: u64,
    pub knowledge: KnowledgeDataset,
    pub relevance: RelevanceState,
    selected: Vec<usize>,
    pub counters: Counters,
}

impl Perception {
    pub fn new(config: &AgentConfig, seed: u64) -> Self {
        Perception {
            variant: config.variant,
            params: config.perception.clone(),
            categories: config.env.categories.len(),
            planes: config.category_planes(),
            seed,
            knowledge: KnowledgeDataset::new(mix_seed(seed, 0x4b)),
            relevance: RelevanceState::new(),
            selected: Vec::new(),
            counters: Counters::default(),
        }
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    /// Restores a selection, e.g. from a checkpoint.
    pub fn set_selected(&mut self, mut selected: Vec<usize>) {
        selected.sort_unstable();
        selected.dedup();
        self.selected = selected;
    }

    pub fn params(&self) -> &PerceptionParams {
        &self.params
    }

    /// Runs perception on a new frame. `learn` enables knowledge insertion.
    pub fn perceive(&mut self, tracker: &mut Tracker, outcome: &StepOutcome, step: u64, learn: bool) -> Result<FrameView, AgentError> {
        match self.variant {
            Variant::Baseline => Ok(FrameView::default()),
            Variant::Oracle => {
                let inst = outcome.truth.instances();
                Ok(FrameView {
                    boxes: inst.iter().map(|&(_, c, b)| (b, Some(c))).collect(),
                    sightings: inst.iter().map(|&(_, c, _)| Sighting::Category(c)).collect(),
                    skipped: false,
                })
            }
            Variant::Proposed => self.perceive_flow(tracker, outcome, step, learn),
        }
    }

    fn perceive_flow(&mut self, tracker: &mut Tracker, outcome: &StepOutcome, step: u64, learn: bool) -> Result<FrameView, AgentError> {
        let gray = to_grayscale(&outcome.frame);
        let Some(prev) = tracker.prev_gray.replace(gray.clone()) else {
            tracker.segments.clear();
            tracker.last_boxes.clear();
            return Ok(FrameView::default());
        };
        if !outcome.truth.has_prior {
            tracker.segments.clear();
            tracker.last_boxes.clear();
            return Ok(FrameView::default());
        }
        let p = &self.params;
        let flow = match p.flow_source {
            FlowSource::Classical => estimate_flow(&prev, &gray, &p.flow)?,
            FlowSource::Oracle => outcome.truth.flow.clone(),
        };
        self.counters.flow_estimates += 1;
        let grad = flow_gradient(&flow);
        self.counters.segmentations += 1;
        let bg = match extract_background(&grad, &p.seg, mix_seed(self.seed, step)) {
            BackgroundOutcome::Found(bg) => bg,
            BackgroundOutcome::FrameSkipped { .. } => {
                self.counters.frames_skipped += 1;
                return Ok(FrameView { boxes: tracker.last_boxes.clone(), sightings: self.sightings(&tracker.segments), skipped: true });
            }
        };
        let labels = segment_foreground(&grad, &bg, &p.seg);
        let detected = region_segments(&labels, &flow, &gray, p);
        self.counters.descriptors += detected.len() as u64;
        let mut predicted = Vec::new();
        for s in &tracker.segments {
            self.counters.descriptors += 1;
            if let Propagation::Kept(k) = propagate(s, &flow, &gray, &p.track, &p.hog) {
                predicted.push(k);
            }
        }
        if learn {
            for d in &detected {
                self.knowledge.insert(d.descriptor, step, &p.cluster);
            }
        }
        let mut segments = reconcile(&predicted, &detected, &p.track);
        if self.knowledge.version() >= 1 {
            for s in &mut segments {
                s.category = self.knowledge.categorize(&s.descriptor, &p.cluster)?;
            }
        }
        tracker.segments = segments;
        tracker.last_boxes = tracker.segments.iter().map(|s| (s.bbox, s.category)).collect();
        Ok(FrameView { boxes: tracker.last_boxes.clone(), sightings: self.sightings(&tracker.segments), skipped: false })
    }

    fn sightings(&self, segments: &[Segment]) -> Vec<Sighting> {
        segments.iter().map(|s| Sighting::Descriptor(s.descriptor)).collect()
    }

    pub fn encode(&self, outcome: &StepOutcome, view: &FrameView) -> ObservationTensor {
        encode(&outcome.frame, &view.boxes, &self.selected, self.planes)
    }

    fn category_count(&self) -> usize {
        match self.variant {
            Variant::Proposed => self.knowledge.centroids().len(),
            _ => self.categories,
        }
    }

    /// Per-category relevance statistics under the current clustering.
    pub fn relevance_report(&self) -> Vec<CategoryStat> {
        let kn = &self.knowledge;
        let cp = &self.params.cluster;
        self.relevance.report(self.category_count(), |d| kn.categorize(d, cp).ok().flatten(), &self.params.relevance)
    }

    /// Periodic re-clustering and re-selection. Returns true when the
    /// selected set changed.
    pub fn maintain(&mut self, step: u64) -> Result<bool, AgentError> {
        if self.variant == Variant::Baseline {
            return Ok(false);
        }
        if self.variant == Variant::Proposed && self.knowledge.len() >= self.params.cluster.k_max {
            let c = self.knowledge.recluster(&self.params.cluster, mix_seed(self.seed, step))?;
            self.knowledge.install(&c);
            self.counters.reclusters += 1;
        }
        if self.relevance.completed() < self.params.relevance.min_samples as u64 {
            return Ok(false);
        }
        self.counters.selections += 1;
        let chosen: Vec<usize> = self.relevance_report().iter().filter(|s| s.selected).map(|s| s.category).collect();
        let changed = chosen != self.selected;
        self.selected = chosen;
        Ok(changed)
    }
}

/// Ground truth and perception output of one evaluated frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerceptionLog {
    pub truth: Vec<Vec<TruthInstance>>,
    pub boxes: Vec<Vec<(BBox, Option<usize>)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeReport {
    pub episode_return: f64,
    pub steps: usize,
    pub log: PerceptionLog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub reward: f64,
    pub loss: Option<f64>,
    /// Set when the step ended an episode.
    pub episode_return: Option<f64>,
    pub selection_changed: bool,
}

struct LiveEpisode {
    env: Gallery,
    tracker: Tracker,
    lstm: LstmState,
    obs: ObservationTensor,
    sightings: Vec<Sighting>,
    episode_return: f64,
}

const ENV_STREAM: u64 = 0xe1;
const EVAL_STREAM: u64 = 0xe7a1;

pub struct Agent {
    config: AgentConfig,
    seed: u64,
    pub online: QNetwork,
    pub target: QNetwork,
    pub opt: Adam,
    pub buffer: ReplayBuffer,
    pub perception: Perception,
    act_rng: SeedRng,
    replay_rng: SeedRng,
    init_rng: SeedRng,
    live: Option<LiveEpisode>,
    env_steps: u64,
    train_steps: u64,
    episodes: u64,
}

impl Agent {
    pub fn new(config: AgentConfig, seed: u64) -> Result<Agent, AgentError> {
        config.validate()?;
        let mut init_rng = stream_rng(seed, 1);
        let online = QNetwork::new(config.arch(), &mut init_rng);
        let target = online.clone();
        let opt = Adam::new(config.agent.adam.clone(), online.layout().total);
        Ok(Agent {
            perception: Perception::new(&config, seed),
            buffer: ReplayBuffer::new(config.agent.replay_capacity),
            act_rng: stream_rng(seed, 2),
            replay_rng: stream_rng(seed, 3),
            init_rng,
            online,
            target,
            opt,
            config,
            seed,
            live: None,
            env_steps: 0,
            train_steps: 0,
            episodes: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn epsilon(&self) -> f64 {
        self.config.agent.epsilon.value(self.env_steps)
    }

    /// Env seed of the `k`-th training episode.
    pub fn episode_seed(&self, k: u64) -> u64 {
        mix_seed(mix_seed(self.seed, ENV_STREAM), k)
    }

    /// Env seed of the `k`-th evaluation episode; the same set is used at
    /// every evaluation.
    pub fn eval_seed(&self, k: u64) -> u64 {
        mix_seed(mix_seed(self.seed, EVAL_STREAM), k)
    }

    fn start_episode(&mut self) -> Result<(), AgentError> {
        let (env, first) = Gallery::reset(&self.config.env, self.episode_seed(self.episodes))?;
        let mut tracker = Tracker::default();
        let view = self.perception.perceive(&mut tracker, &first, self.env_steps, true)?;
        let obs = self.perception.encode(&first, &view);
        self.buffer.begin_episode(obs.clone());
        self.perception.relevance.begin_episode();
        let hidden = self.online.arch().hidden;
        self.live = Some(LiveEpisode { env, tracker, lstm: LstmState::zeros(hidden), obs, sightings: view.sightings, episode_return: 0.0 });
        Ok(())
    }

    /// Advances training by one environment step.
    pub fn train_env_step(&mut self) -> Result<StepReport, AgentError> {
        if self.live.is_none() {
            self.start_episode()?;
        }
        let eps = self.epsilon();
        let step = self.env_steps;
        let mut live = self.live.take().expect("episode started");
        let input = live.obs.to_f64();
        let (action, _) = act(&self.online, &mut live.lstm, &input, eps, &mut self.act_rng)?;
        let out = live.env.step(action)?;
        if self.config.variant != Variant::Baseline {
            let sightings = core::mem::take(&mut live.sightings);
            self.perception.relevance.record(sightings, out.reward, &self.config.perception.relevance);
        }
        let view = self.perception.perceive(&mut live.tracker, &out, step + 1, true)?;
        let next = self.perception.encode(&out, &view);
        self.buffer.push(action, out.reward, out.done, next.clone());
        live.obs = next;
        live.sightings = view.sightings;
        live.episode_return += out.reward;
        self.env_steps += 1;

        let p = &self.config.agent;
        let mut loss = None;
        if self.buffer.len() >= p.warmup && self.env_steps % p.train_every == 0 {
            loss = Some(self.sgd_step()?);
        }
        let mut selection_changed = false;
        if self.env_steps % self.config.perception.cluster.recluster_period.max(1) == 0 && self.perception.maintain(self.env_steps)? {
            self.on_selection_change();
            selection_changed = true;
        }
        let mut episode_return = None;
        if out.done {
            self.buffer.end_episode();
            self.episodes += 1;
            episode_return = Some(live.episode_return);
        } else {
            self.live = Some(live);
        }
        Ok(StepReport { reward: out.reward, loss, episode_return, selection_changed })
    }

    /// Samples a batch and takes one optimiser step.
    pub fn sgd_step(&mut self) -> Result<f64, AgentError> {
        let p = self.config.agent.clone();
        let have = self.buffer.windows(p.seq_len);
        if have == 0 {
            return Err(AgentError::InsufficientBuffer { have, need: 1 });
        }
        let mut batch = Vec::with_capacity(p.batch_size);
        for _ in 0..p.batch_size {
            batch.extend(self.buffer.sample(p.seq_len, &mut self.replay_rng));
        }
        let loss = train_step(&mut self.online, &self.target, &mut self.opt, &batch, &p)?;
        self.train_steps += 1;
        if self.train_steps % p.target_sync == 0 {
            sync_target(&self.online, &mut self.target)?;
        }
        Ok(loss)
    }

    /// The input planes of newly selected categories start from fresh
    /// weights, with a clean optimiser and target.
    fn on_selection_change(&mut self) {
        let planes = self.online.arch().planes;
        self.online.reinit_input_planes(3..planes, &mut self.init_rng);
        self.opt.reset();
        let _ = sync_target(&self.online, &mut self.target);
    }

    /// Plays one evaluation episode with `eval_epsilon` and no learning.
    pub fn evaluate_episode(&mut self, k: u64, record: bool) -> Result<EpisodeReport, AgentError> {
        let env_seed = self.eval_seed(k);
        let mut rng = stream_rng(env_seed, 0xa);
        let (mut env, first) = Gallery::reset(&self.config.env, env_seed)?;
        let mut tracker = Tracker::default();
        let mut lstm = LstmState::zeros(self.online.arch().hidden);
        let mut view = self.perception.perceive(&mut tracker, &first, self.env_steps, false)?;
        let mut obs = self.perception.encode(&first, &view);
        let mut log = PerceptionLog::default();
        let mut episode_return = 0.0;
        let mut steps = 0;
        let eps = self.config.agent.eval_epsilon;
        loop {
            let (action, _) = act(&self.online, &mut lstm, &obs.to_f64(), eps, &mut rng)?;
            let out = env.step(action)?;
            episode_return += out.reward;
            steps += 1;
            view = self.perception.perceive(&mut tracker, &out, self.env_steps, false)?;
            if record && out.truth.has_prior {
                log.truth.push(out.truth.instances().iter().map(|&(_, category, bbox)| TruthInstance { category, bbox }).collect());
                log.boxes.push(view.boxes.clone());
            }
            obs = self.perception.encode(&out, &view);
            if out.done {
                break;
            }
        }
        Ok(EpisodeReport { episode_return, steps, log })
    }
}

/// Mean return of the scripted reference policy over the env seeds.
pub fn scripted_return(env: &EnvConfig, seeds: &[u64]) -> Result<f64, EnvError> {
    let mut total = 0.0;
    for &s in seeds {
        let (mut g, _) = Gallery::reset(env, s)?;
        while !g.is_done() {
            total += g.step(g.scripted_action())?.reward;
        }
    }
    Ok(total / seeds.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drqn::Arch;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn epsilon_schedule_examples() {
        let s = EpsilonSchedule::default();
        assert_eq!(s.value(0), 1.0);
        assert!((s.value(900) - 0.55).abs() < 1e-12);
        assert_eq!(s.value(1800), 0.1);
        assert_eq!(s.value(1_000_000), 0.1);
        let m = EpsilonSchedule { mode: DecayMode::Multiplicative, ..s };
        assert!((m.value(300) - 0.85).abs() < 1e-12);
        assert_eq!(m.value(1_000_000), 0.1);
    }

    proptest! {
        #[test]
        fn epsilon_in_range(it in 0u64..100_000) {
            let v = EpsilonSchedule::default().value(it);
            prop_assert!((0.1..=1.0).contains(&v));
        }
    }

    fn tiny_net(seed: u64) -> QNetwork {
        let arch = Arch { planes: 3, ..Arch::standard(3, 4) };
        QNetwork::new(arch, &mut SeedRng::seed_from_u64(seed))
    }

    #[test]
    fn act_rules() {
        let net = QNetwork::zeros(Arch::standard(3, 4));
        let obs = vec![0.0; 3 * NET_PIXELS];
        let mut rng = SeedRng::seed_from_u64(0);
        let mut st = LstmState::zeros(128);
        assert_eq!(act(&net, &mut st, &obs, 0.0, &mut rng).unwrap().0, Action::Left);
        // biasing one advantage output makes it the greedy choice
        let mut net = net;
        let b = net.layout().adv_b.start;
        net.params_mut()[b + 1] = 0.9;
        net.params_mut()[b + 2] = 0.3;
        net.params_mut()[b + 3] = 0.2;
        net.params_mut()[b] = 0.1;
        assert_eq!(act(&net, &mut st, &obs, 0.0, &mut rng).unwrap().0, Action::Right);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let net = tiny_net(1);
        let obs = vec![0.2; 3 * NET_PIXELS];
        let mut rng = SeedRng::seed_from_u64(9);
        let mut counts = [0usize; 4];
        let mut st = LstmState::zeros(128);
        for _ in 0..10_000 {
            counts[act(&net, &mut st, &obs, 1.0, &mut rng).unwrap().0.index()] += 1;
        }
        // 3σ of a binomial(10000, 1/4)
        let sigma = libm::sqrt(10_000.0 * 0.25 * 0.75);
        for c in counts {
            assert!((c as f64 - 2500.0).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    fn obs_with(v: u8) -> ObservationTensor {
        let mut o = ObservationTensor::zeros(0);
        o.rgb.iter_mut().for_each(|x| *x = v);
        o
    }

    #[test]
    fn replay_evicts_whole_episodes() {
        let mut b = ReplayBuffer::new(25);
        for e in 0..4u8 {
            b.begin_episode(obs_with(e));
            for t in 0..10 {
                b.push(Action::Noop, 0.0, t == 9, obs_with(e));
            }
            b.end_episode();
        }
        assert_eq!(b.len(), 20);
        assert_eq!(b.episodes().count(), 2);
        assert_eq!(b.windows(10), 2);
        assert_eq!(b.windows(11), 0);
    }

    proptest! {
        #[test]
        fn replay_windows_stay_inside_episodes(lens in proptest::collection::vec(1usize..30, 1..8), seed in 0u64..100) {
            let mut b = ReplayBuffer::new(10_000);
            for (e, &n) in lens.iter().enumerate() {
                b.begin_episode(obs_with(e as u8));
                for t in 0..n {
                    b.push(Action::Noop, e as f64, t + 1 == n, obs_with(e as u8));
                }
                b.end_episode();
            }
            let mut rng = SeedRng::seed_from_u64(seed);
            for _ in 0..50 {
                if let Some(s) = b.sample(10, &mut rng) {
                    prop_assert_eq!(s.actions.len(), 10);
                    prop_assert_eq!(s.obs.len(), 11);
                    let e = s.rewards[0];
                    prop_assert!(s.rewards.iter().all(|&r| r == e));
                    prop_assert!(s.obs.iter().all(|o| o.rgb[0] as f64 == e));
                    // only the final transition may be terminal
                    prop_assert!(s.dones[..9].iter().all(|&d| !d));
                } else {
                    prop_assert!(lens.iter().all(|&n| n < 10));
                }
            }
        }
    }

    fn one_step_sequence(obs: &[ObservationTensor], reward: f64, done: bool) -> (Vec<u8>, Vec<f64>, Vec<bool>) {
        let _ = obs;
        (vec![Action::Shoot.index() as u8], vec![reward], vec![done])
    }

    #[test]
    fn terminal_and_gamma_zero_targets_are_rewards() {
        let mut net = tiny_net(3);
        let target = tiny_net(4);
        let obs = vec![obs_with(40), obs_with(90)];
        let (a, r, d) = one_step_sequence(&obs, 0.7, true);
        let seq = Sequence { obs: &obs, actions: &a, rewards: &r, dones: &d };
        let params = AgentParams { burn_in: 0, seq_len: 1, ..AgentParams::default() };
        let mut opt = Adam::new(AdamParams { lr: 0.0, ..params.adam.clone() }, net.layout().total);
        let q = net.forward_step(&obs[0].to_f64(), &mut LstmState::zeros(128)).unwrap()[2];
        let expected = huber(q - 0.7, 1.0).0;
        let loss = train_step(&mut net, &target, &mut opt, &[seq], &params).unwrap();
        assert!((loss - expected).abs() < 1e-12);
        let (a, r, d) = one_step_sequence(&obs, 0.7, false);
        let seq = Sequence { obs: &obs, actions: &a, rewards: &r, dones: &d };
        let g0 = AgentParams { gamma: 0.0, ..params };
        assert!((train_step(&mut net, &target, &mut opt, &[seq], &g0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn single_transition_overfits() {
        let mut net = tiny_net(5);
        let target = net.clone();
        let obs = vec![obs_with(120), obs_with(10)];
        let (a, r, d) = one_step_sequence(&obs, 1.0, true);
        let seq = Sequence { obs: &obs, actions: &a, rewards: &r, dones: &d };
        let params = AgentParams { burn_in: 0, seq_len: 1, adam: AdamParams { lr: 1e-3, ..AdamParams::default() }, ..AgentParams::default() };
        let mut opt = Adam::new(params.adam.clone(), net.layout().total);
        let mut loss = f64::INFINITY;
        for _ in 0..500 {
            loss = train_step(&mut net, &target, &mut opt, &[seq], &params).unwrap();
            if loss < 1e-3 {
                break;
            }
        }
        assert!(loss < 1e-3, "{loss}");
    }

    #[test]
    fn detached_target_does_not_change_gradient() {
        let obs = vec![obs_with(30), obs_with(200)];
        let (a, r, d) = one_step_sequence(&obs, 0.0, false);
        let seq = Sequence { obs: &obs, actions: &a, rewards: &r, dones: &d };
        let params = AgentParams { burn_in: 0, seq_len: 1, ..AgentParams::default() };
        let target = tiny_net(8);
        let mut shifted = target.clone();
        // the loss value depends on the target, its gradient path must not
        let grads = |t: &QNetwork| {
            let mut n = tiny_net(7);
            let mut opt = Adam::new(AdamParams { lr: 0.0, ..AdamParams::default() }, n.layout().total);
            train_step(&mut n, t, &mut opt, &[seq], &params).unwrap();
            opt.m.clone()
        };
        let g1 = grads(&target);
        let l = shifted.layout().conv1_w.clone();
        for v in &mut shifted.params_mut()[l] {
            *v *= 1.0 + 1e-9;
        }
        let g2 = grads(&shifted);
        let rel = g1.iter().zip(&g2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(rel < 1e-9, "{rel}");
    }

    fn small_config(variant: Variant) -> AgentConfig {
        let mut c = AgentConfig::new(variant, EnvConfig { episode_length: 12, ..EnvConfig::default() });
        c.agent.warmup = 20;
        c.agent.batch_size = 2;
        c.agent.train_every = 4;
        c.perception.cluster.recluster_period = 24;
        c.perception.relevance.min_samples = 5;
        c
    }

    #[test]
    fn baseline_never_runs_flow() {
        let mut agent = Agent::new(small_config(Variant::Baseline), 1).unwrap();
        for _ in 0..30 {
            agent.train_env_step().unwrap();
        }
        assert_eq!(agent.perception.counters, Counters::default());
        assert_eq!(agent.online.arch().planes, 3);
        assert!(agent.train_steps() > 0);
    }

    #[test]
    fn proposed_runs_the_pipeline() {
        let mut agent = Agent::new(small_config(Variant::Proposed), 2).unwrap();
        for _ in 0..30 {
            agent.train_env_step().unwrap();
        }
        let c = agent.perception.counters;
        assert!(c.flow_estimates > 0 && c.segmentations > 0);
        assert_eq!(agent.online.arch().planes, 7);
        let ev = agent.evaluate_episode(0, true).unwrap();
        assert_eq!(ev.steps, 12);
        assert_eq!(ev.log.truth.len(), 12);
    }

    #[test]
    fn training_is_reproducible() {
        let run = || {
            let mut agent = Agent::new(small_config(Variant::Oracle), 3).unwrap();
            let mut trace = Vec::new();
            for _ in 0..40 {
                let r = agent.train_env_step().unwrap();
                trace.push((r.reward, r.loss.map(f64::to_bits)));
            }
            (trace, agent.evaluate_episode(0, false).unwrap().episode_return)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn scripted_return_is_pinned() {
        let env = EnvConfig::default();
        let a = scripted_return(&env, &[1, 2, 3]).unwrap();
        assert_eq!(a, scripted_return(&env, &[1, 2, 3]).unwrap());
        assert!(a > 0.0);
    }
}
