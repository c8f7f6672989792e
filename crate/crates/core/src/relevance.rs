//! Task relevance of categories: correlation between category sightings and
//! deviations of the windowed return from its episode mean.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::hog::HogDescriptor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum RelevanceError {
    #[error("empty reward window")]
    EmptyWindow,
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("series shorter than 2")]
    TooShort,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eta {
    /// Deviation threshold in return units.
    Fixed(f64),
    /// Fraction of the running standard deviation of windowed returns.
    StdFraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelevanceParams {
    pub horizon: usize,
    pub gamma: f64,
    pub eta: Eta,
    pub pcc_threshold: f64,
    pub top_m: usize,
    pub min_samples: usize,
    /// Completed indicator steps kept for correlation.
    pub history_cap: usize,
}

impl Default for RelevanceParams {
    fn default() -> Self {
        RelevanceParams {
            horizon: 10,
            gamma: 0.99,
            eta: Eta::StdFraction(0.5),
            pcc_threshold: 0.1,
            top_m: 4,
            min_samples: 500,
            history_cap: 4000,
        }
    }
}

/// Σ γ^i r_i over the window.
pub fn window_return(rewards: &[f64], gamma: f64) -> Result<f64, RelevanceError> {
    if rewards.is_empty() {
        return Err(RelevanceError::EmptyWindow);
    }
    let mut g = 1.0;
    let mut sum = 0.0;
    for r in rewards {
        sum += g * r;
        g *= gamma;
    }
    Ok(sum)
}

/// Pearson correlation; 0 when either series is constant.
pub fn pearson(c: &[f64], x: &[f64]) -> Result<f64, RelevanceError> {
    if c.len() != x.len() {
        return Err(RelevanceError::LengthMismatch(c.len(), x.len()));
    }
    if c.len() < 2 {
        return Err(RelevanceError::TooShort);
    }
    let n = c.len() as f64;
    let mc = c.iter().sum::<f64>() / n;
    let mx = x.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in c.iter().zip(x) {
        let (da, db) = (a - mc, b - mx);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// What was seen in a frame: a segment awaiting (re)labeling, or a known
/// category.
#[derive(Debug, Clone, PartialEq)]
pub enum Sighting {
    Descriptor(HogDescriptor),
    Category(usize),
}

#[derive(Debug, Clone, PartialEq)]
struct PendingStep {
    sightings: Vec<Sighting>,
    reward: f64,
}

/// One step whose return window completed.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorStep {
    pub sightings: Vec<Sighting>,
    pub window_return: f64,
    pub deviates: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryStat {
    pub category: usize,
    pub pcc: f64,
    pub samples: usize,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RelevanceState {
    pending: VecDeque<PendingStep>,
    history: VecDeque<IndicatorStep>,
    // running statistics of windowed returns in the current episode
    count: usize,
    mean: f64,
    m2: f64,
    completed: u64,
}

impl RelevanceState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops the incomplete windows of the previous episode and resets the
    /// episode mean.
    pub fn begin_episode(&mut self) {
        self.pending.clear();
        self.count = 0;
        self.mean = 0.0;
        self.m2 = 0.0;
    }

    /// Records the sightings in frame t and the reward received after acting
    /// on it. Emits the indicator for step t−H+1 once its window is full.
    pub fn record(&mut self, sightings: Vec<Sighting>, reward: f64, params: &RelevanceParams) -> Option<&IndicatorStep> {
        self.pending.push_back(PendingStep { sightings, reward });
        if self.pending.len() < params.horizon {
            return None;
        }
        let rewards: Vec<f64> = self.pending.iter().map(|p| p.reward).collect();
        let v = window_return(&rewards, params.gamma).ok()?;
        self.count += 1;
        let delta = v - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (v - self.mean);
        let std = libm::sqrt(self.m2 / self.count as f64);
        let eta = match params.eta {
            Eta::Fixed(e) => e,
            Eta::StdFraction(f) => f * std,
        };
        let dev = (v - self.mean).abs();
        let deviates = dev >= eta && dev > 1e-12;
        let head = self.pending.pop_front()?;
        if self.history.len() == params.history_cap.max(1) {
            self.history.pop_front();
        }
        self.history.push_back(IndicatorStep { sightings: head.sightings, window_return: v, deviates });
        self.completed += 1;
        self.history.back()
    }

    /// Indicator steps completed since the start of training.
    pub fn completed(&self) -> u64 {
        self.completed
    }

    pub fn history(&self) -> impl Iterator<Item = &IndicatorStep> {
        self.history.iter()
    }

    /// PCC of each category's presence series against the deviation series,
    /// labeling descriptors with `label`.
    pub fn report(&self, categories: usize, label: impl Fn(&HogDescriptor) -> Option<usize>, params: &RelevanceParams) -> Vec<CategoryStat> {
        let n = self.history.len();
        let mut presence = vec![vec![0.0; n]; categories];
        let mut x = vec![0.0; n];
        for (t, step) in self.history.iter().enumerate() {
            x[t] = if step.deviates { 1.0 } else { 0.0 };
            for s in &step.sightings {
                let c = match s {
                    Sighting::Descriptor(d) => label(d),
                    Sighting::Category(c) => Some(*c),
                };
                if let Some(c) = c.filter(|&c| c < categories) {
                    presence[c][t] = 1.0;
                }
            }
        }
        let mut stats: Vec<CategoryStat> = presence
            .iter()
            .enumerate()
            .map(|(i, p)| CategoryStat { category: i, pcc: pearson(p, &x).unwrap_or(0.0), samples: n, selected: false })
            .collect();
        if n >= params.min_samples {
            let mut ranked: Vec<usize> = (0..categories).filter(|&i| stats[i].pcc.abs() >= params.pcc_threshold).collect();
            ranked.sort_by(|&a, &b| stats[b].pcc.abs().total_cmp(&stats[a].pcc.abs()).then(a.cmp(&b)));
            for &i in ranked.iter().take(params.top_m) {
                stats[i].selected = true;
            }
        }
        stats
    }

    /// Selected categories, ascending; empty before `min_samples`.
    pub fn select_relevant(&self, categories: usize, label: impl Fn(&HogDescriptor) -> Option<usize>, params: &RelevanceParams) -> Vec<usize> {
        self.report(categories, label, params).iter().filter(|s| s.selected).map(|s| s.category).collect()
    }
}
