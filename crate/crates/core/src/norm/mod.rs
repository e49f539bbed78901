//! Normalization layers: conventional batch norm, split batch norm,
//! instance norm and domain agnostic normalization (DAN).
//!
//! All kinds share one grouped kernel and differ only in how a batch is
//! partitioned into statistic groups:
//!
//! | kind              | train                                         | eval                              |
//! |-------------------|-----------------------------------------------|-----------------------------------|
//! | conventional BN   | one group over the whole batch                | running stats, every sample       |
//! | split BN          | one group per domain (source, target)         | per-domain running stats          |
//! | instance norm     | one group per sample                          | same as train                     |
//! | DAN               | source samples define stats; others use them  | source running stats, every sample|
//! |                   | as constants                                  |                                   |
//!
//! Under DAN the target samples are normalized with the source batch
//! statistics held fixed, so nothing computed on a target sample can reach a
//! source activation through the statistics, and at evaluation time every
//! domain goes through the same affine map.

pub(crate) mod kernel;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::Grid4;
use crate::tape::{Tape, Var};
use kernel::{FrozenStats, NormGroup, NormPlan};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_EMA_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NormKind {
    None,
    ConventionalBn,
    SplitBn,
    InstanceNorm,
    Dan,
}

impl NormKind {
    pub const ALL: [NormKind; 5] = [
        NormKind::None,
        NormKind::ConventionalBn,
        NormKind::SplitBn,
        NormKind::InstanceNorm,
        NormKind::Dan,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NormKind::None => "none",
            NormKind::ConventionalBn => "conventional_bn",
            NormKind::SplitBn => "split_bn",
            NormKind::InstanceNorm => "instance_norm",
            NormKind::Dan => "dan",
        }
    }

    pub(crate) fn code(self) -> f64 {
        match self {
            NormKind::None => 0.0,
            NormKind::ConventionalBn => 1.0,
            NormKind::SplitBn => 2.0,
            NormKind::InstanceNorm => 3.0,
            NormKind::Dan => 4.0,
        }
    }

    pub(crate) fn from_code(code: f64) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    /// Whether the layer keeps running statistics for evaluation.
    pub fn has_running_stats(self) -> bool {
        matches!(self, NormKind::ConventionalBn | NormKind::SplitBn | NormKind::Dan)
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown norm kind `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DomainTag {
    Source,
    Target,
    Unseen,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormConfig {
    pub kind: NormKind,
    pub epsilon: f64,
    pub ema_momentum: f64,
}

impl NormConfig {
    pub fn new(kind: NormKind) -> Self {
        Self {
            kind,
            epsilon: DEFAULT_EPSILON,
            ema_momentum: DEFAULT_EMA_MOMENTUM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("normalization epsilon must be > 0"));
        }
        if !(self.ema_momentum > 0.0 && self.ema_momentum < 1.0) {
            return Err(Error::invalid("EMA momentum must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Latest batch statistics plus their running aggregates for one channel set.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub update_count: u64,
}

impl NormStats {
    /// Zero running mean, unit running variance, no updates.
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            update_count: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    fn frozen(&self) -> FrozenStats {
        FrozenStats {
            mean: self.running_mean.clone(),
            var: self.running_var.clone(),
        }
    }
}

/// Exponential moving average update:
/// `running <- m * running + (1 - m) * batch`, per channel.
pub fn update_running_stats(
    stats: &mut NormStats,
    batch_mean: &[f64],
    batch_var: &[f64],
    ema_momentum: f64,
) -> Result<()> {
    let c = stats.channels();
    if batch_mean.len() != c || batch_var.len() != c {
        return Err(Error::shape(format!(
            "batch statistics of length {}/{} for {c} channels",
            batch_mean.len(),
            batch_var.len()
        )));
    }
    if !(0.0..1.0).contains(&ema_momentum) {
        return Err(Error::invalid("EMA momentum must lie in [0, 1)"));
    }
    if let Some(v) = batch_var.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::invalid(format!("negative batch variance {v}")));
    }
    let m = ema_momentum;
    for i in 0..c {
        stats.running_mean[i] = m * stats.running_mean[i] + (1.0 - m) * batch_mean[i];
        stats.running_var[i] = m * stats.running_var[i] + (1.0 - m) * batch_var[i];
    }
    stats.mean = batch_mean.to_vec();
    stats.var = batch_var.to_vec();
    stats.update_count += 1;
    Ok(())
}

fn require_trained(stats: &NormStats, what: &str) -> Result<()> {
    if stats.update_count == 0 {
        return Err(Error::UntrainedStats(what.to_string()));
    }
    Ok(())
}

fn check_tags(tags: &[DomainTag], n: usize) -> Result<()> {
    if tags.len() != n {
        return Err(Error::invalid(format!(
            "{} domain tags for a batch of {n}",
            tags.len()
        )));
    }
    Ok(())
}

fn indices(tags: &[DomainTag], keep: impl Fn(DomainTag) -> bool) -> Vec<usize> {
    tags.iter()
        .enumerate()
        .filter(|(_, t)| keep(**t))
        .map(|(i, _)| i)
        .collect()
}

fn apply_update(stats: &mut NormStats, tape: &Tape, out: Var, group: usize, m: f64) -> Result<()> {
    let cache = tape
        .norm_cache(out)
        .expect("normalization output carries its cache");
    let g = &cache.groups[group];
    update_running_stats(stats, &g.mean, &g.var, m)
}

/// Conventional batch normalization over `N x H x W`.
pub fn bn_forward(
    tape: &mut Tape,
    input: Var,
    gamma: Var,
    beta: Var,
    config: &NormConfig,
    stats: &mut NormStats,
    mode: Mode,
) -> Result<Var> {
    let n = tape.value(input).shape().n;
    let all: Vec<usize> = (0..n).collect();
    match mode {
        Mode::Train => {
            let plan = NormPlan {
                groups: vec![NormGroup {
                    members: all,
                    detached: vec![],
                    frozen: None,
                }],
                eps: config.epsilon,
            };
            let out = tape.normalize(input, gamma, beta, &plan)?;
            apply_update(stats, tape, out, 0, config.ema_momentum)?;
            Ok(out)
        }
        Mode::Eval => {
            require_trained(stats, "batch norm")?;
            let plan = NormPlan {
                groups: vec![NormGroup {
                    members: vec![],
                    detached: all,
                    frozen: Some(stats.frozen()),
                }],
                eps: config.epsilon,
            };
            tape.normalize(input, gamma, beta, &plan)
        }
    }
}

/// Instance normalization over `H x W`, independently per sample.
pub fn instance_norm_forward(
    tape: &mut Tape,
    input: Var,
    gamma: Var,
    beta: Var,
    config: &NormConfig,
) -> Result<Var> {
    let s = tape.value(input).shape();
    if s.plane() < 2 {
        return Err(Error::invalid(format!(
            "instance norm needs H*W >= 2, got {s}"
        )));
    }
    let plan = NormPlan {
        groups: (0..s.n)
            .map(|i| NormGroup {
                members: vec![i],
                detached: vec![],
                frozen: None,
            })
            .collect(),
        eps: config.epsilon,
    };
    tape.normalize(input, gamma, beta, &plan)
}

/// Independent running statistics per training domain.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitStats {
    pub source: NormStats,
    pub target: NormStats,
}

impl SplitStats {
    pub fn new(channels: usize) -> Self {
        Self {
            source: NormStats::new(channels),
            target: NormStats::new(channels),
        }
    }
}

/// One batch-norm accumulator per domain with shared affine parameters.
///
/// At evaluation time target-tagged samples use the target accumulator and
/// every other sample (source or unseen) uses the source accumulator.
#[allow(clippy::too_many_arguments)]
pub fn split_bn_forward(
    tape: &mut Tape,
    input: Var,
    tags: &[DomainTag],
    gamma: Var,
    beta: Var,
    config: &NormConfig,
    stats: &mut SplitStats,
    mode: Mode,
) -> Result<Var> {
    check_tags(tags, tape.value(input).shape().n)?;
    let source = indices(tags, |t| t != DomainTag::Target);
    let target = indices(tags, |t| t == DomainTag::Target);
    match mode {
        Mode::Train => {
            if tags.contains(&DomainTag::Unseen) {
                return Err(Error::invalid("split batch norm cannot train on unseen-domain samples"));
            }
            let mut groups = Vec::new();
            let mut slots = Vec::new();
            for (members, is_target) in [(source, false), (target, true)] {
                if !members.is_empty() {
                    groups.push(NormGroup {
                        members,
                        detached: vec![],
                        frozen: None,
                    });
                    slots.push(is_target);
                }
            }
            let plan = NormPlan {
                groups,
                eps: config.epsilon,
            };
            let out = tape.normalize(input, gamma, beta, &plan)?;
            for (g, is_target) in slots.into_iter().enumerate() {
                let st = if is_target {
                    &mut stats.target
                } else {
                    &mut stats.source
                };
                apply_update(st, tape, out, g, config.ema_momentum)?;
            }
            Ok(out)
        }
        Mode::Eval => {
            let mut groups = Vec::new();
            if !source.is_empty() {
                require_trained(&stats.source, "split batch norm (source)")?;
                groups.push(NormGroup {
                    members: vec![],
                    detached: source,
                    frozen: Some(stats.source.frozen()),
                });
            }
            if !target.is_empty() {
                require_trained(&stats.target, "split batch norm (target)")?;
                groups.push(NormGroup {
                    members: vec![],
                    detached: target,
                    frozen: Some(stats.target.frozen()),
                });
            }
            tape.normalize(
                input,
                gamma,
                beta,
                &NormPlan {
                    groups,
                    eps: config.epsilon,
                },
            )
        }
    }
}

/// Domain agnostic normalization.
///
/// Train: statistics come from source-tagged samples only and are
/// differentiated through on the source path. Every other sample is
/// normalized with those statistics as constants. Only source statistics
/// enter the running aggregates.
///
/// Eval: every sample, whatever its tag, is normalized with the aggregated
/// source statistics.
#[allow(clippy::too_many_arguments)]
pub fn dan_forward(
    tape: &mut Tape,
    input: Var,
    tags: &[DomainTag],
    gamma: Var,
    beta: Var,
    config: &NormConfig,
    stats: &mut NormStats,
    mode: Mode,
) -> Result<Var> {
    let n = tape.value(input).shape().n;
    check_tags(tags, n)?;
    match mode {
        Mode::Train => {
            let members = indices(tags, |t| t == DomainTag::Source);
            if members.is_empty() {
                return Err(Error::invalid("DAN training batch contains no source samples"));
            }
            let detached = indices(tags, |t| t != DomainTag::Source);
            let plan = NormPlan {
                groups: vec![NormGroup {
                    members,
                    detached,
                    frozen: None,
                }],
                eps: config.epsilon,
            };
            let out = tape.normalize(input, gamma, beta, &plan)?;
            apply_update(stats, tape, out, 0, config.ema_momentum)?;
            Ok(out)
        }
        Mode::Eval => bn_forward(tape, input, gamma, beta, config, stats, Mode::Eval),
    }
}

/// Fixed evaluation-time map `(x - running_mean) / sqrt(running_var + eps) * gamma + beta`.
pub fn norm_eval_transform(
    input: &Grid4,
    gamma: &[f64],
    beta: &[f64],
    stats: &NormStats,
    epsilon: f64,
) -> Result<Grid4> {
    require_trained(stats, "evaluation transform")?;
    let c = input.shape().c;
    let gamma = Grid4::from_vec(crate::grid::Shape::channels(c), gamma.to_vec())?;
    let beta = Grid4::from_vec(crate::grid::Shape::channels(c), beta.to_vec())?;
    let plan = NormPlan {
        groups: vec![NormGroup {
            members: vec![],
            detached: (0..input.shape().n).collect(),
            frozen: Some(stats.frozen()),
        }],
        eps: epsilon,
    };
    kernel::forward(input, &gamma, &beta, &plan).map(|(out, _)| out)
}

/// A normalization layer with its running statistics. The affine
/// parameters live in the representation parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct NormLayer {
    pub name: String,
    pub config: NormConfig,
    pub stats: NormStats,
    /// Target-domain accumulator; split batch norm only.
    pub target_stats: Option<NormStats>,
}

impl NormLayer {
    pub fn new(name: impl Into<String>, channels: usize, config: NormConfig) -> Self {
        Self {
            name: name.into(),
            config,
            stats: NormStats::new(channels),
            target_stats: (config.kind == NormKind::SplitBn).then(|| NormStats::new(channels)),
        }
    }

    pub fn kind(&self) -> NormKind {
        self.config.kind
    }

    /// Applies the layer. `NormKind::None` returns `input` unchanged.
    ///
    /// Train-mode calls update the running statistics.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        input: Var,
        tags: &[DomainTag],
        gamma: Var,
        beta: Var,
        mode: Mode,
    ) -> Result<Var> {
        let cfg = self.config;
        match cfg.kind {
            NormKind::None => Ok(input),
            NormKind::ConventionalBn => {
                bn_forward(tape, input, gamma, beta, &cfg, &mut self.stats, mode)
            }
            NormKind::InstanceNorm => instance_norm_forward(tape, input, gamma, beta, &cfg),
            NormKind::Dan => {
                dan_forward(tape, input, tags, gamma, beta, &cfg, &mut self.stats, mode)
            }
            NormKind::SplitBn => {
                let mut split = SplitStats {
                    source: self.stats.clone(),
                    target: self
                        .target_stats
                        .clone()
                        .unwrap_or_else(|| NormStats::new(self.stats.channels())),
                };
                let out = split_bn_forward(tape, input, tags, gamma, beta, &cfg, &mut split, mode)?;
                self.stats = split.source;
                self.target_stats = Some(split.target);
                Ok(out)
            }
        }
    }

    /// Evaluation-mode forward that leaves the layer untouched.
    pub fn forward_eval(
        &self,
        tape: &mut Tape,
        input: Var,
        tags: &[DomainTag],
        gamma: Var,
        beta: Var,
    ) -> Result<Var> {
        self.clone()
            .forward(tape, input, tags, gamma, beta, Mode::Eval)
    }
}

#[cfg(test)]
mod tests;
