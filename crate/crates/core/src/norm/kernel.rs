//! Grouped per-channel normalization shared by every layer kind.
//!
//! A [`NormPlan`] partitions the batch into groups. Each group normalizes
//! its samples with one per-channel mean/variance pair. Statistics are
//! either computed from the group's `members` (and differentiated through)
//! or supplied as frozen constants. `detached` samples are normalized with
//! the group's statistics but never influence them, forward or backward.

use crate::error::{Error, Result};
use crate::grid::{Grid4, Shape};

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct FrozenStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct NormGroup {
    pub members: Vec<usize>,
    pub detached: Vec<usize>,
    pub frozen: Option<FrozenStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct NormPlan {
    pub groups: Vec<NormGroup>,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct GroupState {
    pub members: Vec<usize>,
    pub detached: Vec<usize>,
    pub frozen: bool,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct NormCache {
    pub groups: Vec<GroupState>,
}

fn check_plan(shape: Shape, plan: &NormPlan) -> Result<()> {
    let mut seen = vec![false; shape.n];
    for g in &plan.groups {
        if g.frozen.is_some() && !g.members.is_empty() {
            return Err(Error::invalid("frozen normalization group with members"));
        }
        if g.frozen.is_none() && g.members.len() * shape.plane() < 2 {
            return Err(Error::invalid(format!(
                "normalization statistics need at least 2 positions, got {} in {shape}",
                g.members.len() * shape.plane()
            )));
        }
        for &n in g.members.iter().chain(&g.detached) {
            if n >= shape.n || seen[n] {
                return Err(Error::invalid(format!(
                    "sample {n} assigned twice or out of range in normalization plan"
                )));
            }
            seen[n] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::invalid("normalization plan leaves samples uncovered"));
    }
    Ok(())
}

/// Biased per-channel mean and variance over every position of `samples`.
pub(crate) fn channel_stats(x: &Grid4, samples: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let s = x.shape();
    let c = s.c;
    let per = s.sample_len();
    let count = (samples.len() * s.plane()) as f64;
    let mut mean = vec![0.0; c];
    for &n in samples {
        for row in x.data()[n * per..(n + 1) * per].chunks_exact(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; c];
    for &n in samples {
        for row in x.data()[n * per..(n + 1) * per].chunks_exact(c) {
            for ((s2, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *s2 += d * d;
            }
        }
    }
    var.iter_mut().for_each(|v| *v /= count);
    (mean, var)
}

pub(crate) fn forward(
    x: &Grid4,
    gamma: &Grid4,
    beta: &Grid4,
    plan: &NormPlan,
) -> Result<(Grid4, NormCache)> {
    let s = x.shape();
    let affine = Shape::channels(s.c);
    if gamma.shape() != affine || beta.shape() != affine {
        return Err(Error::shape(format!(
            "affine parameters {} / {} for input {s}",
            gamma.shape(),
            beta.shape()
        )));
    }
    if plan.eps <= 0.0 {
        return Err(Error::invalid("normalization epsilon must be positive"));
    }
    check_plan(s, plan)?;
    let (gv, bv) = (gamma.data(), beta.data());
    let per = s.sample_len();
    let mut out = Grid4::zeros(s);
    let mut groups = Vec::with_capacity(plan.groups.len());
    for g in &plan.groups {
        let (mean, var) = match &g.frozen {
            Some(f) => {
                if f.mean.len() != s.c || f.var.len() != s.c {
                    return Err(Error::shape(format!(
                        "frozen statistics of length {} for input {s}",
                        f.mean.len()
                    )));
                }
                (f.mean.clone(), f.var.clone())
            }
            None => channel_stats(x, &g.members),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + plan.eps).sqrt()).collect();
        for &n in g.members.iter().chain(&g.detached) {
            let src = &x.data()[n * per..(n + 1) * per];
            let dst = &mut out.data_mut()[n * per..(n + 1) * per];
            for (drow, srow) in dst.chunks_exact_mut(s.c).zip(src.chunks_exact(s.c)) {
                for ch in 0..s.c {
                    drow[ch] = (srow[ch] - mean[ch]) * inv_std[ch] * gv[ch] + bv[ch];
                }
            }
        }
        groups.push(GroupState {
            members: g.members.clone(),
            detached: g.detached.clone(),
            frozen: g.frozen.is_some(),
            mean,
            var,
            inv_std,
        });
    }
    Ok((out, NormCache { groups }))
}

pub(crate) fn backward(
    x: &Grid4,
    gamma: &[f64],
    cache: &NormCache,
    dy: &[f64],
    mut dx: Option<&mut [f64]>,
    mut dgamma: Option<&mut [f64]>,
    mut dbeta: Option<&mut [f64]>,
) {
    let s = x.shape();
    let c = s.c;
    let per = s.sample_len();
    let xd = x.data();
    for g in &cache.groups {
        let rows = |n: usize| {
            xd[n * per..(n + 1) * per]
                .chunks_exact(c)
                .zip(dy[n * per..(n + 1) * per].chunks_exact(c))
        };
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for &n in g.members.iter().chain(&g.detached) {
            for (xr, dr) in rows(n) {
                for ch in 0..c {
                    let xhat = (xr[ch] - g.mean[ch]) * g.inv_std[ch];
                    sum_dy[ch] += dr[ch];
                    sum_dy_xhat[ch] += dr[ch] * xhat;
                }
            }
        }
        if let Some(db) = dbeta.as_deref_mut() {
            for (a, v) in db.iter_mut().zip(&sum_dy) {
                *a += v;
            }
        }
        if let Some(dg) = dgamma.as_deref_mut() {
            for (a, v) in dg.iter_mut().zip(&sum_dy_xhat) {
                *a += v;
            }
        }
        let Some(dx) = dx.as_deref_mut() else {
            continue;
        };
        // Sums restricted to the members: only their outputs feed back
        // into the statistics.
        let (mut m_dy, mut m_dy_xhat) = (vec![0.0; c], vec![0.0; c]);
        if !g.frozen {
            for &n in &g.members {
                for (xr, dr) in rows(n) {
                    for ch in 0..c {
                        let xhat = (xr[ch] - g.mean[ch]) * g.inv_std[ch];
                        m_dy[ch] += dr[ch];
                        m_dy_xhat[ch] += dr[ch] * xhat;
                    }
                }
            }
            let count = (g.members.len() * s.plane()) as f64;
            m_dy.iter_mut().for_each(|v| *v /= count);
            m_dy_xhat.iter_mut().for_each(|v| *v /= count);
            for &n in &g.members {
                let base = n * per;
                for p in 0..s.plane() {
                    for ch in 0..c {
                        let i = base + p * c + ch;
                        let xhat = (xd[i] - g.mean[ch]) * g.inv_std[ch];
                        dx[i] += gamma[ch]
                            * g.inv_std[ch]
                            * (dy[i] - m_dy[ch] - xhat * m_dy_xhat[ch]);
                    }
                }
            }
        } else {
            for &n in &g.members {
                let base = n * per;
                for i in base..base + per {
                    let ch = (i - base) % c;
                    dx[i] += gamma[ch] * g.inv_std[ch] * dy[i];
                }
            }
        }
        for &n in &g.detached {
            let base = n * per;
            for i in base..base + per {
                let ch = (i - base) % c;
                dx[i] += gamma[ch] * g.inv_std[ch] * dy[i];
            }
        }
    }
}
