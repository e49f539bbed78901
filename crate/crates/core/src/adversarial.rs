//! Domain classifier, domain loss, confusion loss and instance noise.
//!
//! The classifier `D` maps each position of a representation grid to the
//! probability `p` that it came from the target domain. The domain loss
//! trains `D` to separate the domains; the confusion loss
//! `mean(-log(1 - D(z)))` over target positions pushes the representation
//! learner to make target positions look like source ones.

use rand_distr::{Distribution, Normal};

use crate::conv::Padding;
use crate::error::{Error, Result};
use crate::grid::{Grid4, Shape};
use crate::model::glorot_kernel;
use crate::param::{Bound, ParamGroup};
use crate::rng::Rng;
use crate::tape::{sigmoid, Tape, Var};

/// Two `1x1` convolutions `C -> hidden -> 1` with a ReLU in between.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DomainClassifier {
    pub channels: usize,
    pub hidden: usize,
}

impl DomainClassifier {
    pub fn init_params(&self, rng: &mut Rng) -> Result<ParamGroup> {
        let mut p = ParamGroup::new();
        p.insert("dcls/conv1/kernel", glorot_kernel(rng, 1, self.channels, self.hidden))?;
        p.insert("dcls/conv1/bias", Grid4::zeros(Shape::channels(self.hidden)))?;
        p.insert("dcls/conv2/kernel", glorot_kernel(rng, 1, self.hidden, 1))?;
        p.insert("dcls/conv2/bias", Grid4::zeros(Shape::channels(1)))?;
        Ok(p)
    }

    /// Per-position logits of `p(target)`.
    pub fn logits(&self, tape: &mut Tape, params: &Bound, z: Var) -> Result<Var> {
        let c = tape.value(z).shape().c;
        if c != self.channels {
            return Err(Error::shape(format!(
                "domain classifier expects {} channels, got {}",
                self.channels,
                tape.value(z).shape()
            )));
        }
        let h = tape.conv2d(z, params.var("dcls/conv1/kernel")?, 1, Padding::Same)?;
        let h = tape.add_bias(h, params.var("dcls/conv1/bias")?)?;
        let h = tape.relu(h);
        let h = tape.conv2d(h, params.var("dcls/conv2/kernel")?, 1, Padding::Same)?;
        tape.add_bias(h, params.var("dcls/conv2/bias")?)
    }

    /// `p = D(z)` for a plain grid, no gradients.
    pub fn probabilities(&self, params: &ParamGroup, z: &Grid4) -> Result<Grid4> {
        let mut tape = Tape::new();
        let b = params.bind(&mut tape, false);
        let zv = tape.constant(z.detached());
        let l = self.logits(&mut tape, &b, zv)?;
        let mut p = tape.value(l).detached();
        p.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        Ok(p)
    }
}

/// Linearly annealed instance-noise level:
/// `sigma(step) = sigma0 * max(0, 1 - step / horizon)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InstanceNoiseSchedule {
    pub sigma0: f64,
    pub horizon: u64,
    pub step: u64,
}

impl InstanceNoiseSchedule {
    pub fn new(sigma0: f64, horizon: u64) -> Self {
        Self {
            sigma0,
            horizon,
            step: 0,
        }
    }

    pub fn sigma_at(&self, step: u64) -> f64 {
        if self.horizon == 0 {
            return 0.0;
        }
        self.sigma0 * (1.0 - step as f64 / self.horizon as f64).max(0.0)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma_at(self.step)
    }

    pub fn advance(&mut self) {
        self.step += 1;
    }
}

/// I.i.d. `N(0, sigma^2)` offsets, or `None` when `sigma` is zero.
pub fn noise_offsets(shape: Shape, sigma: f64, rng: &mut Rng) -> Result<Option<Grid4>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("noise level {sigma} must be finite and >= 0")));
    }
    if sigma == 0.0 {
        return Ok(None);
    }
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    let data = (0..shape.len()).map(|_| normal.sample(rng)).collect();
    Ok(Some(Grid4::from_vec(shape, data)?))
}

/// `z + N(0, sigma(step)^2)` elementwise; `z` itself when the level is zero.
pub fn apply_instance_noise(z: &Grid4, schedule: &InstanceNoiseSchedule, rng: &mut Rng) -> Result<Grid4> {
    let mut out = z.detached();
    if let Some(noise) = noise_offsets(z.shape(), schedule.sigma(), rng)? {
        for (v, n) in out.data_mut().iter_mut().zip(noise.data()) {
            *v += n;
        }
    }
    Ok(out)
}

/// Records `z + noise` on the tape; returns `z` when the level is zero.
pub fn noisy(tape: &mut Tape, z: Var, sigma: f64, rng: &mut Rng) -> Result<Var> {
    match noise_offsets(tape.value(z).shape(), sigma, rng)? {
        Some(offset) => tape.add_const(z, &offset),
        None => Ok(z),
    }
}

/// Binary cross entropy of `D` over all source and target positions, source
/// labeled 0 and target labeled 1, after instance noise on both grids.
pub fn domain_loss(
    tape: &mut Tape,
    z_source: Var,
    z_target: Var,
    classifier: &DomainClassifier,
    params: &Bound,
    noise: &InstanceNoiseSchedule,
    rng: &mut Rng,
) -> Result<Var> {
    let (ss, st) = (tape.value(z_source).shape(), tape.value(z_target).shape());
    if ss.c != st.c {
        return Err(Error::shape(format!(
            "source representation {ss} and target representation {st} differ in channels"
        )));
    }
    let sigma = noise.sigma();
    let zs = noisy(tape, z_source, sigma, rng)?;
    let zt = noisy(tape, z_target, sigma, rng)?;
    let ls = classifier.logits(tape, params, zs)?;
    let lt = classifier.logits(tape, params, zt)?;
    let logits = tape.concat_n(&[ls, lt])?;
    let mut targets = vec![0.0; ss.n * ss.h * ss.w];
    targets.resize(targets.len() + st.n * st.h * st.w, 1.0);
    tape.sigmoid_bce(logits, &targets)
}

/// `mean(-log(1 - D(z)))` over target positions. `θd` enters as constants,
/// so the loss only sends gradients into `z`.
pub fn confusion_loss(
    tape: &mut Tape,
    z_target: Var,
    classifier: &DomainClassifier,
    params: &ParamGroup,
) -> Result<Var> {
    let frozen = params.bind(tape, false);
    let logits = classifier.logits(tape, &frozen, z_target)?;
    let s = tape.value(logits).shape();
    tape.sigmoid_bce(logits, &vec![0.0; s.n * s.h * s.w])
}
