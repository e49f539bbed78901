//! Representation learner `R`, segmenter `S` and the parameter groups of
//! the full adaptation model.
//!
//! `R` is a stack of `3x3` same-padded convolutions, each followed by a
//! normalization layer and a ReLU. `S` is a single `1x1` convolution to `K`
//! class logits. The domain classifier `D` lives in
//! [`crate::adversarial`]; its parameters are held here so that one
//! checkpoint captures the whole model.

use rand::Rng as _;

use crate::adversarial::DomainClassifier;
use crate::conv::Padding;
use crate::error::{Error, Result};
use crate::grid::{Grid4, LabelMap, Shape};
use crate::norm::{DomainTag, Mode, NormConfig, NormKind, NormLayer};
use crate::param::{Bound, ParamGroup};
use crate::rng::Rng;
use crate::tape::{Tape, Var};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub classes: usize,
    pub classifier_hidden: usize,
}

impl Architecture {
    /// Three `3x3` conv layers of width 16, a `1x1` segmenter to `classes`
    /// logits and a `16 -> 16 -> 1` domain classifier.
    pub fn desk(classes: usize) -> Self {
        Self {
            in_channels: 3,
            widths: vec![16, 16, 16],
            kernel: 3,
            classes,
            classifier_hidden: 16,
        }
    }

    pub fn representation_channels(&self) -> usize {
        *self.widths.last().expect("at least one layer")
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::invalid("representation widths must be non-empty and positive"));
        }
        if self.classes < 2 {
            return Err(Error::invalid("at least two classes required"));
        }
        if self.kernel.is_multiple_of(2) || self.in_channels == 0 || self.classifier_hidden == 0 {
            return Err(Error::invalid("bad architecture extents"));
        }
        Ok(())
    }

    pub fn classifier(&self) -> DomainClassifier {
        DomainClassifier {
            channels: self.representation_channels(),
            hidden: self.classifier_hidden,
        }
    }
}

/// The three disjoint parameter groups: representation (`θr`), segmenter
/// (`θs`) and domain classifier (`θd`).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub repr: ParamGroup,
    pub seg: ParamGroup,
    pub dcls: ParamGroup,
}

/// Uniform Glorot initialization for a `k x k x cin x cout` kernel.
pub fn glorot_kernel(rng: &mut Rng, k: usize, cin: usize, cout: usize) -> Grid4 {
    let fan_in = (k * k * cin) as f64;
    let fan_out = (k * k * cout) as f64;
    let limit = (6.0 / (fan_in + fan_out)).sqrt();
    let shape = Shape::new(k, k, cin, cout);
    let data = (0..shape.len()).map(|_| rng.gen_range(-limit..limit)).collect();
    Grid4::from_vec(shape, data).expect("length matches")
}

pub(crate) fn conv_name(prefix: &str, layer: usize) -> String {
    format!("{prefix}/conv{layer}")
}

pub(crate) fn norm_name(layer: usize) -> String {
    format!("repr/norm{layer}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationModel {
    pub arch: Architecture,
    pub norms: Vec<NormLayer>,
    pub params: ModelParams,
}

impl SegmentationModel {
    /// Initializes `θr`, `θs` and `θd` in that order from `rng`.
    pub fn new(arch: Architecture, norm: NormConfig, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        norm.validate()?;
        let mut repr = ParamGroup::new();
        let mut norms = Vec::new();
        let mut cin = arch.in_channels;
        for (i, &w) in arch.widths.iter().enumerate() {
            let l = i + 1;
            let name = conv_name("repr", l);
            repr.insert(format!("{name}/kernel"), glorot_kernel(rng, arch.kernel, cin, w))?;
            repr.insert(format!("{name}/bias"), Grid4::zeros(Shape::channels(w)))?;
            if norm.kind != NormKind::None {
                let nn = norm_name(l);
                repr.insert(format!("{nn}/gamma"), Grid4::filled(Shape::channels(w), 1.0))?;
                repr.insert(format!("{nn}/beta"), Grid4::zeros(Shape::channels(w)))?;
            }
            norms.push(NormLayer::new(norm_name(l), w, norm));
            cin = w;
        }
        let mut seg = ParamGroup::new();
        seg.insert("seg/conv/kernel", glorot_kernel(rng, 1, cin, arch.classes))?;
        seg.insert("seg/conv/bias", Grid4::zeros(Shape::channels(arch.classes)))?;
        let dcls = arch.classifier().init_params(rng)?;
        Ok(Self {
            arch,
            norms,
            params: ModelParams { repr, seg, dcls },
        })
    }

    pub fn norm_kind(&self) -> NormKind {
        self.norms
            .first()
            .map(|n| n.kind())
            .unwrap_or(NormKind::None)
    }

    pub fn classifier(&self) -> DomainClassifier {
        self.arch.classifier()
    }

    fn represent_with(
        norms: &mut [NormLayer],
        arch: &Architecture,
        tape: &mut Tape,
        repr: &Bound,
        x: Var,
        tags: &[DomainTag],
        mode: Mode,
    ) -> Result<Var> {
        let mut h = x;
        for (i, layer) in norms.iter_mut().enumerate().take(arch.widths.len()) {
            let l = i + 1;
            let name = conv_name("repr", l);
            h = tape.conv2d(h, repr.var(&format!("{name}/kernel"))?, 1, Padding::Same)?;
            h = tape.add_bias(h, repr.var(&format!("{name}/bias"))?)?;
            if layer.kind() != NormKind::None {
                let nn = norm_name(l);
                let gamma = repr.var(&format!("{nn}/gamma"))?;
                let beta = repr.var(&format!("{nn}/beta"))?;
                h = layer.forward(tape, h, tags, gamma, beta, mode)?;
            }
            h = tape.relu(h);
        }
        Ok(h)
    }

    /// Representation grid `Z = R(X)`. Train-mode calls update the running
    /// statistics of every normalization layer.
    pub fn represent(
        &mut self,
        tape: &mut Tape,
        repr: &Bound,
        x: Var,
        tags: &[DomainTag],
        mode: Mode,
    ) -> Result<Var> {
        Self::represent_with(&mut self.norms, &self.arch, tape, repr, x, tags, mode)
    }

    /// Train-mode representation (batch statistics) that leaves the running
    /// statistics untouched.
    pub fn represent_batch_stats(
        &self,
        tape: &mut Tape,
        repr: &Bound,
        x: Var,
        tags: &[DomainTag],
    ) -> Result<Var> {
        let mut norms = self.norms.clone();
        Self::represent_with(&mut norms, &self.arch, tape, repr, x, tags, Mode::Train)
    }

    /// Evaluation-mode representation that leaves the model untouched.
    pub fn represent_eval(
        &self,
        tape: &mut Tape,
        repr: &Bound,
        x: Var,
        tags: &[DomainTag],
    ) -> Result<Var> {
        let mut norms = self.norms.clone();
        Self::represent_with(&mut norms, &self.arch, tape, repr, x, tags, Mode::Eval)
    }

    /// Per-pixel class logits `S(Z)`.
    pub fn segment(&self, tape: &mut Tape, seg: &Bound, z: Var) -> Result<Var> {
        let h = tape.conv2d(z, seg.var("seg/conv/kernel")?, 1, Padding::Same)?;
        tape.add_bias(h, seg.var("seg/conv/bias")?)
    }

    /// Evaluation-mode representations for a batch of images sharing one tag.
    pub fn representations(&self, images: &Grid4, tag: DomainTag) -> Result<Grid4> {
        let mut tape = Tape::new();
        let repr = self.params.repr.bind(&mut tape, false);
        let x = tape.constant(images.detached());
        let tags = vec![tag; images.shape().n];
        let z = self.represent_eval(&mut tape, &repr, x, &tags)?;
        Ok(tape.value(z).detached())
    }

    /// Evaluation-mode logits.
    pub fn logits(&self, images: &Grid4, tag: DomainTag) -> Result<Grid4> {
        let mut tape = Tape::new();
        let repr = self.params.repr.bind(&mut tape, false);
        let seg = self.params.seg.bind(&mut tape, false);
        let x = tape.constant(images.detached());
        let tags = vec![tag; images.shape().n];
        let z = self.represent_eval(&mut tape, &repr, x, &tags)?;
        let y = self.segment(&mut tape, &seg, z)?;
        Ok(tape.value(y).detached())
    }

    /// Arg-max class per pixel, evaluation mode.
    pub fn predict(&self, images: &Grid4, tag: DomainTag) -> Result<LabelMap> {
        let logits = self.logits(images, tag)?;
        Ok(argmax_labels(&logits))
    }
}

/// Arg-max over channels; ties resolve to the lowest class index.
pub fn argmax_labels(logits: &Grid4) -> LabelMap {
    let s = logits.shape();
    let data = logits
        .data()
        .chunks_exact(s.c)
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::new(s.n, s.h, s.w, data).expect("dims match")
}
