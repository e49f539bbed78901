//! Seeded finite-difference sweep over every differentiable operation.

#![allow(dead_code)]

use rand::Rng as _;

use dan::adversarial::{confusion_loss, domain_loss, DomainClassifier, InstanceNoiseSchedule};
use dan::conv::Padding;
use dan::gradcheck::finite_diff_check;
use dan::model::{Architecture, SegmentationModel};
use dan::norm::{bn_forward, dan_forward, instance_norm_forward, split_bn_forward, SplitStats};
use dan::rng::{normal_grid, stream, Rng};
use dan::{Bound, DomainTag, Grid4, LabelMap, Mode, NormConfig, NormKind, NormStats, ParamGroup, Result, Shape, Tape, Var, IGNORE_LABEL};

pub const STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Conv,
    BiasRelu,
    SoftmaxCe,
    SigmoidBce,
    ConventionalBn,
    SplitBn,
    InstanceNorm,
    Dan,
    DomainClassifier,
    Model,
}

pub const FAMILIES: [Family; 10] = [
    Family::Conv,
    Family::BiasRelu,
    Family::SoftmaxCe,
    Family::SigmoidBce,
    Family::ConventionalBn,
    Family::SplitBn,
    Family::InstanceNorm,
    Family::Dan,
    Family::DomainClassifier,
    Family::Model,
];

#[derive(Clone, Debug)]
pub struct SweepCase {
    pub family: Family,
    pub seed: u64,
    pub max_relative_error: f64,
}

/// `sum((y + w / 2)^2)` for a fixed random `w`.
fn weighted(t: &mut Tape, y: Var, w: &Grid4) -> Result<Var> {
    let wv = t.constant(w.clone());
    let mix = t.axpby(1.0, y, 0.5, wv)?;
    Ok(t.sum_squares(mix))
}

fn group(entries: Vec<(&str, Grid4)>) -> ParamGroup {
    let mut g = ParamGroup::new();
    for (n, v) in entries {
        g.insert(n, v).unwrap();
    }
    g
}

fn small_shape(rng: &mut Rng, n: std::ops::RangeInclusive<usize>, c: usize) -> Shape {
    let n = rng.gen_range(n);
    Shape::new(n, rng.gen_range(2..=4), rng.gen_range(2..=4), c)
}

fn mixed_tags(rng: &mut Rng) -> (Vec<DomainTag>, usize) {
    let ns = rng.gen_range(1..=2);
    let nt = rng.gen_range(1..=2);
    let mut tags = vec![DomainTag::Source; ns];
    tags.extend(vec![DomainTag::Target; nt]);
    (tags, ns)
}

fn check(p: &ParamGroup, f: impl FnMut(&mut Tape, &Bound) -> Result<Var>) -> f64 {
    finite_diff_check(p, STEP, f).unwrap().max_relative_error
}

fn affine(rng: &mut Rng, c: usize) -> (Grid4, Grid4) {
    (
        normal_grid(rng, Shape::channels(c), 1.0, 0.3),
        normal_grid(rng, Shape::channels(c), 0.0, 0.3),
    )
}

pub fn run_case(family: Family, seed: u64) -> f64 {
    let mut rng = stream(seed, 77);
    match family {
        Family::Conv => {
            let k = if rng.gen_bool(0.5) { 1 } else { 3 };
            let stride = rng.gen_range(1..=2);
            let padding = if rng.gen_bool(0.5) { Padding::Same } else { Padding::Valid };
            let cin = rng.gen_range(1..=3);
            let cout = rng.gen_range(1..=3);
            let shape = Shape::new(rng.gen_range(1..=2), rng.gen_range(3..=5), rng.gen_range(3..=5), cin);
            let p = group(vec![
                ("x", normal_grid(&mut rng, shape, 0.0, 1.0)),
                ("kernel", normal_grid(&mut rng, Shape::new(k, k, cin, cout), 0.0, 0.5)),
                ("bias", normal_grid(&mut rng, Shape::channels(cout), 0.0, 0.5)),
            ]);
            let mut probe = Tape::new();
            let b = p.bind(&mut probe, false);
            let y = probe.conv2d(b.var("x").unwrap(), b.var("kernel").unwrap(), stride, padding).unwrap();
            let w = normal_grid(&mut rng, probe.value(y).shape(), 0.0, 1.0);
            check(&p, |t, b| {
                let y = t.conv2d(b.var("x")?, b.var("kernel")?, stride, padding)?;
                let y = t.add_bias(y, b.var("bias")?)?;
                weighted(t, y, &w)
            })
        }
        Family::BiasRelu => {
            let c = rng.gen_range(1..=4);
            let shape = small_shape(&mut rng, 1..=3, c);
            let p = group(vec![
                ("x", normal_grid(&mut rng, shape, 0.0, 1.0)),
                ("bias", normal_grid(&mut rng, Shape::channels(c), 0.0, 0.5)),
            ]);
            let w = normal_grid(&mut rng, shape, 0.0, 1.0);
            check(&p, |t, b| {
                let y = t.add_bias(b.var("x")?, b.var("bias")?)?;
                let y = t.relu(y);
                weighted(t, y, &w)
            })
        }
        Family::SoftmaxCe => {
            let k = rng.gen_range(2..=5);
            let shape = small_shape(&mut rng, 1..=3, k);
            let labels: Vec<u8> = (0..shape.n * shape.h * shape.w)
                .map(|_| if rng.gen_bool(0.15) { IGNORE_LABEL } else { rng.gen_range(0..k as u8) })
                .collect();
            let labels = LabelMap::new(shape.n, shape.h, shape.w, labels).unwrap();
            let p = group(vec![("logits", normal_grid(&mut rng, shape, 0.0, 2.0))]);
            check(&p, |t, b| t.softmax_cross_entropy(b.var("logits")?, &labels))
        }
        Family::SigmoidBce => {
            let shape = small_shape(&mut rng, 1..=3, 1);
            let targets: Vec<f64> = (0..shape.len()).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect();
            let p = group(vec![("logits", normal_grid(&mut rng, shape, 0.0, 2.0))]);
            check(&p, |t, b| t.sigmoid_bce(b.var("logits")?, &targets))
        }
        Family::ConventionalBn | Family::InstanceNorm => {
            let c = rng.gen_range(1..=3);
            let shape = small_shape(&mut rng, 1..=3, c);
            let (g, be) = affine(&mut rng, c);
            let p = group(vec![("x", normal_grid(&mut rng, shape, 0.3, 1.5)), ("gamma", g), ("beta", be)]);
            let w = normal_grid(&mut rng, shape, 0.0, 1.0);
            check(&p, |t, b| {
                let (x, g, be) = (b.var("x")?, b.var("gamma")?, b.var("beta")?);
                let y = if family == Family::ConventionalBn {
                    let mut stats = NormStats::new(c);
                    bn_forward(t, x, g, be, &NormConfig::new(NormKind::ConventionalBn), &mut stats, Mode::Train)?
                } else {
                    instance_norm_forward(t, x, g, be, &NormConfig::new(NormKind::InstanceNorm))?
                };
                weighted(t, y, &w)
            })
        }
        Family::SplitBn => {
            let c = rng.gen_range(1..=3);
            let (tags, _) = mixed_tags(&mut rng);
            let shape = small_shape(&mut rng, tags.len()..=tags.len(), c);
            let (g, be) = affine(&mut rng, c);
            let p = group(vec![("x", normal_grid(&mut rng, shape, 0.3, 1.5)), ("gamma", g), ("beta", be)]);
            let w = normal_grid(&mut rng, shape, 0.0, 1.0);
            check(&p, |t, b| {
                let mut stats = SplitStats::new(c);
                let y = split_bn_forward(
                    t,
                    b.var("x")?,
                    &tags,
                    b.var("gamma")?,
                    b.var("beta")?,
                    &NormConfig::new(NormKind::SplitBn),
                    &mut stats,
                    Mode::Train,
                )?;
                weighted(t, y, &w)
            })
        }
        Family::Dan => dan_decomposed(&mut rng),
        Family::DomainClassifier => {
            let d = DomainClassifier {
                channels: rng.gen_range(1..=4),
                hidden: rng.gen_range(1..=4),
            };
            let mut p = d.init_params(&mut rng).unwrap();
            for v in p.iter_mut() {
                let jitter = normal_grid(&mut rng, v.value().shape(), 0.0, 0.2);
                v.value_mut().data_mut().iter_mut().zip(jitter.data()).for_each(|(a, j)| *a += j);
            }
            let ss = small_shape(&mut rng, 1..=2, d.channels);
            let st = Shape::new(rng.gen_range(1..=2), ss.h, ss.w, d.channels);
            p.insert("zs", normal_grid(&mut rng, ss, 0.5, 1.0)).unwrap();
            p.insert("zt", normal_grid(&mut rng, st, 0.0, 1.0)).unwrap();
            let frozen = p.clone();
            let quiet = InstanceNoiseSchedule::new(0.0, 1);
            check(&p, |t, b| {
                let mut unused = stream(0, 0);
                let dom = domain_loss(t, b.var("zs")?, b.var("zt")?, &d, b, &quiet, &mut unused)?;
                let conf = confusion_loss(t, b.var("zt")?, &d, &frozen)?;
                t.axpby(1.0, dom, 0.7, conf)
            })
        }
        Family::Model => {
            let kind = NormKind::ALL[(seed % 5) as usize];
            let arch = Architecture {
                in_channels: 3,
                widths: vec![rng.gen_range(2..=3), rng.gen_range(2..=3)],
                kernel: 3,
                classes: 3,
                classifier_hidden: 2,
            };
            let model = SegmentationModel::new(arch, NormConfig::new(kind), &mut rng).unwrap();
            let (tags, ns) = mixed_tags(&mut rng);
            let xs = small_shape(&mut rng, tags.len()..=tags.len(), 3);
            let x = normal_grid(&mut rng, xs, 0.5, 0.3);
            let s = x.shape();
            let labels: Vec<u8> = (0..ns * s.h * s.w).map(|_| rng.gen_range(0..3)).collect();
            let labels = LabelMap::new(ns, s.h, s.w, labels).unwrap();
            let mut p = model.params.repr.clone();
            p.extend(model.params.seg.clone()).unwrap();
            check(&p, |t, b| {
                let mut m = model.clone();
                let xv = t.constant(x.clone());
                let z = m.represent(t, b, xv, &tags, Mode::Train)?;
                let zs = t.slice_n(z, 0, ns)?;
                let y = m.segment(t, b, zs)?;
                t.softmax_cross_entropy(y, &labels)
            })
        }
    }
}

/// DAN treats the source statistics as constants for target samples, so
/// the check is split: target inputs and the affine parameters against the
/// full loss (source inputs fixed), and source inputs against the loss on
/// source outputs alone.
fn dan_decomposed(rng: &mut Rng) -> f64 {
    let c = rng.gen_range(1..=3);
    let (tags, ns) = mixed_tags(rng);
    let nt = tags.len() - ns;
    let (h, w) = (rng.gen_range(2..=4), rng.gen_range(2..=4));
    let xs = normal_grid(rng, Shape::new(ns, h, w, c), 0.3, 1.5);
    let xt = normal_grid(rng, Shape::new(nt, h, w, c), 1.0, 2.5);
    let (g, be) = affine(rng, c);
    let wt = normal_grid(rng, Shape::new(tags.len(), h, w, c), 0.0, 1.0);
    let cfg = NormConfig::new(NormKind::Dan);

    let rest = group(vec![("xt", xt.clone()), ("gamma", g.clone()), ("beta", be.clone())]);
    let e1 = check(&rest, |t, b| {
        let xsv = t.constant(xs.clone());
        let x = t.concat_n(&[xsv, b.var("xt")?])?;
        let mut stats = NormStats::new(c);
        let y = dan_forward(t, x, &tags, b.var("gamma")?, b.var("beta")?, &cfg, &mut stats, Mode::Train)?;
        weighted(t, y, &wt)
    });
    let ws = wt.slice_n(0, ns).unwrap();
    let src = group(vec![("xs", xs.clone())]);
    let e2 = check(&src, |t, b| {
        let xtv = t.constant(xt.clone());
        let gv = t.constant(g.clone());
        let bv = t.constant(be.clone());
        let x = t.concat_n(&[b.var("xs")?, xtv])?;
        let mut stats = NormStats::new(c);
        let y = dan_forward(t, x, &tags, gv, bv, &cfg, &mut stats, Mode::Train)?;
        let ys = t.slice_n(y, 0, ns)?;
        weighted(t, ys, &ws)
    });
    e1.max(e2)
}

/// Ten seeded configurations per family.
pub fn gradient_sweep() -> Vec<SweepCase> {
    FAMILIES
        .iter()
        .flat_map(|f| (0..10u64).map(move |s| (*f, s)))
        .map(|(family, s)| SweepCase {
            family,
            seed: 1000 + s,
            max_relative_error: run_case(family, 1000 + s),
        })
        .collect()
}
