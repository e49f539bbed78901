use super::*;
use crate::gradcheck::finite_diff_check;
use crate::grid::Shape;
use crate::param::ParamGroup;
use crate::rng::{normal_grid, stream};

use DomainTag::{Source, Target, Unseen};

fn affine(tape: &mut Tape, c: usize, gamma: f64, beta: f64) -> (Var, Var) {
    (
        tape.constant(Grid4::filled(Shape::channels(c), gamma)),
        tape.constant(Grid4::filled(Shape::channels(c), beta)),
    )
}

fn cfg(kind: NormKind) -> NormConfig {
    NormConfig::new(kind)
}

fn bits(g: &Grid4) -> Vec<u64> {
    g.data().iter().map(|v| v.to_bits()).collect()
}

fn trained_stats(c: usize, seed: u64) -> NormStats {
    let mut rng = stream(seed, 9);
    let mut s = NormStats::new(c);
    let m = normal_grid(&mut rng, Shape::channels(c), 0.0, 1.0);
    let v = normal_grid(&mut rng, Shape::channels(c), 0.0, 1.0);
    let var: Vec<f64> = v.data().iter().map(|x| x * x + 0.1).collect();
    update_running_stats(&mut s, m.data(), &var, 0.0).unwrap();
    s
}

#[test]
fn bn_constant_input_maps_to_zero() {
    let mut t = Tape::new();
    let x = t.constant(Grid4::from_fn(Shape::new(2, 3, 3, 2), |_, _, _, c| {
        [3.5, -1.25][c]
    }));
    let (g, b) = affine(&mut t, 2, 1.0, 0.0);
    let mut stats = NormStats::new(2);
    let y = bn_forward(&mut t, x, g, b, &cfg(NormKind::ConventionalBn), &mut stats, Mode::Train)
        .unwrap();
    assert!(t.value(y).data().iter().all(|v| v.abs() < 1e-9));
}

#[test]
fn bn_standardized_input_is_fixed_point() {
    // Per channel: half the positions at +1, half at -1 (mean 0, variance 1).
    let x = Grid4::from_fn(Shape::new(2, 2, 2, 2), |n, y, _, c| {
        if (n + y + c) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    });
    for (eps, tol) in [(1e-12f64, 1e-6f64), (DEFAULT_EPSILON, 1e-5)] {
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let (g, b) = affine(&mut t, 2, 1.0, 0.0);
        let config = NormConfig {
            epsilon: eps,
            ..cfg(NormKind::ConventionalBn)
        };
        let mut stats = NormStats::new(2);
        let y = bn_forward(&mut t, xv, g, b, &config, &mut stats, Mode::Train).unwrap();
        let scale = 1.0 / (1.0 + eps).sqrt();
        for (a, e) in t.value(y).data().iter().zip(x.data()) {
            assert!((a - e * scale).abs() < 1e-12);
            assert!((a - e).abs() < tol.max(eps));
        }
    }
}

fn norm_group(seed: u64, shape: Shape) -> ParamGroup {
    let mut rng = stream(seed, 0);
    let mut p = ParamGroup::new();
    p.insert("x", normal_grid(&mut rng, shape, 0.3, 1.5)).unwrap();
    p.insert("gamma", normal_grid(&mut rng, Shape::channels(shape.c), 1.0, 0.3))
        .unwrap();
    p.insert("beta", normal_grid(&mut rng, Shape::channels(shape.c), 0.0, 0.3))
        .unwrap();
    p.insert("w", normal_grid(&mut rng, shape, 0.0, 1.0)).unwrap();
    p
}

/// `sum((y + w / 2)^2)`: a plain `sum(y^2)` is nearly constant after
/// normalization, the random offset gives every output a real gradient.
fn weighted_objective(t: &mut Tape, y: Var, w: Var) -> Result<Var> {
    let mix = t.axpby(1.0, y, 0.5, w)?;
    Ok(t.sum_squares(mix))
}

#[test]
fn bn_backward_matches_finite_differences() {
    let p = norm_group(11, Shape::new(4, 3, 3, 2));
    let r = finite_diff_check(&p, 1e-5, |t, b| {
        let mut stats = NormStats::new(2);
        let y = bn_forward(
            t,
            b.var("x")?,
            b.var("gamma")?,
            b.var("beta")?,
            &cfg(NormKind::ConventionalBn),
            &mut stats,
            Mode::Train,
        )?;
        weighted_objective(t, y, b.var("w")?)
    })
    .unwrap();
    assert!(r.max_relative_error < 1e-5, "{r:?}");
}

#[test]
fn bn_single_position_rejected() {
    let mut t = Tape::new();
    let x = t.constant(Grid4::zeros(Shape::new(1, 1, 1, 2)));
    let (g, b) = affine(&mut t, 2, 1.0, 0.0);
    let mut stats = NormStats::new(2);
    assert!(bn_forward(&mut t, x, g, b, &cfg(NormKind::ConventionalBn), &mut stats, Mode::Train)
        .is_err());
}

#[test]
fn instance_norm_per_sample_moments() {
    let mut rng = stream(3, 0);
    let x = normal_grid(&mut rng, Shape::new(3, 4, 4, 2), 2.0, 10.0);
    let mut t = Tape::new();
    let xv = t.constant(x);
    let (g, b) = affine(&mut t, 2, 1.7, -0.4);
    let y = instance_norm_forward(&mut t, xv, g, b, &cfg(NormKind::InstanceNorm)).unwrap();
    let out = t.value(y);
    for n in 0..3 {
        let sample = out.sample(n).unwrap();
        let (mean, var) = kernel::channel_stats(&sample, &[0]);
        for c in 0..2 {
            assert!((mean[c] + 0.4).abs() < 1e-6);
            assert!((var[c].sqrt() - 1.7).abs() < 1e-6);
        }
    }
}

#[test]
fn instance_norm_has_no_cross_sample_coupling() {
    let mut rng = stream(4, 0);
    let x = normal_grid(&mut rng, Shape::new(3, 3, 3, 2), 0.0, 1.0);
    let perm = [2usize, 0, 1];
    let parts: Vec<Grid4> = perm.iter().map(|&i| x.sample(i).unwrap()).collect();
    let refs: Vec<&Grid4> = parts.iter().collect();
    let xp = Grid4::concat_n(&refs).unwrap();

    let mut t = Tape::new();
    let (g, b) = affine(&mut t, 2, 1.2, 0.1);
    let a = t.constant(x);
    let ya = instance_norm_forward(&mut t, a, g, b, &cfg(NormKind::InstanceNorm)).unwrap();
    let bp = t.constant(xp);
    let yb = instance_norm_forward(&mut t, bp, g, b, &cfg(NormKind::InstanceNorm)).unwrap();
    for (j, &i) in perm.iter().enumerate() {
        assert_eq!(
            bits(&t.value(yb).sample(j).unwrap()),
            bits(&t.value(ya).sample(i).unwrap())
        );
    }
}

#[test]
fn instance_norm_backward_matches_finite_differences() {
    let p = norm_group(12, Shape::new(2, 3, 3, 3));
    let r = finite_diff_check(&p, 1e-5, |t, b| {
        let y = instance_norm_forward(
            t,
            b.var("x")?,
            b.var("gamma")?,
            b.var("beta")?,
            &cfg(NormKind::InstanceNorm),
        )?;
        weighted_objective(t, y, b.var("w")?)
    })
    .unwrap();
    assert!(r.max_relative_error < 1e-5, "{r:?}");
}

#[test]
fn instance_norm_single_position_rejected() {
    let mut t = Tape::new();
    let x = t.constant(Grid4::zeros(Shape::new(4, 1, 1, 2)));
    let (g, b) = affine(&mut t, 2, 1.0, 0.0);
    assert!(instance_norm_forward(&mut t, x, g, b, &cfg(NormKind::InstanceNorm)).is_err());
}

fn mixed_input(seed: u64) -> Grid4 {
    let mut rng = stream(seed, 1);
    let s = normal_grid(&mut rng, Shape::new(2, 3, 3, 2), 0.5, 1.0);
    let t = normal_grid(&mut rng, Shape::new(2, 3, 3, 2), 2.0, 3.0);
    Grid4::concat_n(&[&s, &t]).unwrap()
}

const MIXED: [DomainTag; 4] = [Source, Source, Target, Target];

#[test]
fn split_bn_on_source_only_batch_is_bn() {
    let x = mixed_input(5).slice_n(0, 2).unwrap();
    let mut t = Tape::new();
    let xv = t.constant(x);
    let (g, b) = affine(&mut t, 2, 1.3, 0.2);
    let mut split = SplitStats::new(2);
    let ys = split_bn_forward(&mut t, xv, &[Source, Source], g, b, &cfg(NormKind::SplitBn), &mut split, Mode::Train)
        .unwrap();
    let mut stats = NormStats::new(2);
    let yb = bn_forward(&mut t, xv, g, b, &cfg(NormKind::ConventionalBn), &mut stats, Mode::Train)
        .unwrap();
    assert_eq!(bits(t.value(ys)), bits(t.value(yb)));
    assert_eq!(split.source, stats);
    assert_eq!(split.target.update_count, 0);
}

#[test]
fn split_bn_source_outputs_ignore_target_samples() {
    let x = mixed_input(6);
    let mut perturbed = x.clone();
    for n in 2..4 {
        for v in perturbed.data_mut()[n * 18..(n + 1) * 18].iter_mut() {
            *v = *v * 3.0 - 7.0;
        }
    }
    let run = |x: Grid4| {
        let mut t = Tape::new();
        let xv = t.constant(x);
        let (g, b) = affine(&mut t, 2, 0.8, 0.1);
        let mut split = SplitStats::new(2);
        let y = split_bn_forward(&mut t, xv, &MIXED, g, b, &cfg(NormKind::SplitBn), &mut split, Mode::Train)
            .unwrap();
        t.value(y).slice_n(0, 2).unwrap()
    };
    assert_eq!(bits(&run(x)), bits(&run(perturbed)));
}

#[test]
fn split_bn_matches_per_domain_oracle() {
    let x = mixed_input(7);
    let mut t = Tape::new();
    let xv = t.constant(x.clone());
    let (g, b) = affine(&mut t, 2, 1.0, 0.0);
    let mut split = SplitStats::new(2);
    let y = split_bn_forward(&mut t, xv, &MIXED, g, b, &cfg(NormKind::SplitBn), &mut split, Mode::Train)
        .unwrap();
    let y = t.value(y);
    // Brute force: each domain half standardized with its own mean/variance.
    for half in [0usize, 2] {
        for c in 0..2 {
            let vals: Vec<f64> = (half..half + 2)
                .flat_map(|n| (0..3).flat_map(move |yy| (0..3).map(move |xx| (n, yy, xx))))
                .map(|(n, yy, xx)| x.get(n, yy, xx, c))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            let mut k = 0;
            for n in half..half + 2 {
                for yy in 0..3 {
                    for xx in 0..3 {
                        let expect = (vals[k] - mean) / (var + DEFAULT_EPSILON).sqrt();
                        assert!((y.get(n, yy, xx, c) - expect).abs() < 1e-10);
                        k += 1;
                    }
                }
            }
            let _ = k;
        }
    }
}

#[test]
fn split_bn_rejects_unseen_in_training() {
    let mut t = Tape::new();
    let xv = t.constant(mixed_input(8));
    let (g, b) = affine(&mut t, 2, 1.0, 0.0);
    let mut split = SplitStats::new(2);
    let tags = [Source, Source, Unseen, Target];
    assert!(split_bn_forward(&mut t, xv, &tags, g, b, &cfg(NormKind::SplitBn), &mut split, Mode::Train)
        .is_err());
}

#[test]
fn dan_on_source_only_batch_is_bn_bitwise() {
    let x = mixed_input(9).slice_n(0, 2).unwrap();
    let mut t = Tape::new();
    let xv = t.constant(x);
    let (g, b) = affine(&mut t, 2, 1.1, -0.3);
    let mut ds = NormStats::new(2);
    let yd = dan_forward(&mut t, xv, &[Source, Source], g, b, &cfg(NormKind::Dan), &mut ds, Mode::Train)
        .unwrap();
    let mut bs = NormStats::new(2);
    let yb = bn_forward(&mut t, xv, g, b, &cfg(NormKind::ConventionalBn), &mut bs, Mode::Train)
        .unwrap();
    assert_eq!(bits(t.value(yd)), bits(t.value(yb)));
    assert_eq!(ds, bs);
}

#[test]
fn dan_target_loss_has_zero_gradient_on_source_inputs() {
    let mut t = Tape::new();
    let xv = t.leaf(mixed_input(10));
    let (g, b) = affine(&mut t, 2, 1.4, 0.2);
    let mut stats = NormStats::new(2);
    let y = dan_forward(&mut t, xv, &MIXED, g, b, &cfg(NormKind::Dan), &mut stats, Mode::Train)
        .unwrap();
    let yt = t.slice_n(y, 2, 2).unwrap();
    let loss = t.sum_squares(yt);
    t.backward(loss).unwrap();
    let gx = t.grad(xv).unwrap();
    assert!(gx[..36].iter().all(|v| *v == 0.0));
    assert!(gx[36..].iter().any(|v| *v != 0.0));
}

#[test]
fn dan_target_outputs_match_freeze_then_transform_oracle() {
    let x = mixed_input(11);
    let (gamma, beta) = ([1.3, 0.7], [0.25, -0.5]);
    let mut t = Tape::new();
    let xv = t.constant(x.clone());
    let g = t.constant(Grid4::from_vec(Shape::channels(2), gamma.to_vec()).unwrap());
    let b = t.constant(Grid4::from_vec(Shape::channels(2), beta.to_vec()).unwrap());
    let mut stats = NormStats::new(2);
    let y = dan_forward(&mut t, xv, &MIXED, g, b, &cfg(NormKind::Dan), &mut stats, Mode::Train)
        .unwrap();
    let y = t.value(y).clone();

    // Oracle: source statistics first, then a fixed affine map for targets.
    for c in 0..2 {
        let mut vals = Vec::new();
        for n in 0..2 {
            for yy in 0..3 {
                for xx in 0..3 {
                    vals.push(x.get(n, yy, xx, c));
                }
            }
        }
        let mean = vals.iter().sum::<f64>() / 18.0;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 18.0;
        let scale = gamma[c] / (var + DEFAULT_EPSILON).sqrt();
        for n in 2..4 {
            for yy in 0..3 {
                for xx in 0..3 {
                    let expect = (x.get(n, yy, xx, c) - mean) * scale + beta[c];
                    assert!((y.get(n, yy, xx, c) - expect).abs() < 1e-12);
                }
            }
        }
    }

    // Perturbation probe: +1 on one target sample.
    let mut xp = x.clone();
    for v in xp.data_mut()[2 * 18..3 * 18].iter_mut() {
        *v += 1.0;
    }
    let source_out = |kind: NormKind, input: Grid4| {
        let mut t = Tape::new();
        let xv = t.constant(input);
        let g = t.constant(Grid4::from_vec(Shape::channels(2), gamma.to_vec()).unwrap());
        let b = t.constant(Grid4::from_vec(Shape::channels(2), beta.to_vec()).unwrap());
        let mut stats = NormStats::new(2);
        let y = match kind {
            NormKind::Dan => {
                dan_forward(&mut t, xv, &MIXED, g, b, &cfg(kind), &mut stats, Mode::Train)
            }
            _ => bn_forward(&mut t, xv, g, b, &cfg(kind), &mut stats, Mode::Train),
        }
        .unwrap();
        t.value(y).slice_n(0, 2).unwrap()
    };
    assert_eq!(
        bits(&source_out(NormKind::Dan, x.clone())),
        bits(&source_out(NormKind::Dan, xp.clone()))
    );
    let a = source_out(NormKind::ConventionalBn, x);
    let b = source_out(NormKind::ConventionalBn, xp);
    let delta = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    assert!(delta > 1e-3, "conventional BN source delta {delta}");
}

#[test]
fn dan_running_stats_come_from_source_only() {
    let x = mixed_input(12);
    let mut t = Tape::new();
    let xv = t.constant(x.clone());
    let (g, b) = affine(&mut t, 2, 1.0, 0.0);
    let mut stats = NormStats::new(2);
    dan_forward(&mut t, xv, &MIXED, g, b, &cfg(NormKind::Dan), &mut stats, Mode::Train).unwrap();
    let (mean, var) = kernel::channel_stats(&x, &[0, 1]);
    assert_eq!(stats.mean, mean);
    assert_eq!(stats.var, var);
    assert_eq!(stats.update_count, 1);
}

#[test]
fn dan_without_source_rejected() {
    let mut t = Tape::new();
    let xv = t.constant(mixed_input(13));
    let (g, b) = affine(&mut t, 2, 1.0, 0.0);
    let mut stats = NormStats::new(2);
    let tags = [Target, Target, Unseen, Target];
    assert!(dan_forward(&mut t, xv, &tags, g, b, &cfg(NormKind::Dan), &mut stats, Mode::Train)
        .is_err());
}

#[test]
fn ema_with_zero_momentum_copies_batch() {
    let mut s = NormStats::new(2);
    update_running_stats(&mut s, &[1.5, -2.0], &[0.3, 4.0], 0.0).unwrap();
    assert_eq!(s.running_mean, vec![1.5, -2.0]);
    assert_eq!(s.running_var, vec![0.3, 4.0]);
}

#[test]
fn ema_closed_form() {
    let mut s = NormStats::new(1);
    let b = 2.75;
    for k in 1..=25 {
        update_running_stats(&mut s, &[b], &[1.0], 0.9).unwrap();
        let expect = (1.0 - 0.9f64.powi(k)) * b;
        assert!((s.running_mean[0] - expect).abs() < 1e-12);
        assert_eq!(s.update_count, k as u64);
    }
}

#[test]
fn ema_rejects_negative_variance() {
    let mut s = NormStats::new(1);
    assert!(update_running_stats(&mut s, &[0.0], &[-1e-9], 0.9).is_err());
}

#[test]
fn eval_mode_never_touches_running_stats() {
    let mut layer = NormLayer::new("n", 2, cfg(NormKind::Dan));
    let mut t = Tape::new();
    let xv = t.constant(mixed_input(14));
    let (g, b) = affine(&mut t, 2, 1.0, 0.0);
    layer.forward(&mut t, xv, &MIXED, g, b, Mode::Train).unwrap();
    let snapshot = layer.clone();
    for _ in 0..100 {
        layer.forward(&mut t, xv, &MIXED, g, b, Mode::Eval).unwrap();
    }
    assert_eq!(layer, snapshot);
    assert_eq!(layer.stats.update_count, 1);
}

#[test]
fn dan_eval_is_tag_agnostic() {
    let stats = trained_stats(2, 1);
    let mut layer = NormLayer::new("n", 2, cfg(NormKind::Dan));
    layer.stats = stats;
    let sample = mixed_input(15).slice_n(0, 1).unwrap();
    let pair = Grid4::concat_n(&[&sample, &sample]).unwrap();
    let mut t = Tape::new();
    let xv = t.constant(pair);
    let (g, b) = affine(&mut t, 2, 0.9, 0.3);
    for tags in [[Source, Unseen], [Target, Source], [Unseen, Target]] {
        let y = layer.forward_eval(&mut t, xv, &tags, g, b).unwrap();
        let out = t.value(y);
        assert_eq!(bits(&out.sample(0).unwrap()), bits(&out.sample(1).unwrap()));
    }
}

#[test]
fn split_bn_eval_depends_on_tag() {
    let mut layer = NormLayer::new("n", 2, cfg(NormKind::SplitBn));
    layer.stats = trained_stats(2, 1);
    layer.target_stats = Some(trained_stats(2, 2));
    let sample = mixed_input(16).slice_n(0, 1).unwrap();
    let pair = Grid4::concat_n(&[&sample, &sample]).unwrap();
    let mut t = Tape::new();
    let xv = t.constant(pair);
    let (g, b) = affine(&mut t, 2, 1.0, 0.0);
    let y = layer.forward_eval(&mut t, xv, &[Source, Target], g, b).unwrap();
    let out = t.value(y);
    assert_ne!(bits(&out.sample(0).unwrap()), bits(&out.sample(1).unwrap()));
    let y = layer.forward_eval(&mut t, xv, &[Source, Unseen], g, b).unwrap();
    let out = t.value(y);
    assert_eq!(bits(&out.sample(0).unwrap()), bits(&out.sample(1).unwrap()));
}

#[test]
fn eval_transform_of_running_mean_is_zero() {
    let stats = trained_stats(3, 4);
    let x = Grid4::from_fn(Shape::new(1, 2, 2, 3), |_, _, _, c| stats.running_mean[c]);
    let y = norm_eval_transform(&x, &[1.0; 3], &[0.0; 3], &stats, DEFAULT_EPSILON).unwrap();
    assert!(y.data().iter().all(|v| *v == 0.0));
}

#[test]
fn eval_transform_matches_scalar_recomputation() {
    let stats = trained_stats(3, 5);
    let mut rng = stream(5, 2);
    let x = normal_grid(&mut rng, Shape::new(2, 3, 4, 3), 0.0, 2.0);
    let gamma = [0.5, 1.5, -0.7];
    let beta = [0.1, 0.0, 2.0];
    let y = norm_eval_transform(&x, &gamma, &beta, &stats, DEFAULT_EPSILON).unwrap();
    for n in 0..2 {
        for yy in 0..3 {
            for xx in 0..4 {
                for c in 0..3 {
                    let sd = (stats.running_var[c] + DEFAULT_EPSILON).sqrt();
                    let expect = gamma[c] * (x.get(n, yy, xx, c) - stats.running_mean[c]) / sd + beta[c];
                    assert!((y.get(n, yy, xx, c) - expect).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn eval_transform_requires_trained_stats() {
    let x = Grid4::zeros(Shape::new(1, 2, 2, 2));
    let r = norm_eval_transform(&x, &[1.0; 2], &[0.0; 2], &NormStats::new(2), DEFAULT_EPSILON);
    assert!(matches!(r, Err(Error::UntrainedStats(_))));
}

/// DAN's backward is the exact gradient of the network in which target
/// samples see the source statistics as constants. Finite differences of
/// the full forward therefore agree with it for target inputs and the
/// affine parameters, while for source inputs they agree once the loss is
/// restricted to source outputs (the target part contributes exactly zero).
#[test]
fn dan_backward_matches_finite_differences() {
    let mut rng = stream(21, 0);
    let mut p = ParamGroup::new();
    p.insert("xs", normal_grid(&mut rng, Shape::new(2, 3, 3, 2), 0.3, 1.5)).unwrap();
    p.insert("xt", normal_grid(&mut rng, Shape::new(2, 3, 3, 2), 1.5, 3.0)).unwrap();
    p.insert("gamma", normal_grid(&mut rng, Shape::channels(2), 1.0, 0.3)).unwrap();
    p.insert("beta", normal_grid(&mut rng, Shape::channels(2), 0.0, 0.3)).unwrap();
    let w = normal_grid(&mut rng, Shape::new(4, 3, 3, 2), 0.0, 1.0);

    let objective = |t: &mut Tape, b: &crate::param::Bound, source_only: bool| -> Result<Var> {
        let x = t.concat_n(&[b.var("xs")?, b.var("xt")?])?;
        let mut stats = NormStats::new(2);
        let y = dan_forward(
            t,
            x,
            &MIXED,
            b.var("gamma")?,
            b.var("beta")?,
            &cfg(NormKind::Dan),
            &mut stats,
            Mode::Train,
        )?;
        let wv = t.constant(w.clone());
        let mix = t.axpby(1.0, y, 0.5, wv)?;
        let part = if source_only { t.slice_n(mix, 0, 2)? } else { mix };
        Ok(t.sum_squares(part))
    };

    // Full loss: every coordinate except the source inputs.
    let xs = p.get("xs").unwrap().clone();
    let mut only_rest = ParamGroup::new();
    for name in ["xt", "gamma", "beta"] {
        only_rest.insert(name, p.get(name).unwrap().clone()).unwrap();
    }
    let r = finite_diff_check(&only_rest, 1e-5, |t, b| {
        let xs_var = t.constant(xs.clone());
        let x = t.concat_n(&[xs_var, b.var("xt")?])?;
        let mut stats = NormStats::new(2);
        let y = dan_forward(t, x, &MIXED, b.var("gamma")?, b.var("beta")?, &cfg(NormKind::Dan), &mut stats, Mode::Train)?;
        let wv = t.constant(w.clone());
        let mix = t.axpby(1.0, y, 0.5, wv)?;
        Ok(t.sum_squares(mix))
    })
    .unwrap();
    assert!(r.max_relative_error < 1e-5, "{r:?}");

    // Source inputs against the source-restricted loss.
    let mut only_xs = ParamGroup::new();
    only_xs.insert("xs", xs.clone()).unwrap();
    let fixed = p.clone();
    let r = finite_diff_check(&only_xs, 1e-5, |t, b| {
        let xt = t.constant(fixed.get("xt").unwrap().clone());
        let g = t.constant(fixed.get("gamma").unwrap().clone());
        let be = t.constant(fixed.get("beta").unwrap().clone());
        let x = t.concat_n(&[b.var("xs")?, xt])?;
        let mut stats = NormStats::new(2);
        let y = dan_forward(t, x, &MIXED, g, be, &cfg(NormKind::Dan), &mut stats, Mode::Train)?;
        let wv = t.constant(w.clone());
        let mix = t.axpby(1.0, y, 0.5, wv)?;
        let src = t.slice_n(mix, 0, 2)?;
        Ok(t.sum_squares(src))
    })
    .unwrap();
    assert!(r.max_relative_error < 1e-5, "{r:?}");

    // The full-loss gradient on source inputs equals the source-only one, bitwise.
    let grad_xs = |source_only: bool| {
        let mut t = Tape::new();
        let b = p.bind(&mut t, true);
        let l = objective(&mut t, &b, source_only).unwrap();
        t.backward(l).unwrap();
        t.grad(b.var("xs").unwrap()).unwrap().to_vec()
    };
    assert_eq!(grad_xs(false), grad_xs(true));
}
