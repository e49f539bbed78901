//! How much do source outputs move when only the target half of a mixed
//! batch changes? Conventional BN couples the domains; DAN does not.

use dan::config::TrainConfig;
use dan::rng::{stream, uniform_grid};
use dan::trainer::init_model;
use dan::{DomainTag, Grid4, Mode, NormKind, Shape, Tape};

fn source_half(kind: NormKind, x: &Grid4) -> dan::Result<Grid4> {
    let cfg = TrainConfig {
        norm_kind: kind,
        ..TrainConfig::default()
    };
    let mut model = init_model(&cfg, 5)?;
    let mut t = Tape::new();
    let repr = model.params.repr.bind(&mut t, false);
    let xv = t.constant(x.clone());
    let tags = [DomainTag::Source, DomainTag::Source, DomainTag::Target, DomainTag::Target];
    let z = model.represent(&mut t, &repr, xv, &tags, Mode::Train)?;
    t.value(z).slice_n(0, 2)
}

fn main() -> dan::Result<()> {
    let x = uniform_grid(&mut stream(3, 1), Shape::new(4, 8, 8, 3), 0.0, 1.0);
    let mut shifted = x.clone();
    let half = x.data().len() / 2;
    shifted.data_mut()[half..].iter_mut().for_each(|v| *v = *v * 1.5 + 0.2);

    for kind in [NormKind::ConventionalBn, NormKind::SplitBn, NormKind::InstanceNorm, NormKind::Dan] {
        let a = source_half(kind, &x)?;
        let b = source_half(kind, &shifted)?;
        let delta = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        println!("{:<16} max source shift {delta:.3e}", kind.as_str());
    }
    Ok(())
}
