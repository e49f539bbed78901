//! Finite-difference check of the full segmentation model under every
//! normalization kind.

use dan::gradcheck::finite_diff_check;
use dan::model::{Architecture, SegmentationModel};
use dan::rng::{stream, uniform_grid};
use dan::{DomainTag, LabelMap, Mode, NormConfig, NormKind, Shape};

fn main() -> dan::Result<()> {
    let arch = Architecture {
        widths: vec![4, 4],
        ..Architecture::desk(3)
    };
    let x = uniform_grid(&mut stream(1, 9), Shape::new(3, 4, 4, 3), 0.0, 1.0);
    let labels = LabelMap::new(2, 4, 4, (0..32).map(|i| (i % 3) as u8).collect())?;
    let tags = [DomainTag::Source, DomainTag::Source, DomainTag::Target];

    for kind in NormKind::ALL {
        let model = SegmentationModel::new(arch.clone(), NormConfig::new(kind), &mut stream(1, 0))?;
        let mut params = model.params.repr.clone();
        params.extend(model.params.seg.clone())?;
        // The loss reads source outputs only, which DAN differentiates exactly.
        let report = finite_diff_check(&params, 1e-5, |t, b| {
            let mut m = model.clone();
            let xv = t.constant(x.clone());
            let z = m.represent(t, b, xv, &tags, Mode::Train)?;
            let zs = t.slice_n(z, 0, 2)?;
            let y = m.segment(t, b, zs)?;
            t.softmax_cross_entropy(y, &labels)
        })?;
        println!(
            "{:<16} {:>4} coordinates, max relative error {:.2e}",
            kind.as_str(),
            report.coordinates,
            report.max_relative_error
        );
    }
    Ok(())
}
