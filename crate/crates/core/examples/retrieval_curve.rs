//! Retrieval curves of mixed-batch models: conventional BN leaves source
//! and target representations apart, DAN does not pull them further apart.

use dan::config::{Regime, TrainConfig};
use dan::datagen::named_benchmark;
use dan::experiment::alignment_curve;
use dan::metrics::alignment_deviation;
use dan::trainer::{train, TrainData};
use dan::NormKind;

fn main() -> dan::Result<()> {
    let b = named_benchmark("small", 1)?;
    let (s, t) = (b.domain("S")?, b.domain("T")?);
    for kind in [NormKind::ConventionalBn, NormKind::Dan] {
        let cfg = TrainConfig {
            norm_kind: kind,
            regime: Regime::MixedNoAdapt,
            epochs: 6,
            lr_halving_epochs: vec![4],
            ..TrainConfig::default()
        };
        let model = train(&cfg, TrainData::new(&s.train, &t.train))?.model;
        let curve = alignment_curve(&model, &s.val, &t.val, 200, 20, 1)?;
        let shown: Vec<String> = curve
            .points
            .iter()
            .filter(|(m, _)| m % 5 == 0)
            .map(|(m, a)| format!("m={m}:{a:.2}"))
            .collect();
        println!(
            "{:<16} deviation {:.3}  {}  (m/2 is perfect alignment)",
            kind.as_str(),
            alignment_deviation(&curve)?,
            shown.join(" ")
        );
    }
    Ok(())
}
