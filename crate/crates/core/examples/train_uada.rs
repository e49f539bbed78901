//! Source-only training against adversarial adaptation with DAN on the
//! small benchmark, evaluated on every domain.

use dan::config::{Regime, TrainConfig};
use dan::datagen::named_benchmark;
use dan::trainer::{evaluate, train, TrainData};
use dan::DomainTag;

fn main() -> dan::Result<()> {
    let b = named_benchmark("small", 1)?;
    let (s, t) = (b.domain("S")?, b.domain("T")?);
    for regime in [Regime::SourceOnly, Regime::Uada] {
        let cfg = TrainConfig {
            regime,
            lambda: 0.03,
            epochs: 6,
            lr_halving_epochs: vec![3, 5],
            ..TrainConfig::default()
        };
        let out = train(&cfg, TrainData::new(&s.train, &t.train))?;
        let last = out.log.records.last().expect("at least one step");
        print!("{regime:<12} final l_segm {:.3}", last.losses.l_segm);
        if let (Some(d), Some(c)) = (last.losses.l_dom, last.losses.l_conf) {
            print!(" l_dom {d:.3} l_conf {c:.3}");
        }
        for (name, tag) in [("S", DomainTag::Source), ("T", DomainTag::Target), ("U1", DomainTag::Unseen), ("U2", DomainTag::Unseen)] {
            print!("  {name} {:.3}", evaluate(&out.model, &b.domain(name)?.val, tag)?.miou);
        }
        println!();
    }
    Ok(())
}
