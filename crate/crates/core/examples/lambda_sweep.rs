//! Target mIoU as a function of the confusion-loss weight.

use dan::config::TrainConfig;
use dan::datagen::named_benchmark;
use dan::trainer::{sweep_lambda, TrainData};

fn main() -> dan::Result<()> {
    let b = named_benchmark("small", 1)?;
    let (s, t) = (b.domain("S")?, b.domain("T")?);
    let base = TrainConfig {
        epochs: 5,
        lr_halving_epochs: vec![3],
        ..TrainConfig::default()
    };
    let rows = sweep_lambda(&base, &[0.0, 0.01, 0.03, 0.1, 0.3], TrainData::new(&s.train, &t.train), &t.val)?;
    for r in rows {
        println!("lambda {:<5} target mIoU {:.3}", r.lambda, r.target_miou);
    }
    Ok(())
}
