//! Train, save a checkpoint, load it back and evaluate on an unseen domain;
//! also shows the report CSV.

use dan::checkpoint::{ensure_trained, load_model, save_model};
use dan::config::TrainConfig;
use dan::datagen::named_benchmark;
use dan::trainer::{evaluate, init_model, train, TrainData};
use dan::DomainTag;

fn main() -> dan::Result<()> {
    let b = named_benchmark("small", 2)?;
    let (s, t) = (b.domain("S")?, b.domain("T")?);
    let cfg = TrainConfig {
        epochs: 3,
        lr_halving_epochs: vec![2],
        ..TrainConfig::default()
    };
    let model = train(&cfg, TrainData::new(&s.train, &t.train))?.model;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("uada.ckpt");
    save_model(&model, &path)?;
    let loaded = load_model(&path)?;
    ensure_trained(&loaded)?;
    let report = evaluate(&loaded, &b.domain("U2")?.val, DomainTag::Unseen)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv, &cfg.hash())?;
    print!("{}", String::from_utf8_lossy(&csv));

    // A freshly initialized model has no running statistics to evaluate with.
    let fresh = init_model(&cfg, 5)?;
    if let Err(e) = ensure_trained(&fresh) {
        println!("untrained model rejected: {e}");
    }
    Ok(())
}
