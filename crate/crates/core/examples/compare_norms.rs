//! The normalization comparison grid, run through the experiment layer on a
//! generated small benchmark.

use dan::config::{Regime, TrainConfig};
use dan::experiment::{cmd_compare_norms, cmd_gen_data, RunOptions, Task};
use dan::NormKind;

fn main() -> dan::Result<()> {
    let dir = tempfile::tempdir()?;
    let data = dir.path().join("data");
    cmd_gen_data("small", 1, &RunOptions::new(&data))?;
    let base = TrainConfig {
        epochs: 4,
        lr_halving_epochs: vec![3],
        lambda: 0.03,
        ..TrainConfig::default()
    };
    let opts = RunOptions {
        parallel: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        ..RunOptions::new(dir.path().join("cmp"))
    };
    let rows = cmd_compare_norms(&data, Task::S2t, &base, &NormKind::ALL, &Regime::ALL, &[1, 2], &opts)?;
    println!("{:<16} {:<15} {:>7} {:>7} {:>8}", "norm", "regime", "source", "target", "delta");
    for r in rows {
        let delta = r.target_delta.map(|d| format!("{d:+.3}")).unwrap_or_default();
        println!("{:<16} {:<15} {:>7.3} {:>7.3} {:>8}", r.kind.as_str(), r.regime.as_str(), r.source.mean, r.target.mean, delta);
    }
    println!("{}", std::fs::read_to_string(dir.path().join("cmp/compare_norms.csv"))?);
    Ok(())
}
