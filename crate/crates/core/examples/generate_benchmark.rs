//! Builds the four-domain benchmark, writes it to disk and measures the
//! pixel-level domain gap with a nearest-prototype probe.

use dan::datagen::{named_benchmark, PixelProbe};

fn main() -> dan::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "default".into());
    let benchmark = named_benchmark(&name, 1)?;
    let probe = PixelProbe::fit(&benchmark.domain("S")?.train);
    for d in &benchmark.domains {
        println!(
            "{:<3} gain {:?} bias {:?}: probe error {:.3}",
            d.spec.name,
            d.spec.channel_gain,
            d.spec.channel_bias,
            probe.error_rate(&d.val)
        );
    }
    let dir = std::env::temp_dir().join(format!("dan-benchmark-{name}"));
    let files = benchmark.write(&dir)?;
    println!("wrote {} files under {}", files.len(), dir.display());
    Ok(())
}
