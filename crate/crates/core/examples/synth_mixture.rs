//! Renders one mixture from every test noise group and writes its sources
//! as WAV files.
//!
//! ```bash
//! cargo run --example synth_mixture -- out/
//! ```

use chestsep::io::export_sample;
use chestsep::mixture::{DatasetParams, NoiseGroup};
use chestsep::signal::power;

fn main() -> chestsep::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "synth_out".into());
    let params = DatasetParams { seed: 7, ..DatasetParams::default() };
    for group in NoiseGroup::ALL {
        let manifest = params.test_manifest(group)?;
        let d = &manifest.samples[manifest.samples.len() / 2];
        let x = d.render()?;
        let db = |p: f64| 10.0 * p.log10();
        println!(
            "{group:>8}: {} test mixtures; sample {} subject {} noise {:?} lung {:+.1} dB noise {:+.1} dB {} (heart {:.1} dB, lung {:.1} dB)",
            manifest.samples.len(),
            d.index,
            d.subject_id,
            x.noise_kind.map(|k| k.as_str()),
            x.rel_db_lung,
            x.rel_db_noise,
            x.mixing,
            db(power(x.target_heart.samples())),
            db(power(x.target_lung.samples())),
        );
        let paths = export_sample(&dir, &format!("{group}_{:03}", d.index), &x)?;
        println!("          wrote {}", paths[0].display());
    }
    println!("descriptor line: {}", params.test_manifest(NoiseGroup::General)?.samples[0].to_line());
    Ok(())
}
