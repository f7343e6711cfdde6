//! Inference timing on random 10 s input: ten timed runs after two
//! warmups, single item and batch of 16.
//!
//! ```bash
//! cargo run --release --example bench -- [threads]
//! ```

use chestsep::bench::{bench, Scenario};
use chestsep::model::{Separator, SeparatorConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> chestsep::Result<()> {
    let threads = std::env::args().nth(1).map(|t| t.parse().expect("thread count"));
    for (name, cfg) in [("reduced", SeparatorConfig::reduced()), ("default", SeparatorConfig::default())] {
        let model = Separator::<f32>::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
        for s in Scenario::ALL {
            let r = bench(&model, s, 0, threads)?;
            println!(
                "{name:>8} {s:>8}: mean {:8.2} ms, per item {:7.2} ms, runs {:?}",
                r.mean_ms,
                r.per_item_ms,
                r.runs_ms.iter().map(|v| v.round()).collect::<Vec<_>>()
            );
        }
    }
    println!("{}", chestsep::bench::hardware_description());
    Ok(())
}
