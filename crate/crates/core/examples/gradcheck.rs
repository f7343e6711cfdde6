//! Finite-difference gradient checks for every differentiable op.
//!
//! ```bash
//! cargo run --release --example gradcheck
//! ```

use chestsep::nn::gradcheck::run_suite;

fn main() -> chestsep::Result<()> {
    for c in run_suite(0, 5)? {
        println!("{:>24}: {} instances, max relative error {:.2e}", c.op, c.instances, c.max_rel_err);
    }
    Ok(())
}
