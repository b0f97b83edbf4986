//! Finite-difference check of backprop on a handful of random micro networks.

use stbc::tensor_nn::{micro_network, Stencil};

fn main() -> stbc::Result<()> {
    for seed in 0..5 {
        let micro = micro_network(seed, false)?;
        let r = micro.check(1e-5, 1e-4)?;
        println!(
            "net {seed}: {:>4} params, max rel error {:.2e}, {} kink(s) skipped, per kind {:?}",
            micro.net.params().num_params(),
            r.max_rel_error,
            r.kinks.len(),
            r.per_kind
        );
    }
    // Without ReLU the fourth-order stencil gets much closer.
    let r = micro_network(0, true)?.check_with(3e-3, 1e-7, Stencil::FivePoint)?;
    println!("linear net 0: max rel error {:.2e}, passed {}", r.max_rel_error, r.passed);
    Ok(())
}
