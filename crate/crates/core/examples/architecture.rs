//! Prints the CNN2 layer stack with output shapes and parameter counts.

use stbc::classifier::build_cnn2;

fn main() -> stbc::Result<()> {
    let spec = build_cnn2();
    let shapes = spec.shape_trace()?;
    let counts = spec.param_counts()?;
    println!("{:<38} {:<16} {:>10}", "layer", "output", "params");
    println!("{:<38} {:<16} {:>10}", "input", format!("{:?}", shapes[0]), "");
    for (i, layer) in spec.layers.iter().enumerate() {
        println!("{:<38} {:<16} {:>10}", format!("{layer:?}"), format!("{:?}", shapes[i + 1]), counts[i]);
    }
    println!("total parameters: {}", spec.total_params()?);
    Ok(())
}
