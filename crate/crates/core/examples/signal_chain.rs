//! One trip through the transmitter and channel: QPSK symbols, both coding
//! schemes, a Nakagami-m fading draw and additive noise.

use rand::Rng;
use stbc::rng::stream;
use stbc::signal_model::{
    draw_channel, encode, modulate_qpsk, noise_variance_for_snr, receive, CodingScheme, ComplexSample, ReceiveConfig,
    DEFAULT_NAKAGAMI_M,
};

fn show(xs: &[ComplexSample]) -> String {
    xs.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("  ")
}

fn main() -> stbc::Result<()> {
    let mut rng = stream(1);
    let bits: Vec<u8> = (0..16).map(|_| rng.random_range(0..2u8)).collect();
    let symbols = modulate_qpsk(&bits)?;
    println!("bits    {bits:?}");
    println!("symbols {}", show(&symbols));

    for scheme in CodingScheme::ALL {
        let tx = encode(scheme, &symbols)?;
        println!("\n{scheme}: {} columns", tx.columns());
        println!("  antenna 0  {}", show(tx.row(0)));
        println!("  antenna 1  {}", show(tx.row(1)));
    }

    let tx = encode(CodingScheme::Al, &symbols)?;
    let ch = draw_channel(&mut rng, DEFAULT_NAKAGAMI_M, 1.0)?;
    let noise = noise_variance_for_snr(10.0);
    println!("\nh0 = {:.3}, h1 = {:.3}, noise variance {:.3}", ch.h0, ch.h1, noise.variance);
    let cfg = ReceiveConfig { k1: 1, length: 6, snr_db: 10.0 };
    let rx = receive(&tx, &ch, noise, &cfg, &mut rng)?;
    println!("received from offset 1: {}", show(&rx));
    Ok(())
}
