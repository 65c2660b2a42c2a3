//! Train the linear autoencoder on pretrain frames and compare its held-out
//! reconstruction with a random projection given its best linear decoder.

use dell::benchmark::Genre;
use dell::encoder::{random_encoder, train_autoencoder, AutoencoderConfig};
use dell::suite::{make_suite, RenderConfig, SuiteKind};
use ndarray::Axis;

fn main() -> dell::Result<()> {
    let suite = make_suite(SuiteKind::Pretrain, 8, &Genre::ALL, 1, RenderConfig::default())?;
    let block = |n: usize, label: &str| {
        let views: Vec<_> = suite
            .games
            .iter()
            .map(|g| g.sample_steps(n, &mut dell::rng::stream(g.seed, label)).frames)
            .collect();
        ndarray::concatenate(Axis(0), &views.iter().map(|v| v.view()).collect::<Vec<_>>()).expect("same width")
    };
    let train = block(256, "train");
    let held_out = block(32, "held-out");

    let trained = train_autoencoder(train.view(), &AutoencoderConfig::default(), 0)?;
    let random = random_encoder(0);
    let decoder = random.least_squares_decoder(train.view(), 1e-6)?;
    println!("trained autoencoder held-out MSE {:.5}", trained.reconstruction_mse(held_out.view()).expect("has decoder")?);
    println!("random projection   held-out MSE {:.5}", random.reconstruction_mse_with(decoder.view(), held_out.view())?);
    println!("embedding width {}, checkpoint {} bytes", trained.latent_dim(), trained.to_bytes().len());
    Ok(())
}
