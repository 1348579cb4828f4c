//! Times GAN training: `bench_gan <dense> <gen1> <gen2> <disc1> <disc2> <batch> <updates>`.

use std::time::Instant;

use forecaster_core::data::{WindowSample, N_FEATURES, WINDOW_LEN};
use forecaster_core::gan::{gan_train, GanArch, GanTrainConfig};
use ndarray::Array2;

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().unwrap()).collect();
    let (base, c1, c2, d1, d2, batch, epochs) = (args[0], args[1], args[2], args[3], args[4], args[5], args[6]);
    let samples: Vec<WindowSample> = (0..200)
        .map(|i| WindowSample {
            values: Array2::from_shape_fn((WINDOW_LEN, N_FEATURES), |(t, f)| {
                (0.3 * (t + i) as f64 + f as f64).sin() * 0.8
            }),
            start_index: i,
        })
        .collect();
    let arch = GanArch {
        latent_dim: 100,
        dense_channels: base,
        gen_channels: [c1, c2],
        disc_channels: [d1, d2],
        ..GanArch::default()
    };
    let cfg = GanTrainConfig {
        epochs,
        batch_size: batch,
        ..GanTrainConfig::default()
    };
    let t = Instant::now();
    let trained = gan_train(&samples, &arch, &cfg).unwrap();
    let dt = t.elapsed().as_secs_f64();
    let last = trained.history.last().unwrap();
    println!("{:.2} ms/update  d {:.4} g {:.4}", dt * 1000.0 / epochs as f64, last.d_loss, last.g_loss);
}
