//! Rough training-throughput probe for sizing experiment epochs.

use bruitflow::nnet::{train, Autoencoder, DenseAe, TrainConfig, TrainData};
use ndarray::Array2;

fn main() {
    let width = 8000;
    let n = 128;
    let mut model = Autoencoder::Dense(DenseAe::<f32>::new(
        width,
        &bruitflow::nnet::DENSE_WIDTHS,
        bruitflow::nnet::LEAKY_SLOPE,
        1,
    ));
    let inputs = Array2::from_shape_fn((n, width), |(r, c)| {
        ((r * 31 + c) as f32 * 0.001).sin()
    });
    let data = TrainData::Dense {
        inputs,
        targets: None,
    };
    let mut results = Vec::new();
    for parallel in [false, true] {
        let config = TrainConfig {
            epochs: 1,
            batch_size: 32,
            seed: 1,
            parallel,
            ..TrainConfig::default()
        };
        let start = std::time::Instant::now();
        let curve = train(&mut model, &data, &config).unwrap();
        results.push((parallel, start.elapsed().as_secs_f64(), curve[0]));
    }
    for (p, dt, loss) in &results {
        println!("parallel={p}: {dt:.2}s loss={loss:.4}");
    }
    let dt = results[1].1.min(results[0].1);
    let curve = vec![results[0].2];
    // 4 batches of 32 side: ~6*params*batch flops per batch
    let params = 2.0 * (8000.0 * 5000.0 + 5000.0 * 1000.0 + 1000.0 * 100.0);
    let flops = 6.0 * params * n as f64;
    println!(
        "epoch of {n} samples in {dt:.2}s  -> {:.1} GFLOPS (loss {:.4})",
        flops / dt / 1e9,
        curve[0]
    );
    println!(
        "projected: 4788-sample epoch ~{:.0}s",
        dt * 4788.0 / n as f64
    );
}
