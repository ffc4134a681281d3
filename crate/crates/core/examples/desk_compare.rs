//! Runs the eight-way strategy comparison on the synthetic factorial set
//! at desk scale and prints the report.
//!
//! `cargo run --release --example desk_compare -- [seed] [epochs] [sigma] [lr] [batch] [momentum]`

use fusenet::dataset::{gen_synthetic, SyntheticSpec};
use fusenet::train::{compare_strategies, CompareConfig, TrainConfig};
use fusenet::zoo::StreamConfig;

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() {
    let seed: u64 = arg(1, 0);
    let epochs: usize = arg(2, 30);
    let sigma: f64 = arg(3, 1.0);
    let lr: f64 = arg(4, 0.01);
    let batch: usize = arg(5, 16);
    let momentum: f64 = arg(6, 0.9);
    let data = gen_synthetic::<f32>(&SyntheticSpec {
        image_factors: 2,
        audio_factors: 2,
        samples_per_class: 200,
        noise_sigma: sigma,
        hw: 32,
        seed,
    })
    .expect("valid spec");
    let tc = TrainConfig {
        lr,
        batch_size: batch,
        epochs,
        momentum,
        ..TrainConfig::unimodal()
    };
    let cfg = CompareConfig {
        unimodal: tc.clone(),
        multimodal: tc,
        seed,
    };
    let report = compare_strategies(&data, &StreamConfig::desk_32(4), &cfg).expect("comparison runs");
    print!("{}", report.to_text());
    for r in &report.rows {
        let accs: Vec<String> = r
            .metrics
            .iter()
            .map(|m| format!("{:.2}", m.test_accuracy.unwrap_or(f64::NAN)))
            .collect();
        println!("{:<12} {}", r.kind.name(), accs.join(" "));
    }
}
