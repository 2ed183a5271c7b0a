//! Write a small synthetic dot-crowd dataset plus a run configuration.
//!
//! cargo run --example synthetic_dataset -- <dir> [train] [test] [seed]

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdanet::data::synthetic;
use sdanet::model::ModelConfig;
use sdanet::trainer::TrainConfig;

fn main() {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "synthetic".into()));
    let mut num = |default: u64| {
        args.next()
            .map(|a| a.parse().expect("integer argument"))
            .unwrap_or(default)
    };
    let (n_train, n_test, seed) = (num(4) as usize, num(2) as usize, num(1));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n| {
        (0..n)
            .map(|_| synthetic::dot_crowd(&mut rng, 64, 5..=30))
            .collect::<Vec<_>>()
    };
    let train = draw(n_train);
    let test = draw(n_test);
    let index = synthetic::write_dataset(&dir, &train, &test).expect("write dataset");

    let cfg = TrainConfig {
        model: ModelConfig::tiny(),
        seed,
        ..TrainConfig::default()
    };
    let mut run = serde_json::to_value(&cfg).expect("config serializes");
    run["data"] = "index.json".into();
    std::fs::write(
        dir.join("run.json"),
        serde_json::to_string_pretty(&run).unwrap(),
    )
    .expect("write run.json");
    println!("{}", index.display());
}
