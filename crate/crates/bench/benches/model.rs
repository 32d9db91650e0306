//! Benchmarks for the LSTM forward/backward passes and a full training
//! epoch at fixture scale.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cadenza_core::dataset::make_batches;
use cadenza_core::model::{backward, block_loss, forward, init_params, train};
use cadenza_core::{ModelConfig, ModelState};

fn bench_config() -> ModelConfig {
    let mut config = ModelConfig::new(64);
    config.embed_dim = 32;
    config.hidden_dim = 64;
    config.batch_size = 8;
    config.seq_len = 25;
    config
}

fn random_block(config: &ModelConfig, rng: &mut ChaCha8Rng) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let row = |rng: &mut ChaCha8Rng| {
        (0..config.seq_len)
            .map(|_| rng.gen_range(0..config.vocab_size))
            .collect::<Vec<_>>()
    };
    let inputs = (0..config.batch_size).map(|_| row(rng)).collect();
    let targets = (0..config.batch_size).map(|_| row(rng)).collect();
    (inputs, targets)
}

fn bench_forward(c: &mut Criterion) {
    let config = bench_config();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = init_params(&config, &mut rng);
    let (inputs, targets) = random_block(&config, &mut rng);
    c.bench_function("forward_8x25_h64", |b| {
        b.iter(|| {
            let mut state = ModelState::zeros(&config, config.batch_size);
            let cache = forward(&params, &mut state, black_box(&inputs)).unwrap();
            black_box(block_loss(&cache, &targets))
        })
    });
}

fn bench_backward(c: &mut Criterion) {
    let config = bench_config();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = init_params(&config, &mut rng);
    let (inputs, targets) = random_block(&config, &mut rng);
    let mut state = ModelState::zeros(&config, config.batch_size);
    let cache = forward(&params, &mut state, &inputs).unwrap();
    c.bench_function("backward_8x25_h64", |b| {
        b.iter(|| black_box(backward(&params, &cache, black_box(&targets))))
    });
}

fn bench_train_epoch(c: &mut Criterion) {
    let mut config = bench_config();
    config.epochs = 1;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ids: Vec<usize> = (0..2000).map(|_| rng.gen_range(0..config.vocab_size)).collect();
    let batches = make_batches(&ids, config.batch_size, config.seq_len).unwrap();
    c.bench_function("train_one_epoch_2k_tokens", |b| {
        b.iter(|| black_box(train(&config, &batches).unwrap()))
    });
}

criterion_group!(benches, bench_forward, bench_backward, bench_train_epoch);
criterion_main!(benches);
