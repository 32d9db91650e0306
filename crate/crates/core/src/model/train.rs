//! Training loop: gradient clipping by global norm, plain SGD, and
//! learning-rate annealing on stalled epoch loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::lstm::{backward, block_loss, forward};
use super::{init_params, Gradients, ModelConfig, ModelError, ModelState, Parameters};
use crate::dataset::BatchSet;

/// One row of the loss-history CSV: "epoch,loss,learning_rate".
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub learning_rate: f64,
}

/// L2 norm over every gradient entry jointly.
pub fn global_norm(grads: &Gradients) -> f64 {
    grads
        .arrays()
        .iter()
        .flat_map(|(_, _, d)| d.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Scale all gradients by `clip / norm` when the global norm exceeds the
/// threshold; otherwise leave them untouched.
pub fn clip_gradients(mut grads: Gradients, clip: f64) -> Gradients {
    assert!(clip > 0.0);
    let norm = global_norm(&grads);
    if norm > clip {
        let scale = clip / norm;
        for slice in grads.arrays_mut() {
            for g in slice {
                *g *= scale;
            }
        }
    }
    grads
}

/// theta <- theta - eta * grad, elementwise over every array.
pub fn sgd_step(params: &mut Parameters, grads: &Gradients, learning_rate: f64) {
    let grad_arrays = grads.arrays();
    for (slice, (_, _, g)) in params.arrays_mut().into_iter().zip(grad_arrays) {
        for (p, g) in slice.iter_mut().zip(g) {
            *p -= learning_rate * g;
        }
    }
}

/// Decay the learning rate by `factor` when the latest relative epoch-loss
/// improvement falls below `threshold`. Never increases the rate.
pub fn anneal_lr(epoch_losses: &[f64], learning_rate: f64, factor: f64, threshold: f64) -> f64 {
    let n = epoch_losses.len();
    if n < 2 {
        return learning_rate;
    }
    let prev = epoch_losses[n - 2];
    let curr = epoch_losses[n - 1];
    let improvement = (prev - curr) / prev;
    if improvement < threshold {
        learning_rate * factor
    } else {
        learning_rate
    }
}

/// Full training run: per epoch, zero initial state, then per block
/// forward -> loss -> backward -> clip -> SGD, carrying state across
/// blocks. Deterministic given the config seed.
pub fn train(config: &ModelConfig, batches: &BatchSet) -> Result<(Parameters, Vec<EpochRecord>), ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut params = init_params(config, &mut rng);
    let mut learning_rate = config.learning_rate;
    let mut history: Vec<EpochRecord> = Vec::with_capacity(config.epochs);
    let mut losses: Vec<f64> = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut state = ModelState::zeros(config, batches.batch_size);
        let mut loss_sum = 0.0;
        for block in &batches.blocks {
            let cache = forward(&params, &mut state, &block.inputs)?;
            loss_sum += block_loss(&cache, &block.targets);
            let grads = backward(&params, &cache, &block.targets);
            let grads = clip_gradients(grads, config.clip_norm);
            sgd_step(&mut params, &grads, learning_rate);
        }
        let epoch_loss = loss_sum / batches.blocks.len() as f64;
        losses.push(epoch_loss);
        history.push(EpochRecord {
            epoch,
            loss: epoch_loss,
            learning_rate,
        });
        learning_rate = anneal_lr(&losses, learning_rate, config.anneal_factor, config.anneal_threshold);
    }
    Ok((params, history))
}

/// Loss-history CSV, UTF-8: header then one row per epoch.
pub fn history_to_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss,learning_rate\n");
    for r in history {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.loss, r.learning_rate));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_batches;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_grads(seed: u64) -> Gradients {
        let mut config = ModelConfig::new(5);
        config.embed_dim = 3;
        config.hidden_dim = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Parameters::zeros(&config);
        for slice in g.arrays_mut() {
            for v in slice {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        g
    }

    #[test]
    fn clip_scales_to_threshold() {
        let mut g = random_grads(1);
        // Force a known norm of 10.
        let norm = global_norm(&g);
        for slice in g.arrays_mut() {
            for v in slice {
                *v *= 10.0 / norm;
            }
        }
        let before: Vec<f64> = g.arrays().iter().flat_map(|(_, _, d)| d.to_vec()).collect();
        let clipped = clip_gradients(g, 5.0);
        assert_abs_diff_eq!(global_norm(&clipped), 5.0, epsilon = 1e-9);
        let after: Vec<f64> = clipped.arrays().iter().flat_map(|(_, _, d)| d.to_vec()).collect();
        for (b, a) in before.iter().zip(&after) {
            assert_abs_diff_eq!(a, &(b / 2.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn clip_noop_below_threshold() {
        let mut g = random_grads(2);
        let norm = global_norm(&g);
        for slice in g.arrays_mut() {
            for v in slice {
                *v *= 3.0 / norm;
            }
        }
        let expect = g.clone();
        assert_eq!(clip_gradients(g, 5.0), expect);
    }

    #[test]
    fn clip_idempotent() {
        let g = random_grads(3);
        let once = clip_gradients(g.clone(), 0.7);
        let twice = clip_gradients(once.clone(), 0.7);
        assert_eq!(once, twice);
    }

    #[test]
    fn sgd_zero_rate_is_identity() {
        let mut config = ModelConfig::new(5);
        config.embed_dim = 3;
        config.hidden_dim = 4;
        let mut params = init_params(&config, &mut ChaCha8Rng::seed_from_u64(0));
        let before = params.clone();
        sgd_step(&mut params, &random_grads(4), 0.0);
        assert_eq!(params, before);
    }

    #[test]
    fn sgd_scalar_arithmetic() {
        let mut config = ModelConfig::new(1);
        config.embed_dim = 1;
        config.hidden_dim = 1;
        config.num_layers = 1;
        let mut params = Parameters::zeros(&config);
        params.embedding[[0, 0]] = 1.0;
        let mut grads = Parameters::zeros(&config);
        grads.embedding[[0, 0]] = 2.0;
        sgd_step(&mut params, &grads, 0.1);
        assert_abs_diff_eq!(params.embedding[[0, 0]], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn sgd_descends_convex_quadratic() {
        // loss = 0.5 * sum(theta^2); gradient = theta; one step must shrink it.
        let mut config = ModelConfig::new(4);
        config.embed_dim = 2;
        config.hidden_dim = 2;
        let mut params = init_params(&config, &mut ChaCha8Rng::seed_from_u64(7));
        let loss = |p: &Parameters| -> f64 {
            p.arrays().iter().flat_map(|(_, _, d)| d.iter()).map(|v| 0.5 * v * v).sum()
        };
        let before = loss(&params);
        let grads = params.clone();
        sgd_step(&mut params, &grads, 0.1);
        assert!(loss(&params) < before);
    }

    #[test]
    fn anneal_threshold_behavior() {
        assert_eq!(anneal_lr(&[1.0, 0.9], 0.002, 0.97, 0.005), 0.002);
        assert_abs_diff_eq!(
            anneal_lr(&[1.0, 0.999], 0.002, 0.97, 0.005),
            0.002 * 0.97,
            epsilon = 1e-15
        );
        // Too little history: unchanged.
        assert_eq!(anneal_lr(&[1.0], 0.002, 0.97, 0.005), 0.002);
    }

    #[test]
    fn untrained_loss_near_log_v() {
        for v in [11usize, 100] {
            let mut config = ModelConfig::new(v);
            config.embed_dim = 8;
            config.hidden_dim = 8;
            config.batch_size = 2;
            config.seq_len = 10;
            config.epochs = 1;
            let mut rng = ChaCha8Rng::seed_from_u64(13);
            let ids: Vec<usize> = (0..200).map(|_| rng.gen_range(0..v)).collect();
            let batches = make_batches(&ids, 2, 10).unwrap();
            let (_, history) = train(&config, &batches).unwrap();
            let expect = (v as f64).ln();
            let loss = history[0].loss;
            assert!(
                (loss - expect).abs() / expect < 0.05,
                "V={v}: loss {loss} vs ln V {expect}"
            );
        }
    }

    #[test]
    fn train_is_deterministic() {
        let mut config = ModelConfig::new(10);
        config.embed_dim = 4;
        config.hidden_dim = 6;
        config.batch_size = 2;
        config.seq_len = 5;
        config.epochs = 3;
        config.rng_seed = 42;
        let ids: Vec<usize> = (0..300).map(|i| i % 10).collect();
        let batches = make_batches(&ids, 2, 5).unwrap();
        let (p1, h1) = train(&config, &batches).unwrap();
        let (p2, h2) = train(&config, &batches).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn loss_decreases_on_cycle_fixture() {
        let mut config = ModelConfig::new(10);
        config.embed_dim = 8;
        config.hidden_dim = 16;
        config.batch_size = 2;
        config.seq_len = 10;
        config.epochs = 5;
        config.learning_rate = 0.1;
        let ids: Vec<usize> = (0..500).map(|i| i % 10).collect();
        let batches = make_batches(&ids, 2, 10).unwrap();
        let (_, history) = train(&config, &batches).unwrap();
        for w in history.windows(2) {
            assert!(w[1].loss < w[0].loss, "{history:?}");
        }
    }

    #[test]
    fn history_csv_format() {
        let history = vec![EpochRecord {
            epoch: 0,
            loss: 2.5,
            learning_rate: 0.002,
        }];
        assert_eq!(history_to_csv(&history), "epoch,loss,learning_rate\n0,2.5,0.002\n");
    }

    proptest! {
        #[test]
        fn clipped_norm_bounded(seed in any::<u64>(), clip in 0.01f64..10.0) {
            let g = clip_gradients(random_grads(seed), clip);
            prop_assert!(global_norm(&g) <= clip + 1e-9);
        }

        #[test]
        fn anneal_monotone_over_history(losses in prop::collection::vec(0.01f64..10.0, 2..20)) {
            let mut lr = 0.002;
            for k in 2..=losses.len() {
                let next = anneal_lr(&losses[..k], lr, 0.97, 0.005);
                prop_assert!(next <= lr);
                lr = next;
            }
        }
    }
}
