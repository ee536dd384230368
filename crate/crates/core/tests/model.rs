use eopt::data::{assemble_tokens, SynthConfig};
use eopt::model::{build_model, decode_checkpoint, encode_checkpoint, KvDecoder, ModelConfig, ModelParams, PRESETS};
use eopt::numerics::Tensor;
use eopt::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tokens(t: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..t * 14).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    Tensor::new(&[t, 14], data).unwrap()
}

fn toy() -> ModelParams {
    build_model(&ModelConfig::preset("toy").unwrap(), 7).unwrap()
}

#[test]
fn same_seed_same_parameters() {
    let c = ModelConfig::preset("micro").unwrap();
    assert_eq!(build_model(&c, 5).unwrap(), build_model(&c, 5).unwrap());
    assert_ne!(build_model(&c, 5).unwrap(), build_model(&c, 6).unwrap());
}

#[test]
fn toy_runs_full_block() {
    let m = toy();
    let out = m.forward(&random_tokens(64, 1)).unwrap();
    assert_eq!(out.shape(), &[64, 10]);
    for t in [1, 2, 17, 63] {
        assert_eq!(m.forward(&random_tokens(t, 2)).unwrap().shape(), &[t, 10]);
    }
}

#[test]
fn causal_bit_exact() {
    for preset in ["toy", "micro"] {
        let m = build_model(&ModelConfig::preset(preset).unwrap(), 11).unwrap();
        let base = random_tokens(24, 3);
        let out = m.forward(&base).unwrap();
        for j in [0, 5, 12, 23] {
            let mut pert = base.clone();
            for c in 0..14 {
                pert.data_mut()[j * 14 + c] += 0.7;
            }
            let p = m.forward(&pert).unwrap();
            for i in 0..j {
                assert_eq!(out.row(i), p.row(i), "{preset}: row {i} moved after perturbing {j}");
            }
            assert_ne!(out.row(j), p.row(j));
        }
    }
}

#[test]
fn cached_decoder_matches_full_forward() {
    for preset in ["toy", "micro"] {
        let m = build_model(&ModelConfig::preset(preset).unwrap(), 9).unwrap();
        let (b, t) = (3, 64);
        let tokens = random_tokens(b * t, 4);
        let full = m.forward_batch(&tokens, t).unwrap();
        let mut dec = KvDecoder::new(&m, b);
        for pos in 0..t {
            let input: Vec<f32> = (0..b).flat_map(|s| tokens.row(s * t + pos).to_vec()).collect();
            let out = dec.push(&input).unwrap();
            for s in 0..b {
                for (x, y) in out[s].iter().zip(full.row(s * t + pos)) {
                    assert!((x - y).abs() <= 1e-5 * (1.0 + y.abs()), "{preset} pos {pos}: {x} vs {y}");
                }
            }
        }
        assert!(matches!(dec.push(&vec![0.0; b * 14]), Err(Error::SequenceLength { .. })));
        dec.reset();
        assert!(dec.is_empty());
    }
}

#[test]
fn fresh_model_zero_input_is_small() {
    for (name, ..) in PRESETS.iter().filter(|p| p.3 <= 128) {
        let m = build_model(&ModelConfig::preset(name).unwrap(), 0).unwrap();
        let out = m.forward(&Tensor::zeros(&[32, 14])).unwrap();
        assert!(out.data().iter().all(|v| v.is_finite() && v.abs() < 10.0), "{name}");
    }
}

#[test]
fn loss_contract() {
    let m = toy();
    let x = random_tokens(16, 4);
    let pred = m.forward(&x).unwrap();
    assert_eq!(m.loss(&x, &pred, 1.0).unwrap(), 0.0);
    let other = random_tokens(16, 5);
    let target = Tensor::new(&[16, 10], other.data()[..160].to_vec()).unwrap();
    assert!(m.loss(&x, &target, 1.0).unwrap() >= 0.0);
    let bad = Tensor::zeros(&[15, 10]);
    assert!(matches!(m.loss(&x, &bad, 1.0), Err(Error::Shape { .. })));
}

#[test]
fn init_loss_comparable_to_zero_predictor() {
    let cfg = SynthConfig {
        n_pixels: 8,
        ..SynthConfig::default()
    };
    let (series, _) = eopt::data::synth_series(&cfg).unwrap();
    let m = toy();
    for s in &series {
        let tm = assemble_tokens(&s.window(s.dates[0], s.dates[65])).unwrap();
        let init = m.loss(&tm.tokens, &tm.targets, 1.0).unwrap() as f64;
        let zero = eopt::numerics::ops::huber_loss(&Tensor::zeros(&[64, 10]), &tm.targets, 1.0).unwrap() as f64;
        let ratio = init.max(zero) / init.min(zero);
        assert!(ratio < 10.0, "init {init} zero {zero}");
    }
}

#[test]
fn embeddings() {
    let m = toy();
    let x = random_tokens(10, 6);
    let e = m.extract_embeddings(&x).unwrap();
    assert_eq!(e.len(), 128);
    assert_eq!(e, m.extract_embeddings(&x).unwrap());

    let one = random_tokens(1, 7);
    let hidden = m.hidden_batch(&one, 1).unwrap();
    assert_eq!(m.extract_embeddings(&one).unwrap(), hidden.data());

    let mut packed = x.data().to_vec();
    packed.extend_from_slice(x.data());
    let batch = m.extract_embeddings_batch(&Tensor::new(&[20, 14], packed).unwrap(), 10).unwrap();
    assert_eq!(batch[0], batch[1]);

    assert!(matches!(m.extract_embeddings(&Tensor::zeros(&[0, 14])), Err(Error::EmptySequence)));
    assert_eq!(ModelConfig::preset("700M").unwrap().n_embd, 1280);
}

#[test]
fn size_ladder() {
    let counts: Vec<u64> = ["10M", "100M", "300M", "700M"]
        .iter()
        .map(|n| {
            let c = ModelConfig::preset(n).unwrap();
            let nominal = c.nominal_params().unwrap();
            let count = c.param_count();
            assert!(((count as f64) - nominal).abs() <= 0.3 * nominal, "{n}: {count}");
            count
        })
        .collect();
    assert!(counts.windows(2).all(|w| w[0] < w[1]));
    let big = counts[3] as f64;
    assert!((big - 7.1e8).abs() / 7.1e8 < 0.02, "{big}");
}

#[test]
fn checkpoint_preserves_predictions() {
    let m = toy();
    let back = decode_checkpoint(&encode_checkpoint(&m, 3)).unwrap().params;
    let x = random_tokens(12, 8);
    assert_eq!(m.forward(&x).unwrap(), back.forward(&x).unwrap());
}

/// Central differences on a sampled 1% of toy-model parameters.
#[test]
fn parameter_gradients_match_finite_differences() {
    let m = toy();
    let t = 4;
    let x = random_tokens(t, 9);
    let y = Tensor::new(&[t, 10], random_tokens(t, 10).data()[..t * 10].to_vec()).unwrap();
    // Quadratic regime everywhere so the loss is smooth.
    let delta = 100.0;
    let (_, grads) = m.loss_and_grads(&x, &y, t, delta, None).unwrap();
    let loss_at = |p: &ModelParams| -> f64 {
        let pred = p.forward(&x).unwrap();
        pred.data()
            .iter()
            .zip(y.data())
            .map(|(&a, &b)| 0.5 * ((a - b) as f64).powi(2))
            .sum::<f64>()
            / (t * 10) as f64
    };

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let total = m.param_count() as usize;
    let sample = total / 100;
    let scale = grads
        .iter()
        .flat_map(|g| g.iter())
        .fold(0.0f64, |a, &v| a.max(v.abs() as f64));
    let step = 1e-3f32;
    let offsets: Vec<usize> = grads
        .iter()
        .scan(0, |acc, g| {
            let start = *acc;
            *acc += g.len();
            Some(start)
        })
        .collect();
    let mut worst = 0.0f64;
    let mut p = m.clone();
    for _ in 0..sample {
        let flat = rng.random_range(0..total);
        let ti = offsets.partition_point(|&o| o <= flat) - 1;
        let j = flat - offsets[ti];
        let orig = p.tensors()[ti].data()[j];
        p.tensors_mut()[ti].data_mut()[j] = orig + step;
        let up = loss_at(&p);
        p.tensors_mut()[ti].data_mut()[j] = orig - step;
        let down = loss_at(&p);
        p.tensors_mut()[ti].data_mut()[j] = orig;
        let numeric = (up - down) / (2.0 * step as f64);
        let analytic = grads[ti][j] as f64;
        // Denominator floored at 5% of the largest gradient entry.
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(0.05 * scale);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-2, "worst relative error {worst} over {sample} parameters");
}
