//! Momentum update and negative-queue bookkeeping against plain oracles.

use clad_core::contrastive::NegativeQueue;
use clad_core::encoder::{momentum_update_params, Encoder, EncoderPair, TinyEncoder, TinyEncoderConfig};
use clad_core::nn::Param;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

mod common;
use common::*;

fn random_param(rng: &mut ChaCha8Rng, name: &str, len: usize) -> Param {
    Param::new(name, vec![len], (0..len).map(|_| rng.sample::<f32, _>(StandardNormal)).collect())
}

#[test]
fn momentum_update_is_exact_elementwise() {
    let mut rng = seeded(3);
    for mu in [0.0, 0.5, 0.999, 1.0] {
        for _ in 0..20 {
            let lens: Vec<usize> = (0..rng.random_range(1..5)).map(|_| rng.random_range(1..200)).collect();
            let query: Vec<Param> = lens.iter().enumerate().map(|(i, &n)| random_param(&mut rng, &format!("p{i}"), n)).collect();
            let mut key: Vec<Param> = lens.iter().enumerate().map(|(i, &n)| random_param(&mut rng, &format!("p{i}"), n)).collect();
            let before = key.clone();
            momentum_update_params(key.iter_mut().collect(), query.iter().collect(), mu).unwrap();
            for ((k, k0), q) in key.iter().zip(&before).zip(&query) {
                for ((&got, &old), &qv) in k.value.iter().zip(&k0.value).zip(&q.value) {
                    let want = (mu * old as f64 + (1.0 - mu) * qv as f64) as f32;
                    assert_eq!(got.to_bits(), want.to_bits(), "mu = {mu}");
                }
                if mu == 1.0 {
                    assert_eq!(k.value, k0.value);
                }
                if mu == 0.0 {
                    assert_eq!(k.value, q.value);
                }
            }
        }
    }
}

#[test]
fn encoder_pair_blends_every_tensor() {
    let cfg = TinyEncoderConfig {
        input_len: 256,
        channels: vec![4, 8],
        feature_dim: 8,
        ..TinyEncoderConfig::default()
    };
    let mut pair = EncoderPair::clone_into_key(TinyEncoder::new(cfg.clone(), 1).unwrap(), 0.5);
    let other = TinyEncoder::new(cfg, 2).unwrap();
    pair.query = other.clone();
    let key_before = pair.key.clone();
    pair.momentum_update().unwrap();
    let pairs = key_before.params().into_iter().chain(key_before.buffers());
    let after = pair.key.params().into_iter().chain(pair.key.buffers());
    let query = other.params().into_iter().chain(other.buffers());
    for ((k0, k1), q) in pairs.zip(after).zip(query) {
        assert_eq!(k0.name, k1.name);
        for ((&a, &b), &c) in k0.value.iter().zip(&k1.value).zip(&q.value) {
            assert_eq!(b, (0.5 * a as f64 + 0.5 * c as f64) as f32, "{}", k0.name);
        }
    }
}

#[test]
fn queue_matches_ring_buffer_oracle() {
    let mut rng = seeded(17);
    for sequence in 0..10_000u64 {
        let k = rng.random_range(1..=12);
        let d = rng.random_range(1..=4);
        let mut queue = NegativeQueue::new(k, d, sequence).unwrap();
        let mut ring = Ring {
            rows: queue.storage().rows().into_iter().map(|r| r.to_vec()).collect(),
            head: 0,
        };
        for _ in 0..rng.random_range(1..=6) {
            let b = rng.random_range(0..=k);
            let mut keys: Array2<f64> = Array2::from_shape_simple_fn((b, d), || rng.sample(StandardNormal));
            for mut r in keys.rows_mut() {
                let n = r.dot(&r).sqrt();
                r /= n;
            }
            queue.push(keys.view()).unwrap();
            for r in keys.rows() {
                ring.push(r.to_vec());
            }
            assert_eq!(queue.cursor(), ring.head, "sequence {sequence}");
            assert_eq!(queue.fill(), k);
            for (got, want) in queue.storage().rows().into_iter().zip(&ring.rows) {
                assert_eq!(got.to_vec(), *want, "sequence {sequence}");
            }
        }
    }
}
