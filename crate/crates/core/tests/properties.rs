use imec::channels::{Channel, ScriptedChannel, UniformChannel};
use imec::cipher::{encrypt, gen_key, random_bits};
use imec::codec::{decode, encode, CodecConfig, Encoder};
use imec::mec::{col_conditional, exact_mec, greedy_mec};
use imec::prob::{Categorical, Rng};
use proptest::prelude::*;

fn dist(weights: Vec<f64>) -> Categorical {
    let ids = (0..weights.len() as u32).collect();
    Categorical::from_weights(ids, weights).unwrap()
}

fn weights(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, 1..=max_len)
}

fn h(ps: &[f64]) -> f64 {
    ps.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum()
}

/// Brute-force minimum over the one-parameter family of 2x2 couplings.
fn grid_min_2x2(a: f64, b: f64) -> f64 {
    let lo = (a + b - 1.0).max(0.0);
    let hi = a.min(b);
    let steps = 20_000;
    (0..=steps)
        .map(|i| {
            let t = lo + (hi - lo) * i as f64 / steps as f64;
            h(&[t, a - t, b - t, 1.0 - a - b + t])
        })
        .fold(f64::INFINITY, f64::min)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn greedy_marginals_and_bounds(p in weights(64), q in weights(64)) {
        let (p, q) = (dist(p), dist(q));
        let g = greedy_mec(&p, &q);
        prop_assert!(g.marginal_error() <= 1e-9);
        prop_assert!(g.entries().len() < p.len() + q.len());
        let hg = g.entropy();
        prop_assert!(hg >= p.entropy().max(q.entropy()) - 1e-9);
        prop_assert!(hg <= p.entropy() + q.entropy() + 1e-9);
    }

    #[test]
    fn greedy_within_one_bit_of_exact(p in weights(4), q in weights(4)) {
        let (p, q) = (dist(p), dist(q));
        let exact = exact_mec(&p, &q).unwrap();
        prop_assert!(exact.marginal_error() <= 1e-9);
        prop_assert!(exact.entropy() <= greedy_mec(&p, &q).entropy() + 1e-9);
        prop_assert!(greedy_mec(&p, &q).entropy() <= exact.entropy() + 1.0);
    }

    #[test]
    fn exact_matches_grid_search_on_2x2(a in 0.01f64..0.99, b in 0.01f64..0.99) {
        let exact = exact_mec(&dist(vec![a, 1.0 - a]), &dist(vec![b, 1.0 - b])).unwrap();
        let grid = grid_min_2x2(a, b);
        prop_assert!(exact.entropy() <= grid + 1e-9);
        prop_assert!(exact.entropy() >= grid - 1e-6);
    }

    /// On average a token cannot remove more posterior entropy than it carries:
    /// sum_c q(c) H(X | c) = H(X, C) - H(C) >= H(X) - H(C).
    #[test]
    fn expected_posterior_entropy_drop_is_bounded(p in weights(128), q in weights(40)) {
        let (p, q) = (dist(p), dist(q));
        let g = greedy_mec(&p, &q);
        let expected: f64 = (0..q.len())
            .map(|c| q.probs()[c] * col_conditional(&g, c).unwrap().entropy())
            .sum();
        prop_assert!((expected - (g.entropy() - q.entropy())).abs() <= 1e-9);
        prop_assert!(p.entropy() - expected <= q.entropy() + 1e-9);
        prop_assert!(expected <= p.entropy() + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decode_inverts_encode(
        len in 1usize..=48,
        block_bits in 1u32..=12,
        k in 2usize..=50,
        seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let message = random_bits(len, &mut rng);
        let key = gen_key(len, &mut rng);
        let c = encrypt(&message, &key, block_bits).unwrap();
        let config = CodecConfig::new(block_bits, 0.01);
        let tokens = encode(&c, &mut UniformChannel::new(k).unwrap(), config, Rng::new(rng.next_u64())).unwrap();
        let result = decode(&tokens, &mut UniformChannel::new(k).unwrap(), config, len).unwrap();
        prop_assert_eq!(result.bits.len(), len);
        prop_assert_eq!(&result.bits[..], c.bits());
        prop_assert!(result.residual_entropies.iter().all(|&r| r < 0.01));
    }
}

#[test]
fn stego_tokens_follow_the_channel() {
    // first stegotoken over many independent ciphertexts vs the channel conditional
    let q = dist(vec![0.4, 0.3, 0.2, 0.1]);
    let mut counts = [0usize; 4];
    let trials = 20_000;
    let mut rng = Rng::new(77);
    for _ in 0..trials {
        let c = encrypt(&random_bits(6, &mut rng), &gen_key(6, &mut rng), 6).unwrap();
        let mut ch = ScriptedChannel::new(vec![q.clone()]).unwrap();
        let mut enc = Encoder::new(&c, CodecConfig::new(6, 0.1), Rng::new(rng.next_u64())).unwrap();
        let token = enc.step(&ch.next_dist().unwrap()).unwrap().token;
        counts[token as usize] += 1;
    }
    // chi-square, 3 dof, 0.999 quantile 16.27
    let chi2: f64 = counts
        .iter()
        .zip(q.probs())
        .map(|(&n, &p)| (n as f64 - p * trials as f64).powi(2) / (p * trials as f64))
        .sum();
    assert!(chi2 < 16.27, "chi2 = {chi2}");
}
