//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::PathBuf;

use imec::channels::ChannelSpec;
use imec::cipher::{encrypt, gen_key, random_bits};
use imec::codec::{decode_with, encode_with, CodecConfig, CouplingStep};
use imec::prob::{Categorical, Rng};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn corpus() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/corpus.txt")
}

fn dist_bits(d: &Categorical) -> Vec<u64> {
    d.ids()
        .iter()
        .map(|&i| i as u64)
        .chain(d.probs().iter().map(|p| p.to_bits()))
        .collect()
}

/// A coupling step flattened to integers, floats by bit pattern.
pub fn step_bits(s: &CouplingStep) -> Vec<u64> {
    let mut out = vec![s.step as u64, s.block as u64, s.token as u64];
    out.extend(dist_bits(&s.prior));
    out.extend(dist_bits(&s.posterior));
    for e in s.coupling.entries() {
        out.extend([e.row as u64, e.col as u64, e.mass.to_bits()]);
    }
    out.extend(dist_bits(s.coupling.right()));
    out
}

pub struct Trace {
    pub tokens: Vec<u32>,
    pub encoder: Vec<Vec<u64>>,
    pub decoder: Vec<Vec<u64>>,
    pub recovered: bool,
}

/// Encodes a seeded random message and decodes it, recording both sides' steps.
pub fn golden_trace(channel: &ChannelSpec, bits: usize, config: CodecConfig, seed: u64) -> Trace {
    let mut rng = Rng::new(seed);
    let message = random_bits(bits, &mut rng);
    let key = gen_key(bits, &mut rng);
    let c = encrypt(&message, &key, config.block_bits).unwrap();

    let mut encoder = Vec::new();
    let tokens = encode_with(
        &c,
        &mut channel.build().unwrap(),
        config,
        Rng::new(rng.next_u64()),
        |_, step| {
            if let Some(s) = &step.coupling {
                encoder.push(step_bits(s));
            }
        },
    )
    .unwrap();

    let mut decoder = Vec::new();
    let result = decode_with(&tokens, &mut channel.build().unwrap(), config, bits, |s| {
        decoder.push(step_bits(s))
    })
    .unwrap();

    Trace {
        tokens,
        encoder,
        decoder,
        recovered: result.bits == c.bits(),
    }
}
