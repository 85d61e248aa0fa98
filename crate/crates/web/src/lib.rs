//! WebAssembly bindings for the browser demo.
//!
//! Each export takes plain values or a JSON request and returns a JSON
//! string; the same logic is exposed as ordinary Rust functions for tests.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use imec::channels::markov::{MarkovChannel, MarkovModel, SAMPLE_CORPUS};
use imec::channels::{Channel, ScriptedChannel, UniformChannel};
use imec::cipher::{bits_to_bytes, bytes_to_bits, decrypt, encrypt, gen_key, Ciphertext};
use imec::codec::{CodecConfig, Decoder, Encoder, Phase};
use imec::harness::{audit_step, empirical_kl};
use imec::mec::{exact_mec, greedy_mec, EXACT_MAX_SUPPORT};
use imec::prob::{Categorical, Rng};
use imec::{Error, Result};

/// Longest message the demo accepts, in bytes.
pub const MAX_MESSAGE_BYTES: usize = 32;
const MAX_TOKENS: usize = 4000;

#[derive(Debug, Serialize)]
pub struct CouplingView {
    pub rows: usize,
    pub cols: usize,
    /// `[row, col, mass]` for every nonzero cell.
    pub cells: Vec<(usize, usize, f64)>,
    pub entropy: f64,
    pub left_entropy: f64,
    pub right_entropy: f64,
    /// Optimal coupling entropy, for supports small enough to solve exactly.
    pub exact_entropy: Option<f64>,
}

fn weights_to_dist(weights: &[f64]) -> Result<Categorical> {
    Categorical::from_weights((0..weights.len() as u32).collect(), weights.to_vec())
}

/// Greedy coupling of two weight vectors (normalized here). Cells are
/// indexed by position in the inputs; zero weights get no cells.
pub fn couple(p: &[f64], q: &[f64]) -> Result<CouplingView> {
    let (rows, cols) = (p.len(), q.len());
    let (p, q) = (weights_to_dist(p)?, weights_to_dist(q)?);
    let g = greedy_mec(&p, &q);
    let exact_entropy = (p.len() <= EXACT_MAX_SUPPORT && q.len() <= EXACT_MAX_SUPPORT)
        .then(|| exact_mec(&p, &q).map(|e| e.entropy()))
        .transpose()?;
    Ok(CouplingView {
        rows,
        cols,
        cells: g
            .entries()
            .iter()
            .map(|e| (p.ids()[e.row] as usize, q.ids()[e.col] as usize, e.mass))
            .collect(),
        entropy: g.entropy(),
        left_entropy: p.entropy(),
        right_entropy: q.entropy(),
        exact_entropy,
    })
}

#[derive(Clone, Debug, Deserialize)]
pub struct TransmitRequest {
    /// `"uniform"` or `"markov"`.
    pub channel: String,
    #[serde(default = "default_k")]
    pub k: usize,
    pub message: String,
    pub block_bits: u32,
    pub threshold: f64,
    pub seed: u64,
}

fn default_k() -> usize {
    40
}

#[derive(Debug, Serialize)]
pub struct StepView {
    pub block: usize,
    pub token: u32,
    pub kl: f64,
    pub l1: f64,
    pub channel_entropy: f64,
    /// Entropy of every block posterior after the step.
    pub posterior_entropies: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct TransmitView {
    pub key_hex: String,
    pub ciphertext_blocks: Vec<u32>,
    pub initial_entropy: f64,
    pub steps: Vec<StepView>,
    pub tokens: Vec<u32>,
    pub stegotext: String,
    pub decoded_blocks: Vec<u32>,
    pub recovered: String,
    pub bit_errors: usize,
    pub max_kl: f64,
}

fn build_channel(req: &TransmitRequest) -> Result<Box<dyn Channel>> {
    match req.channel.as_str() {
        "uniform" => Ok(Box::new(UniformChannel::new(req.k)?)),
        "markov" => {
            let model = MarkovModel::train(SAMPLE_CORPUS, 2, 0.1)?;
            Ok(Box::new(MarkovChannel::new(Arc::new(model))))
        }
        other => Err(Error::InvalidConfig(format!("unknown channel `{other}`"))),
    }
}

/// Encrypts, hides and recovers `message`, recording every coupling step.
pub fn transmit(req: &TransmitRequest) -> Result<TransmitView> {
    let bytes = req.message.as_bytes();
    if bytes.is_empty() || bytes.len() > MAX_MESSAGE_BYTES {
        return Err(Error::InvalidConfig(format!(
            "message must be 1 to {MAX_MESSAGE_BYTES} bytes"
        )));
    }
    let config = CodecConfig {
        max_tokens: MAX_TOKENS,
        ..CodecConfig::new(req.block_bits, req.threshold)
    };
    config.validate()?;
    let bits = bytes_to_bits(bytes);
    let mut rng = Rng::new(req.seed);
    let key = gen_key(bits.len(), &mut rng);
    let ciphertext = encrypt(&bits, &key, req.block_bits)?;

    let mut channel = build_channel(req)?;
    let mut encoder = Encoder::new(&ciphertext, config, Rng::new(rng.next_u64()))?;
    let initial_entropy = encoder.state().total_entropy();
    let mut steps = Vec::new();
    let mut tokens = Vec::new();
    while encoder.phase() == Phase::Coupling {
        if tokens.len() >= MAX_TOKENS {
            return Err(Error::Nontermination {
                max_tokens: MAX_TOKENS,
            });
        }
        let dist = channel.next_dist()?;
        let step = encoder.step(&dist)?;
        channel.append(step.token)?;
        tokens.push(step.token);
        if let Some(c) = step.coupling {
            let audit = audit_step(&c.prior, &c.coupling, &dist);
            steps.push(StepView {
                block: c.block,
                token: c.token,
                kl: audit.kl,
                l1: audit.l1,
                channel_entropy: dist.entropy(),
                posterior_entropies: encoder
                    .state()
                    .posteriors()
                    .iter()
                    .map(|p| p.entropy)
                    .collect(),
            });
        }
    }

    let mut receiver = build_channel(req)?;
    let mut decoder = Decoder::new(ciphertext.blocks().len(), config)?;
    for &token in &tokens {
        let dist = receiver.next_dist()?;
        decoder.step(&dist, token)?;
        receiver.append(token)?;
    }
    let result = decoder.finish(bits.len());
    let recovered_bits = decrypt(&Ciphertext::from_bits(result.bits, req.block_bits)?, &key)?;
    let bit_errors = recovered_bits
        .iter()
        .zip(&bits)
        .filter(|(a, b)| a != b)
        .count();

    Ok(TransmitView {
        key_hex: key.to_hex(),
        ciphertext_blocks: ciphertext.blocks().to_vec(),
        initial_entropy,
        max_kl: steps.iter().map(|s| s.kl).fold(0.0, f64::max),
        steps,
        stegotext: channel.render(&tokens)?,
        tokens,
        decoded_blocks: result.blocks,
        recovered: String::from_utf8_lossy(&bits_to_bytes(&recovered_bits)).into_owned(),
        bit_errors,
    })
}

#[derive(Debug, Serialize)]
pub struct HistogramView {
    pub trials: usize,
    /// Channel probability of each token.
    pub cover: Vec<f64>,
    /// How often each token was the first stegotoken.
    pub stego_counts: Vec<usize>,
    pub empirical_kl: f64,
}

/// Hides `trials` fresh random ciphertexts and tallies the first stegotoken
/// of each against the channel distribution `weights`.
pub fn first_token_histogram(
    weights: &[f64],
    block_bits: u32,
    trials: usize,
    seed: u64,
) -> Result<HistogramView> {
    let q = weights_to_dist(weights)?;
    let config = CodecConfig::new(block_bits, 0.1);
    config.validate()?;
    let mut rng = Rng::new(seed);
    let mut samples = Vec::with_capacity(trials);
    let mut counts = vec![0usize; weights.len()];
    for _ in 0..trials {
        let bits: Vec<bool> = (0..block_bits).map(|_| rng.next_bit()).collect();
        let c = Ciphertext::from_bits(bits, block_bits)?;
        let mut channel = ScriptedChannel::new(vec![q.clone()])?;
        let mut encoder = Encoder::new(&c, config, Rng::new(rng.next_u64()))?;
        let token = encoder.step(&channel.next_dist()?)?.token;
        counts[token as usize] += 1;
        samples.push(token);
    }
    let mut cover = vec![0.0; weights.len()];
    for (&id, &p) in q.ids().iter().zip(q.probs()) {
        cover[id as usize] = p;
    }
    Ok(HistogramView {
        trials,
        cover,
        stego_counts: counts,
        empirical_kl: empirical_kl(&samples, &q),
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = couple)]
pub fn couple_js(p: Vec<f64>, q: Vec<f64>) -> std::result::Result<String, JsError> {
    to_js(couple(&p, &q))
}

#[wasm_bindgen(js_name = transmit)]
pub fn transmit_js(request: &str) -> std::result::Result<String, JsError> {
    let req: TransmitRequest =
        serde_json::from_str(request).map_err(|e| JsError::new(&e.to_string()))?;
    to_js(transmit(&req))
}

#[wasm_bindgen(js_name = firstTokenHistogram)]
pub fn first_token_histogram_js(
    weights: Vec<f64>,
    block_bits: u32,
    trials: usize,
    seed: u32,
) -> std::result::Result<String, JsError> {
    to_js(first_token_histogram(
        &weights,
        block_bits,
        trials,
        seed.into(),
    ))
}
