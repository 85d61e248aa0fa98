//! Iterative minimum entropy coupling encoder and decoder.
//!
//! The ciphertext is split into blocks, each with a posterior that starts
//! uniform. Every coupling step picks the block with the highest posterior
//! entropy, couples that posterior with the channel's next-token
//! distribution, emits a token drawn from the coupling row of the true block
//! value, and replaces the posterior with the coupling column of the emitted
//! token. The decoder replays the same steps on the observed tokens, so both
//! sides hold bit-identical state after every token.
//!
//! Coupling stops once every block posterior has entropy below the
//! threshold. The encoder may then pad with plain covertext, which the
//! decoder ignores.

use serde::{Deserialize, Serialize};

use crate::channels::{Channel, ChannelSpec};
use crate::cipher::{block_count, check_block_bits, unpack_blocks, Ciphertext};
use crate::error::{Error, Result};
use crate::mec::{col_conditional, greedy_mec, row_conditional, SparseCoupling};
use crate::prob::{sample, Categorical, Rng};

pub const DEFAULT_BLOCK_BITS: u32 = 10;
pub const DEFAULT_THRESHOLD: f64 = 0.1;
pub const DEFAULT_MAX_TOKENS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub block_bits: u32,
    /// Entropy threshold in bits below which a block counts as resolved.
    pub threshold: f64,
    /// Pad the stegotext with covertext up to this many tokens.
    pub min_tokens: usize,
    /// Give up if the coupling phase needs more tokens than this.
    pub max_tokens: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            block_bits: DEFAULT_BLOCK_BITS,
            threshold: DEFAULT_THRESHOLD,
            min_tokens: 0,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

impl CodecConfig {
    pub fn new(block_bits: u32, threshold: f64) -> Self {
        CodecConfig {
            block_bits,
            threshold,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_block_bits(self.block_bits)?;
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "threshold must be positive, got {}",
                self.threshold
            )));
        }
        if self.max_tokens < self.min_tokens {
            return Err(Error::InvalidConfig(
                "max_tokens must be at least min_tokens".into(),
            ));
        }
        Ok(())
    }
}

/// Belief over the values of one ciphertext block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockPosterior {
    pub index: usize,
    pub dist: Categorical,
    pub entropy: f64,
}

impl BlockPosterior {
    fn uniform(index: usize, block_bits: u32) -> Self {
        let dist = Categorical::uniform(1 << block_bits).expect("non-empty block space");
        let entropy = dist.entropy();
        BlockPosterior {
            index,
            dist,
            entropy,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Coupling,
    Passthrough,
}

/// State shared by encoder and decoder; a deterministic function of the
/// configuration and the tokens seen so far.
#[derive(Clone, Debug, PartialEq)]
pub struct CodecState {
    config: CodecConfig,
    posteriors: Vec<BlockPosterior>,
    coupling_steps: usize,
}

/// What one coupling step did.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingStep {
    pub step: usize,
    pub block: usize,
    /// Posterior of `block` before the step; the coupling's left marginal.
    pub prior: Categorical,
    pub coupling: SparseCoupling,
    pub token: u32,
    pub posterior: Categorical,
}

impl CodecState {
    pub fn new(n_blocks: usize, config: CodecConfig) -> Result<Self> {
        config.validate()?;
        if n_blocks == 0 {
            return Err(Error::InvalidConfig("need at least one block".into()));
        }
        Ok(CodecState {
            config,
            posteriors: (0..n_blocks)
                .map(|i| BlockPosterior::uniform(i, config.block_bits))
                .collect(),
            coupling_steps: 0,
        })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    pub fn posteriors(&self) -> &[BlockPosterior] {
        &self.posteriors
    }

    pub fn coupling_steps(&self) -> usize {
        self.coupling_steps
    }

    pub fn max_entropy(&self) -> f64 {
        self.posteriors
            .iter()
            .map(|p| p.entropy)
            .fold(0.0, f64::max)
    }

    pub fn total_entropy(&self) -> f64 {
        self.posteriors.iter().map(|p| p.entropy).sum()
    }

    /// A threshold at or above the block size means no block ever needs
    /// coupling, so the codec starts in passthrough.
    pub fn phase(&self) -> Phase {
        if self.config.threshold >= self.config.block_bits as f64
            || self.max_entropy() < self.config.threshold
        {
            Phase::Passthrough
        } else {
            Phase::Coupling
        }
    }

    /// Highest-entropy block, lowest index on ties.
    pub fn select_block(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.posteriors.iter().enumerate() {
            if p.entropy > self.posteriors[best].entropy {
                best = i;
            }
        }
        best
    }

    /// Couples the selected block's posterior with `channel_dist`.
    pub fn couple(&self, channel_dist: &Categorical) -> (usize, SparseCoupling) {
        let block = self.select_block();
        (
            block,
            greedy_mec(&self.posteriors[block].dist, channel_dist),
        )
    }

    /// Conditions `block` on the observed `token` and records the step.
    fn observe(
        &mut self,
        block: usize,
        coupling: SparseCoupling,
        token: u32,
    ) -> Result<CouplingStep> {
        let step = self.coupling_steps;
        let col = coupling
            .right()
            .index_of(token)
            .ok_or(Error::ImpossibleToken { step, token })?;
        let posterior = col_conditional(&coupling, col)?;
        let slot = &mut self.posteriors[block];
        let prior = std::mem::replace(&mut slot.dist, posterior.clone());
        slot.entropy = posterior.entropy();
        self.coupling_steps += 1;
        Ok(CouplingStep {
            step,
            block,
            prior,
            coupling,
            token,
            posterior,
        })
    }

    /// Maximum a posteriori value of every block, lowest value on ties.
    pub fn map_blocks(&self) -> Vec<u32> {
        self.posteriors.iter().map(|p| p.dist.mode()).collect()
    }
}

/// Distribution of the next stegotoken induced by a uniformly distributed
/// ciphertext: `sum_x prior(x) * coupling(token | x)`.
///
/// For a genuine coupling this is exactly its right marginal, which is what
/// makes the stegotext indistinguishable from covertext.
pub fn stego_marginal(prior: &Categorical, coupling: &SparseCoupling) -> Categorical {
    let rows = coupling.row_sums();
    let left = coupling.left();
    let right = coupling.right();
    let mut mass = vec![0.0; right.len()];
    for e in coupling.entries() {
        let weight = prior.prob(left.ids()[e.row]);
        if rows[e.row] > 0.0 {
            mass[e.col] += weight * e.mass / rows[e.row];
        }
    }
    Categorical::from_weights(right.ids().to_vec(), mass)
        .expect("a prior over the coupling rows puts mass on some column")
}

/// Samples stegotokens for a fixed ciphertext.
#[derive(Clone, Debug)]
pub struct Encoder {
    state: CodecState,
    blocks: Vec<u32>,
    rng: Rng,
}

/// One emitted token, with the coupling details when it carried information.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodeStep {
    pub token: u32,
    pub coupling: Option<CouplingStep>,
}

impl Encoder {
    pub fn new(ciphertext: &Ciphertext, config: CodecConfig, rng: Rng) -> Result<Self> {
        if ciphertext.block_bits() != config.block_bits {
            return Err(Error::InvalidConfig(format!(
                "ciphertext packed at {} bits but codec uses {}",
                ciphertext.block_bits(),
                config.block_bits
            )));
        }
        Ok(Encoder {
            state: CodecState::new(ciphertext.blocks().len(), config)?,
            blocks: ciphertext.blocks().to_vec(),
            rng,
        })
    }

    pub fn state(&self) -> &CodecState {
        &self.state
    }

    pub fn phase(&self) -> Phase {
        self.state.phase()
    }

    /// Emits the next token given the channel's next-token distribution.
    pub fn step(&mut self, channel_dist: &Categorical) -> Result<EncodeStep> {
        if self.state.phase() == Phase::Passthrough {
            return Ok(EncodeStep {
                token: sample(channel_dist, &mut self.rng),
                coupling: None,
            });
        }
        let (block, coupling) = self.state.couple(channel_dist);
        let truth = self.blocks[block];
        let row = self.state.posteriors[block]
            .dist
            .index_of(truth)
            .ok_or(Error::PosteriorCollapse { block })?;
        let given_truth =
            row_conditional(&coupling, row).map_err(|_| Error::PosteriorCollapse { block })?;
        let token = sample(&given_truth, &mut self.rng);
        let step = self.state.observe(block, coupling, token)?;
        if step.posterior.prob(truth) <= 0.0 {
            return Err(Error::PosteriorCollapse { block });
        }
        Ok(EncodeStep {
            token,
            coupling: Some(step),
        })
    }
}

/// Encodes `ciphertext` into tokens of `channel`, calling `observe` after every token.
pub fn encode_with<C, F>(
    ciphertext: &Ciphertext,
    channel: &mut C,
    config: CodecConfig,
    rng: Rng,
    mut observe: F,
) -> Result<Vec<u32>>
where
    C: Channel + ?Sized,
    F: FnMut(&Categorical, &EncodeStep),
{
    let mut encoder = Encoder::new(ciphertext, config, rng)?;
    let mut tokens = Vec::new();
    while encoder.phase() == Phase::Coupling || tokens.len() < config.min_tokens {
        if encoder.phase() == Phase::Coupling && tokens.len() >= config.max_tokens {
            return Err(Error::Nontermination {
                max_tokens: config.max_tokens,
            });
        }
        let dist = channel.next_dist()?;
        let step = encoder.step(&dist)?;
        channel.append(step.token)?;
        tokens.push(step.token);
        observe(&dist, &step);
    }
    Ok(tokens)
}

pub fn encode<C: Channel + ?Sized>(
    ciphertext: &Ciphertext,
    channel: &mut C,
    config: CodecConfig,
    rng: Rng,
) -> Result<Vec<u32>> {
    encode_with(ciphertext, channel, config, rng, |_, _| {})
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeStatus {
    /// Every block posterior ended below the threshold.
    Complete,
    /// Coupling never ran far enough to resolve the blocks (threshold at or
    /// above the block size).
    Unresolved,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    pub bits: Vec<bool>,
    pub blocks: Vec<u32>,
    pub residual_entropies: Vec<f64>,
    pub coupling_tokens: usize,
    pub status: DecodeStatus,
}

/// Replays the encoder's coupling steps on observed tokens.
#[derive(Clone, Debug)]
pub struct Decoder {
    state: CodecState,
}

impl Decoder {
    pub fn new(n_blocks: usize, config: CodecConfig) -> Result<Self> {
        Ok(Decoder {
            state: CodecState::new(n_blocks, config)?,
        })
    }

    pub fn state(&self) -> &CodecState {
        &self.state
    }

    pub fn phase(&self) -> Phase {
        self.state.phase()
    }

    /// Conditions on `token`; returns `None` once in passthrough.
    pub fn step(&mut self, channel_dist: &Categorical, token: u32) -> Result<Option<CouplingStep>> {
        if self.state.phase() == Phase::Passthrough {
            return Ok(None);
        }
        let (block, coupling) = self.state.couple(channel_dist);
        self.state.observe(block, coupling, token).map(Some)
    }

    pub fn finish(self, message_bits: usize) -> DecodeResult {
        let blocks = self.state.map_blocks();
        let threshold = self.state.config.threshold;
        let residual_entropies: Vec<f64> =
            self.state.posteriors.iter().map(|p| p.entropy).collect();
        let status = if residual_entropies.iter().all(|&h| h < threshold) {
            DecodeStatus::Complete
        } else {
            DecodeStatus::Unresolved
        };
        DecodeResult {
            bits: unpack_blocks(&blocks, self.state.config.block_bits, message_bits),
            blocks,
            residual_entropies,
            coupling_tokens: self.state.coupling_steps,
            status,
        }
    }
}

/// Recovers `message_bits` ciphertext bits from `tokens`, calling `observe`
/// after every coupling step.
pub fn decode_with<C, F>(
    tokens: &[u32],
    channel: &mut C,
    config: CodecConfig,
    message_bits: usize,
    mut observe: F,
) -> Result<DecodeResult>
where
    C: Channel + ?Sized,
    F: FnMut(&CouplingStep),
{
    let mut decoder = Decoder::new(block_count(message_bits, config.block_bits), config)?;
    for &token in tokens {
        if decoder.phase() == Phase::Passthrough {
            break;
        }
        let dist = channel.next_dist()?;
        if let Some(step) = decoder.step(&dist, token)? {
            observe(&step);
        }
        channel.append(token)?;
    }
    if decoder.phase() == Phase::Coupling {
        return Err(Error::InsufficientTokens {
            consumed: tokens.len(),
        });
    }
    Ok(decoder.finish(message_bits))
}

pub fn decode<C: Channel + ?Sized>(
    tokens: &[u32],
    channel: &mut C,
    config: CodecConfig,
    message_bits: usize,
) -> Result<DecodeResult> {
    decode_with(tokens, channel, config, message_bits, |_| {})
}

/// Stegotext file: everything except the key is public.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stegotext {
    pub channel: ChannelSpec,
    pub block_bits: u32,
    pub threshold: f64,
    pub n_blocks: usize,
    pub tokens: Vec<u32>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{ScriptedChannel, UniformChannel};
    use crate::cipher::{encrypt, gen_key, random_bits};

    fn coin_channel() -> ScriptedChannel {
        ScriptedChannel::new(vec![Categorical::uniform(2).unwrap()]).unwrap()
    }

    #[test]
    fn one_bit_over_a_fair_coin() {
        for bit in [false, true] {
            let c = Ciphertext::from_bits(vec![bit], 1).unwrap();
            let config = CodecConfig::new(1, 0.1);
            let mut steps = Vec::new();
            let tokens = encode_with(&c, &mut coin_channel(), config, Rng::new(3), |_, s| {
                steps.push(s.clone())
            })
            .unwrap();
            assert_eq!(tokens, vec![bit as u32]);
            let coupling = &steps[0].coupling.as_ref().unwrap().coupling;
            assert_eq!(coupling.to_json(), r#"{"entries":[[0,0,0.5],[1,1,0.5]]}"#);

            let out = decode(&tokens, &mut coin_channel(), config, 1).unwrap();
            assert_eq!(out.bits, vec![bit]);
            assert_eq!(out.coupling_tokens, 1);
            assert_eq!(out.residual_entropies, vec![0.0]);
            assert_eq!(out.status, DecodeStatus::Complete);
        }
    }

    #[test]
    fn degenerate_threshold_sends_pure_covertext() {
        let c = Ciphertext::from_bits(vec![true, false, true], 3).unwrap();
        let config = CodecConfig {
            min_tokens: 5,
            ..CodecConfig::new(3, 3.0)
        };
        let mut ch = UniformChannel::new(8).unwrap();
        let mut coupled = 0;
        let tokens = encode_with(&c, &mut ch, config, Rng::new(1), |_, s| {
            coupled += s.coupling.is_some() as usize
        })
        .unwrap();
        assert_eq!(tokens.len(), 5);
        assert_eq!(coupled, 0);
        let out = decode(&tokens, &mut UniformChannel::new(8).unwrap(), config, 3).unwrap();
        assert_eq!(out.coupling_tokens, 0);
        assert_eq!(out.status, DecodeStatus::Unresolved);
    }

    #[test]
    fn entropy_ceiling_on_uniform_forty() {
        let mut rng = Rng::new(11);
        for _ in 0..20 {
            let c = Ciphertext::from_bits(random_bits(80, &mut rng), 10).unwrap();
            let mut ch = UniformChannel::new(40).unwrap();
            let tokens = encode(
                &c,
                &mut ch,
                CodecConfig::default(),
                Rng::new(rng.next_u64()),
            )
            .unwrap();
            assert!(tokens.len() >= 16);
        }
    }

    #[test]
    fn trailing_covertext_is_ignored() {
        let mut rng = Rng::new(5);
        let key = gen_key(40, &mut rng);
        let c = encrypt(&random_bits(40, &mut rng), &key, 8).unwrap();
        let config = CodecConfig::new(8, 0.1);
        let tokens = encode(
            &c,
            &mut UniformChannel::new(16).unwrap(),
            config,
            Rng::new(9),
        )
        .unwrap();
        let base = decode(&tokens, &mut UniformChannel::new(16).unwrap(), config, 40).unwrap();
        let mut longer = tokens.clone();
        longer.extend([1, 2, 3, 15]);
        let padded = decode(&longer, &mut UniformChannel::new(16).unwrap(), config, 40).unwrap();
        assert_eq!(base, padded);
        assert_eq!(base.bits, c.bits());
    }

    #[test]
    fn truncated_stegotext_is_rejected() {
        let c = Ciphertext::from_bits(vec![true; 20], 10).unwrap();
        let config = CodecConfig::default();
        let tokens = encode(
            &c,
            &mut UniformChannel::new(40).unwrap(),
            config,
            Rng::new(2),
        )
        .unwrap();
        let err = decode(
            &tokens[..3],
            &mut UniformChannel::new(40).unwrap(),
            config,
            20,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InsufficientTokens { consumed: 3 }));
    }

    #[test]
    fn point_mass_channel_never_terminates() {
        let c = Ciphertext::from_bits(vec![true; 4], 4).unwrap();
        let config = CodecConfig {
            max_tokens: 25,
            ..CodecConfig::new(4, 0.1)
        };
        let mut ch = ScriptedChannel::new(vec![Categorical::point(0)]).unwrap();
        assert!(matches!(
            encode(&c, &mut ch, config, Rng::new(0)),
            Err(Error::Nontermination { max_tokens: 25 })
        ));
    }

    #[test]
    fn impossible_token_is_reported() {
        let mut d = Decoder::new(1, CodecConfig::new(2, 0.1)).unwrap();
        let err = d.step(&Categorical::uniform(2).unwrap(), 5).unwrap_err();
        assert!(matches!(err, Error::ImpossibleToken { step: 0, token: 5 }));
    }

    #[test]
    fn stego_marginal_examples() {
        let u = Categorical::uniform(2).unwrap();
        let g = greedy_mec(&u, &u);
        assert_eq!(stego_marginal(&u, &g), u);

        let q = Categorical::new(vec![3, 5, 8], vec![0.2, 0.3, 0.5]).unwrap();
        let g = greedy_mec(&Categorical::point(6), &q);
        assert_eq!(stego_marginal(&Categorical::point(6), &g), q);
    }

    #[test]
    fn config_validation() {
        assert!(CodecConfig::new(21, 0.1).validate().is_err());
        assert!(CodecConfig::new(10, 0.0).validate().is_err());
        let bad = CodecConfig {
            min_tokens: 10,
            max_tokens: 5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(CodecState::new(0, CodecConfig::default()).is_err());
    }

    #[test]
    fn initial_block_entropy_is_exact() {
        let s = CodecState::new(3, CodecConfig::new(16, 0.1)).unwrap();
        assert_eq!(s.max_entropy(), 16.0);
        assert_eq!(s.select_block(), 0);
        assert_eq!(s.phase(), Phase::Coupling);
    }
}
