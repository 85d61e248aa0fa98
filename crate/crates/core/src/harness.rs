//! Measurement harness: runs encode/decode trials and aggregates security,
//! efficiency, error-rate and speed statistics.
//!
//! Each trial draws a random message and key from its seed, encrypts,
//! encodes, audits every coupling step analytically, decodes and compares.
//! The audit computes the exact stegotoken distribution induced by a uniform
//! ciphertext and its KL divergence from the channel conditional, so the
//! reported divergence reflects floating-point error only.

use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::channels::{Channel, ChannelSpec};
use crate::cipher::{decrypt, encrypt, gen_key, random_bits, Ciphertext};
use crate::codec::{stego_marginal, CodecConfig, DecodeStatus, Decoder, Encoder, Phase};
use crate::error::{Error, Result};
use crate::mec::SparseCoupling;
use crate::prob::{entropy, kl, l1_distance, Categorical, Rng};

/// Largest per-step KL (bits) accepted as perfectly secure.
pub const KL_TOLERANCE: f64 = 1e-9;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959963984540054;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub channel: ChannelSpec,
    pub block_bits: u32,
    pub threshold: f64,
    pub message_bits: usize,
    #[serde(default)]
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Record wall-clock timings. Off by default so reports are reproducible byte for byte.
    #[serde(default)]
    pub timing: bool,
}

impl TrialSpec {
    /// 80-bit messages, 10-bit blocks, threshold 0.1.
    pub fn new(channel: ChannelSpec) -> Self {
        let codec = CodecConfig::default();
        TrialSpec {
            channel,
            block_bits: codec.block_bits,
            threshold: codec.threshold,
            message_bits: 80,
            min_tokens: 0,
            max_tokens: codec.max_tokens,
            timing: false,
        }
    }

    pub fn block_bits(mut self, b: u32) -> Self {
        self.block_bits = b;
        self
    }

    pub fn threshold(mut self, t: f64) -> Self {
        self.threshold = t;
        self
    }

    pub fn message_bits(mut self, len: usize) -> Self {
        self.message_bits = len;
        self
    }

    pub fn max_tokens(mut self, n: usize) -> Self {
        self.max_tokens = n;
        self
    }

    pub fn timing(mut self, on: bool) -> Self {
        self.timing = on;
        self
    }

    pub fn codec_config(&self) -> CodecConfig {
        CodecConfig {
            block_bits: self.block_bits,
            threshold: self.threshold,
            min_tokens: self.min_tokens,
            max_tokens: self.max_tokens,
        }
    }
}

/// Wall-clock breakdown of one trial, in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    /// Encoder coupling time of each coupling step, channel queries excluded.
    pub coupling_step_seconds: Vec<f64>,
    pub encode_seconds: f64,
    pub decode_seconds: f64,
    pub channel_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub seed: u64,
    pub channel: ChannelSpec,
    pub block_bits: u32,
    pub threshold: f64,
    pub message_bits: usize,
    pub tokens_in_coupling_phase: usize,
    pub total_tokens: usize,
    pub bit_errors: usize,
    /// `KL(channel || stego)` per coupling step; `null` in JSON means infinite.
    #[serde(with = "nullable_floats")]
    pub kl_per_step: Vec<f64>,
    pub l1_per_step: Vec<f64>,
    pub channel_entropy_per_step: Vec<f64>,
    pub decoded_ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

impl TrialReport {
    fn empty(spec: &TrialSpec, seed: u64) -> Self {
        TrialReport {
            seed,
            channel: spec.channel.clone(),
            block_bits: spec.block_bits,
            threshold: spec.threshold,
            message_bits: spec.message_bits,
            tokens_in_coupling_phase: 0,
            total_tokens: 0,
            bit_errors: 0,
            kl_per_step: Vec::new(),
            l1_per_step: Vec::new(),
            channel_entropy_per_step: Vec::new(),
            decoded_ok: false,
            error: None,
            timings: None,
        }
    }

    /// Completed without a codec or channel error.
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }

    pub fn max_kl(&self) -> f64 {
        self.kl_per_step.iter().copied().fold(0.0, f64::max)
    }

    pub fn bit_rate(&self) -> Option<f64> {
        (self.succeeded() && self.tokens_in_coupling_phase > 0)
            .then(|| self.message_bits as f64 / self.tokens_in_coupling_phase as f64)
    }

    pub fn mean_channel_entropy(&self) -> Option<f64> {
        let steps = &self.channel_entropy_per_step;
        (!steps.is_empty()).then(|| steps.iter().sum::<f64>() / steps.len() as f64)
    }

    /// Bit rate divided by mean channel entropy; `None` for zero-entropy channels.
    pub fn efficiency(&self) -> Option<f64> {
        let h = self.mean_channel_entropy()?;
        (h > 0.0).then_some(self.bit_rate()? / h)
    }
}

/// Security audit of one coupling step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepAudit {
    /// `KL(channel || stego)` in bits, infinite if a channel token cannot be emitted.
    pub kl: f64,
    pub l1: f64,
}

/// Compares the stegotoken distribution induced by `coupling` under `prior`
/// against the channel conditional.
pub fn audit_step(
    prior: &Categorical,
    coupling: &SparseCoupling,
    channel_dist: &Categorical,
) -> StepAudit {
    let stego = stego_marginal(prior, coupling);
    StepAudit {
        kl: kl(channel_dist, &stego).unwrap_or(f64::INFINITY),
        l1: l1_distance(channel_dist, &stego),
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Runs one encode/audit/decode round trip. Codec and channel errors are
/// recorded in the report instead of being returned.
pub fn run_trial(spec: &TrialSpec, seed: u64) -> TrialReport {
    let mut report = TrialReport::empty(spec, seed);
    if let Err(e) = trial_body(spec, seed, &mut report) {
        report.error = Some(e.to_string());
        report.decoded_ok = false;
    }
    report
}

fn trial_body(spec: &TrialSpec, seed: u64, report: &mut TrialReport) -> Result<()> {
    let config = spec.codec_config();
    config.validate()?;
    let mut rng = Rng::new(seed);
    let message = random_bits(spec.message_bits, &mut rng);
    let key = gen_key(spec.message_bits, &mut rng);
    let ciphertext = encrypt(&message, &key, spec.block_bits)?;
    let encoder_rng = Rng::new(rng.next_u64());

    let mut channel_time = Duration::ZERO;
    let mut step_times = Vec::new();
    let encode_start = Instant::now();
    let tokens = {
        let mut channel = spec.channel.build()?;
        let mut encoder = Encoder::new(&ciphertext, config, encoder_rng)?;
        let mut tokens = Vec::new();
        while encoder.phase() == Phase::Coupling || tokens.len() < config.min_tokens {
            if encoder.phase() == Phase::Coupling && tokens.len() >= config.max_tokens {
                report.tokens_in_coupling_phase = encoder.state().coupling_steps();
                report.total_tokens = tokens.len();
                return Err(Error::Nontermination {
                    max_tokens: config.max_tokens,
                });
            }
            let t = Instant::now();
            let dist = channel.next_dist()?;
            channel_time += t.elapsed();

            let t = Instant::now();
            let step = encoder.step(&dist)?;
            let coupling_time = t.elapsed();

            let t = Instant::now();
            channel.append(step.token)?;
            channel_time += t.elapsed();

            if let Some(c) = &step.coupling {
                step_times.push(secs(coupling_time));
                let audit = audit_step(&c.prior, &c.coupling, &dist);
                report.kl_per_step.push(audit.kl);
                report.l1_per_step.push(audit.l1);
                report.channel_entropy_per_step.push(entropy(&dist));
            }
            tokens.push(step.token);
        }
        report.tokens_in_coupling_phase = encoder.state().coupling_steps();
        tokens
    };
    let encode_seconds = secs(encode_start.elapsed());
    report.total_tokens = tokens.len();

    let decode_start = Instant::now();
    let decoded = {
        let mut channel = spec.channel.build()?;
        let mut decoder = Decoder::new(ciphertext.blocks().len(), config)?;
        for &token in &tokens {
            if decoder.phase() == Phase::Passthrough {
                break;
            }
            let t = Instant::now();
            let dist = channel.next_dist()?;
            channel_time += t.elapsed();
            decoder.step(&dist, token)?;
            let t = Instant::now();
            channel.append(token)?;
            channel_time += t.elapsed();
        }
        if decoder.phase() == Phase::Coupling {
            return Err(Error::InsufficientTokens {
                consumed: tokens.len(),
            });
        }
        decoder.finish(spec.message_bits)
    };
    let decode_seconds = secs(decode_start.elapsed());

    let recovered = decrypt(&Ciphertext::from_bits(decoded.bits, spec.block_bits)?, &key)?;
    report.bit_errors = recovered
        .iter()
        .zip(&message)
        .filter(|(a, b)| a != b)
        .count();
    report.decoded_ok = decoded.status == DecodeStatus::Complete && report.bit_errors == 0;
    if spec.timing {
        report.timings = Some(Timings {
            coupling_step_seconds: step_times,
            encode_seconds,
            decode_seconds,
            channel_seconds: secs(channel_time),
        });
    }
    Ok(())
}

/// Runs trials with seeds `base_seed, base_seed + 1, ...`, in parallel when
/// the `parallel` feature is on. Results are in seed order either way.
pub fn run_trials(spec: &TrialSpec, n_trials: usize, base_seed: u64) -> Vec<TrialReport> {
    let seeds: Vec<u64> = (0..n_trials as u64)
        .map(|i| base_seed.wrapping_add(i))
        .collect();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        seeds.par_iter().map(|&s| run_trial(spec, s)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        seeds.iter().map(|&s| run_trial(spec, s)).collect()
    }
}

/// Mean with a 95% normal-approximation confidence half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub ci95: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        if n == 0 {
            return Stat {
                mean: 0.0,
                ci95: 0.0,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let ci95 = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            Z95 * (var / n as f64).sqrt()
        } else {
            0.0
        };
        Stat { mean, ci95, n }
    }
}

fn sorted_by_seed(trials: &[TrialReport]) -> Vec<&TrialReport> {
    let mut v: Vec<&TrialReport> = trials.iter().collect();
    v.sort_by_key(|t| t.seed);
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlReport {
    pub trials: usize,
    pub steps: usize,
    #[serde(with = "nullable_float")]
    pub max_kl: f64,
    #[serde(with = "nullable_float")]
    pub mean_kl: f64,
    pub max_l1: f64,
    /// Every step within [`KL_TOLERANCE`].
    pub secure: bool,
}

impl KlReport {
    /// Aggregates the per-step audit of every trial, failed ones included.
    pub fn from_trials(trials: &[TrialReport]) -> Self {
        let sorted = sorted_by_seed(trials);
        let kls: Vec<f64> = sorted
            .iter()
            .flat_map(|t| t.kl_per_step.iter().copied())
            .collect();
        let max_l1 = sorted
            .iter()
            .flat_map(|t| t.l1_per_step.iter().copied())
            .fold(0.0, f64::max);
        let max_kl = kls.iter().copied().fold(0.0, f64::max);
        let mean_kl = if kls.is_empty() {
            0.0
        } else {
            kls.iter().sum::<f64>() / kls.len() as f64
        };
        KlReport {
            trials: trials.len(),
            steps: kls.len(),
            max_kl,
            mean_kl,
            max_l1,
            secure: max_kl <= KL_TOLERANCE,
        }
    }
}

pub fn kl_report(spec: &TrialSpec, n_trials: usize, base_seed: u64) -> KlReport {
    KlReport::from_trials(&run_trials(spec, n_trials, base_seed))
}

/// Plug-in estimate of `KL(empirical || reference)` from i.i.d. token samples.
/// Infinite when a sample falls outside the reference support.
pub fn empirical_kl(samples: &[u32], reference: &Categorical) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut counts = std::collections::BTreeMap::new();
    for &s in samples {
        *counts.entry(s).or_insert(0usize) += 1;
    }
    let (ids, weights) = counts.into_iter().map(|(id, c)| (id, c as f64)).unzip();
    let empirical = Categorical::from_weights(ids, weights).expect("non-empty counts");
    kl(&empirical, reference).unwrap_or(f64::INFINITY)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub trials: usize,
    pub failed: usize,
    /// Message bits per coupling-phase token, over successful trials.
    pub bit_rate: Stat,
    /// Bit rate over mean channel entropy; `null` when the channel has no entropy.
    pub efficiency: Option<Stat>,
    #[serde(with = "nullable_float")]
    pub max_kl: f64,
    /// Bit errors per transmitted bit, over successful trials.
    pub error_rate: Stat,
    pub mean_channel_entropy: Option<f64>,
    /// Encode plus decode wall time per coupling token, when timings were recorded.
    pub seconds_per_token: Option<Stat>,
}

impl SummaryReport {
    pub fn from_trials(trials: &[TrialReport]) -> Self {
        let sorted = sorted_by_seed(trials);
        let ok: Vec<&TrialReport> = sorted.iter().copied().filter(|t| t.succeeded()).collect();
        let rates: Vec<f64> = ok.iter().filter_map(|t| t.bit_rate()).collect();
        let effs: Vec<f64> = ok.iter().filter_map(|t| t.efficiency()).collect();
        let errors: Vec<f64> = ok
            .iter()
            .map(|t| t.bit_errors as f64 / t.message_bits.max(1) as f64)
            .collect();
        let entropies: Vec<f64> = ok.iter().filter_map(|t| t.mean_channel_entropy()).collect();
        let speeds: Vec<f64> = ok
            .iter()
            .filter(|t| t.tokens_in_coupling_phase > 0)
            .filter_map(|t| {
                t.timings.as_ref().map(|tm| {
                    (tm.encode_seconds + tm.decode_seconds - tm.channel_seconds).max(0.0)
                        / t.tokens_in_coupling_phase as f64
                })
            })
            .collect();
        SummaryReport {
            trials: trials.len(),
            failed: trials.len() - ok.len(),
            bit_rate: Stat::of(&rates),
            efficiency: (!effs.is_empty()).then(|| Stat::of(&effs)),
            max_kl: KlReport::from_trials(trials).max_kl,
            error_rate: Stat::of(&errors),
            mean_channel_entropy: (!entropies.is_empty())
                .then(|| entropies.iter().sum::<f64>() / entropies.len() as f64),
            seconds_per_token: (!speeds.is_empty()).then(|| Stat::of(&speeds)),
        }
    }
}

pub fn efficiency_report(spec: &TrialSpec, n_trials: usize, base_seed: u64) -> SummaryReport {
    SummaryReport::from_trials(&run_trials(spec, n_trials, base_seed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub trials: usize,
    pub failed: usize,
    pub bit_errors: usize,
    pub bits: usize,
    pub error_rate: f64,
    pub ci95: f64,
    pub mean_coupling_tokens: f64,
}

impl SweepPoint {
    pub fn from_trials(threshold: f64, trials: &[TrialReport]) -> Self {
        let ok: Vec<&TrialReport> = trials.iter().filter(|t| t.succeeded()).collect();
        let per_trial: Vec<f64> = ok
            .iter()
            .map(|t| t.bit_errors as f64 / t.message_bits.max(1) as f64)
            .collect();
        let bits: usize = ok.iter().map(|t| t.message_bits).sum();
        let bit_errors: usize = ok.iter().map(|t| t.bit_errors).sum();
        let tokens: Vec<f64> = ok
            .iter()
            .map(|t| t.tokens_in_coupling_phase as f64)
            .collect();
        SweepPoint {
            threshold,
            trials: trials.len(),
            failed: trials.len() - ok.len(),
            bit_errors,
            bits,
            error_rate: if bits == 0 {
                0.0
            } else {
                bit_errors as f64 / bits as f64
            },
            ci95: Stat::of(&per_trial).ci95,
            mean_coupling_tokens: Stat::of(&tokens).mean,
        }
    }
}

/// Bit error rate for each threshold, in the order given. Error rate is
/// expected to be non-increasing as the threshold decreases.
pub fn threshold_sweep(
    spec: &TrialSpec,
    thresholds: &[f64],
    n_trials: usize,
    base_seed: u64,
) -> Vec<SweepPoint> {
    thresholds
        .iter()
        .map(|&t| {
            let trials = run_trials(&spec.clone().threshold(t), n_trials, base_seed);
            SweepPoint::from_trials(t, &trials)
        })
        .collect()
}

/// True if error rates never increase along the sweep beyond what the
/// confidence intervals of neighbouring points allow.
pub fn sweep_is_monotone(points: &[SweepPoint]) -> bool {
    points.windows(2).all(|w| {
        let (hi, lo) = if w[0].threshold >= w[1].threshold {
            (&w[0], &w[1])
        } else {
            (&w[1], &w[0])
        };
        lo.error_rate <= hi.error_rate + lo.ci95 + hi.ci95
    })
}

/// `threshold,error_rate,ci` rows.
pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], mut out: W) -> Result<()> {
    writeln!(out, "threshold,error_rate,ci")?;
    for p in points {
        writeln!(out, "{},{},{}", p.threshold, p.error_rate, p.ci95)?;
    }
    Ok(())
}

/// One JSON object per line.
pub fn write_jsonl<W: Write>(trials: &[TrialReport], mut out: W) -> Result<()> {
    for t in trials {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedReport {
    pub trials: usize,
    /// Encoder time per coupling token, channel queries excluded.
    pub encode_seconds_per_token: Stat,
    pub decode_seconds_per_token: Stat,
    pub channel_seconds_per_token: Stat,
    pub median_coupling_step_seconds: f64,
}

/// Median of a sample; 0 when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len().is_multiple_of(2) {
        (v[mid - 1] + v[mid]) / 2.0
    } else {
        v[mid]
    }
}

impl SpeedReport {
    pub fn from_trials(trials: &[TrialReport]) -> Self {
        let timed: Vec<(&TrialReport, &Timings)> = sorted_by_seed(trials)
            .into_iter()
            .filter(|t| t.succeeded() && t.tokens_in_coupling_phase > 0)
            .filter_map(|t| t.timings.as_ref().map(|tm| (t, tm)))
            .collect();
        let per_token = |f: &dyn Fn(&Timings) -> f64| -> Stat {
            let v: Vec<f64> = timed
                .iter()
                .map(|(t, tm)| f(tm) / t.tokens_in_coupling_phase as f64)
                .collect();
            Stat::of(&v)
        };
        let steps: Vec<f64> = timed
            .iter()
            .flat_map(|(_, tm)| tm.coupling_step_seconds.iter().copied())
            .collect();
        SpeedReport {
            trials: trials.len(),
            encode_seconds_per_token: per_token(&|tm| tm.coupling_step_seconds.iter().sum()),
            decode_seconds_per_token: per_token(&|tm| tm.decode_seconds),
            channel_seconds_per_token: per_token(&|tm| tm.channel_seconds),
            median_coupling_step_seconds: median(&steps),
        }
    }
}

pub fn speed_report(spec: &TrialSpec, n_trials: usize, base_seed: u64) -> SpeedReport {
    let spec = spec.clone().timing(true);
    // timings are only meaningful without other trials competing for the core
    let trials: Vec<TrialReport> = (0..n_trials as u64)
        .map(|i| run_trial(&spec, base_seed.wrapping_add(i)))
        .collect();
    SpeedReport::from_trials(&trials)
}

/// Median encoder coupling time for `steps` steps against a fixed channel
/// distribution, starting from fresh uniform posteriors each time.
pub fn coupling_step_benchmark(
    channel: &mut dyn Channel,
    block_bits: u32,
    steps: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let dist = channel.next_dist()?;
    let mut times = Vec::with_capacity(steps);
    for _ in 0..steps {
        let c = Ciphertext::from_bits(random_bits(block_bits as usize, &mut rng), block_bits)?;
        let mut encoder = Encoder::new(
            &c,
            CodecConfig::new(block_bits, 0.1),
            Rng::new(rng.next_u64()),
        )?;
        let t = Instant::now();
        encoder.step(&dist)?;
        times.push(secs(t.elapsed()));
    }
    Ok(median(&times))
}

/// Serializes non-finite floats as `null` and reads `null` back as +infinity.
mod nullable_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

mod nullable_floats {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x.is_finite().then_some(*x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Option<f64>>::deserialize(d)?
            .into_iter()
            .map(|x| x.unwrap_or(f64::INFINITY))
            .collect())
    }
}
