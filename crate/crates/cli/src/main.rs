//! `imec` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 codec, channel or audit failure.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use imec::channels::ChannelSpec;
use imec::cipher::{
    bits_to_bytes, block_count, bytes_to_bits, decrypt, encrypt, gen_key, Ciphertext, Key,
};
use imec::codec::{decode, encode, CodecConfig, DecodeStatus, Stegotext, DEFAULT_MAX_TOKENS};
use imec::harness::{self, KlReport, SpeedReport, SummaryReport, SweepPoint, TrialSpec};
use imec::prob::Rng;
use imec::Error;

#[derive(Parser, Debug)]
#[command(
    name = "imec",
    version,
    about = "Perfectly secure steganography via iterative minimum entropy coupling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a one-time-pad key as one line of lowercase hex.
    Keygen {
        /// Key length in bits (a multiple of 8).
        #[arg(long, default_value_t = 80)]
        bits: usize,
        #[arg(long, env = "STEGO_SEED")]
        seed: Option<u64>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hide a message in stegotext.
    Encode {
        #[arg(long)]
        channel: ChannelSpec,
        #[arg(long)]
        key: PathBuf,
        /// Message file, `-` for stdin. Must be exactly as long as the key.
        #[arg(long, default_value = "-")]
        message: PathBuf,
        /// Stegotext JSON output.
        #[arg(long)]
        out: PathBuf,
        /// Also write the rendered covertext here.
        #[arg(long)]
        text: Option<PathBuf>,
        #[command(flatten)]
        codec: CodecArgs,
        #[arg(long, default_value_t = 0)]
        min_tokens: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_TOKENS)]
        max_tokens: usize,
        #[arg(long, env = "STEGO_SEED")]
        seed: Option<u64>,
    },
    /// Recover a message from stegotext.
    Decode {
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        stegotext: PathBuf,
        /// Message output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the per-step KL security audit over random trials.
    Audit {
        #[command(flatten)]
        trials: TrialArgs,
    },
    /// Measure bit rate, efficiency, error rate and optionally speed and a threshold sweep.
    Bench {
        #[command(flatten)]
        trials: TrialArgs,
        /// Comma-separated thresholds for an error-rate sweep.
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<f64>,
        /// Also time encoding and decoding (runs trials sequentially).
        #[arg(long)]
        speed: bool,
        /// Write every trial report as JSON lines.
        #[arg(long)]
        jsonl: Option<PathBuf>,
        /// Write the sweep as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Summary JSON output; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct CodecArgs {
    #[arg(long, default_value_t = 10)]
    block_bits: u32,
    #[arg(long, default_value_t = 0.1)]
    threshold: f64,
}

#[derive(Args, Debug)]
struct TrialArgs {
    #[arg(long)]
    channel: ChannelSpec,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Ciphertext length in bits.
    #[arg(long, default_value_t = 80)]
    bits: usize,
    #[command(flatten)]
    codec: CodecArgs,
    #[arg(long, default_value_t = DEFAULT_MAX_TOKENS)]
    max_tokens: usize,
    #[arg(long, env = "STEGO_SEED", default_value_t = 0)]
    seed: u64,
}

impl TrialArgs {
    fn spec(&self) -> TrialSpec {
        TrialSpec::new(self.channel.clone())
            .block_bits(self.codec.block_bits)
            .threshold(self.codec.threshold)
            .message_bits(self.bits)
            .max_tokens(self.max_tokens)
    }

    fn validate(&self) -> Result<(), Error> {
        self.spec().codec_config().validate()?;
        if self.bits == 0 || self.trials == 0 {
            return Err(Error::InvalidConfig(
                "--bits and --trials must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.kind());
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::LengthMismatch { .. } | Error::Io(_) => 1,
        _ => 2,
    }
}

fn fresh_seed(seed: Option<u64>) -> Result<u64, Error> {
    if let Some(s) = seed {
        return Ok(s);
    }
    let mut buf = [0u8; 8];
    getrandom::getrandom(&mut buf)
        .map_err(|e| Error::InvalidConfig(format!("no OS randomness: {e}")))?;
    Ok(u64::from_le_bytes(buf))
}

fn read_input(path: &Path) -> io::Result<Vec<u8>> {
    if path.as_os_str() == "-" {
        let mut buf = Vec::new();
        io::stdin().read_to_end(&mut buf)?;
        Ok(buf)
    } else {
        fs::read(path)
    }
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> io::Result<()> {
    match path {
        Some(p) if p.as_os_str() != "-" => fs::write(p, bytes),
        _ => {
            let mut out = io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()
        }
    }
}

fn read_key(path: &Path) -> Result<Key, Error> {
    let text = fs::read_to_string(path)?;
    let hex = text.trim();
    Key::from_hex(hex, hex.len() * 4)
}

fn run(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Keygen { bits, seed, out } => {
            if bits == 0 || bits % 8 != 0 {
                return Err(Error::InvalidConfig(
                    "--bits must be a positive multiple of 8".into(),
                ));
            }
            let key = gen_key(bits, &mut Rng::new(fresh_seed(seed)?));
            write_output(out.as_deref(), format!("{}\n", key.to_hex()).as_bytes())?;
        }
        Command::Encode {
            channel,
            key,
            message,
            out,
            text,
            codec,
            min_tokens,
            max_tokens,
            seed,
        } => {
            let key = read_key(&key)?;
            let message = bytes_to_bits(&read_input(&message)?);
            let config = CodecConfig {
                block_bits: codec.block_bits,
                threshold: codec.threshold,
                min_tokens,
                max_tokens,
            };
            config.validate()?;
            let ciphertext = encrypt(&message, &key, config.block_bits)?;
            let mut ch = channel.build()?;
            let tokens = encode(&ciphertext, &mut ch, config, Rng::new(fresh_seed(seed)?))?;
            if let Some(path) = text {
                let mut fresh = channel.build()?;
                fs::write(path, fresh.render(&tokens)?)?;
            }
            let file = Stegotext {
                channel,
                block_bits: config.block_bits,
                threshold: config.threshold,
                n_blocks: ciphertext.blocks().len(),
                tokens,
            };
            fs::write(&out, serde_json::to_string(&file)? + "\n")?;
            eprintln!("wrote {} tokens to {}", file.tokens.len(), out.display());
        }
        Command::Decode {
            key,
            stegotext,
            out,
        } => {
            let key = read_key(&key)?;
            let file: Stegotext = serde_json::from_str(&fs::read_to_string(&stegotext)?)?;
            if file.n_blocks != block_count(key.len(), file.block_bits) {
                return Err(Error::InvalidConfig(format!(
                    "stegotext carries {} blocks but the key needs {}",
                    file.n_blocks,
                    block_count(key.len(), file.block_bits)
                )));
            }
            let config = CodecConfig::new(file.block_bits, file.threshold);
            let mut ch = file.channel.build()?;
            let result = decode(&file.tokens, &mut ch, config, key.len())?;
            if result.status != DecodeStatus::Complete {
                eprintln!("warning: posteriors did not resolve below the threshold");
            }
            let bits = decrypt(&Ciphertext::from_bits(result.bits, file.block_bits)?, &key)?;
            write_output(out.as_deref(), &bits_to_bytes(&bits))?;
        }
        Command::Audit { trials } => {
            trials.validate()?;
            let report = harness::kl_report(&trials.spec(), trials.trials, trials.seed);
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.secure {
                eprintln!(
                    "audit failed: max KL {} exceeds {}",
                    report.max_kl,
                    harness::KL_TOLERANCE
                );
                return Ok(ExitCode::from(2));
            }
        }
        Command::Bench {
            trials,
            sweep,
            speed,
            jsonl,
            csv,
            out,
        } => {
            trials.validate()?;
            let spec = trials.spec();
            let reports = harness::run_trials(&spec, trials.trials, trials.seed);
            if let Some(path) = jsonl {
                harness::write_jsonl(&reports, io::BufWriter::new(fs::File::create(path)?))?;
            }
            let sweep_points = (!sweep.is_empty())
                .then(|| harness::threshold_sweep(&spec, &sweep, trials.trials, trials.seed));
            if let (Some(points), Some(path)) = (&sweep_points, csv) {
                harness::write_sweep_csv(points, fs::File::create(path)?)?;
            }
            let summary = BenchSummary {
                spec: &spec,
                summary: SummaryReport::from_trials(&reports),
                kl: KlReport::from_trials(&reports),
                sweep: sweep_points,
                speed: speed.then(|| harness::speed_report(&spec, trials.trials, trials.seed)),
            };
            let json = serde_json::to_string_pretty(&summary)? + "\n";
            write_output(out.as_deref(), json.as_bytes())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct BenchSummary<'a> {
    spec: &'a TrialSpec,
    summary: SummaryReport,
    kl: KlReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep: Option<Vec<SweepPoint>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    speed: Option<SpeedReport>,
}
