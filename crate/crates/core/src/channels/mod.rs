//! Autoregressive covertext channels.
//!
//! A channel exposes the conditional distribution of the next token given
//! everything appended so far. The built-in channels are deterministic
//! functions of their context; [`remote`] forwards the same three operations
//! to an external model over newline-delimited JSON.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{by_mass_desc, Categorical};

pub mod markov;
pub mod remote;
pub mod scripted;
pub mod uniform;

pub use markov::{MarkovChannel, MarkovModel};
pub use remote::RemoteChannel;
pub use scripted::ScriptedChannel;
pub use uniform::UniformChannel;

/// Default add-alpha smoothing for Markov channels.
pub const DEFAULT_MARKOV_ALPHA: f64 = 0.1;

/// An autoregressive source of covertext.
pub trait Channel {
    /// Distribution of the next token given the current context.
    fn next_dist(&mut self) -> Result<Categorical>;

    /// Extends the context by one token.
    fn append(&mut self, token: u32) -> Result<()>;

    /// Human-readable form of a token sequence.
    fn render(&mut self, tokens: &[u32]) -> Result<String>;

    fn context(&self) -> &[u32];

    fn vocab_size(&self) -> usize;
}

impl<C: Channel + ?Sized> Channel for Box<C> {
    fn next_dist(&mut self) -> Result<Categorical> {
        (**self).next_dist()
    }

    fn append(&mut self, token: u32) -> Result<()> {
        (**self).append(token)
    }

    fn render(&mut self, tokens: &[u32]) -> Result<String> {
        (**self).render(tokens)
    }

    fn context(&self) -> &[u32] {
        (**self).context()
    }

    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
}

pub(crate) fn check_token(token: u32, vocab: usize) -> Result<()> {
    if (token as usize) < vocab {
        Ok(())
    } else {
        Err(Error::UnknownToken { token, vocab })
    }
}

pub(crate) fn render_ids(tokens: &[u32]) -> String {
    tokens
        .iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Post-processing applied to every next-token distribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    #[default]
    None,
    TopK(usize),
    TopP(f64),
}

impl Truncation {
    fn validate(&self) -> Result<()> {
        match *self {
            Truncation::TopK(0) => Err(Error::InvalidConfig("top-k needs k >= 1".into())),
            Truncation::TopP(p) if !(p > 0.0 && p <= 1.0) => Err(Error::InvalidConfig(format!(
                "top-p needs p in (0, 1], got {p}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Keeps the `k` most likely tokens (ties to lower ids), or the shortest
/// most-likely prefix reaching cumulative mass `p`, and renormalizes.
pub fn truncate(d: &Categorical, rule: Truncation) -> Categorical {
    let keep = match rule {
        Truncation::None => return d.clone(),
        Truncation::TopK(k) if k >= d.len() => return d.clone(),
        Truncation::TopP(p) if p >= 1.0 => return d.clone(),
        Truncation::TopK(k) => k,
        Truncation::TopP(p) => {
            let mut sorted: Vec<f64> = d.probs().to_vec();
            sorted.sort_unstable_by(|a, b| b.total_cmp(a));
            let mut acc = 0.0;
            let mut count = sorted.len();
            for (i, q) in sorted.iter().enumerate() {
                acc += q;
                if acc >= p - 1e-12 {
                    count = i + 1;
                    break;
                }
            }
            count
        }
    };
    let mut pairs: Vec<(u32, f64)> = d.iter().collect();
    pairs.sort_unstable_by(by_mass_desc);
    pairs.truncate(keep);
    let (ids, probs) = pairs.into_iter().unzip();
    Categorical::from_weights(ids, probs).expect("kept entries are positive")
}

/// Wraps a channel and truncates every distribution it returns.
pub struct Truncated<C> {
    inner: C,
    rule: Truncation,
}

impl<C: Channel> Truncated<C> {
    pub fn new(inner: C, rule: Truncation) -> Self {
        Truncated { inner, rule }
    }
}

impl<C: Channel> Channel for Truncated<C> {
    fn next_dist(&mut self) -> Result<Categorical> {
        Ok(truncate(&self.inner.next_dist()?, self.rule))
    }

    fn append(&mut self, token: u32) -> Result<()> {
        self.inner.append(token)
    }

    fn render(&mut self, tokens: &[u32]) -> Result<String> {
        self.inner.render(tokens)
    }

    fn context(&self) -> &[u32] {
        self.inner.context()
    }

    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }
}

/// Which channel to build and with what parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelKind {
    Uniform {
        k: usize,
    },
    Markov {
        order: usize,
        corpus: PathBuf,
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    Scripted {
        fixture: PathBuf,
    },
    Remote {
        endpoint: String,
    },
}

fn default_alpha() -> f64 {
    DEFAULT_MARKOV_ALPHA
}

/// A complete, public channel description. It is stored in stegotext files
/// and parsed from the command line as `uniform:K`, `markov:ORDER:PATH`,
/// `scripted:PATH` or `remote:HOST:PORT`, optionally followed by
/// `+topk=K`, `+topp=P` or (markov only) `+alpha=A`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    #[serde(flatten)]
    pub kind: ChannelKind,
    #[serde(default)]
    pub truncation: Truncation,
}

impl ChannelSpec {
    pub fn uniform(k: usize) -> Self {
        ChannelSpec {
            kind: ChannelKind::Uniform { k },
            truncation: Truncation::None,
        }
    }

    pub fn markov(order: usize, corpus: impl Into<PathBuf>) -> Self {
        ChannelSpec {
            kind: ChannelKind::Markov {
                order,
                corpus: corpus.into(),
                alpha: DEFAULT_MARKOV_ALPHA,
            },
            truncation: Truncation::None,
        }
    }

    pub fn scripted(fixture: impl Into<PathBuf>) -> Self {
        ChannelSpec {
            kind: ChannelKind::Scripted {
                fixture: fixture.into(),
            },
            truncation: Truncation::None,
        }
    }

    pub fn with_truncation(mut self, rule: Truncation) -> Self {
        self.truncation = rule;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.truncation.validate()?;
        match &self.kind {
            ChannelKind::Uniform { k: 0 } => {
                Err(Error::InvalidConfig("uniform channel needs k >= 1".into()))
            }
            ChannelKind::Markov { alpha, .. } if !(*alpha > 0.0 && alpha.is_finite()) => Err(
                Error::InvalidConfig(format!("markov smoothing must be positive, got {alpha}")),
            ),
            _ => Ok(()),
        }
    }

    /// Instantiates the channel with an empty context.
    pub fn build(&self) -> Result<Box<dyn Channel + Send>> {
        self.validate()?;
        let base: Box<dyn Channel + Send> = match &self.kind {
            ChannelKind::Uniform { k } => Box::new(UniformChannel::new(*k)?),
            ChannelKind::Markov {
                order,
                corpus,
                alpha,
            } => {
                let text = std::fs::read_to_string(corpus)?;
                let model = MarkovModel::train(&text, *order, *alpha)?;
                Box::new(MarkovChannel::new(model.into()))
            }
            ChannelKind::Scripted { fixture } => Box::new(ScriptedChannel::load(fixture)?),
            ChannelKind::Remote { endpoint } => Box::new(RemoteChannel::connect(endpoint)?),
        };
        Ok(match self.truncation {
            Truncation::None => base,
            rule => Box::new(Truncated::new(base, rule)),
        })
    }
}

impl fmt::Display for ChannelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ChannelKind::Uniform { k } => write!(f, "uniform:{k}")?,
            ChannelKind::Markov {
                order,
                corpus,
                alpha,
            } => {
                write!(f, "markov:{order}:{}", corpus.display())?;
                if *alpha != DEFAULT_MARKOV_ALPHA {
                    write!(f, "+alpha={alpha}")?;
                }
            }
            ChannelKind::Scripted { fixture } => write!(f, "scripted:{}", fixture.display())?,
            ChannelKind::Remote { endpoint } => write!(f, "remote:{endpoint}")?,
        }
        match self.truncation {
            Truncation::None => Ok(()),
            Truncation::TopK(k) => write!(f, "+topk={k}"),
            Truncation::TopP(p) => write!(f, "+topp={p}"),
        }
    }
}

impl FromStr for ChannelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidConfig(format!("channel `{s}`: {msg}"));
        let mut parts = s.split('+');
        let head = parts.next().unwrap_or_default();
        let (name, rest) = head.split_once(':').ok_or_else(|| bad("missing `:`"))?;

        let mut kind = match name {
            "uniform" => ChannelKind::Uniform {
                k: rest.parse().map_err(|_| bad("K must be an integer"))?,
            },
            "markov" => {
                let (order, path) = rest
                    .split_once(':')
                    .ok_or_else(|| bad("expected markov:ORDER:PATH"))?;
                ChannelKind::Markov {
                    order: order.parse().map_err(|_| bad("ORDER must be an integer"))?,
                    corpus: PathBuf::from(path),
                    alpha: DEFAULT_MARKOV_ALPHA,
                }
            }
            "scripted" if !rest.is_empty() => ChannelKind::Scripted {
                fixture: PathBuf::from(rest),
            },
            "remote" if rest.contains(':') => ChannelKind::Remote {
                endpoint: rest.to_string(),
            },
            _ => return Err(bad("unknown channel kind")),
        };

        let mut truncation = Truncation::None;
        for opt in parts {
            let (key, value) = opt.split_once('=').ok_or_else(|| bad("option needs `=`"))?;
            match (key, &mut kind) {
                ("topk", _) => {
                    truncation =
                        Truncation::TopK(value.parse().map_err(|_| bad("topk must be an integer"))?)
                }
                ("topp", _) => {
                    truncation =
                        Truncation::TopP(value.parse().map_err(|_| bad("topp must be a number"))?)
                }
                ("alpha", ChannelKind::Markov { alpha, .. }) => {
                    *alpha = value.parse().map_err(|_| bad("alpha must be a number"))?
                }
                _ => return Err(bad("unknown option")),
            }
        }

        let spec = ChannelSpec { kind, truncation };
        spec.validate()?;
        Ok(spec)
    }
}
