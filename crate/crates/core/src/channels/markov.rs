//! Character-level order-n Markov chain with add-alpha smoothing.
//!
//! Counts are kept for every context length up to the order, so the first
//! few tokens of a transmission condition on the shorter history they have.
//! Contexts never seen in the corpus fall back to the uniform distribution
//! over the alphabet.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::prob::Categorical;

use super::{check_token, Channel};

/// A small English sample corpus shipped with the crate.
pub const SAMPLE_CORPUS: &str = include_str!("../../data/corpus.txt");

#[derive(Debug)]
pub struct MarkovModel {
    alphabet: Vec<char>,
    order: usize,
    alpha: f64,
    /// `tables[len]` maps a context of `len` tokens to next-token counts.
    tables: Vec<HashMap<Vec<u32>, Vec<u64>>>,
}

impl MarkovModel {
    pub fn train(corpus: &str, order: usize, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "smoothing must be positive, got {alpha}"
            )));
        }
        let mut alphabet: Vec<char> = corpus.chars().collect();
        alphabet.sort_unstable();
        alphabet.dedup();
        if alphabet.is_empty() {
            return Err(Error::InvalidConfig("markov corpus is empty".into()));
        }
        let tokens: Vec<u32> = corpus
            .chars()
            .map(|c| alphabet.binary_search(&c).expect("char from corpus") as u32)
            .collect();

        let vocab = alphabet.len();
        let mut tables = vec![HashMap::new(); order + 1];
        for (len, table) in tables.iter_mut().enumerate() {
            for end in len..tokens.len() {
                let counts = table
                    .entry(tokens[end - len..end].to_vec())
                    .or_insert_with(|| vec![0u64; vocab]);
                counts[tokens[end] as usize] += 1;
            }
        }
        Ok(MarkovModel {
            alphabet,
            order,
            alpha,
            tables,
        })
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Smoothed next-token distribution after `context`.
    pub fn dist(&self, context: &[u32]) -> Categorical {
        let len = context.len().min(self.order);
        let history = &context[context.len() - len..];
        let vocab = self.alphabet.len();
        let ids = (0..vocab as u32).collect();
        match self.tables[len].get(history) {
            Some(counts) => {
                let weights = counts.iter().map(|&c| c as f64 + self.alpha).collect();
                Categorical::from_weights(ids, weights).expect("smoothed weights are positive")
            }
            None => Categorical::uniform(vocab).expect("alphabet is non-empty"),
        }
    }

    /// Maps text onto token ids; characters outside the alphabet are rejected.
    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        text.chars()
            .map(|c| {
                self.alphabet
                    .binary_search(&c)
                    .map(|i| i as u32)
                    .map_err(|_| Error::InvalidConfig(format!("character {c:?} not in alphabet")))
            })
            .collect()
    }
}

pub struct MarkovChannel {
    model: Arc<MarkovModel>,
    context: Vec<u32>,
}

impl MarkovChannel {
    pub fn new(model: Arc<MarkovModel>) -> Self {
        MarkovChannel {
            model,
            context: Vec::new(),
        }
    }

    /// Starts from the tokens of `prompt` instead of an empty context.
    pub fn with_prompt(model: Arc<MarkovModel>, prompt: &str) -> Result<Self> {
        let context = model.tokenize(prompt)?;
        Ok(MarkovChannel { model, context })
    }
}

impl Channel for MarkovChannel {
    fn next_dist(&mut self) -> Result<Categorical> {
        Ok(self.model.dist(&self.context))
    }

    fn append(&mut self, token: u32) -> Result<()> {
        check_token(token, self.model.alphabet.len())?;
        self.context.push(token);
        Ok(())
    }

    fn render(&mut self, tokens: &[u32]) -> Result<String> {
        tokens
            .iter()
            .map(|&t| {
                check_token(t, self.model.alphabet.len())?;
                Ok(self.model.alphabet[t as usize])
            })
            .collect()
    }

    fn context(&self) -> &[u32] {
        &self.context
    }

    fn vocab_size(&self) -> usize {
        self.model.alphabet.len()
    }
}
