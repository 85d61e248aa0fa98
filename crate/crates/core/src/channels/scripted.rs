use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::Categorical;

use super::{check_token, render_ids, Channel};

/// On-disk fixture: `{"steps": [{"ids": [...], "probs": [...]}, ...]}`.
/// Step `j` is used for the `j`-th token; the last step repeats forever.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScriptFixture {
    pub steps: Vec<Categorical>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
}

/// Replays a fixed list of distributions regardless of which tokens are appended.
pub struct ScriptedChannel {
    steps: Vec<Categorical>,
    vocab: usize,
    context: Vec<u32>,
}

impl ScriptedChannel {
    pub fn new(steps: Vec<Categorical>) -> Result<Self> {
        Self::from_fixture(ScriptFixture {
            steps,
            vocab_size: None,
        })
    }

    pub fn from_fixture(fixture: ScriptFixture) -> Result<Self> {
        if fixture.steps.is_empty() {
            return Err(Error::InvalidConfig("scripted fixture has no steps".into()));
        }
        let max_id = fixture
            .steps
            .iter()
            .flat_map(|d| d.ids().last().copied())
            .max()
            .unwrap_or(0) as usize;
        let vocab = fixture.vocab_size.unwrap_or(max_id + 1).max(max_id + 1);
        Ok(ScriptedChannel {
            steps: fixture.steps,
            vocab,
            context: Vec::new(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_fixture(serde_json::from_str(&text)?)
    }
}

impl Channel for ScriptedChannel {
    fn next_dist(&mut self) -> Result<Categorical> {
        let step = self.context.len().min(self.steps.len() - 1);
        Ok(self.steps[step].clone())
    }

    fn append(&mut self, token: u32) -> Result<()> {
        check_token(token, self.vocab)?;
        self.context.push(token);
        Ok(())
    }

    fn render(&mut self, tokens: &[u32]) -> Result<String> {
        Ok(render_ids(tokens))
    }

    fn context(&self) -> &[u32] {
        &self.context
    }

    fn vocab_size(&self) -> usize {
        self.vocab
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replays_fixture_then_repeats_last() {
        let json = r#"{"steps": [
            {"ids": [0, 1], "probs": [0.5, 0.5]},
            {"ids": [2], "probs": [1.0]},
            {"ids": [0, 3], "probs": [0.25, 0.75]}
        ]}"#;
        let mut ch = ScriptedChannel::from_fixture(serde_json::from_str(json).unwrap()).unwrap();
        assert_eq!(ch.vocab_size(), 4);
        let expected = [
            Categorical::uniform(2).unwrap(),
            Categorical::point(2),
            Categorical::new(vec![0, 3], vec![0.25, 0.75]).unwrap(),
        ];
        for (j, want) in expected.iter().enumerate() {
            assert_eq!(&ch.next_dist().unwrap(), want);
            assert_eq!(&ch.next_dist().unwrap(), want);
            ch.append(j as u32).unwrap();
        }
        assert_eq!(&ch.next_dist().unwrap(), &expected[2]);
        assert!(ch.append(4).is_err());
        assert_eq!(ch.render(&[1, 2]).unwrap(), "1 2");
    }

    #[test]
    fn empty_fixture_rejected() {
        assert!(ScriptedChannel::new(vec![]).is_err());
    }
}
