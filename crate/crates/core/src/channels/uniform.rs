use crate::error::Result;
use crate::prob::Categorical;

use super::{check_token, render_ids, Channel};

/// Independent uniform noise over `k` symbols, identical at every step.
pub struct UniformChannel {
    dist: Categorical,
    context: Vec<u32>,
}

impl UniformChannel {
    pub fn new(k: usize) -> Result<Self> {
        Ok(UniformChannel {
            dist: Categorical::uniform(k)?,
            context: Vec::new(),
        })
    }
}

impl Channel for UniformChannel {
    fn next_dist(&mut self) -> Result<Categorical> {
        Ok(self.dist.clone())
    }

    fn append(&mut self, token: u32) -> Result<()> {
        check_token(token, self.dist.len())?;
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
        self.dist.len()
    }
}
