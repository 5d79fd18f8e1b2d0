use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Learnable context tokens prepended to every complexity-level prompt.
pub const CONTEXT_LEN: usize = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum PromptLevels {
    Three,
    #[default]
    Five,
    Seven,
}

impl PromptLevels {
    pub fn count(self) -> usize {
        match self {
            PromptLevels::Three => 3,
            PromptLevels::Five => 5,
            PromptLevels::Seven => 7,
        }
    }

    /// Level names ordered from least to most complex.
    pub fn prompts(self) -> &'static [&'static str] {
        match self {
            PromptLevels::Three => &["Simple Complexity", "Moderate Complexity", "High Complexity"],
            PromptLevels::Five => &[
                "Simple Complexity",
                "Little Complexity",
                "Moderate Complexity",
                "Very Complexity",
                "High Complexity",
            ],
            PromptLevels::Seven => &[
                "Very Low Complexity",
                "Fairly Low Complexity",
                "Slightly Low Complexity",
                "Moderate Level Complexity",
                "Slightly High Complexity",
                "Fairly High Complexity",
                "Very High Complexity",
            ],
        }
    }

    pub fn from_count(n: usize) -> Result<Self> {
        match n {
            3 => Ok(PromptLevels::Three),
            5 => Ok(PromptLevels::Five),
            7 => Ok(PromptLevels::Seven),
            _ => Err(Error::Invalid(format!("prompt levels must be 3, 5 or 7, got {n}"))),
        }
    }
}

impl fmt::Display for PromptLevels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.count())
    }
}

impl FromStr for PromptLevels {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let n: usize = s
            .trim()
            .parse()
            .map_err(|_| Error::Invalid(format!("bad prompt level count {s:?}")))?;
        PromptLevels::from_count(n)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptBank {
    /// `CONTEXT_LEN × token_dim`
    pub context: Tensor,
    pub level_prompts: Vec<String>,
}

impl PromptBank {
    pub fn init(levels: PromptLevels, token_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ba4c);
        let a = 1.0 / (token_dim as f64).sqrt();
        let data = (0..CONTEXT_LEN * token_dim)
            .map(|_| rng.gen_range(-a..a))
            .collect();
        PromptBank {
            context: Tensor::from_vec(CONTEXT_LEN, token_dim, data).expect("context shape"),
            level_prompts: levels.prompts().iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn from_parts(context: Tensor, level_prompts: Vec<String>) -> Result<Self> {
        if context.rows() != CONTEXT_LEN {
            return Err(Error::shape("prompt context", CONTEXT_LEN, context.rows()));
        }
        PromptLevels::from_count(level_prompts.len())?;
        Ok(PromptBank {
            context,
            level_prompts,
        })
    }

    pub fn levels(&self) -> PromptLevels {
        PromptLevels::from_count(self.level_prompts.len()).expect("validated at construction")
    }

    pub fn token_dim(&self) -> usize {
        self.context.cols()
    }
}
