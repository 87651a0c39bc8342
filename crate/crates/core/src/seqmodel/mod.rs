//! Count-based sequence models: an interpolated Witten-Bell n-gram language
//! model and a source-aligned channel model, plus data-ignoring uniform
//! models. Factories train them from data prefixes for the online code.

mod backoff;
mod channel;

use serde::{Deserialize, Serialize};

use crate::corpus::{check_tokens, TokenId, TokenSeq, TokenizerMode, Vocabulary, PAD_ID};
use crate::error::{Error, Result};
use backoff::{BackoffTable, ContextKeys, SerialContext};

pub use channel::{
    train_channel, Alignment, ChannelConfig, ChannelFactory, ChannelModel, UniformChannel,
    UniformChannelFactory, WittenBellChannelFactory,
};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    #[default]
    WittenBell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LmConfig {
    pub order: usize,
    pub smoothing: Smoothing,
}

impl LmConfig {
    pub fn new(order: usize) -> Self {
        Self {
            order,
            smoothing: Smoothing::WittenBell,
        }
    }

    /// Order 5 for characters, 3 for words.
    pub fn for_mode(mode: TokenizerMode) -> Self {
        match mode {
            TokenizerMode::Char => Self::new(5),
            TokenizerMode::Word => Self::new(3),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::Config("n-gram order must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for LmConfig {
    fn default() -> Self {
        Self::for_mode(TokenizerMode::Char)
    }
}

/// A next-token distribution over a fixed vocabulary.
pub trait SequenceModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// `p(token | history)`, where `history` holds the preceding tokens of
    /// the same sequence.
    fn prob(&self, history: &[TokenId], token: TokenId) -> f64;

    fn distribution(&self, history: &[TokenId]) -> Vec<f64> {
        (0..self.vocab_size() as TokenId)
            .map(|t| self.prob(history, t))
            .collect()
    }

    /// Codelength of `seq` in bits. Empty sequences are rejected.
    fn codelength(&self, seq: &[TokenId]) -> Result<f64> {
        if seq.is_empty() {
            return Err(Error::EmptySequence);
        }
        check_tokens(seq, self.vocab_size())?;
        Ok((0..seq.len())
            .map(|t| -self.prob(&seq[..t], seq[t]).log2())
            .sum())
    }
}

/// A distribution over target sequences given a source sequence, with the
/// target length supplied out of band.
pub trait ConditionalSequenceModel: Send + Sync {
    fn src_vocab_size(&self) -> usize;

    fn tgt_vocab_size(&self) -> usize;

    /// Distribution of the next target token after `tgt_prefix`.
    fn next_distribution(&self, src: &[TokenId], tgt_prefix: &[TokenId]) -> Vec<f64>;

    fn codelength(&self, src: &[TokenId], tgt: &[TokenId]) -> Result<f64>;
}

/// Data-ignoring model assigning `1/V` to every token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformLm {
    pub vocab_size: usize,
}

impl SequenceModel for UniformLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn prob(&self, _history: &[TokenId], _token: TokenId) -> f64 {
        1.0 / self.vocab_size as f64
    }

    fn codelength(&self, seq: &[TokenId]) -> Result<f64> {
        if seq.is_empty() {
            return Err(Error::EmptySequence);
        }
        check_tokens(seq, self.vocab_size)?;
        Ok(seq.len() as f64 * (self.vocab_size as f64).log2())
    }
}

/// Interpolated Witten-Bell n-gram model. Histories are left-padded with
/// `<pad>`, which never occurs as a real token.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramLm {
    config: LmConfig,
    table: BackoffTable,
}

impl NgramLm {
    pub fn train<'a, I>(sequences: I, vocab_size: usize, config: LmConfig) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [TokenId]>,
    {
        config.validate()?;
        if vocab_size < 2 {
            return Err(Error::Config("vocabulary needs at least 2 symbols".into()));
        }
        let mut table = BackoffTable::new(vocab_size, config.order);
        let mut keys = ContextKeys::default();
        let mut seen = false;
        for seq in sequences {
            if seq.is_empty() {
                return Err(Error::EmptySequence);
            }
            check_tokens(seq, vocab_size)?;
            seen = true;
            for t in 0..seq.len() {
                fill_history_keys(&mut keys, &seq[..t], config.order);
                table.observe(&keys, seq[t], 1.0);
            }
        }
        if !seen {
            return Err(Error::EmptyTrainingSet);
        }
        Ok(Self { config, table })
    }

    pub fn config(&self) -> &LmConfig {
        &self.config
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&LmFile {
            format: "ngram-lm".into(),
            version: FORMAT_VERSION,
            config: self.config,
            vocab_size: self.table.vocab_size(),
            levels: self.table.to_serial(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: LmFile = serde_json::from_str(s)?;
        if file.format != "ngram-lm" || file.version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "expected ngram-lm v{FORMAT_VERSION}, found {} v{}",
                file.format, file.version
            )));
        }
        if file.levels.len() != file.config.order {
            return Err(Error::ModelFormat(
                "level count does not match order".into(),
            ));
        }
        Ok(Self {
            config: file.config,
            table: BackoffTable::from_serial(file.vocab_size, file.levels),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct LmFile {
    format: String,
    version: u32,
    config: LmConfig,
    vocab_size: usize,
    levels: Vec<Vec<SerialContext>>,
}

/// Level `i` holds the last `i` history tokens (level 0 is the unigram).
fn fill_history_keys(keys: &mut ContextKeys, history: &[TokenId], order: usize) {
    keys.clear();
    for i in 0..order {
        for back in (1..=i).rev() {
            let tok = if back <= history.len() {
                history[history.len() - back]
            } else {
                PAD_ID
            };
            keys.push_token(tok);
        }
        keys.finish_level();
    }
}

impl SequenceModel for NgramLm {
    fn vocab_size(&self) -> usize {
        self.table.vocab_size()
    }

    fn prob(&self, history: &[TokenId], token: TokenId) -> f64 {
        let mut keys = ContextKeys::default();
        fill_history_keys(&mut keys, history, self.config.order);
        self.table.prob(&keys, token)
    }

    fn distribution(&self, history: &[TokenId]) -> Vec<f64> {
        let mut keys = ContextKeys::default();
        fill_history_keys(&mut keys, history, self.config.order);
        self.table.distribution(&keys)
    }

    fn codelength(&self, seq: &[TokenId]) -> Result<f64> {
        if seq.is_empty() {
            return Err(Error::EmptySequence);
        }
        check_tokens(seq, self.vocab_size())?;
        let mut keys = ContextKeys::default();
        let mut bits = 0.0;
        for t in 0..seq.len() {
            fill_history_keys(&mut keys, &seq[..t], self.config.order);
            bits -= self.table.prob(&keys, seq[t]).log2();
        }
        Ok(bits)
    }
}

/// Trains an n-gram model over `vocab`.
pub fn train_lm(sequences: &[&TokenSeq], vocab: &Vocabulary, config: LmConfig) -> Result<NgramLm> {
    NgramLm::train(sequences.iter().map(|s| s.as_slice()), vocab.len(), config)
}

/// Builds a fresh language model from a data prefix.
pub trait LmFactory: Send + Sync {
    fn train(&self, sequences: &[&TokenSeq], vocab_size: usize) -> Result<Box<dyn SequenceModel>>;

    /// Stable description of the factory and its configuration.
    fn fingerprint(&self) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UniformLmFactory;

impl LmFactory for UniformLmFactory {
    fn train(&self, _sequences: &[&TokenSeq], vocab_size: usize) -> Result<Box<dyn SequenceModel>> {
        Ok(Box::new(UniformLm { vocab_size }))
    }

    fn fingerprint(&self) -> String {
        "uniform".into()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WittenBellLmFactory {
    pub config: LmConfig,
}

impl WittenBellLmFactory {
    pub fn new(config: LmConfig) -> Self {
        Self { config }
    }
}

impl LmFactory for WittenBellLmFactory {
    fn train(&self, sequences: &[&TokenSeq], vocab_size: usize) -> Result<Box<dyn SequenceModel>> {
        Ok(Box::new(NgramLm::train(
            sequences.iter().map(|s| s.as_slice()),
            vocab_size,
            self.config,
        )?))
    }

    fn fingerprint(&self) -> String {
        format!("wb-lm(order={})", self.config.order)
    }
}
