use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use super::backoff::{BackoffTable, ContextKeys, SerialContext};
use super::{ConditionalSequenceModel, Smoothing, FORMAT_VERSION};
use crate::corpus::{check_tokens, TokenId, TokenSeq, Vocabulary, MASK_ID, PAD_ID};
use crate::error::{Error, Result};

const NO_IMAGE: TokenId = TokenId::MAX;

/// Passes used to estimate the source→target token table before counting.
const TABLE_PASSES: usize = 3;

/// How the source position paired with each target step is tracked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Alignment {
    /// Target step `t` reads source position `t`.
    Positional,
    /// A monotone-by-default pointer that advances when the emitted target
    /// token is the learned image of the source token under it, and
    /// otherwise searches up to `lookahead` positions forward, then
    /// `lookback` positions backward, for a source token with that image.
    /// If nothing matches the pointer stays put. Masks stand for spans: the
    /// pointer waits on a source mask, and the search after an emitted mask
    /// is unbounded forward.
    Resync { lookahead: usize, lookback: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Previous target tokens in the context (k).
    pub target_history: usize,
    /// Half-width of the source window around the aligned position (w).
    pub source_window: usize,
    pub smoothing: Smoothing,
    pub alignment: Alignment,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            target_history: 2,
            source_window: 1,
            smoothing: Smoothing::WittenBell,
            alignment: Alignment::Resync {
                lookahead: 1,
                lookback: 1,
            },
        }
    }
}

/// One context level: an optional source window plus target history.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LevelSpec {
    src_half: Option<usize>,
    hist: usize,
}

/// Context chain from most general to most specific: unigram, then the
/// aligned source token with growing target history, then the full source
/// window. Backing off therefore drops the source window first and then
/// shortens the history.
fn context_chain(cfg: &ChannelConfig) -> Vec<LevelSpec> {
    let mut chain = vec![LevelSpec {
        src_half: None,
        hist: 0,
    }];
    for h in 0..=cfg.target_history {
        chain.push(LevelSpec {
            src_half: Some(0),
            hist: h,
        });
    }
    if cfg.source_window > 0 {
        chain.push(LevelSpec {
            src_half: Some(cfg.source_window),
            hist: cfg.target_history,
        });
    }
    chain
}

fn fill_keys(
    keys: &mut ContextKeys,
    chain: &[LevelSpec],
    src: &[TokenId],
    pos: usize,
    prefix: &[TokenId],
) {
    keys.clear();
    for spec in chain {
        if let Some(half) = spec.src_half {
            for i in pos as isize - half as isize..=(pos + half) as isize {
                let tok = if i >= 0 && (i as usize) < src.len() {
                    src[i as usize]
                } else {
                    PAD_ID
                };
                keys.push_token(tok);
            }
        }
        for back in (1..=spec.hist).rev() {
            let tok = if back <= prefix.len() {
                prefix[prefix.len() - back]
            } else {
                PAD_ID
            };
            keys.push_token(tok);
        }
        keys.finish_level();
    }
}

/// Source-position tracker shared by training, scoring and decoding.
#[derive(Debug, Clone, Copy)]
struct Pointer<'a> {
    alignment: Alignment,
    image: &'a [TokenId],
    src: &'a [TokenId],
    pos: usize,
    /// The previous emission was an unmatched mask.
    after_mask: bool,
}

impl<'a> Pointer<'a> {
    fn new(alignment: Alignment, image: &'a [TokenId], src: &'a [TokenId]) -> Self {
        Self {
            alignment,
            image,
            src,
            pos: 0,
            after_mask: false,
        }
    }

    fn image_at(&self, i: usize) -> TokenId {
        self.image
            .get(self.src[i] as usize)
            .copied()
            .unwrap_or(NO_IMAGE)
    }

    fn advance(&mut self, emitted: TokenId) {
        let Alignment::Resync {
            lookahead,
            lookback,
        } = self.alignment
        else {
            self.pos += 1;
            return;
        };
        let unbounded = std::mem::replace(&mut self.after_mask, false);
        let n = self.src.len();
        let j = self.pos;
        if j < n && self.image_at(j) == emitted {
            self.pos = j + 1;
            return;
        }
        // A source mask covers a target span of unknown length: stay on it
        // until the token after it is emitted.
        if j < n && self.src[j] == MASK_ID {
            if j + 1 < n && self.image_at(j + 1) == emitted {
                self.pos = j + 2;
            }
            return;
        }
        // An emitted mask covers a source span of unknown length: the next
        // search may run to the end of the source.
        self.after_mask = emitted == MASK_ID;
        let reach = if unbounded { n } else { lookahead };
        for d in 1..=reach {
            let i = j + d;
            if i >= n {
                break;
            }
            if self.image_at(i) == emitted {
                self.pos = i + 1;
                return;
            }
        }
        for d in 1..=lookback.min(j) {
            let i = j - d;
            if i < n && self.image_at(i) == emitted {
                self.pos = i + 1;
                return;
            }
        }
    }
}

/// Position-aligned conditional model
/// `p(tgt_t | src[a_t-w..=a_t+w], tgt[t-k..t])` with interpolated
/// Witten-Bell backoff, where `a_t` is the aligned source position.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    config: ChannelConfig,
    src_vocab_size: usize,
    image: Vec<TokenId>,
    cooc: FxHashMap<(TokenId, TokenId), f64>,
    table: BackoffTable,
}

type PairRef<'a> = (&'a [TokenId], &'a [TokenId]);

fn argmax_image(cooc: &FxHashMap<(TokenId, TokenId), f64>, src_vocab_size: usize) -> Vec<TokenId> {
    let mut best: Vec<(TokenId, f64)> = vec![(NO_IMAGE, 0.0); src_vocab_size];
    for (&(s, t), &c) in cooc {
        let slot = &mut best[s as usize];
        if c > slot.1 || (c == slot.1 && t < slot.0) {
            *slot = (t, c);
        }
    }
    best.into_iter().map(|b| b.0).collect()
}

impl ChannelModel {
    pub fn train(
        pairs: &[PairRef<'_>],
        src_vocab_size: usize,
        tgt_vocab_size: usize,
        config: ChannelConfig,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        if src_vocab_size < 2 || tgt_vocab_size < 2 {
            return Err(Error::Config("vocabularies need at least 2 symbols".into()));
        }
        for (s, t) in pairs {
            if s.is_empty() || t.is_empty() {
                return Err(Error::EmptySequence);
            }
            check_tokens(s, src_vocab_size)?;
            check_tokens(t, tgt_vocab_size)?;
        }

        // Initial table from position-wise co-occurrence, then re-estimated
        // under the pointer alignment it induces.
        let mut cooc: FxHashMap<(TokenId, TokenId), f64> = FxHashMap::default();
        for (s, t) in pairs {
            for (&a, &b) in s.iter().zip(t.iter()) {
                *cooc.entry((a, b)).or_insert(0.0) += 1.0;
            }
        }
        let mut image = argmax_image(&cooc, src_vocab_size);
        if matches!(config.alignment, Alignment::Resync { .. }) {
            for _ in 1..TABLE_PASSES {
                cooc = aligned_cooccurrence(pairs, config.alignment, &image);
                image = argmax_image(&cooc, src_vocab_size);
            }
        }

        let chain = context_chain(&config);
        let mut table = BackoffTable::new(tgt_vocab_size, chain.len());
        let mut keys = ContextKeys::default();
        for (s, t) in pairs {
            let mut ptr = Pointer::new(config.alignment, &image, s);
            for step in 0..t.len() {
                fill_keys(&mut keys, &chain, s, ptr.pos, &t[..step]);
                table.observe(&keys, t[step], 1.0);
                ptr.advance(t[step]);
            }
        }
        Ok(Self {
            config,
            src_vocab_size,
            image,
            cooc,
            table,
        })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    /// Learned source→target token table (`None` for unseen source tokens).
    pub fn image(&self, src: TokenId) -> Option<TokenId> {
        self.image
            .get(src as usize)
            .copied()
            .filter(|&t| t != NO_IMAGE)
    }

    /// Total number of observed target tokens.
    pub fn mass(&self) -> f64 {
        self.table.total_at_root()
    }

    fn chain(&self) -> Vec<LevelSpec> {
        context_chain(&self.config)
    }

    /// Greedy left-to-right decoding that emits exactly `src.len()` tokens;
    /// ties go to the lowest token id.
    pub fn decode(&self, src: &[TokenId]) -> Result<Vec<TokenId>> {
        if src.is_empty() {
            return Err(Error::EmptySequence);
        }
        check_tokens(src, self.src_vocab_size)?;
        let chain = self.chain();
        let mut keys = ContextKeys::default();
        let mut out = Vec::with_capacity(src.len());
        let mut ptr = Pointer::new(self.config.alignment, &self.image, src);
        for _ in 0..src.len() {
            fill_keys(&mut keys, &chain, src, ptr.pos, &out);
            let y = self.table.argmax(&keys);
            out.push(y);
            ptr.advance(y);
        }
        Ok(out)
    }

    /// Weighted count merge: `(1-λ)` of the `base` mass against `λ` of the
    /// `adapt` mass, rescaled to the combined size of both.
    pub fn merge(base: &ChannelModel, adapt: &ChannelModel, lambda: f64) -> Result<ChannelModel> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Config(format!(
                "merge weight {lambda} outside [0, 1]"
            )));
        }
        if base.config != adapt.config
            || base.src_vocab_size != adapt.src_vocab_size
            || base.table.vocab_size() != adapt.table.vocab_size()
        {
            return Err(Error::Config(
                "cannot merge models with different shapes".into(),
            ));
        }
        let (nb, na) = (base.table.total_at_root(), adapt.table.total_at_root());
        let total = nb + na;
        let a = (1.0 - lambda) * total / nb;
        let b = lambda * total / na;
        let mut table = base.table.clone();
        table.merge_scaled(a, &adapt.table, b);
        let mut cooc: FxHashMap<(TokenId, TokenId), f64> = FxHashMap::default();
        for (&k, &c) in &base.cooc {
            *cooc.entry(k).or_insert(0.0) += a * c;
        }
        for (&k, &c) in &adapt.cooc {
            *cooc.entry(k).or_insert(0.0) += b * c;
        }
        cooc.retain(|_, c| *c > 0.0);
        let image = argmax_image(&cooc, base.src_vocab_size);
        Ok(ChannelModel {
            config: base.config,
            src_vocab_size: base.src_vocab_size,
            image,
            cooc,
            table,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut cooc: Vec<(TokenId, TokenId, f64)> =
            self.cooc.iter().map(|(&(s, t), &c)| (s, t, c)).collect();
        cooc.sort_unstable_by_key(|x| (x.0, x.1));
        Ok(serde_json::to_string(&ChannelFile {
            format: "channel".into(),
            version: FORMAT_VERSION,
            config: self.config,
            src_vocab_size: self.src_vocab_size,
            tgt_vocab_size: self.table.vocab_size(),
            image: self.image.clone(),
            cooc,
            levels: self.table.to_serial(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ChannelFile = serde_json::from_str(s)?;
        if file.format != "channel" || file.version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "expected channel v{FORMAT_VERSION}, found {} v{}",
                file.format, file.version
            )));
        }
        if file.levels.len() != context_chain(&file.config).len() {
            return Err(Error::ModelFormat(
                "level count does not match config".into(),
            ));
        }
        if file.image.len() != file.src_vocab_size {
            return Err(Error::ModelFormat(
                "token table does not match vocabulary".into(),
            ));
        }
        Ok(Self {
            config: file.config,
            src_vocab_size: file.src_vocab_size,
            image: file.image,
            cooc: file.cooc.into_iter().map(|(s, t, c)| ((s, t), c)).collect(),
            table: BackoffTable::from_serial(file.tgt_vocab_size, file.levels),
        })
    }
}

fn aligned_cooccurrence(
    pairs: &[PairRef<'_>],
    alignment: Alignment,
    image: &[TokenId],
) -> FxHashMap<(TokenId, TokenId), f64> {
    let mut cooc = FxHashMap::default();
    for (s, t) in pairs {
        let mut ptr = Pointer::new(alignment, image, s);
        for &y in t.iter() {
            if ptr.pos < s.len() {
                *cooc.entry((s[ptr.pos], y)).or_insert(0.0) += 1.0;
            }
            ptr.advance(y);
        }
    }
    cooc
}

#[derive(Serialize, Deserialize)]
struct ChannelFile {
    format: String,
    version: u32,
    config: ChannelConfig,
    src_vocab_size: usize,
    tgt_vocab_size: usize,
    image: Vec<TokenId>,
    cooc: Vec<(TokenId, TokenId, f64)>,
    levels: Vec<Vec<SerialContext>>,
}

impl ConditionalSequenceModel for ChannelModel {
    fn src_vocab_size(&self) -> usize {
        self.src_vocab_size
    }

    fn tgt_vocab_size(&self) -> usize {
        self.table.vocab_size()
    }

    fn next_distribution(&self, src: &[TokenId], tgt_prefix: &[TokenId]) -> Vec<f64> {
        let chain = self.chain();
        let mut ptr = Pointer::new(self.config.alignment, &self.image, src);
        for &y in tgt_prefix {
            ptr.advance(y);
        }
        let mut keys = ContextKeys::default();
        fill_keys(&mut keys, &chain, src, ptr.pos, tgt_prefix);
        self.table.distribution(&keys)
    }

    fn codelength(&self, src: &[TokenId], tgt: &[TokenId]) -> Result<f64> {
        if src.is_empty() || tgt.is_empty() {
            return Err(Error::EmptySequence);
        }
        check_tokens(src, self.src_vocab_size)?;
        check_tokens(tgt, self.table.vocab_size())?;
        let chain = self.chain();
        let mut keys = ContextKeys::default();
        let mut ptr = Pointer::new(self.config.alignment, &self.image, src);
        let mut bits = 0.0;
        for step in 0..tgt.len() {
            fill_keys(&mut keys, &chain, src, ptr.pos, &tgt[..step]);
            bits -= self.table.prob(&keys, tgt[step]).log2();
            ptr.advance(tgt[step]);
        }
        Ok(bits)
    }
}

/// Trains a channel model coding `tgt` given `src` for each pair.
pub fn train_channel(
    pairs: &[(&TokenSeq, &TokenSeq)],
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    config: ChannelConfig,
) -> Result<ChannelModel> {
    let refs: Vec<PairRef<'_>> = pairs
        .iter()
        .map(|(s, t)| (s.as_slice(), t.as_slice()))
        .collect();
    ChannelModel::train(&refs, src_vocab.len(), tgt_vocab.len(), config)
}

/// Data-ignoring conditional model: `1/V_tgt` for every target token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformChannel {
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
}

impl ConditionalSequenceModel for UniformChannel {
    fn src_vocab_size(&self) -> usize {
        self.src_vocab_size
    }

    fn tgt_vocab_size(&self) -> usize {
        self.tgt_vocab_size
    }

    fn next_distribution(&self, _src: &[TokenId], _tgt_prefix: &[TokenId]) -> Vec<f64> {
        vec![1.0 / self.tgt_vocab_size as f64; self.tgt_vocab_size]
    }

    fn codelength(&self, src: &[TokenId], tgt: &[TokenId]) -> Result<f64> {
        if src.is_empty() || tgt.is_empty() {
            return Err(Error::EmptySequence);
        }
        check_tokens(src, self.src_vocab_size)?;
        check_tokens(tgt, self.tgt_vocab_size)?;
        Ok(tgt.len() as f64 * (self.tgt_vocab_size as f64).log2())
    }
}

/// Builds a fresh conditional model from a prefix of (source, target) pairs.
pub trait ChannelFactory: Send + Sync {
    fn train(
        &self,
        pairs: &[(&TokenSeq, &TokenSeq)],
        src_vocab_size: usize,
        tgt_vocab_size: usize,
    ) -> Result<Box<dyn ConditionalSequenceModel>>;

    fn fingerprint(&self) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UniformChannelFactory;

impl ChannelFactory for UniformChannelFactory {
    fn train(
        &self,
        _pairs: &[(&TokenSeq, &TokenSeq)],
        src_vocab_size: usize,
        tgt_vocab_size: usize,
    ) -> Result<Box<dyn ConditionalSequenceModel>> {
        Ok(Box::new(UniformChannel {
            src_vocab_size,
            tgt_vocab_size,
        }))
    }

    fn fingerprint(&self) -> String {
        "uniform".into()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WittenBellChannelFactory {
    pub config: ChannelConfig,
}

impl WittenBellChannelFactory {
    pub fn new(config: ChannelConfig) -> Self {
        Self { config }
    }
}

impl ChannelFactory for WittenBellChannelFactory {
    fn train(
        &self,
        pairs: &[(&TokenSeq, &TokenSeq)],
        src_vocab_size: usize,
        tgt_vocab_size: usize,
    ) -> Result<Box<dyn ConditionalSequenceModel>> {
        let refs: Vec<PairRef<'_>> = pairs
            .iter()
            .map(|(s, t)| (s.as_slice(), t.as_slice()))
            .collect();
        Ok(Box::new(ChannelModel::train(
            &refs,
            src_vocab_size,
            tgt_vocab_size,
            self.config,
        )?))
    }

    fn fingerprint(&self) -> String {
        let align = match self.config.alignment {
            Alignment::Positional => "positional".to_string(),
            Alignment::Resync {
                lookahead,
                lookback,
            } => format!("resync+{lookahead}-{lookback}"),
        };
        format!(
            "wb-channel(k={},w={},{align})",
            self.config.target_history, self.config.source_window
        )
    }
}
