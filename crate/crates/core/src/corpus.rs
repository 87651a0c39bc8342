//! Direction-annotated parallel corpora: tokenization, vocabularies, JSONL
//! ingestion, seeded splits and online-code block schedules.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD_SYMBOL: &str = "<pad>";
pub const MASK_SYMBOL: &str = "<mask>";
pub const PAD_ID: TokenId = 0;
pub const MASK_ID: TokenId = 1;

/// Percentages of the online-code blocks, smallest first.
pub const DEFAULT_BLOCK_FRACTIONS: [f64; 10] =
    [0.1, 0.2, 0.4, 0.8, 1.6, 3.2, 6.25, 12.5, 25.0, 50.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    #[default]
    Char,
    Word,
}

impl std::str::FromStr for TokenizerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "char" => Ok(TokenizerMode::Char),
            "word" => Ok(TokenizerMode::Word),
            other => Err(Error::Config(format!("unknown tokenizer mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    XToY,
    YToX,
    #[default]
    Unknown,
}

impl Direction {
    pub fn reversed(self) -> Self {
        match self {
            Direction::XToY => Direction::YToX,
            Direction::YToX => Direction::XToY,
            Direction::Unknown => Direction::Unknown,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::XToY => "x_to_y",
            Direction::YToX => "y_to_x",
            Direction::Unknown => "unknown",
        }
    }
}

/// A token-id sequence, optionally carrying the text it came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSeq {
    pub tokens: Vec<TokenId>,
    pub raw: Option<String>,
}

impl TokenSeq {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        Self { tokens, raw: None }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn as_slice(&self) -> &[TokenId] {
        &self.tokens
    }
}

impl From<Vec<TokenId>> for TokenSeq {
    fn from(tokens: Vec<TokenId>) -> Self {
        Self::new(tokens)
    }
}

/// Splits text into symbols. CHAR mode emits one symbol per Unicode scalar
/// (spaces included), except that the reserved `<pad>`/`<mask>` spellings
/// are kept whole so that noised text survives a write/read cycle.
pub fn tokenize(text: &str, mode: TokenizerMode) -> Result<Vec<String>> {
    if text.is_empty() {
        return Err(Error::EmptyText);
    }
    let symbols: Vec<String> = match mode {
        TokenizerMode::Word => text.split_whitespace().map(str::to_owned).collect(),
        TokenizerMode::Char => {
            let mut out = Vec::with_capacity(text.len());
            let mut rest = text;
            while let Some(c) = rest.chars().next() {
                if c == '<' {
                    if let Some(reserved) = [MASK_SYMBOL, PAD_SYMBOL]
                        .into_iter()
                        .find(|r| rest.starts_with(r))
                    {
                        out.push(reserved.to_owned());
                        rest = &rest[reserved.len()..];
                        continue;
                    }
                }
                out.push(c.to_string());
                rest = &rest[c.len_utf8()..];
            }
            out
        }
    };
    if symbols.is_empty() {
        return Err(Error::EmptyText);
    }
    Ok(symbols)
}

/// Inverse of [`tokenize`] up to whitespace normalization in WORD mode.
pub fn detokenize<S: AsRef<str>>(symbols: &[S], mode: TokenizerMode) -> String {
    match mode {
        TokenizerMode::Char => symbols.iter().map(AsRef::as_ref).collect(),
        TokenizerMode::Word => symbols
            .iter()
            .map(AsRef::as_ref)
            .collect::<Vec<_>>()
            .join(" "),
    }
}

/// Bijective symbol/id table. Ids 0 and 1 are always `<pad>` and `<mask>`;
/// the remaining symbols are sorted so that ids do not depend on data order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    symbols: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn build<I, S>(symbols: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut unique = BTreeSet::new();
        for s in symbols {
            let s = s.as_ref();
            if s != PAD_SYMBOL && s != MASK_SYMBOL {
                unique.insert(s.to_owned());
            }
        }
        let mut all = vec![PAD_SYMBOL.to_owned(), MASK_SYMBOL.to_owned()];
        all.extend(unique);
        Self::from_symbols(all)
    }

    fn from_symbols(symbols: Vec<String>) -> Self {
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as TokenId))
            .collect();
        Self { symbols, index }
    }

    /// Restores the lookup index after deserialization.
    pub fn reindexed(self) -> Self {
        Self::from_symbols(self.symbols)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Option<TokenId> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: TokenId) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Ids of every regular (non-reserved) symbol.
    pub fn regular_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (2..self.symbols.len()).map(|i| i as TokenId)
    }

    pub fn encode<S: AsRef<str>>(&self, symbols: &[S]) -> Result<TokenSeq> {
        let tokens = symbols
            .iter()
            .map(|s| {
                self.id(s.as_ref())
                    .ok_or_else(|| Error::UnknownSymbol(s.as_ref().to_owned()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TokenSeq::new(tokens))
    }

    pub fn decode(&self, seq: &[TokenId]) -> Result<Vec<&str>> {
        seq.iter()
            .map(|&t| {
                self.symbol(t).ok_or(Error::OutOfVocabulary {
                    token: t,
                    size: self.len(),
                })
            })
            .collect()
    }

    pub fn check(&self, seq: &[TokenId]) -> Result<()> {
        check_tokens(seq, self.len())
    }
}

pub(crate) fn check_tokens(seq: &[TokenId], size: usize) -> Result<()> {
    match seq.iter().find(|&&t| t as usize >= size) {
        Some(&token) => Err(Error::OutOfVocabulary { token, size }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    pub src: TokenSeq,
    pub tgt: TokenSeq,
    pub direction: Direction,
}

#[derive(Debug, Clone)]
pub struct ParallelCorpus {
    pub name: String,
    pub pairs: Vec<Pair>,
    pub direction: Direction,
    pub src_vocab: Arc<Vocabulary>,
    pub tgt_vocab: Arc<Vocabulary>,
    pub src_mode: TokenizerMode,
    pub tgt_mode: TokenizerMode,
}

impl ParallelCorpus {
    /// Builds a corpus from text pairs, constructing both vocabularies over
    /// the full data.
    pub fn from_text_pairs<S: AsRef<str>>(
        name: impl Into<String>,
        texts: &[(S, S, Direction)],
        src_mode: TokenizerMode,
        tgt_mode: TokenizerMode,
    ) -> Result<Self> {
        let symbol_pairs = texts
            .iter()
            .map(|(s, t, d)| {
                Ok((
                    tokenize(s.as_ref(), src_mode)?,
                    tokenize(t.as_ref(), tgt_mode)?,
                    *d,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_symbol_pairs(name, symbol_pairs, src_mode, tgt_mode)
    }

    pub fn from_symbol_pairs(
        name: impl Into<String>,
        pairs: Vec<(Vec<String>, Vec<String>, Direction)>,
        src_mode: TokenizerMode,
        tgt_mode: TokenizerMode,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let src_vocab = Vocabulary::build(pairs.iter().flat_map(|p| p.0.iter()));
        let tgt_vocab = Vocabulary::build(pairs.iter().flat_map(|p| p.1.iter()));
        let encoded = pairs
            .iter()
            .map(|(s, t, d)| {
                if s.is_empty() || t.is_empty() {
                    return Err(Error::EmptySequence);
                }
                Ok(Pair {
                    src: src_vocab.encode(s)?,
                    tgt: tgt_vocab.encode(t)?,
                    direction: *d,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let direction = common_direction(&encoded);
        Ok(Self {
            name: name.into(),
            pairs: encoded,
            direction,
            src_vocab: Arc::new(src_vocab),
            tgt_vocab: Arc::new(tgt_vocab),
            src_mode,
            tgt_mode,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> Vec<&TokenSeq> {
        self.pairs.iter().map(|p| &p.src).collect()
    }

    pub fn targets(&self) -> Vec<&TokenSeq> {
        self.pairs.iter().map(|p| &p.tgt).collect()
    }

    /// Mirror image: sides exchanged, every label reversed.
    pub fn swapped(&self) -> Self {
        Self {
            name: self.name.clone(),
            pairs: self
                .pairs
                .iter()
                .map(|p| Pair {
                    src: p.tgt.clone(),
                    tgt: p.src.clone(),
                    direction: p.direction.reversed(),
                })
                .collect(),
            direction: self.direction.reversed(),
            src_vocab: Arc::clone(&self.tgt_vocab),
            tgt_vocab: Arc::clone(&self.src_vocab),
            src_mode: self.tgt_mode,
            tgt_mode: self.src_mode,
        }
    }

    /// Sub-corpus over the given indices, sharing this corpus' vocabularies.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let pairs: Vec<Pair> = indices.iter().map(|&i| self.pairs[i].clone()).collect();
        let direction = if pairs.is_empty() {
            self.direction
        } else {
            common_direction(&pairs)
        };
        Self {
            name: self.name.clone(),
            pairs,
            direction,
            src_vocab: Arc::clone(&self.src_vocab),
            tgt_vocab: Arc::clone(&self.tgt_vocab),
            src_mode: self.src_mode,
            tgt_mode: self.tgt_mode,
        }
    }

    pub fn src_text(&self, seq: &TokenSeq) -> Result<String> {
        Ok(detokenize(
            &self.src_vocab.decode(&seq.tokens)?,
            self.src_mode,
        ))
    }

    pub fn tgt_text(&self, seq: &TokenSeq) -> Result<String> {
        Ok(detokenize(
            &self.tgt_vocab.decode(&seq.tokens)?,
            self.tgt_mode,
        ))
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for pair in &self.pairs {
            let record = RecordOut {
                src: self.src_text(&pair.src)?,
                tgt: self.tgt_text(&pair.tgt)?,
                direction: pair.direction,
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_jsonl(&mut out)?;
        out.flush().map_err(|e| Error::io(path, e))
    }
}

fn common_direction(pairs: &[Pair]) -> Direction {
    let first = pairs.first().map(|p| p.direction).unwrap_or_default();
    if pairs.iter().all(|p| p.direction == first) {
        first
    } else {
        Direction::Unknown
    }
}

#[derive(Serialize)]
struct RecordOut {
    src: String,
    tgt: String,
    direction: Direction,
}

#[derive(Deserialize)]
struct RecordIn {
    src: Option<String>,
    tgt: Option<String>,
    direction: Option<Direction>,
}

/// Reads a JSONL corpus. Blank lines are skipped; line numbers in errors
/// are 1-based physical lines.
pub fn load_parallel_jsonl(
    path: impl AsRef<Path>,
    src_mode: TokenizerMode,
    tgt_mode: TokenizerMode,
) -> Result<ParallelCorpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_parallel_jsonl(BufReader::new(file), name, src_mode, tgt_mode)
}

pub fn read_parallel_jsonl<R: BufRead>(
    reader: R,
    name: impl Into<String>,
    src_mode: TokenizerMode,
    tgt_mode: TokenizerMode,
) -> Result<ParallelCorpus> {
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(format!("<line {line_no}>"), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RecordIn = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let field = |value: Option<String>, field: &str| -> Result<String> {
            match value {
                None => Err(Error::Record {
                    line: line_no,
                    message: format!("missing field {field:?}"),
                }),
                Some(s) if s.is_empty() => Err(Error::Record {
                    line: line_no,
                    message: format!("empty field {field:?}"),
                }),
                Some(s) => Ok(s),
            }
        };
        let src = field(record.src, "src")?;
        let tgt = field(record.tgt, "tgt")?;
        let symbols = |text: &str, mode, field: &str| {
            tokenize(text, mode).map_err(|e| Error::Record {
                line: line_no,
                message: format!("{field}: {e}"),
            })
        };
        pairs.push((
            symbols(&src, src_mode, "src")?,
            symbols(&tgt, tgt_mode, "tgt")?,
            record.direction.unwrap_or_default(),
        ));
    }
    ParallelCorpus::from_symbol_pairs(name, pairs, src_mode, tgt_mode)
}

/// Cumulative 1-based end indices of the online-code blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSchedule {
    ends: Vec<usize>,
    fractions: Vec<f64>,
}

impl BlockSchedule {
    /// Schedule from explicit cumulative ends; the fractions are recovered
    /// as percentages of the last end.
    pub fn from_ends(ends: Vec<usize>) -> Result<Self> {
        if ends.len() < 2 {
            return Err(Error::Config(format!(
                "a block schedule needs at least 2 blocks, got {}",
                ends.len()
            )));
        }
        if ends[0] == 0 || ends.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "block ends must be positive and strictly increasing: {ends:?}"
            )));
        }
        let n = ends[ends.len() - 1] as f64;
        let mut prev = 0;
        let fractions = ends
            .iter()
            .map(|&e| {
                let f = 100.0 * (e - prev) as f64 / n;
                prev = e;
                f
            })
            .collect();
        Ok(Self { ends, fractions })
    }

    pub fn ends(&self) -> &[usize] {
        &self.ends
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    pub fn num_blocks(&self) -> usize {
        self.ends.len()
    }

    /// Total number of items covered, `t_K`.
    pub fn total(&self) -> usize {
        *self.ends.last().expect("schedule has at least two blocks")
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        let mut prev = 0;
        self.ends
            .iter()
            .map(|&e| {
                let s = e - prev;
                prev = e;
                s
            })
            .collect()
    }

    /// Half-open 0-based index range of block `j` (0-based).
    pub fn block_range(&self, j: usize) -> std::ops::Range<usize> {
        let start = if j == 0 { 0 } else { self.ends[j - 1] };
        start..self.ends[j]
    }
}

/// Builds the online-code schedule for `n` items. Block sizes are
/// `max(1, round(f·n/100))` rounded half away from zero; cumulative ends are
/// clamped so that every later block keeps at least one item and the last
/// end is exactly `n`.
pub fn make_block_schedule(n: usize, fractions: &[f64]) -> Result<BlockSchedule> {
    let k = fractions.len();
    if k < 2 {
        return Err(Error::Config(format!(
            "a block schedule needs at least 2 blocks, got {k}"
        )));
    }
    if let Some(f) = fractions.iter().find(|f| !(f.is_finite() && **f > 0.0)) {
        return Err(Error::Config(format!(
            "block fractions must be positive, got {f}"
        )));
    }
    if n < k {
        return Err(Error::Schedule(format!(
            "{n} items cannot fill {k} blocks of at least one item"
        )));
    }
    let mut ends = Vec::with_capacity(k);
    let mut cum = 0usize;
    for (j, f) in fractions.iter().enumerate() {
        let size = ((f * n as f64 / 100.0).round() as usize).max(1);
        let remaining_blocks = k - 1 - j;
        cum = (cum + size).min(n - remaining_blocks);
        ends.push(cum);
    }
    ends[k - 1] = n;
    Ok(BlockSchedule {
        ends,
        fractions: fractions.to_vec(),
    })
}

#[derive(Debug, Clone)]
pub struct CorpusSplit {
    pub train: ParallelCorpus,
    pub valid: ParallelCorpus,
    pub test: ParallelCorpus,
    pub train_indices: Vec<usize>,
    pub valid_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
}

/// Uniformly random disjoint test/valid selection; the rest is training
/// data. Each part keeps the corpus order.
pub fn split(
    corpus: &ParallelCorpus,
    test_n: usize,
    valid_n: usize,
    seed: u64,
) -> Result<CorpusSplit> {
    let n = corpus.len();
    if test_n + valid_n >= n {
        return Err(Error::Split(format!(
            "test ({test_n}) + valid ({valid_n}) must be smaller than the corpus ({n})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test_indices = order[..test_n].to_vec();
    let mut valid_indices = order[test_n..test_n + valid_n].to_vec();
    let mut train_indices = order[test_n + valid_n..].to_vec();
    test_indices.sort_unstable();
    valid_indices.sort_unstable();
    train_indices.sort_unstable();
    Ok(CorpusSplit {
        train: corpus.subset(&train_indices),
        valid: corpus.subset(&valid_indices),
        test: corpus.subset(&test_indices),
        train_indices,
        valid_indices,
        test_indices,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn syms(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn char_tokenization_keeps_spaces() {
        assert_eq!(
            tokenize("ab c", TokenizerMode::Char).unwrap(),
            syms(&["a", "b", " ", "c"])
        );
    }

    #[test]
    fn word_tokenization_splits_on_whitespace_runs() {
        assert_eq!(
            tokenize("ab c", TokenizerMode::Word).unwrap(),
            syms(&["ab", "c"])
        );
        assert_eq!(
            tokenize("  x  ", TokenizerMode::Word).unwrap(),
            syms(&["x"])
        );
    }

    #[test]
    fn empty_text_is_rejected() {
        assert!(matches!(
            tokenize("", TokenizerMode::Char),
            Err(Error::EmptyText)
        ));
        assert!(matches!(
            tokenize("   ", TokenizerMode::Word),
            Err(Error::EmptyText)
        ));
    }

    #[test]
    fn reserved_symbols_stay_whole_in_char_mode() {
        let toks = tokenize("a<mask> b", TokenizerMode::Char).unwrap();
        assert_eq!(toks, syms(&["a", MASK_SYMBOL, " ", "b"]));
        assert_eq!(detokenize(&toks, TokenizerMode::Char), "a<mask> b");
    }

    #[test]
    fn vocabulary_reserves_pad_and_mask() {
        let v = Vocabulary::build(["b", "a", "b"]);
        assert_eq!(v.len(), 4);
        assert_eq!(v.id(PAD_SYMBOL), Some(PAD_ID));
        assert_eq!(v.id(MASK_SYMBOL), Some(MASK_ID));
        assert_eq!(v.id("a"), Some(2));
        assert_eq!(v.id("b"), Some(3));
        assert!(v.encode(&["c"]).is_err());
    }

    #[test]
    fn schedule_for_ten_thousand() {
        let s = make_block_schedule(10_000, &DEFAULT_BLOCK_FRACTIONS).unwrap();
        assert_eq!(
            s.ends(),
            &[10, 30, 70, 150, 310, 630, 1255, 2505, 5005, 10_000]
        );
    }

    #[test]
    fn schedule_for_one_thousand() {
        let s = make_block_schedule(1000, &DEFAULT_BLOCK_FRACTIONS).unwrap();
        assert_eq!(s.ends(), &[1, 3, 7, 15, 31, 63, 126, 251, 501, 1000]);
    }

    #[test]
    fn schedule_too_small() {
        assert!(matches!(
            make_block_schedule(5, &DEFAULT_BLOCK_FRACTIONS),
            Err(Error::Schedule(_))
        ));
        assert!(matches!(
            make_block_schedule(100, &[1.0, -2.0]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            make_block_schedule(100, &[100.0]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn schedule_for_ten_keeps_every_block_nonempty() {
        let s = make_block_schedule(10, &DEFAULT_BLOCK_FRACTIONS).unwrap();
        assert_eq!(s.ends(), &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]);
    }

    fn check_schedule(s: &BlockSchedule, n: usize) {
        assert!(s.ends()[0] >= 1);
        assert!(s.ends().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s.total(), n);
        assert!(s.block_sizes().iter().all(|&b| b >= 1));
        assert_eq!(s.block_sizes().iter().sum::<usize>(), n);
    }

    proptest! {
        #[test]
        fn schedule_invariants(n in 10usize..200_000) {
            let s = make_block_schedule(n, &DEFAULT_BLOCK_FRACTIONS).unwrap();
            check_schedule(&s, n);
        }

        #[test]
        fn schedule_invariants_random_fractions(
            fr in proptest::collection::vec(0.01f64..80.0, 2..12),
            extra in 0usize..5000,
        ) {
            let n = fr.len() + extra;
            let s = make_block_schedule(n, &fr).unwrap();
            check_schedule(&s, n);
        }

        #[test]
        fn vocabulary_round_trip(words in proptest::collection::vec("[a-z]{1,6}", 1..40)) {
            let v = Vocabulary::build(&words);
            for w in &words {
                let id = v.id(w).unwrap();
                prop_assert_eq!(v.symbol(id), Some(w.as_str()));
            }
        }
    }

    fn corpus_of(n: usize) -> ParallelCorpus {
        let texts: Vec<(String, String, Direction)> = (0..n)
            .map(|i| (format!("s{i}"), format!("t{}", i * 7), Direction::XToY))
            .collect();
        ParallelCorpus::from_text_pairs("c", &texts, TokenizerMode::Word, TokenizerMode::Word)
            .unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let c = corpus_of(100);
        let a = split(&c, 10, 10, 3).unwrap();
        assert_eq!(a.train.len(), 80);
        assert_eq!(a.test.len(), 10);
        let b = split(&c, 10, 10, 3).unwrap();
        assert_eq!(a.test_indices, b.test_indices);
        assert_eq!(a.valid_indices, b.valid_indices);
        let other = split(&c, 10, 10, 4).unwrap();
        assert_ne!(a.test_indices, other.test_indices);
        let mut all: Vec<usize> = a
            .train_indices
            .iter()
            .chain(&a.valid_indices)
            .chain(&a.test_indices)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn split_identity_and_errors() {
        let c = corpus_of(20);
        let s = split(&c, 0, 0, 1).unwrap();
        assert_eq!(s.train.pairs, c.pairs);
        assert!(matches!(split(&c, 10, 10, 1), Err(Error::Split(_))));
    }

    #[test]
    fn jsonl_two_lines() {
        let data = "{\"src\":\"ab\",\"tgt\":\"no\",\"direction\":\"x_to_y\"}\n{\"src\":\"c\",\"tgt\":\"p\",\"direction\":\"x_to_y\"}\n";
        let c = read_parallel_jsonl(
            data.as_bytes(),
            "d",
            TokenizerMode::Char,
            TokenizerMode::Char,
        )
        .unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.direction, Direction::XToY);
    }

    #[test]
    fn jsonl_conflicting_directions() {
        let data = "{\"src\":\"ab\",\"tgt\":\"no\",\"direction\":\"x_to_y\"}\n{\"src\":\"c\",\"tgt\":\"p\",\"direction\":\"y_to_x\"}\n{\"src\":\"c\",\"tgt\":\"p\"}\n";
        let c = read_parallel_jsonl(
            data.as_bytes(),
            "d",
            TokenizerMode::Char,
            TokenizerMode::Char,
        )
        .unwrap();
        assert_eq!(c.direction, Direction::Unknown);
        let labels: Vec<_> = c.pairs.iter().map(|p| p.direction).collect();
        assert_eq!(
            labels,
            vec![Direction::XToY, Direction::YToX, Direction::Unknown]
        );
    }

    #[test]
    fn jsonl_errors_name_the_line() {
        let missing =
            "{\"src\":\"a\",\"tgt\":\"b\"}\n{\"src\":\"a\",\"tgt\":\"b\"}\n{\"src\":\"a\"}\n";
        let err = read_parallel_jsonl(
            missing.as_bytes(),
            "d",
            TokenizerMode::Char,
            TokenizerMode::Char,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Record { line: 3, .. }), "{err}");

        let malformed = "{\"src\":\"a\",\"tgt\":\"b\"}\n{not json\n";
        let err = read_parallel_jsonl(
            malformed.as_bytes(),
            "d",
            TokenizerMode::Char,
            TokenizerMode::Char,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));

        let empty_field = "{\"src\":\"\",\"tgt\":\"b\"}\n";
        let err = read_parallel_jsonl(
            empty_field.as_bytes(),
            "d",
            TokenizerMode::Char,
            TokenizerMode::Char,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Record { line: 1, .. }));

        let err = read_parallel_jsonl("".as_bytes(), "d", TokenizerMode::Char, TokenizerMode::Char)
            .unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus));
    }

    #[test]
    fn jsonl_round_trip() {
        let texts = vec![
            ("hello world", "uryyb <mask> jbeyq", Direction::XToY),
            ("a b", "n o", Direction::YToX),
        ];
        let c =
            ParallelCorpus::from_text_pairs("x", &texts, TokenizerMode::Char, TokenizerMode::Char)
                .unwrap();
        let mut buf = Vec::new();
        c.write_jsonl(&mut buf).unwrap();
        let back = read_parallel_jsonl(
            buf.as_slice(),
            "x",
            TokenizerMode::Char,
            TokenizerMode::Char,
        )
        .unwrap();
        assert_eq!(back.pairs, c.pairs);
        assert_eq!(back.src_vocab, c.src_vocab);
        assert_eq!(back.tgt_vocab, c.tgt_vocab);
    }

    #[test]
    fn swapping_mirrors_labels() {
        let c = corpus_of(3);
        let s = c.swapped();
        assert_eq!(s.direction, Direction::YToX);
        assert_eq!(s.pairs[0].src, c.pairs[0].tgt);
        assert_eq!(s.swapped().pairs, c.pairs);
    }
}
