//! Synthetic decipherment corpora: ROT13 encryption, sequence noise, and
//! assembly of direction-labelled datasets whose clean side is the cause.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    tokenize, Direction, ParallelCorpus, TokenId, TokenizerMode, Vocabulary, MASK_ID, PAD_ID,
};
use crate::error::{Error, Result};

/// Shifts ASCII letters by 13 places, preserving case.
pub fn rot13(text: &str) -> String {
    text.chars()
        .map(|c| match c {
            'a'..='z' => (((c as u8 - b'a') + 13) % 26 + b'a') as char,
            'A'..='Z' => (((c as u8 - b'A') + 13) % 26 + b'A') as char,
            _ => c,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Probability used by every enabled operator.
    pub p: f64,
    pub word_mask: bool,
    pub permute: bool,
    pub roll: bool,
    pub insert: bool,
    pub mask_symbol: TokenId,
    pub rng_seed: u64,
}

impl NoiseSpec {
    /// All four operators at probability `p`.
    pub fn new(p: f64, rng_seed: u64) -> Self {
        Self {
            p,
            word_mask: true,
            permute: true,
            roll: true,
            insert: true,
            mask_symbol: MASK_ID,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!(
                "noise probability {} outside [0, 1]",
                self.p
            )));
        }
        if self.mask_symbol != MASK_ID && self.mask_symbol != PAD_ID {
            return Err(Error::Config("mask symbol must be a reserved id".into()));
        }
        Ok(())
    }

    /// Independent stream for item `index`, identical in serial and
    /// parallel generation.
    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(index);
        rng
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::new(0.05, 0)
    }
}

/// What the noise operators need to know about the token inventory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseAlphabet {
    /// Candidates for insertion (the mask symbol is added on top).
    pub symbols: Vec<TokenId>,
    /// Token separating words in CHAR mode; `None` means every token is a
    /// word.
    pub word_separator: Option<TokenId>,
}

impl NoiseAlphabet {
    pub fn from_vocab(vocab: &Vocabulary, mode: TokenizerMode) -> Self {
        Self {
            symbols: vocab.regular_ids().collect(),
            word_separator: match mode {
                TokenizerMode::Char => vocab.id(" "),
                TokenizerMode::Word => None,
            },
        }
    }
}

/// Applies, in order, word masking, span permutation, rolling and
/// insertion.
///
/// - word masking: each word (a maximal run of non-separator tokens, or a
///   single token without a separator) becomes one mask token with
///   probability `p`;
/// - permutation: with probability `p`, a span of `ceil(p·L)` tokens at a
///   uniform start is shuffled;
/// - rolling: with probability `p`, the sequence is rotated left by a
///   uniform offset in `[1, L-1]`;
/// - insertion: at each of the `L-1` inner gaps, with probability `p`, one
///   symbol drawn uniformly from the alphabet plus the mask is inserted.
///
/// Permutation and rolling are skipped when `L = 1`.
pub fn apply_noise<R: Rng + ?Sized>(
    seq: &[TokenId],
    spec: &NoiseSpec,
    alphabet: &NoiseAlphabet,
    rng: &mut R,
) -> Result<Vec<TokenId>> {
    spec.validate()?;
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let p = spec.p;
    let mut out: Vec<TokenId> = seq.to_vec();

    if spec.word_mask {
        out = mask_words(&out, p, spec.mask_symbol, alphabet.word_separator, rng);
    }

    if spec.permute && out.len() > 1 && rng.gen_bool(p) {
        let len = out.len();
        let span = ((p * len as f64).ceil() as usize).clamp(1, len);
        let start = rng.gen_range(0..=len - span);
        out[start..start + span].shuffle(rng);
    }

    if spec.roll && out.len() > 1 && rng.gen_bool(p) {
        let offset = rng.gen_range(1..out.len());
        out.rotate_left(offset);
    }

    if spec.insert && out.len() > 1 {
        let mut inserted = Vec::with_capacity(out.len() + out.len() / 8 + 1);
        let pool = alphabet.symbols.len() + 1;
        for (i, &tok) in out.iter().enumerate() {
            inserted.push(tok);
            if i + 1 < out.len() && rng.gen_bool(p) {
                let k = rng.gen_range(0..pool);
                inserted.push(if k < alphabet.symbols.len() {
                    alphabet.symbols[k]
                } else {
                    spec.mask_symbol
                });
            }
        }
        out = inserted;
    }
    Ok(out)
}

fn mask_words<R: Rng + ?Sized>(
    seq: &[TokenId],
    p: f64,
    mask: TokenId,
    separator: Option<TokenId>,
    rng: &mut R,
) -> Vec<TokenId> {
    let Some(sep) = separator else {
        return seq
            .iter()
            .map(|&t| if rng.gen_bool(p) { mask } else { t })
            .collect();
    };
    let mut out = Vec::with_capacity(seq.len());
    let mut i = 0;
    while i < seq.len() {
        if seq[i] == sep {
            out.push(sep);
            i += 1;
            continue;
        }
        let end = seq[i..]
            .iter()
            .position(|&t| t == sep)
            .map_or(seq.len(), |off| i + off);
        if rng.gen_bool(p) {
            out.push(mask);
        } else {
            out.extend_from_slice(&seq[i..end]);
        }
        i = end;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisedSide {
    /// Noise the original text; the pair is (ciphertext, noised text).
    SourceText,
    /// Noise the ciphertext; the pair is (text, noised ciphertext).
    Ciphertext,
}

impl NoisedSide {
    /// Dataset family name, cause first.
    pub fn family_name(self) -> &'static str {
        match self {
            NoisedSide::Ciphertext => "En→Cipher",
            NoisedSide::SourceText => "Cipher→En",
        }
    }
}

impl std::str::FromStr for NoisedSide {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ciphertext" | "cipher" => Ok(NoisedSide::Ciphertext),
            "source_text" | "source-text" | "source" | "text" => Ok(NoisedSide::SourceText),
            other => Err(Error::Config(format!("unknown noised side {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CipherDatasetSpec {
    pub lines: Vec<String>,
    pub noised_side: NoisedSide,
    pub noise: NoiseSpec,
    pub mode: TokenizerMode,
}

/// Builds (cause, noised effect) pairs: with `Ciphertext` each pair is
/// `(e, noise(rot13(e)))`, with `SourceText` it is `(rot13(e), noise(e))`.
/// Every pair is labelled `x_to_y`. Line `i` draws its noise from stream
/// `i` of the spec seed.
pub fn generate_cipher_dataset(spec: &CipherDatasetSpec) -> Result<ParallelCorpus> {
    spec.noise.validate()?;
    let lines: Vec<&str> = spec
        .lines
        .iter()
        .map(|l| l.trim_end_matches(['\r', '\n']))
        .filter(|l| !l.trim().is_empty())
        .collect();
    if lines.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mode = spec.mode;
    let clean: Vec<(Vec<String>, Vec<String>)> = lines
        .iter()
        .map(|&e| {
            let c = rot13(e);
            let (cause, effect) = match spec.noised_side {
                NoisedSide::Ciphertext => (e.to_owned(), c),
                NoisedSide::SourceText => (c, e.to_owned()),
            };
            Ok((tokenize(&cause, mode)?, tokenize(&effect, mode)?))
        })
        .collect::<Result<_>>()?;

    let effect_vocab = Vocabulary::build(clean.iter().flat_map(|p| p.1.iter()));
    let alphabet = NoiseAlphabet::from_vocab(&effect_vocab, mode);
    let pairs = clean
        .into_par_iter()
        .enumerate()
        .map(|(i, (cause, effect))| {
            let ids = effect_vocab.encode(&effect)?;
            let mut rng = spec.noise.stream(i as u64);
            let noised = apply_noise(&ids.tokens, &spec.noise, &alphabet, &mut rng)?;
            let symbols = effect_vocab
                .decode(&noised)?
                .into_iter()
                .map(str::to_owned)
                .collect();
            Ok((cause, symbols, Direction::XToY))
        })
        .collect::<Result<Vec<_>>>()?;
    ParallelCorpus::from_symbol_pairs(spec.noised_side.family_name(), pairs, mode, mode)
}

const DETERMINERS: &[&str] = &[
    "the", "a", "this", "that", "every", "one", "some", "no", "her", "his", "our", "my", "their",
    "its",
];
const ADJECTIVES: &[&str] = &[
    "old", "young", "small", "quiet", "bright", "green", "cold", "heavy", "strange", "happy",
    "dark", "long", "little", "early", "late", "red", "wooden", "empty", "clever", "tired",
    "gentle", "busy", "broken", "golden", "narrow", "wild", "simple", "distant", "warm", "hidden",
    "proud", "sudden", "careful", "bitter", "soft", "famous", "lonely", "rich", "poor", "silver",
];
const NOUNS: &[&str] = &[
    "man",
    "woman",
    "child",
    "farmer",
    "teacher",
    "doctor",
    "river",
    "house",
    "garden",
    "city",
    "village",
    "road",
    "king",
    "queen",
    "soldier",
    "letter",
    "window",
    "door",
    "table",
    "dog",
    "horse",
    "bird",
    "tree",
    "mountain",
    "ship",
    "market",
    "friend",
    "brother",
    "sister",
    "mother",
    "father",
    "student",
    "book",
    "song",
    "storm",
    "forest",
    "bridge",
    "council",
    "minister",
    "stranger",
    "painter",
    "baker",
    "night",
    "morning",
    "winter",
    "summer",
    "question",
    "answer",
    "story",
    "government",
    "country",
    "family",
    "voice",
    "hand",
    "lamp",
    "boat",
    "field",
    "wall",
    "church",
    "school",
    "judge",
    "captain",
    "merchant",
    "coat",
    "basket",
    "island",
    "valley",
];
const VERBS: &[&str] = &[
    "saw",
    "found",
    "carried",
    "opened",
    "watched",
    "followed",
    "built",
    "painted",
    "left",
    "visited",
    "remembered",
    "described",
    "answered",
    "crossed",
    "closed",
    "heard",
    "wanted",
    "helped",
    "called",
    "sold",
    "bought",
    "wrote",
    "read",
    "loved",
    "feared",
    "praised",
    "met",
    "kept",
    "lost",
    "broke",
    "showed",
    "brought",
    "took",
    "gave",
    "held",
    "asked",
    "told",
    "reached",
    "pulled",
    "pushed",
    "cleaned",
    "moved",
    "thanked",
    "warned",
    "questioned",
];
const INTRANSITIVE: &[&str] = &[
    "slept",
    "waited",
    "laughed",
    "arrived",
    "smiled",
    "disappeared",
    "returned",
    "spoke",
    "walked",
    "fell",
    "stayed",
    "agreed",
    "worked",
    "sang",
    "listened",
    "travelled",
    "won",
];
const PREPOSITIONS: &[&str] = &[
    "in", "near", "behind", "under", "across", "beside", "with", "from", "toward", "after",
    "before", "inside", "above", "along", "around",
];
const ADVERBS: &[&str] = &[
    "slowly",
    "quickly",
    "again",
    "today",
    "yesterday",
    "suddenly",
    "quietly",
    "often",
    "never",
    "carefully",
    "finally",
    "soon",
    "always",
    "together",
];
const NAMES: &[&str] = &[
    "anna", "peter", "maria", "john", "elena", "thomas", "sofia", "david", "clara", "james",
    "lucia", "martin", "rosa", "paul",
];
const CONJUNCTIONS: &[&str] = &["and", "but", "because", "while", "when", "although", "so"];

/// Draws from `items` with Zipf-like weights `1/(rank+1)`.
fn zipf<'a, R: Rng + ?Sized>(items: &[&'a str], rng: &mut R) -> &'a str {
    let total: f64 = (1..=items.len()).map(|r| 1.0 / r as f64).sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, item) in items.iter().enumerate() {
        u -= 1.0 / (i + 1) as f64;
        if u <= 0.0 {
            return item;
        }
    }
    items[items.len() - 1]
}

fn noun_phrase<R: Rng + ?Sized>(rng: &mut R, out: &mut Vec<&'static str>) {
    if rng.gen_bool(0.15) {
        out.push(zipf(NAMES, rng));
        return;
    }
    out.push(zipf(DETERMINERS, rng));
    if rng.gen_bool(0.45) {
        out.push(zipf(ADJECTIVES, rng));
    }
    out.push(zipf(NOUNS, rng));
    if rng.gen_bool(0.2) {
        out.push(zipf(PREPOSITIONS, rng));
        out.push(zipf(DETERMINERS, rng));
        out.push(zipf(NOUNS, rng));
    }
}

fn clause<R: Rng + ?Sized>(rng: &mut R, out: &mut Vec<&'static str>) {
    noun_phrase(rng, out);
    if rng.gen_bool(0.7) {
        out.push(zipf(VERBS, rng));
        noun_phrase(rng, out);
    } else {
        out.push(zipf(INTRANSITIVE, rng));
    }
    if rng.gen_bool(0.3) {
        out.push(zipf(ADVERBS, rng));
    }
}

/// Deterministic English-like lines from a small stochastic grammar, for
/// runs that have no monolingual corpus at hand.
pub fn synthetic_lines(n: usize, seed: u64) -> Vec<String> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut words: Vec<&'static str> = Vec::with_capacity(24);
            clause(&mut rng, &mut words);
            if rng.gen_bool(0.35) {
                words.push(zipf(CONJUNCTIONS, &mut rng));
                clause(&mut rng, &mut words);
            }
            let mut line = words.join(" ");
            line.push_str(" .");
            line
        })
        .collect()
}
