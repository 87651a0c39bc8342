//! Self-training and domain-adaptation harnesses run on the cipher corpora
//! in both the causal (clean → noised) and anticausal (noised → clean)
//! prediction directions.

use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cipherlab::{
    generate_cipher_dataset, synthetic_lines, CipherDatasetSpec, NoiseSpec, NoisedSide,
};
use crate::corpus::{Direction, ParallelCorpus, TokenId, TokenSeq, TokenizerMode};
use crate::error::{Error, Result};
use crate::evalstats::{
    char_accuracy, corpus_bleu, sign_aggregate, words, SignCounts, SummaryStats,
};
use crate::seqmodel::{ChannelConfig, ChannelModel, ConditionalSequenceModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskDirection {
    /// Predict the noised effect from the clean cause.
    Causal,
    /// Predict the clean cause from the noised effect.
    Anticausal,
}

impl TaskDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskDirection::Causal => "causal",
            TaskDirection::Anticausal => "anticausal",
        }
    }
}

impl FromStr for TaskDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "causal" => Ok(TaskDirection::Causal),
            "anticausal" => Ok(TaskDirection::Anticausal),
            other => Err(Error::Config(format!("unknown task direction {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Corpus BLEU over whitespace words.
    Bleu,
    /// Mean per-sentence character accuracy, in percent.
    CharAccuracy,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bleu" => Ok(Metric::Bleu),
            "char_accuracy" | "char-accuracy" | "chracc" => Ok(Metric::CharAccuracy),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

/// Where the monolingual lines of each cell come from.
#[derive(Debug, Clone, PartialEq)]
pub enum LineSource {
    /// Fresh lines from the built-in grammar for every seed.
    Synthetic,
    /// A fixed pool, resampled per seed.
    Pool(Vec<String>),
}

impl LineSource {
    fn draw(&self, n: usize, seed: u64) -> Result<Vec<String>> {
        match self {
            LineSource::Synthetic => Ok(synthetic_lines(n, seed)),
            LineSource::Pool(lines) => {
                let usable: Vec<&String> = lines.iter().filter(|l| !l.trim().is_empty()).collect();
                if usable.len() < n {
                    return Err(Error::Split(format!(
                        "need {n} non-empty lines, the pool has {}",
                        usable.len()
                    )));
                }
                let mut order: Vec<usize> = (0..usable.len()).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                Ok(order[..n].iter().map(|&i| usable[i].clone()).collect())
            }
        }
    }
}

/// Stable 64-bit seed derived from a base seed and a path of labels.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Orients a direction-labelled corpus so that the input side is the cause
/// (`Causal`) or the effect (`Anticausal`).
pub fn orient(corpus: &ParallelCorpus, direction: TaskDirection) -> Result<ParallelCorpus> {
    let cause_first = match corpus.direction {
        Direction::XToY => true,
        Direction::YToX => false,
        Direction::Unknown => {
            return Err(Error::Config(format!(
                "corpus {:?} has no single direction label",
                corpus.name
            )))
        }
    };
    Ok(if cause_first == (direction == TaskDirection::Causal) {
        corpus.clone()
    } else {
        corpus.swapped()
    })
}

/// Order-independent hash of the (cause, effect) pairs of a corpus.
pub fn pair_set_hash(corpus: &ParallelCorpus) -> String {
    let mut rows: Vec<(&[TokenId], &[TokenId])> = corpus
        .pairs
        .iter()
        .map(|p| match p.direction {
            Direction::YToX => (p.tgt.as_slice(), p.src.as_slice()),
            _ => (p.src.as_slice(), p.tgt.as_slice()),
        })
        .collect();
    rows.sort_unstable();
    let mut h = Sha256::new();
    for (c, e) in rows {
        for side in [c, e] {
            h.update((side.len() as u64).to_le_bytes());
            for t in side {
                h.update(t.to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

fn train_on(
    corpus: &ParallelCorpus,
    extra: &[(TokenSeq, TokenSeq)],
    config: ChannelConfig,
) -> Result<ChannelModel> {
    let refs: Vec<(&[TokenId], &[TokenId])> = corpus
        .pairs
        .iter()
        .map(|p| (p.src.as_slice(), p.tgt.as_slice()))
        .chain(extra.iter().map(|(s, t)| (s.as_slice(), t.as_slice())))
        .collect();
    ChannelModel::train(
        &refs,
        corpus.src_vocab.len(),
        corpus.tgt_vocab.len(),
        config,
    )
}

/// Decodes every test input and scores the outputs against the references.
pub fn evaluate(model: &ChannelModel, test: &ParallelCorpus, metric: Metric) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let hyps = test
        .pairs
        .par_iter()
        .map(|p| model.decode(p.src.as_slice()))
        .collect::<Result<Vec<Vec<TokenId>>>>()?;
    match metric {
        Metric::Bleu => {
            let sep = match test.tgt_mode {
                TokenizerMode::Char => test.tgt_vocab.id(" "),
                TokenizerMode::Word => None,
            };
            let h: Vec<Vec<Vec<TokenId>>> = hyps.iter().map(|s| words(s, sep)).collect();
            let r: Vec<Vec<Vec<TokenId>>> = test
                .pairs
                .iter()
                .map(|p| words(p.tgt.as_slice(), sep))
                .collect();
            corpus_bleu(&h, &r, 4)
        }
        Metric::CharAccuracy => {
            let total: f64 = hyps
                .iter()
                .zip(&test.pairs)
                .map(|(h, p)| char_accuracy(h, p.tgt.as_slice()))
                .fold(0.0, |a, b| a + b);
            Ok(100.0 * total / test.len() as f64)
        }
    }
}

/// Trains on the labelled pairs and scores the test set.
pub fn train_supervised(
    labeled: &ParallelCorpus,
    test: &ParallelCorpus,
    config: ChannelConfig,
    metric: Metric,
) -> Result<(ChannelModel, f64)> {
    let model = train_on(labeled, &[], config)?;
    let score = evaluate(&model, test, metric)?;
    Ok((model, score))
}

#[derive(Debug, Clone)]
pub struct SslDataset {
    pub labeled: ParallelCorpus,
    /// Inputs (the model's source side) without outputs.
    pub unlabeled_inputs: Vec<TokenSeq>,
    pub test: ParallelCorpus,
    pub task_direction: TaskDirection,
}

impl SslDataset {
    /// Draws disjoint test, labelled and unlabelled parts from a
    /// direction-labelled corpus and orients them for `direction`.
    pub fn from_corpus(
        corpus: &ParallelCorpus,
        direction: TaskDirection,
        k: usize,
        m: usize,
        test_n: usize,
        seed: u64,
    ) -> Result<Self> {
        if k == 0 || test_n == 0 {
            return Err(Error::Config(
                "labelled and test sets must be non-empty".into(),
            ));
        }
        let need = k + m + test_n;
        if corpus.len() < need {
            return Err(Error::Split(format!(
                "need {need} pairs (k={k}, m={m}, test={test_n}), corpus has {}",
                corpus.len()
            )));
        }
        let oriented = orient(corpus, direction)?;
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut test_idx = order[..test_n].to_vec();
        let mut lab_idx = order[test_n..test_n + k].to_vec();
        let mut unl_idx = order[test_n + k..need].to_vec();
        test_idx.sort_unstable();
        lab_idx.sort_unstable();
        unl_idx.sort_unstable();
        Ok(Self {
            labeled: oriented.subset(&lab_idx),
            unlabeled_inputs: unl_idx
                .iter()
                .map(|&i| oriented.pairs[i].src.clone())
                .collect(),
            test: oriented.subset(&test_idx),
            task_direction: direction,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SslConfig {
    pub k: usize,
    pub m: usize,
    pub test: usize,
    pub iterations: usize,
    pub noise_p: f64,
    pub mode: TokenizerMode,
    pub channel: ChannelConfig,
    pub metric: Metric,
    /// Drop pseudo-labelled pairs whose per-token codelength exceeds this.
    pub max_pseudo_bits_per_token: Option<f64>,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            k: 500,
            m: 20_000,
            test: 1000,
            iterations: 3,
            noise_p: 0.05,
            mode: TokenizerMode::Char,
            channel: ChannelConfig::default(),
            metric: Metric::Bleu,
            max_pseudo_bits_per_token: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SslOutcome {
    pub supervised_metric: f64,
    pub ssl_metric: f64,
    pub delta_ssl: f64,
}

fn pseudo_label(
    model: &ChannelModel,
    inputs: &[TokenSeq],
    max_bits_per_token: Option<f64>,
) -> Result<Vec<(TokenSeq, TokenSeq)>> {
    let labelled = inputs
        .par_iter()
        .map(|x| {
            let y = model.decode(x.as_slice())?;
            if let Some(limit) = max_bits_per_token {
                let bits = model.codelength(x.as_slice(), &y)?;
                if bits / y.len() as f64 > limit {
                    return Ok(None);
                }
            }
            Ok(Some((x.clone(), TokenSeq::new(y))))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(labelled.into_iter().flatten().collect())
}

/// Self-training: `iterations` rounds of pseudo-labelling the unlabelled
/// inputs with the current model and retraining on labelled plus
/// pseudo-labelled pairs. The baseline is the supervised model on the same
/// labelled set.
pub fn self_train(ds: &SslDataset, config: &SslConfig) -> Result<SslOutcome> {
    if config.iterations == 0 {
        return Err(Error::Config(
            "self-training needs at least one iteration".into(),
        ));
    }
    let (mut model, supervised) =
        train_supervised(&ds.labeled, &ds.test, config.channel, config.metric)?;
    for _ in 0..config.iterations {
        let pseudo = pseudo_label(
            &model,
            &ds.unlabeled_inputs,
            config.max_pseudo_bits_per_token,
        )?;
        model = train_on(&ds.labeled, &pseudo, config.channel)?;
    }
    let augmented = evaluate(&model, &ds.test, config.metric)?;
    Ok(SslOutcome {
        supervised_metric: supervised,
        ssl_metric: augmented,
        delta_ssl: augmented - supervised,
    })
}

/// One row of an SSL or DA grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub family: String,
    pub direction: TaskDirection,
    pub seed: u64,
    /// Labelled pairs (SSL) or target-domain adaptation pairs (DA).
    pub k: usize,
    /// Unlabelled inputs (SSL) or source-domain training pairs (DA).
    pub m: usize,
    /// Supervised (SSL) or unadapted (DA) score.
    pub supervised: f64,
    /// Self-trained (SSL) or adapted (DA) score.
    pub augmented: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub result: CellResult,
    pub cell_seed: u64,
    pub pair_set_hash: String,
    pub config_fingerprint: String,
    /// Weight picked on the dev slice, when count merging.
    pub lambda: Option<f64>,
}

pub fn fingerprint<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

fn family_tag(family: NoisedSide) -> &'static str {
    match family {
        NoisedSide::Ciphertext => "ciphertext",
        NoisedSide::SourceText => "source_text",
    }
}

/// Per-(family, seed) cell data shared by both task directions.
pub fn cell_corpus(
    family: NoisedSide,
    lines: &LineSource,
    n: usize,
    noise_p: f64,
    mode: TokenizerMode,
    global_seed: u64,
    seed: u64,
) -> Result<(ParallelCorpus, u64)> {
    let seed_str = seed.to_string();
    let line_seed = derive_seed(global_seed, &["lines", &seed_str]);
    let cell_seed = derive_seed(global_seed, &["cell", family_tag(family), &seed_str]);
    let text = lines.draw(n, line_seed)?;
    let corpus = generate_cipher_dataset(&CipherDatasetSpec {
        lines: text,
        noised_side: family,
        noise: NoiseSpec::new(noise_p, cell_seed),
        mode,
    })?;
    Ok((corpus, cell_seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct CellKey {
    family: usize,
    direction: TaskDirection,
    seed_index: usize,
}

fn grid_keys(
    families: &[NoisedSide],
    directions: &[TaskDirection],
    seeds: &[u64],
) -> Result<Vec<CellKey>> {
    if families.is_empty() || directions.is_empty() || seeds.is_empty() {
        return Err(Error::Config(
            "grid needs at least one family, direction and seed".into(),
        ));
    }
    let mut keys = Vec::new();
    for f in 0..families.len() {
        for &direction in directions {
            for s in 0..seeds.len() {
                keys.push(CellKey {
                    family: f,
                    direction,
                    seed_index: s,
                });
            }
        }
    }
    Ok(keys)
}

/// Runs one SSL cell.
pub fn run_ssl_cell(
    family: NoisedSide,
    direction: TaskDirection,
    seed: u64,
    lines: &LineSource,
    config: &SslConfig,
    global_seed: u64,
) -> Result<CellRecord> {
    let n = config.k + config.m + config.test;
    let (corpus, cell_seed) = cell_corpus(
        family,
        lines,
        n,
        config.noise_p,
        config.mode,
        global_seed,
        seed,
    )?;
    let ds = SslDataset::from_corpus(
        &corpus,
        direction,
        config.k,
        config.m,
        config.test,
        cell_seed,
    )?;
    let outcome = self_train(&ds, config)?;
    Ok(CellRecord {
        result: CellResult {
            family: family.family_name().to_owned(),
            direction,
            seed,
            k: config.k,
            m: config.m,
            supervised: outcome.supervised_metric,
            augmented: outcome.ssl_metric,
            delta: outcome.delta_ssl,
        },
        cell_seed,
        pair_set_hash: pair_set_hash(&corpus),
        config_fingerprint: fingerprint(config)?,
        lambda: None,
    })
}

/// Every (family, direction, seed) SSL cell, in canonical order.
pub fn run_ssl_grid(
    families: &[NoisedSide],
    directions: &[TaskDirection],
    seeds: &[u64],
    lines: &LineSource,
    config: &SslConfig,
    global_seed: u64,
) -> Result<Vec<CellRecord>> {
    let keys = grid_keys(families, directions, seeds)?;
    keys.par_iter()
        .map(|key| {
            run_ssl_cell(
                families[key.family],
                key.direction,
                seeds[key.seed_index],
                lines,
                config,
                global_seed,
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Adaptation {
    /// Interpolate source and target counts with weight `λ` on the target,
    /// picked on a dev slice of the adaptation set.
    CountMerge,
    /// Retrain on source plus target pairs.
    ContinueTrain,
}

impl FromStr for Adaptation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "count_merge" | "merge" => Ok(Adaptation::CountMerge),
            "continue_train" | "continue" => Ok(Adaptation::ContinueTrain),
            other => Err(Error::Config(format!("unknown adaptation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DaSpec {
    pub source_train: ParallelCorpus,
    pub target_adapt: ParallelCorpus,
    pub target_test: ParallelCorpus,
    pub adaptation: Adaptation,
    pub task_direction: TaskDirection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaConfig {
    pub n_source: usize,
    pub n_adapt: usize,
    pub n_test: usize,
    pub source_p: f64,
    pub target_p: f64,
    pub mode: TokenizerMode,
    pub channel: ChannelConfig,
    pub metric: Metric,
    pub adaptation: Adaptation,
    pub lambda_grid: Vec<f64>,
    /// Share of the adaptation set held out to pick `λ`.
    pub dev_fraction: f64,
}

impl Default for DaConfig {
    fn default() -> Self {
        Self {
            n_source: 5000,
            n_adapt: 500,
            n_test: 1000,
            source_p: 0.05,
            target_p: 0.15,
            mode: TokenizerMode::Char,
            channel: ChannelConfig::default(),
            metric: Metric::Bleu,
            adaptation: Adaptation::CountMerge,
            lambda_grid: (1..=9).map(|i| i as f64 / 10.0).collect(),
            dev_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DaOutcome {
    pub unadapted_metric: f64,
    pub adapted_metric: f64,
    pub delta_da: f64,
    pub lambda: Option<f64>,
}

fn check_shared_vocab(a: &ParallelCorpus, b: &ParallelCorpus) -> Result<()> {
    if a.src_vocab != b.src_vocab || a.tgt_vocab != b.tgt_vocab {
        return Err(Error::Config("domains must share vocabularies".into()));
    }
    Ok(())
}

/// Scores a source-trained model on the target test set before and after
/// adapting it with the target adaptation pairs.
pub fn adapt(spec: &DaSpec, config: &DaConfig) -> Result<DaOutcome> {
    check_shared_vocab(&spec.source_train, &spec.target_test)?;
    check_shared_vocab(&spec.source_train, &spec.target_adapt)?;
    let base = train_on(&spec.source_train, &[], config.channel)?;
    let unadapted = evaluate(&base, &spec.target_test, config.metric)?;
    if spec.target_adapt.is_empty() {
        return Ok(DaOutcome {
            unadapted_metric: unadapted,
            adapted_metric: unadapted,
            delta_da: 0.0,
            lambda: None,
        });
    }
    let (adapted, lambda) = match spec.adaptation {
        Adaptation::ContinueTrain => {
            let extra: Vec<(TokenSeq, TokenSeq)> = spec
                .target_adapt
                .pairs
                .iter()
                .map(|p| (p.src.clone(), p.tgt.clone()))
                .collect();
            let model = train_on(&spec.source_train, &extra, config.channel)?;
            (evaluate(&model, &spec.target_test, config.metric)?, None)
        }
        Adaptation::CountMerge => {
            let lambda = select_lambda(&base, &spec.target_adapt, config)?;
            let target = train_on(&spec.target_adapt, &[], config.channel)?;
            let merged = ChannelModel::merge(&base, &target, lambda)?;
            (
                evaluate(&merged, &spec.target_test, config.metric)?,
                Some(lambda),
            )
        }
    };
    Ok(DaOutcome {
        unadapted_metric: unadapted,
        adapted_metric: adapted,
        delta_da: adapted - unadapted,
        lambda,
    })
}

fn select_lambda(
    base: &ChannelModel,
    adapt_set: &ParallelCorpus,
    config: &DaConfig,
) -> Result<f64> {
    if config.lambda_grid.is_empty() {
        return Err(Error::Config("empty λ grid".into()));
    }
    if config.lambda_grid.len() == 1 {
        return Ok(config.lambda_grid[0]);
    }
    let n = adapt_set.len();
    let dev_n = ((config.dev_fraction * n as f64).round() as usize).clamp(1, n);
    let (fit, dev) = if dev_n < n {
        let idx: Vec<usize> = (0..n).collect();
        (
            adapt_set.subset(&idx[..n - dev_n]),
            adapt_set.subset(&idx[n - dev_n..]),
        )
    } else {
        (adapt_set.clone(), adapt_set.clone())
    };
    let target = train_on(&fit, &[], config.channel)?;
    let scores = config
        .lambda_grid
        .par_iter()
        .map(|&l| {
            let merged = ChannelModel::merge(base, &target, l)?;
            evaluate(&merged, &dev, config.metric)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(config.lambda_grid[best])
}

type SymbolPair = (Vec<String>, Vec<String>, Direction);

/// Generates a source and a target domain from disjoint line sets that
/// differ in their noise specification. Both corpora share vocabularies.
pub fn make_domain_shift(
    lines: &[String],
    n_source: usize,
    family: NoisedSide,
    source_noise: NoiseSpec,
    target_noise: NoiseSpec,
    mode: TokenizerMode,
    seed: u64,
) -> Result<(ParallelCorpus, ParallelCorpus)> {
    if source_noise == target_noise {
        return Err(Error::Config(
            "source and target noise are identical: no shift".into(),
        ));
    }
    if n_source == 0 || n_source >= lines.len() {
        return Err(Error::Split(format!(
            "cannot take {n_source} source lines from {} and leave a target domain",
            lines.len()
        )));
    }
    let mut order: Vec<usize> = (0..lines.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut src_idx = order[..n_source].to_vec();
    let mut tgt_idx = order[n_source..].to_vec();
    src_idx.sort_unstable();
    tgt_idx.sort_unstable();
    let pick = |idx: &[usize]| idx.iter().map(|&i| lines[i].clone()).collect::<Vec<_>>();
    let generate = |idx: &[usize], noise: NoiseSpec| {
        generate_cipher_dataset(&CipherDatasetSpec {
            lines: pick(idx),
            noised_side: family,
            noise,
            mode,
        })
    };
    let source = generate(&src_idx, source_noise)?;
    let target = generate(&tgt_idx, target_noise)?;

    let symbols = |c: &ParallelCorpus| -> Result<Vec<SymbolPair>> {
        c.pairs
            .iter()
            .map(|p| {
                let s = c.src_vocab.decode(p.src.as_slice())?;
                let t = c.tgt_vocab.decode(p.tgt.as_slice())?;
                Ok((
                    s.into_iter().map(str::to_owned).collect(),
                    t.into_iter().map(str::to_owned).collect(),
                    p.direction,
                ))
            })
            .collect()
    };
    let mut all = symbols(&source)?;
    all.extend(symbols(&target)?);
    let joint = ParallelCorpus::from_symbol_pairs(family.family_name(), all, mode, mode)?;
    let ns = source.len();
    let src_part: Vec<usize> = (0..ns).collect();
    let tgt_part: Vec<usize> = (ns..joint.len()).collect();
    Ok((joint.subset(&src_part), joint.subset(&tgt_part)))
}

/// Runs one DA cell: shifted domains for (family, seed), oriented for
/// `direction`.
pub fn run_da_cell(
    family: NoisedSide,
    direction: TaskDirection,
    seed: u64,
    lines: &LineSource,
    config: &DaConfig,
    global_seed: u64,
) -> Result<CellRecord> {
    let seed_str = seed.to_string();
    let tag = family_tag(family);
    let n = config.n_source + config.n_adapt + config.n_test;
    let text = lines.draw(n, derive_seed(global_seed, &["da-lines", &seed_str]))?;
    let cell_seed = derive_seed(global_seed, &["da-cell", tag, &seed_str]);
    let (source, target) = make_domain_shift(
        &text,
        config.n_source,
        family,
        NoiseSpec::new(config.source_p, derive_seed(cell_seed, &["source"])),
        NoiseSpec::new(config.target_p, derive_seed(cell_seed, &["target"])),
        config.mode,
        cell_seed,
    )?;
    let mut order: Vec<usize> = (0..target.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        cell_seed,
        &["split"],
    )));
    let mut adapt_idx = order[..config.n_adapt].to_vec();
    let mut test_idx = order[config.n_adapt..config.n_adapt + config.n_test].to_vec();
    adapt_idx.sort_unstable();
    test_idx.sort_unstable();

    let mut hasher = Sha256::new();
    hasher.update(pair_set_hash(&source));
    hasher.update(pair_set_hash(&target));
    let pair_hash = hex::encode(hasher.finalize());

    let source = orient(&source, direction)?;
    let target = orient(&target, direction)?;
    let spec = DaSpec {
        source_train: source,
        target_adapt: target.subset(&adapt_idx),
        target_test: target.subset(&test_idx),
        adaptation: config.adaptation,
        task_direction: direction,
    };
    let outcome = adapt(&spec, config)?;
    Ok(CellRecord {
        result: CellResult {
            family: family.family_name().to_owned(),
            direction,
            seed,
            k: config.n_adapt,
            m: config.n_source,
            supervised: outcome.unadapted_metric,
            augmented: outcome.adapted_metric,
            delta: outcome.delta_da,
        },
        cell_seed,
        pair_set_hash: pair_hash,
        config_fingerprint: fingerprint(config)?,
        lambda: outcome.lambda,
    })
}

/// Every (family, direction, seed) DA cell, in canonical order.
pub fn run_da_grid(
    families: &[NoisedSide],
    directions: &[TaskDirection],
    seeds: &[u64],
    lines: &LineSource,
    config: &DaConfig,
    global_seed: u64,
) -> Result<Vec<CellRecord>> {
    let keys = grid_keys(families, directions, seeds)?;
    keys.par_iter()
        .map(|key| {
            run_da_cell(
                families[key.family],
                key.direction,
                seeds[key.seed_index],
                lines,
                config,
                global_seed,
            )
        })
        .collect()
}

const RESULT_COLUMNS: [&str; 8] = [
    "family",
    "direction",
    "seed",
    "k",
    "m",
    "supervised",
    "augmented",
    "delta",
];

pub fn write_results_csv<'a, W: Write>(
    rows: impl IntoIterator<Item = &'a CellResult>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.family.clone(),
            r.direction.as_str().to_owned(),
            r.seed.to_string(),
            r.k.to_string(),
            r.m.to_string(),
            r.supervised.to_string(),
            r.augmented.to_string(),
            r.delta.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_results_csv<R: Read>(input: R) -> Result<Vec<CellResult>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.len() < RESULT_COLUMNS.len()
        || headers.iter().zip(RESULT_COLUMNS).any(|(h, c)| h != c)
    {
        return Err(Error::Record {
            line: 1,
            message: format!("expected leading columns {}", RESULT_COLUMNS.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |j: usize| rec.get(j).unwrap_or("");
        let bad = |what: &str| Error::Record {
            line,
            message: format!("invalid {what}"),
        };
        rows.push(CellResult {
            family: field(0).to_owned(),
            direction: field(1).parse().map_err(|_| bad("direction"))?,
            seed: field(2).parse().map_err(|_| bad("seed"))?,
            k: field(3).parse().map_err(|_| bad("k"))?,
            m: field(4).parse().map_err(|_| bad("m"))?,
            supervised: field(5).parse().map_err(|_| bad("supervised"))?,
            augmented: field(6).parse().map_err(|_| bad("augmented"))?,
            delta: field(7).parse().map_err(|_| bad("delta"))?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub family: String,
    pub direction: TaskDirection,
    pub n: usize,
    pub mean_supervised: f64,
    pub mean_augmented: f64,
    pub mean_delta: f64,
    /// Sample standard deviation of the deltas; `None` for a single cell.
    pub std_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyComparison {
    pub family: String,
    /// Per-seed comparison of anticausal (a) against causal (b) deltas.
    pub delta_signs: SignCounts,
    /// Per-seed comparison of causal (a) against anticausal (b) supervised
    /// scores.
    pub supervised_signs: SignCounts,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAggregate {
    pub groups: Vec<GroupSummary>,
    pub families: Vec<FamilyComparison>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |a, b| a + b) / xs.len() as f64
}

/// Group means per (family, direction) and per-seed sign counts per family.
pub fn aggregate(rows: &[CellResult]) -> Result<GridAggregate> {
    if rows.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut families: Vec<&str> = Vec::new();
    for r in rows {
        if !families.contains(&r.family.as_str()) {
            families.push(&r.family);
        }
    }
    let mut groups = Vec::new();
    let mut comparisons = Vec::new();
    for &family in &families {
        for direction in [TaskDirection::Causal, TaskDirection::Anticausal] {
            let cells: Vec<&CellResult> = rows
                .iter()
                .filter(|r| r.family == family && r.direction == direction)
                .collect();
            if cells.is_empty() {
                continue;
            }
            let deltas: Vec<f64> = cells.iter().map(|c| c.delta).collect();
            groups.push(GroupSummary {
                family: family.to_owned(),
                direction,
                n: cells.len(),
                mean_supervised: mean(&cells.iter().map(|c| c.supervised).collect::<Vec<_>>()),
                mean_augmented: mean(&cells.iter().map(|c| c.augmented).collect::<Vec<_>>()),
                mean_delta: mean(&deltas),
                std_delta: SummaryStats::from_samples(&deltas).ok().map(|s| s.std),
            });
        }
        let find = |d: TaskDirection, seed: u64| {
            rows.iter()
                .find(|r| r.family == family && r.direction == d && r.seed == seed)
        };
        let mut delta_pairs = Vec::new();
        let mut sup_pairs = Vec::new();
        for r in rows
            .iter()
            .filter(|r| r.family == family && r.direction == TaskDirection::Causal)
        {
            if let Some(a) = find(TaskDirection::Anticausal, r.seed) {
                delta_pairs.push((a.delta, r.delta));
                sup_pairs.push((r.supervised, a.supervised));
            }
        }
        if !delta_pairs.is_empty() {
            comparisons.push(FamilyComparison {
                family: family.to_owned(),
                delta_signs: sign_aggregate(&delta_pairs)?,
                supervised_signs: sign_aggregate(&sup_pairs)?,
                seeds: delta_pairs.len(),
            });
        }
    }
    Ok(GridAggregate {
        groups,
        families: comparisons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_ssl() -> SslConfig {
        SslConfig {
            k: 50,
            m: 100,
            test: 40,
            iterations: 1,
            ..SslConfig::default()
        }
    }

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(1, &["a", "b"]), derive_seed(1, &["a", "b"]));
        assert_ne!(derive_seed(1, &["a", "b"]), derive_seed(1, &["ab"]));
        assert_ne!(derive_seed(1, &["a"]), derive_seed(2, &["a"]));
    }

    #[test]
    fn both_directions_share_the_pair_set() {
        let cfg = small_ssl();
        let c = run_ssl_cell(
            NoisedSide::Ciphertext,
            TaskDirection::Causal,
            3,
            &LineSource::Synthetic,
            &cfg,
            9,
        )
        .unwrap();
        let a = run_ssl_cell(
            NoisedSide::Ciphertext,
            TaskDirection::Anticausal,
            3,
            &LineSource::Synthetic,
            &cfg,
            9,
        )
        .unwrap();
        assert_eq!(c.pair_set_hash, a.pair_set_hash);
        assert_eq!(c.cell_seed, a.cell_seed);
        let other = run_ssl_cell(
            NoisedSide::Ciphertext,
            TaskDirection::Causal,
            4,
            &LineSource::Synthetic,
            &cfg,
            9,
        )
        .unwrap();
        assert_ne!(c.pair_set_hash, other.pair_set_hash);
    }

    #[test]
    fn no_unlabeled_data_means_no_change() {
        let cfg = SslConfig {
            m: 0,
            ..small_ssl()
        };
        for direction in [TaskDirection::Causal, TaskDirection::Anticausal] {
            let r = run_ssl_cell(
                NoisedSide::SourceText,
                direction,
                1,
                &LineSource::Synthetic,
                &cfg,
                0,
            )
            .unwrap();
            assert_eq!(r.result.delta, 0.0);
            assert_eq!(r.result.supervised, r.result.augmented);
        }
    }

    #[test]
    fn grid_has_one_row_per_cell() {
        let cfg = SslConfig {
            m: 20,
            k: 20,
            test: 10,
            ..small_ssl()
        };
        let fams = [NoisedSide::Ciphertext, NoisedSide::SourceText];
        let dirs = [TaskDirection::Causal, TaskDirection::Anticausal];
        let rows = run_ssl_grid(
            &fams,
            &dirs,
            &[0, 1, 2, 3, 4],
            &LineSource::Synthetic,
            &cfg,
            5,
        )
        .unwrap();
        assert_eq!(rows.len(), 20);
        let again = run_ssl_grid(
            &fams,
            &dirs,
            &[0, 1, 2, 3, 4],
            &LineSource::Synthetic,
            &cfg,
            5,
        )
        .unwrap();
        assert_eq!(rows, again);

        let results: Vec<CellResult> = rows.iter().map(|r| r.result.clone()).collect();
        let mut buf = Vec::new();
        write_results_csv(&results, &mut buf).unwrap();
        assert_eq!(read_results_csv(&buf[..]).unwrap(), results);

        let agg = aggregate(&results).unwrap();
        assert_eq!(agg.groups.len(), 4);
        for g in &agg.groups {
            let cells: Vec<f64> = results
                .iter()
                .filter(|r| r.family == g.family && r.direction == g.direction)
                .map(|r| r.delta)
                .collect();
            assert_eq!(g.mean_delta, mean(&cells));
        }
        assert!(agg.families.iter().all(|f| f.seeds == 5));
    }

    #[test]
    fn clean_causal_supervision_is_perfect() {
        let lines = synthetic_lines(600, 2);
        let corpus = generate_cipher_dataset(&CipherDatasetSpec {
            lines,
            noised_side: NoisedSide::Ciphertext,
            noise: NoiseSpec::new(0.0, 0),
            mode: TokenizerMode::Char,
        })
        .unwrap();
        let ds = SslDataset::from_corpus(&corpus, TaskDirection::Causal, 500, 0, 100, 1).unwrap();
        let (_, bleu) = train_supervised(
            &ds.labeled,
            &ds.test,
            ChannelConfig::default(),
            Metric::Bleu,
        )
        .unwrap();
        assert!((bleu - 100.0).abs() < 1e-9, "{bleu}");

        let ds = SslDataset::from_corpus(&corpus, TaskDirection::Causal, 1, 0, 100, 1).unwrap();
        let (_, bleu) = train_supervised(
            &ds.labeled,
            &ds.test,
            ChannelConfig::default(),
            Metric::Bleu,
        )
        .unwrap();
        assert!((0.0..=100.0).contains(&bleu));
    }

    #[test]
    fn domain_shift_contract() {
        let lines = synthetic_lines(200, 4);
        let a = NoiseSpec::new(0.05, 1);
        assert!(make_domain_shift(
            &lines,
            100,
            NoisedSide::Ciphertext,
            a,
            a,
            TokenizerMode::Char,
            0
        )
        .is_err());
        assert!(make_domain_shift(
            &lines,
            200,
            NoisedSide::Ciphertext,
            a,
            NoiseSpec::new(0.15, 1),
            TokenizerMode::Char,
            0
        )
        .is_err());
        let (s, t) = make_domain_shift(
            &lines,
            120,
            NoisedSide::Ciphertext,
            a,
            NoiseSpec::new(0.15, 2),
            TokenizerMode::Char,
            0,
        )
        .unwrap();
        assert_eq!((s.len(), t.len()), (120, 80));
        assert_eq!(s.src_vocab, t.src_vocab);
        let clean = |c: &ParallelCorpus| -> Vec<String> {
            c.pairs
                .iter()
                .map(|p| c.src_text(&p.src).unwrap())
                .collect()
        };
        let (cs, ct) = (clean(&s), clean(&t));
        let mut all: Vec<&String> = cs.iter().chain(&ct).collect();
        all.sort();
        let mut expected: Vec<&String> = lines.iter().collect();
        expected.sort();
        assert_eq!(all, expected);
    }

    #[test]
    fn empty_adaptation_set_means_no_change() {
        let cfg = DaConfig {
            n_source: 100,
            n_adapt: 0,
            n_test: 30,
            ..DaConfig::default()
        };
        for adaptation in [Adaptation::CountMerge, Adaptation::ContinueTrain] {
            let cfg = DaConfig {
                adaptation,
                ..cfg.clone()
            };
            let r = run_da_cell(
                NoisedSide::Ciphertext,
                TaskDirection::Anticausal,
                0,
                &LineSource::Synthetic,
                &cfg,
                1,
            )
            .unwrap();
            assert_eq!(r.result.delta, 0.0);
            assert_eq!(r.result.supervised, r.result.augmented);
        }
    }
}
