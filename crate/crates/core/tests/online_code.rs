use causal_mdl::cipherlab::{
    generate_cipher_dataset, synthetic_lines, CipherDatasetSpec, NoiseSpec, NoisedSide,
};
use causal_mdl::corpus::{
    make_block_schedule, Direction, ParallelCorpus, TokenSeq, TokenizerMode,
    DEFAULT_BLOCK_FRACTIONS,
};
use causal_mdl::mdlcode::{conditional_mdl, direction_test, marginal_mdl, CodeKind, CodedSide};
use causal_mdl::seqmodel::{
    ChannelConfig, ChannelModel, ConditionalSequenceModel, LmConfig, UniformChannelFactory,
    UniformLmFactory, WittenBellChannelFactory, WittenBellLmFactory,
};
use proptest::prelude::*;

fn cipher(n: usize, p: f64, family: NoisedSide, seed: u64) -> ParallelCorpus {
    generate_cipher_dataset(&CipherDatasetSpec {
        lines: synthetic_lines(n, seed),
        noised_side: family,
        noise: NoiseSpec::new(p, seed.wrapping_add(1000)),
        mode: TokenizerMode::Char,
    })
    .unwrap()
}

fn pairs(c: &ParallelCorpus) -> Vec<(&TokenSeq, &TokenSeq)> {
    c.pairs.iter().map(|p| (&p.src, &p.tgt)).collect()
}

#[test]
fn uniform_factories_reduce_to_length_times_log_v() {
    let c = cipher(1000, 0.05, NoisedSide::Ciphertext, 1);
    let schedule = make_block_schedule(c.len(), &DEFAULT_BLOCK_FRACTIONS).unwrap();
    let report = direction_test(&c, &schedule, &UniformLmFactory, &UniformChannelFactory).unwrap();
    let bits = |seqs: Vec<&TokenSeq>, v: usize| {
        seqs.iter().map(|s| s.len() as f64).sum::<f64>() * (v as f64).log2()
    };
    let x = bits(c.sources(), c.src_vocab.len());
    let y = bits(c.targets(), c.tgt_vocab.len());
    for (got, want) in [
        (report.marginal_x.total_bits, x),
        (report.marginal_y.total_bits, y),
        (report.cond_y_given_x.total_bits, y),
        (report.cond_x_given_y.total_bits, x),
    ] {
        assert!((got - want).abs() <= 1e-9 * want, "{got} vs {want}");
    }
}

#[test]
fn swapping_sides_negates_the_margin_exactly() {
    let c = cipher(400, 0.05, NoisedSide::SourceText, 2);
    let schedule = make_block_schedule(c.len(), &DEFAULT_BLOCK_FRACTIONS).unwrap();
    let lm = WittenBellLmFactory::new(LmConfig::for_mode(TokenizerMode::Char));
    let ch = WittenBellChannelFactory::new(ChannelConfig::default());
    let a = direction_test(&c, &schedule, &lm, &ch).unwrap();
    let b = direction_test(&c.swapped(), &schedule, &lm, &ch).unwrap();
    assert_eq!(a.verdict.margin_kbits, -b.verdict.margin_kbits);
    assert_eq!(a.marginal_x.total_bits, b.marginal_y.total_bits);
    assert_eq!(a.cond_y_given_x.total_bits, b.cond_x_given_y.total_bits);
}

#[test]
fn reports_are_deterministic() {
    let c = cipher(300, 0.05, NoisedSide::Ciphertext, 3);
    let schedule = make_block_schedule(c.len(), &DEFAULT_BLOCK_FRACTIONS).unwrap();
    let lm = WittenBellLmFactory::new(LmConfig::for_mode(TokenizerMode::Char));
    let ch = WittenBellChannelFactory::new(ChannelConfig::default());
    let a = direction_test(&c, &schedule, &lm, &ch).unwrap();
    let b = direction_test(&c, &schedule, &lm, &ch).unwrap();
    assert_eq!(a, b);
}

#[test]
fn extending_the_corpus_increases_every_total() {
    let lm = WittenBellLmFactory::new(LmConfig::for_mode(TokenizerMode::Char));
    let ch = WittenBellChannelFactory::new(ChannelConfig::default());
    let full = cipher(1200, 0.05, NoisedSide::Ciphertext, 4);
    let idx: Vec<usize> = (0..1000).collect();
    let prefix = full.subset(&idx);
    let run = |c: &ParallelCorpus| {
        let s = make_block_schedule(c.len(), &DEFAULT_BLOCK_FRACTIONS).unwrap();
        direction_test(c, &s, &lm, &ch).unwrap()
    };
    let (small, large) = (run(&prefix), run(&full));
    for (a, b) in small.reports().iter().zip(large.reports()) {
        assert!(b.total_bits > a.total_bits, "{:?}", a.kind);
    }
}

#[test]
fn learned_model_beats_uniform_on_repetitive_data() {
    let c = ParallelCorpus::from_text_pairs(
        "copies",
        &vec![
            (
                "the cat sat on the mat .",
                "gur png fng ba gur zng .",
                Direction::XToY
            );
            5000
        ],
        TokenizerMode::Char,
        TokenizerMode::Char,
    )
    .unwrap();
    let schedule = make_block_schedule(c.len(), &DEFAULT_BLOCK_FRACTIONS).unwrap();
    let xs = c.sources();
    let v = c.src_vocab.len();
    let lm = WittenBellLmFactory::new(LmConfig::for_mode(TokenizerMode::Char));
    let learned = marginal_mdl(&xs, v, &schedule, &lm, CodeKind::MarginalX).unwrap();
    let uniform = marginal_mdl(&xs, v, &schedule, &UniformLmFactory, CodeKind::MarginalX).unwrap();
    assert!(learned.total_bits < uniform.total_bits);
}

#[test]
fn clean_cipher_is_cheap_given_the_plaintext() {
    let c = cipher(10_000, 0.0, NoisedSide::Ciphertext, 5);
    let schedule = make_block_schedule(c.len(), &DEFAULT_BLOCK_FRACTIONS).unwrap();
    let lm = WittenBellLmFactory::new(LmConfig::for_mode(TokenizerMode::Char));
    let ch = WittenBellChannelFactory::new(ChannelConfig::default());
    let ys = c.targets();
    let marginal =
        marginal_mdl(&ys, c.tgt_vocab.len(), &schedule, &lm, CodeKind::MarginalY).unwrap();
    let conditional = conditional_mdl(
        &pairs(&c),
        c.src_vocab.len(),
        c.tgt_vocab.len(),
        &schedule,
        &ch,
        CodedSide::Target,
    )
    .unwrap();
    assert!(conditional.total_bits / marginal.total_bits < 0.5);
}

#[test]
fn held_out_codelength_falls_with_more_data() {
    let sizes = [100usize, 1000, 10_000];
    let mut mean_bits = [0.0f64; 3];
    for seed in 0..5u64 {
        let c = cipher(10_500, 0.05, NoisedSide::Ciphertext, 100 + seed);
        let all = pairs(&c);
        let (train, held) = all.split_at(10_000);
        for (i, &n) in sizes.iter().enumerate() {
            let refs: Vec<(&[u32], &[u32])> = train[..n]
                .iter()
                .map(|(s, t)| (s.as_slice(), t.as_slice()))
                .collect();
            let model = ChannelModel::train(
                &refs,
                c.src_vocab.len(),
                c.tgt_vocab.len(),
                ChannelConfig::default(),
            )
            .unwrap();
            let bits: f64 = held
                .iter()
                .map(|(s, t)| model.codelength(s.as_slice(), t.as_slice()).unwrap())
                .sum();
            mean_bits[i] += bits / 5.0;
        }
    }
    let inversions = mean_bits.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(inversions <= 1, "{mean_bits:?}");
}

proptest! {
    #[test]
    fn schedule_invariants(n in 10usize..200_000) {
        let s = make_block_schedule(n, &DEFAULT_BLOCK_FRACTIONS).unwrap();
        let ends = s.ends();
        prop_assert_eq!(*ends.last().unwrap(), n);
        prop_assert!(ends[0] >= 1);
        prop_assert!(ends.windows(2).all(|w| w[0] < w[1]));
        let sizes = s.block_sizes();
        prop_assert!(sizes.iter().all(|&b| b >= 1));
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        let mut start = 0;
        for j in 0..s.num_blocks() {
            let r = s.block_range(j);
            prop_assert_eq!(r.start, start);
            start = r.end;
        }
    }
}

#[test]
fn schedule_invariants_at_reference_sizes() {
    for n in [10usize, 1000, 10_000, 100_000] {
        let s = make_block_schedule(n, &DEFAULT_BLOCK_FRACTIONS).unwrap();
        assert_eq!(s.total(), n);
        assert_eq!(s.block_sizes().iter().sum::<usize>(), n);
        assert!(s.ends().windows(2).all(|w| w[0] < w[1]));
    }
    assert!(make_block_schedule(9, &DEFAULT_BLOCK_FRACTIONS).is_err());
}
