//! Prequential (online-code) description lengths and the two-way
//! compression comparison that decides causal direction.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{BlockSchedule, ParallelCorpus, TokenSeq};
use crate::error::{Error, Result};
use crate::seqmodel::{ChannelFactory, LmFactory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CodeKind {
    MarginalX,
    MarginalY,
    CondYGivenX,
    CondXGivenY,
}

impl CodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CodeKind::MarginalX => "MARGINAL_X",
            CodeKind::MarginalY => "MARGINAL_Y",
            CodeKind::CondYGivenX => "COND_Y_GIVEN_X",
            CodeKind::CondXGivenY => "COND_X_GIVEN_Y",
        }
    }
}

/// Which side of each pair a conditional code transmits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodedSide {
    /// Code the target given the source.
    Target,
    /// Code the source given the target.
    Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodelengthReport {
    pub kind: CodeKind,
    pub uniform_block_bits: f64,
    pub per_block_bits: Vec<f64>,
    pub total_bits: f64,
    pub schedule: BlockSchedule,
    pub model_fingerprint: String,
}

impl CodelengthReport {
    fn assemble(
        kind: CodeKind,
        uniform_block_bits: f64,
        per_block_bits: Vec<f64>,
        schedule: &BlockSchedule,
        model_fingerprint: String,
    ) -> Self {
        let total_bits = per_block_bits
            .iter()
            .fold(uniform_block_bits, |acc, b| acc + b);
        Self {
            kind,
            uniform_block_bits,
            per_block_bits,
            total_bits,
            schedule: schedule.clone(),
            model_fingerprint,
        }
    }

    /// Bits of every block, the uniform one first.
    pub fn block_bits(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.uniform_block_bits).chain(self.per_block_bits.iter().copied())
    }

    pub fn total_kbits(&self) -> f64 {
        self.total_bits / 1000.0
    }

    /// Rows `kind,block_index,bits`; block indices are 1-based.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_reports_csv(std::slice::from_ref(self), out)
    }
}

pub fn write_reports_csv<W: Write>(reports: &[CodelengthReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "block_index", "bits"])?;
    for r in reports {
        for (j, bits) in r.block_bits().enumerate() {
            w.write_record([r.kind.as_str(), &(j + 1).to_string(), &bits.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

fn check_schedule(n: usize, schedule: &BlockSchedule) -> Result<()> {
    if schedule.total() != n {
        return Err(Error::Schedule(format!(
            "schedule ends at t_K = {} but the corpus has n = {n} pairs",
            schedule.total()
        )));
    }
    Ok(())
}

fn uniform_bits<'a>(seqs: impl Iterator<Item = &'a TokenSeq>, vocab_size: usize) -> f64 {
    let log_v = (vocab_size as f64).log2();
    seqs.map(|s| s.len() as f64 * log_v).fold(0.0, |a, b| a + b)
}

fn sum_in_order(values: Vec<f64>) -> f64 {
    values.into_iter().fold(0.0, |a, b| a + b)
}

/// Online code of a list of sequences. The first block is sent with the
/// uniform code; block `j ≥ 2` is sent with a model trained from scratch on
/// blocks `1..j-1`.
pub fn marginal_mdl(
    sequences: &[&TokenSeq],
    vocab_size: usize,
    schedule: &BlockSchedule,
    lm_factory: &dyn LmFactory,
    kind: CodeKind,
) -> Result<CodelengthReport> {
    check_schedule(sequences.len(), schedule)?;
    let first = schedule.block_range(0);
    let uniform = uniform_bits(sequences[first].iter().copied(), vocab_size);
    let per_block = (1..schedule.num_blocks())
        .into_par_iter()
        .map(|j| {
            let range = schedule.block_range(j);
            let block_err = |e| Error::Block {
                block: j + 1,
                source: Box::new(e),
            };
            let model = lm_factory
                .train(&sequences[..range.start], vocab_size)
                .map_err(block_err)?;
            let bits = sequences[range]
                .iter()
                .map(|s| model.codelength(s.as_slice()))
                .collect::<Result<Vec<f64>>>()
                .map_err(block_err)?;
            Ok(sum_in_order(bits))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(CodelengthReport::assemble(
        kind,
        uniform,
        per_block,
        schedule,
        lm_factory.fingerprint(),
    ))
}

/// Online code of one side of each pair given the other side.
pub fn conditional_mdl(
    pairs: &[(&TokenSeq, &TokenSeq)],
    src_vocab_size: usize,
    tgt_vocab_size: usize,
    schedule: &BlockSchedule,
    channel_factory: &dyn ChannelFactory,
    coded: CodedSide,
) -> Result<CodelengthReport> {
    check_schedule(pairs.len(), schedule)?;
    let oriented: Vec<(&TokenSeq, &TokenSeq)> = match coded {
        CodedSide::Target => pairs.to_vec(),
        CodedSide::Source => pairs.iter().map(|&(s, t)| (t, s)).collect(),
    };
    let (given_v, coded_v, kind) = match coded {
        CodedSide::Target => (src_vocab_size, tgt_vocab_size, CodeKind::CondYGivenX),
        CodedSide::Source => (tgt_vocab_size, src_vocab_size, CodeKind::CondXGivenY),
    };
    let uniform = uniform_bits(
        oriented[schedule.block_range(0)].iter().map(|p| p.1),
        coded_v,
    );
    let per_block = (1..schedule.num_blocks())
        .into_par_iter()
        .map(|j| {
            let range = schedule.block_range(j);
            let block_err = |e| Error::Block {
                block: j + 1,
                source: Box::new(e),
            };
            let model = channel_factory
                .train(&oriented[..range.start], given_v, coded_v)
                .map_err(block_err)?;
            let bits = oriented[range]
                .iter()
                .map(|(g, c)| model.codelength(g.as_slice(), c.as_slice()))
                .collect::<Result<Vec<f64>>>()
                .map_err(block_err)?;
            Ok(sum_in_order(bits))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(CodelengthReport::assemble(
        kind,
        uniform,
        per_block,
        schedule,
        channel_factory.fingerprint(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    XToY,
    YToX,
    Tie,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::XToY => "X_TO_Y",
            Verdict::YToX => "Y_TO_X",
            Verdict::Tie => "TIE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionVerdict {
    pub l_causal_bits: f64,
    pub l_anticausal_bits: f64,
    pub verdict: Verdict,
    pub margin_kbits: f64,
}

impl DirectionVerdict {
    /// Compares `MDL(X)+MDL(Y|X)` against `MDL(Y)+MDL(X|Y)`.
    pub fn from_totals(l_causal_bits: f64, l_anticausal_bits: f64) -> Self {
        let margin_kbits = (l_anticausal_bits - l_causal_bits) / 1000.0;
        let verdict = if margin_kbits > 0.0 {
            Verdict::XToY
        } else if margin_kbits < 0.0 {
            Verdict::YToX
        } else {
            Verdict::Tie
        };
        Self {
            l_causal_bits,
            l_anticausal_bits,
            verdict,
            margin_kbits,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    pub corpus: String,
    pub num_pairs: usize,
    pub marginal_x: CodelengthReport,
    pub marginal_y: CodelengthReport,
    pub cond_y_given_x: CodelengthReport,
    pub cond_x_given_y: CodelengthReport,
    pub verdict: DirectionVerdict,
}

impl DirectionReport {
    pub fn reports(&self) -> [&CodelengthReport; 4] {
        [
            &self.marginal_x,
            &self.marginal_y,
            &self.cond_y_given_x,
            &self.cond_x_given_y,
        ]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let all: Vec<CodelengthReport> = self.reports().into_iter().cloned().collect();
        write_reports_csv(&all, out)
    }

    /// Totals, verdict and margin.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "corpus": self.corpus,
            "num_pairs": self.num_pairs,
            "totals_bits": {
                "MARGINAL_X": self.marginal_x.total_bits,
                "MARGINAL_Y": self.marginal_y.total_bits,
                "COND_Y_GIVEN_X": self.cond_y_given_x.total_bits,
                "COND_X_GIVEN_Y": self.cond_x_given_y.total_bits,
            },
            "l_causal_bits": self.verdict.l_causal_bits,
            "l_anticausal_bits": self.verdict.l_anticausal_bits,
            "verdict": self.verdict.verdict.as_str().to_ascii_lowercase(),
            "margin_kbits": self.verdict.margin_kbits,
            "lm": self.marginal_x.model_fingerprint,
            "channel": self.cond_y_given_x.model_fingerprint,
        })
    }
}

/// Computes the four online codes with one schedule and one pair of
/// factories, then compares the two factorizations.
pub fn direction_test(
    corpus: &ParallelCorpus,
    schedule: &BlockSchedule,
    lm_factory: &dyn LmFactory,
    channel_factory: &dyn ChannelFactory,
) -> Result<DirectionReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    check_schedule(corpus.len(), schedule)?;
    let xs = corpus.sources();
    let ys = corpus.targets();
    let pairs: Vec<(&TokenSeq, &TokenSeq)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    let vx = corpus.src_vocab.len();
    let vy = corpus.tgt_vocab.len();

    let ((mx, my), (cyx, cxy)) = rayon::join(
        || {
            rayon::join(
                || marginal_mdl(&xs, vx, schedule, lm_factory, CodeKind::MarginalX),
                || marginal_mdl(&ys, vy, schedule, lm_factory, CodeKind::MarginalY),
            )
        },
        || {
            rayon::join(
                || conditional_mdl(&pairs, vx, vy, schedule, channel_factory, CodedSide::Target),
                || conditional_mdl(&pairs, vx, vy, schedule, channel_factory, CodedSide::Source),
            )
        },
    );
    let (mx, my, cyx, cxy) = (mx?, my?, cyx?, cxy?);
    let verdict = DirectionVerdict::from_totals(
        mx.total_bits + cyx.total_bits,
        my.total_bits + cxy.total_bits,
    );
    Ok(DirectionReport {
        corpus: corpus.name.clone(),
        num_pairs: corpus.len(),
        marginal_x: mx,
        marginal_y: my,
        cond_y_given_x: cyx,
        cond_x_given_y: cxy,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{make_block_schedule, DEFAULT_BLOCK_FRACTIONS};
    use crate::seqmodel::{UniformChannelFactory, UniformLmFactory};

    #[test]
    fn verdict_from_component_sums() {
        let v = DirectionVerdict::from_totals(2_080_490.0, 2_426_920.0);
        assert_eq!(v.verdict, Verdict::XToY);
        assert!((v.margin_kbits - 346.43).abs() < 1e-9);

        let v = DirectionVerdict::from_totals(759_110.0, 702_720.0);
        assert_eq!(v.verdict, Verdict::YToX);

        let v = DirectionVerdict::from_totals(5.0, 5.0);
        assert_eq!(v.verdict, Verdict::Tie);
        assert_eq!(v.margin_kbits, 0.0);
    }

    #[test]
    fn two_block_uniform_example() {
        let seqs: Vec<TokenSeq> = (0..10)
            .map(|i| TokenSeq::new((0..8).map(|t| ((t + i) % 2) as u32).collect()))
            .collect();
        let refs: Vec<&TokenSeq> = seqs.iter().collect();
        let schedule = make_block_schedule(10, &[10.0, 90.0]).unwrap();
        assert_eq!(schedule.ends(), &[1, 10]);
        let r = marginal_mdl(&refs, 2, &schedule, &UniformLmFactory, CodeKind::MarginalX).unwrap();
        assert_eq!(r.total_bits, 80.0);
        assert_eq!(r.uniform_block_bits, 8.0);
        assert_eq!(r.per_block_bits, vec![72.0]);
    }

    #[test]
    fn uniform_channel_uses_coded_vocabulary() {
        let xs: Vec<TokenSeq> = (0..20).map(|_| TokenSeq::new(vec![2, 3, 2])).collect();
        let ys: Vec<TokenSeq> = (0..20)
            .map(|_| TokenSeq::new(vec![2, 2, 3, 3, 2]))
            .collect();
        let pairs: Vec<(&TokenSeq, &TokenSeq)> = xs.iter().zip(&ys).collect();
        let schedule = make_block_schedule(20, &DEFAULT_BLOCK_FRACTIONS).unwrap();
        let f = UniformChannelFactory;
        let yx = conditional_mdl(&pairs, 4, 8, &schedule, &f, CodedSide::Target).unwrap();
        let xy = conditional_mdl(&pairs, 4, 8, &schedule, &f, CodedSide::Source).unwrap();
        let first = schedule.block_range(0).len() as f64;
        assert_eq!(yx.uniform_block_bits, first * 5.0 * 3.0);
        assert_eq!(xy.uniform_block_bits, first * 3.0 * 2.0);
        assert!((yx.total_bits - 20.0 * 15.0).abs() < 1e-9);
        assert!((xy.total_bits - 20.0 * 6.0).abs() < 1e-9);
        assert_eq!(yx.kind, CodeKind::CondYGivenX);
        assert_eq!(xy.kind, CodeKind::CondXGivenY);
    }

    #[test]
    fn schedule_mismatch_is_rejected() {
        let seqs: Vec<TokenSeq> = (0..5).map(|_| TokenSeq::new(vec![2])).collect();
        let refs: Vec<&TokenSeq> = seqs.iter().collect();
        let schedule = make_block_schedule(6, &[50.0, 50.0]).unwrap();
        let err = marginal_mdl(&refs, 3, &schedule, &UniformLmFactory, CodeKind::MarginalX);
        assert!(matches!(err, Err(Error::Schedule(_))));
    }

    #[test]
    fn csv_rows_cover_every_block() {
        let seqs: Vec<TokenSeq> = (0..10).map(|_| TokenSeq::new(vec![2, 3])).collect();
        let refs: Vec<&TokenSeq> = seqs.iter().collect();
        let schedule = make_block_schedule(10, &DEFAULT_BLOCK_FRACTIONS).unwrap();
        let r = marginal_mdl(&refs, 4, &schedule, &UniformLmFactory, CodeKind::MarginalY).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "kind,block_index,bits");
        assert_eq!(lines.len(), 11);
        assert_eq!(lines[1], "MARGINAL_Y,1,4");
    }
}
