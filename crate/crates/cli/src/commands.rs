use std::fs;
use std::path::Path;

use causal_mdl::cipherlab::{generate_cipher_dataset, CipherDatasetSpec, NoiseSpec, NoisedSide};
use causal_mdl::corpus::{
    load_parallel_jsonl, make_block_schedule, BlockSchedule, ParallelCorpus, TokenSeq,
    TokenizerMode, DEFAULT_BLOCK_FRACTIONS,
};
use causal_mdl::evalstats::{welch_t_test, SummaryStats};
use causal_mdl::experiments::{
    aggregate, derive_seed, read_results_csv, run_da_grid, run_ssl_grid, write_results_csv,
    Adaptation, CellRecord, DaConfig, LineSource, Metric, SslConfig, TaskDirection,
};
use causal_mdl::mdlcode::{
    conditional_mdl, direction_test, marginal_mdl, CodeKind, CodedSide, CodelengthReport,
};
use causal_mdl::seqmodel::{
    Alignment, ChannelConfig, ChannelFactory, LmConfig, LmFactory, Smoothing,
    UniformChannelFactory, UniformLmFactory, WittenBellChannelFactory, WittenBellLmFactory,
};
use causal_mdl::{Error, Result};
use serde_json::{json, Map, Value};

use crate::args::{
    ChannelArgs, CodeArgs, DaArgs, DiscoverArgs, GenerateArgs, GlobalArgs, GridArgs, MdlArgs,
    MetaArgs, ReportArgs, SslArgs,
};
use crate::output::{require_file, RunConfig};

fn body(value: Value) -> Map<String, Value> {
    match value {
        Value::Object(m) => m,
        other => Map::from_iter([("value".to_owned(), other)]),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    require_file(path)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}

fn channel_config(a: &ChannelArgs) -> Result<ChannelConfig> {
    let alignment = match a.alignment.to_ascii_lowercase().as_str() {
        "positional" => Alignment::Positional,
        "resync" => Alignment::Resync {
            lookahead: a.lookahead,
            lookback: a.lookback,
        },
        other => return Err(Error::Config(format!("unknown alignment {other:?}"))),
    };
    Ok(ChannelConfig {
        target_history: a.target_history,
        source_window: a.source_window,
        smoothing: Smoothing::WittenBell,
        alignment,
    })
}

pub fn generate(global: &GlobalArgs, args: GenerateArgs) -> Result<()> {
    let (a, run) = RunConfig::resolve(global, "generate", args)?;
    let lines = read_lines(&a.input)?;
    let side: NoisedSide = a.noised_side.parse()?;
    let mode: TokenizerMode = a.mode.parse()?;
    let seed = a
        .seed
        .unwrap_or_else(|| derive_seed(run.global_seed, &["generate"]));
    let mut noise = NoiseSpec {
        word_mask: false,
        permute: false,
        roll: false,
        insert: false,
        ..NoiseSpec::new(a.p, seed)
    };
    for name in &a.noises {
        match name.to_ascii_lowercase().as_str() {
            "word_mask" => noise.word_mask = true,
            "permute" => noise.permute = true,
            "roll" => noise.roll = true,
            "insert" => noise.insert = true,
            "" | "none" => {}
            other => return Err(Error::Config(format!("unknown noise operator {other:?}"))),
        }
    }
    let lines_read = lines.len();
    let corpus = generate_cipher_dataset(&CipherDatasetSpec {
        lines,
        noised_side: side,
        noise,
        mode,
    })?;
    let mut data = Vec::new();
    corpus.write_jsonl(&mut data)?;
    crate::output::write(&run.path("corpus.jsonl")?, &data)?;
    let path = run.write_json(
        "manifest.json",
        body(json!({
            "family": side.family_name(),
            "noise": noise,
            "mode": mode,
            "counts": {
                "lines_read": lines_read,
                "pairs": corpus.len(),
                "src_vocab": corpus.src_vocab.len(),
                "tgt_vocab": corpus.tgt_vocab.len(),
            },
            "files": ["corpus.jsonl"],
        })),
    )?;
    println!(
        "wrote {} pairs to {}",
        corpus.len(),
        path.parent().unwrap_or(Path::new(".")).display()
    );
    Ok(())
}

struct CodeSetup {
    corpus: ParallelCorpus,
    schedule: BlockSchedule,
    lm: Box<dyn LmFactory>,
    channel: Box<dyn ChannelFactory>,
}

fn code_setup(a: &CodeArgs) -> Result<CodeSetup> {
    require_file(&a.corpus)?;
    let mode: TokenizerMode = a.mode.parse()?;
    let channel_cfg = channel_config(&a.channel)?;
    let corpus = load_parallel_jsonl(&a.corpus, mode, mode)?;
    let schedule = match &a.ends {
        Some(ends) => BlockSchedule::from_ends(ends.clone())?,
        None => make_block_schedule(
            corpus.len(),
            a.fractions.as_deref().unwrap_or(&DEFAULT_BLOCK_FRACTIONS),
        )?,
    };
    let (lm, channel): (Box<dyn LmFactory>, Box<dyn ChannelFactory>) = if a.uniform {
        (Box::new(UniformLmFactory), Box::new(UniformChannelFactory))
    } else {
        let lm_cfg = a
            .lm_order
            .map_or_else(|| LmConfig::for_mode(mode), LmConfig::new);
        (
            Box::new(WittenBellLmFactory::new(lm_cfg)),
            Box::new(WittenBellChannelFactory::new(channel_cfg)),
        )
    };
    Ok(CodeSetup {
        corpus,
        schedule,
        lm,
        channel,
    })
}

fn reports_table(reports: &[CodelengthReport]) -> Result<Vec<u8>> {
    let mut table = Vec::new();
    causal_mdl::mdlcode::write_reports_csv(reports, &mut table)?;
    Ok(table)
}

pub fn discover(global: &GlobalArgs, args: DiscoverArgs) -> Result<()> {
    let (a, run) = RunConfig::resolve(global, "discover", args)?;
    let s = code_setup(&a.code)?;
    let report = direction_test(&s.corpus, &s.schedule, s.lm.as_ref(), s.channel.as_ref())?;
    let mut out = body(report.summary_json());
    out.insert("schedule_ends".into(), json!(s.schedule.ends()));
    run.write_json("verdict.json", out)?;
    let all: Vec<CodelengthReport> = report.reports().into_iter().cloned().collect();
    run.write_csv("codelengths.csv", &reports_table(&all)?)?;
    println!(
        "{} (margin {:.3} kbit)",
        report.verdict.verdict.as_str().to_ascii_lowercase(),
        report.verdict.margin_kbits
    );
    Ok(())
}

pub fn mdl(global: &GlobalArgs, args: MdlArgs) -> Result<()> {
    let (a, run) = RunConfig::resolve(global, "mdl", args)?;
    let s = code_setup(&a.code)?;
    let c = &s.corpus;
    let xs = c.sources();
    let ys = c.targets();
    let pairs: Vec<(&TokenSeq, &TokenSeq)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    let (vx, vy) = (c.src_vocab.len(), c.tgt_vocab.len());
    let mut reports = Vec::new();
    for name in &a.components {
        let report = match name.to_ascii_uppercase().as_str() {
            "MARGINAL_X" => marginal_mdl(&xs, vx, &s.schedule, s.lm.as_ref(), CodeKind::MarginalX)?,
            "MARGINAL_Y" => marginal_mdl(&ys, vy, &s.schedule, s.lm.as_ref(), CodeKind::MarginalY)?,
            "COND_Y_GIVEN_X" => conditional_mdl(
                &pairs,
                vx,
                vy,
                &s.schedule,
                s.channel.as_ref(),
                CodedSide::Target,
            )?,
            "COND_X_GIVEN_Y" => conditional_mdl(
                &pairs,
                vx,
                vy,
                &s.schedule,
                s.channel.as_ref(),
                CodedSide::Source,
            )?,
            other => return Err(Error::Config(format!("unknown report {other:?}"))),
        };
        println!("{} {:.3} kbit", report.kind.as_str(), report.total_kbits());
        reports.push(report);
    }
    let summary: Vec<Value> = reports
        .iter()
        .map(|r| {
            json!({
                "kind": r.kind.as_str(),
                "total_bits": r.total_bits,
                "uniform_block_bits": r.uniform_block_bits,
                "per_block_bits": r.per_block_bits,
                "model": r.model_fingerprint,
            })
        })
        .collect();
    run.write_json(
        "reports.json",
        body(json!({
            "corpus": c.name,
            "num_pairs": c.len(),
            "schedule_ends": s.schedule.ends(),
            "reports": summary,
        })),
    )?;
    run.write_csv("codelengths.csv", &reports_table(&reports)?)?;
    Ok(())
}

struct Grid {
    families: Vec<NoisedSide>,
    directions: Vec<TaskDirection>,
    seeds: Vec<u64>,
    lines: LineSource,
    mode: TokenizerMode,
    metric: Metric,
}

fn grid(a: &GridArgs) -> Result<Grid> {
    let families = a
        .families
        .iter()
        .map(|f| f.parse())
        .collect::<Result<Vec<NoisedSide>>>()?;
    let directions = a
        .directions
        .iter()
        .map(|d| d.parse())
        .collect::<Result<Vec<TaskDirection>>>()?;
    let seeds = match a.only_seed {
        Some(s) => vec![s],
        None => (1..=a.seeds).collect(),
    };
    let lines = match &a.input {
        Some(path) => LineSource::Pool(read_lines(path)?),
        None => LineSource::Synthetic,
    };
    Ok(Grid {
        families,
        directions,
        seeds,
        lines,
        mode: a.mode.parse()?,
        metric: a.metric.parse()?,
    })
}

/// Sorts cells by (family, direction, seed), prints the per-cell seeds and
/// writes the results CSV and the aggregate JSON.
fn emit_grid(run: &RunConfig, prefix: &str, mut records: Vec<CellRecord>) -> Result<()> {
    records.sort_by(|a, b| {
        (&a.result.family, a.result.direction, a.result.seed).cmp(&(
            &b.result.family,
            b.result.direction,
            b.result.seed,
        ))
    });
    for r in &records {
        eprintln!(
            "{} {} seed={} cell_seed={} delta={:.4}",
            r.result.family,
            r.result.direction.as_str(),
            r.result.seed,
            r.cell_seed,
            r.result.delta
        );
    }
    let mut base = Vec::new();
    write_results_csv(records.iter().map(|r| &r.result), &mut base)?;
    let mut rdr = csv::Reader::from_reader(base.as_slice());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    header.extend(["cell_seed", "lambda", "pair_set_hash"].map(str::to_owned));
    w.write_record(&header)?;
    for (rec, r) in rdr.records().zip(&records) {
        let mut row: Vec<String> = rec?.iter().map(str::to_owned).collect();
        row.push(r.cell_seed.to_string());
        row.push(r.lambda.map(|l| l.to_string()).unwrap_or_default());
        row.push(r.pair_set_hash.clone());
        w.write_record(&row)?;
    }
    let table = w
        .into_inner()
        .map_err(|e| Error::io(prefix, e.into_error()))?;
    run.write_csv(&format!("{prefix}_results.csv"), &table)?;

    let results: Vec<_> = records.iter().map(|r| r.result.clone()).collect();
    let agg = aggregate(&results)?;
    run.write_json(
        &format!("{prefix}_aggregate.json"),
        body(json!({ "cells": records.len(), "aggregate": agg })),
    )?;
    for g in &agg.groups {
        println!(
            "{} {}: n={} mean_delta={:.4} mean_base={:.4}",
            g.family,
            g.direction.as_str(),
            g.n,
            g.mean_delta,
            g.mean_supervised
        );
    }
    Ok(())
}

pub fn ssl(global: &GlobalArgs, args: SslArgs) -> Result<()> {
    let (a, run) = RunConfig::resolve(global, "ssl", args)?;
    let g = grid(&a.grid)?;
    let config = SslConfig {
        k: a.k,
        m: a.m,
        test: a.test,
        iterations: a.iterations,
        noise_p: a.p,
        mode: g.mode,
        channel: channel_config(&a.channel)?,
        metric: g.metric,
        max_pseudo_bits_per_token: a.max_pseudo_bits_per_token,
    };
    let records = run_ssl_grid(
        &g.families,
        &g.directions,
        &g.seeds,
        &g.lines,
        &config,
        run.global_seed,
    )?;
    emit_grid(&run, "ssl", records)
}

pub fn da(global: &GlobalArgs, args: DaArgs) -> Result<()> {
    let (a, run) = RunConfig::resolve(global, "da", args)?;
    let g = grid(&a.grid)?;
    let adaptation: Adaptation = a.adaptation.parse()?;
    let config = DaConfig {
        n_source: a.n_source,
        n_adapt: a.n_adapt,
        n_test: a.n_test,
        source_p: a.source_p,
        target_p: a.target_p,
        mode: g.mode,
        channel: channel_config(&a.channel)?,
        metric: g.metric,
        adaptation,
        lambda_grid: a.lambda_grid.clone(),
        dev_fraction: a.dev_fraction,
    };
    let records = run_da_grid(
        &g.families,
        &g.directions,
        &g.seeds,
        &g.lines,
        &config,
        run.global_seed,
    )?;
    emit_grid(&run, "da", records)
}

fn parse_stats(text: &str) -> Result<SummaryStats> {
    let bad = || Error::InvalidStats(format!("expected n,mean,std, got {text:?}"));
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let [n, mean, std] = parts.as_slice() else {
        return Err(bad());
    };
    SummaryStats::new(
        n.parse().map_err(|_| bad())?,
        mean.parse().map_err(|_| bad())?,
        std.parse().map_err(|_| bad())?,
    )
}

fn stats_from_values(path: &Path) -> Result<(String, SummaryStats, String, SummaryStats)> {
    require_file(path)?;
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let (Some(g), Some(v)) = (rec.get(0), rec.get(1)) else {
            return Err(Error::Record {
                line,
                message: "expected group,value".into(),
            });
        };
        let v: f64 = v.trim().parse().map_err(|_| Error::Record {
            line,
            message: format!("invalid value {v:?}"),
        })?;
        match groups.iter_mut().find(|(name, _)| name == g) {
            Some((_, xs)) => xs.push(v),
            None => groups.push((g.to_owned(), vec![v])),
        }
    }
    let [(na, a), (nb, b)] = <[(String, Vec<f64>); 2]>::try_from(groups).map_err(|g| {
        Error::InvalidStats(format!("expected exactly two groups, found {}", g.len()))
    })?;
    Ok((
        na,
        SummaryStats::from_samples(&a)?,
        nb,
        SummaryStats::from_samples(&b)?,
    ))
}

pub fn meta(global: &GlobalArgs, args: MetaArgs) -> Result<()> {
    let (a, run) = RunConfig::resolve(global, "meta", args)?;
    let (name_a, sa, name_b, sb) = match (&a.a, &a.b, &a.values) {
        (Some(x), Some(y), None) => (
            "a".to_owned(),
            parse_stats(x)?,
            "b".to_owned(),
            parse_stats(y)?,
        ),
        (None, None, Some(path)) => stats_from_values(path)?,
        _ => return Err(Error::Config("give either --a and --b, or --values".into())),
    };
    let result = welch_t_test(&sa, &sb)?;
    run.write_json(
        "meta.json",
        body(json!({
            "groups": { "a": { "name": name_a, "stats": sa }, "b": { "name": name_b, "stats": sb } },
            "t_statistic": result.t_statistic,
            "df": result.df,
            "p_two_sided": result.p_two_sided,
            "convention": "t = (mean_b - mean_a) / se",
        })),
    )?;
    println!(
        "t = {:.5}, df = {:.3}, p = {:.6}",
        result.t_statistic, result.df, result.p_two_sided
    );
    Ok(())
}

pub fn report(global: &GlobalArgs, args: ReportArgs) -> Result<()> {
    let (a, run) = RunConfig::resolve(global, "report", args)?;
    require_file(&a.results)?;
    let file = fs::File::open(&a.results).map_err(|e| Error::io(&a.results, e))?;
    let rows = read_results_csv(file)?;
    let agg = aggregate(&rows)?;
    let source = a
        .results
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    run.write_json(
        "report_aggregate.json",
        body(json!({ "source": source, "cells": rows.len(), "aggregate": agg })),
    )?;
    for g in &agg.groups {
        println!(
            "{} {}: n={} mean_delta={:.4}",
            g.family,
            g.direction.as_str(),
            g.n,
            g.mean_delta
        );
    }
    Ok(())
}
