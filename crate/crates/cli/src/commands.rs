use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;

use iqamix_core::controller::{read_trajectory, run_loop, AdjustPlan, LoopConfig};
use iqamix_core::datasets::{
    emit_d1_pairs, ingest_mos, subsample_balanced, write_mos, write_pairs, IngestOptions,
    MosRecord, PoolStats,
};
use iqamix_core::manifest::{sample_mixture, write_manifest_file, MixtureCounts};
use iqamix_core::metrics::{
    description_report, mcq_report, plcc_with, srcc, DescriptionRating, McqRecord, PairedSample,
    PlccMapping,
};
use iqamix_core::mixopt::{coarse_search, CoarseResult, MixRatio, SearchConfig};
use iqamix_core::scoring::{score_batch, write_scores, BatchOptions, PredictedScore, ScoreMode};
use iqamix_core::{Error, LevelScale};

use crate::config::{self, config_error};
use crate::record::{file_sha256, Recorder};
use crate::{
    ConvertArgs, EvalDescArgs, EvalIqaArgs, EvalMcqArgs, Format, MixAdjustArgs, MixSearchArgs,
    ModeArg, PlccArg, SampleArgs, ScoreArgs, SubsampleArgs,
};

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn delimiter(c: char) -> Result<u8> {
    u8::try_from(c)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| config_error(format!("delimiter '{c}' is not a single ASCII character")))
}

fn report_diagnostics(source: &Path, diags: &[iqamix_core::error::Diagnostic]) {
    for d in diags {
        log::warn!("{}: {d}", source.display());
    }
    if !diags.is_empty() {
        eprintln!(
            "{}: skipped {} malformed record(s)",
            source.display(),
            diags.len()
        );
    }
}

fn read_mos(path: &Path, scale: &LevelScale, delim: char, strict: bool) -> Result<Vec<MosRecord>> {
    let opts = IngestOptions {
        delimiter: delimiter(delim)?,
        strict,
    };
    let ingest = ingest_mos(open(path)?, scale, &opts, &path.display().to_string())?;
    report_diagnostics(path, &ingest.diagnostics);
    if ingest.records.is_empty() {
        return Err(Error::Degenerate(format!("{} holds no MOS records", path.display())).into());
    }
    Ok(ingest.records)
}

pub fn convert(a: &ConvertArgs) -> Result<()> {
    let scale: LevelScale = a.scale.parse()?;
    let mut rec = Recorder::start(
        "convert",
        None,
        json!({"scale": [scale.min(), scale.max()], "delimiter": a.delimiter.to_string(),
               "lenient": a.lenient, "inline_system": a.inline_system}),
    );
    rec.input("mos", &a.input)?;
    let records = read_mos(&a.input, &scale, a.delimiter, !a.lenient)?;
    let pairs = emit_d1_pairs(&records, &scale)?;
    write_pairs(create(&a.out)?, &pairs, a.inline_system)?;

    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for r in &records {
        *histogram.entry(scale.level_index(r.mos)?).or_default() += 1;
    }
    let labels = scale.labels().expect("five-level scale");
    println!("{:<10} {:>8}", "level", "count");
    for (i, label) in labels.iter().enumerate() {
        println!(
            "{label:<10} {:>8}",
            histogram.get(&(i + 1)).copied().unwrap_or(0)
        );
    }
    println!("{:<10} {:>8}", "total", pairs.len());
    rec.finish(&a.out, &[&a.out])?;
    Ok(())
}

pub fn score(a: &ScoreArgs) -> Result<()> {
    let rescale = a
        .scale
        .as_deref()
        .map(str::parse::<LevelScale>)
        .transpose()?;
    let mode = match a.mode {
        ModeArg::FiveLevel => ScoreMode::FiveLevel,
        ModeArg::Binary => ScoreMode::Binary,
    };
    let mut rec = Recorder::start(
        "score",
        None,
        json!({"mode": format!("{:?}", a.mode), "lenient": a.lenient,
               "scale": rescale.as_ref().map(|s| [s.min(), s.max()])}),
    );
    rec.input("logits", &a.input)?;
    let opts = BatchOptions {
        mode,
        strict: !a.lenient,
        rescale,
    };
    let outcome = score_batch(open(&a.input)?, &opts, &a.input.display().to_string())?;
    report_diagnostics(&a.input, &outcome.diagnostics);
    write_scores(create(&a.out)?, &outcome.scores)
        .with_context(|| format!("writing {}", a.out.display()))?;
    println!("scored {} record(s)", outcome.scores.len());
    rec.finish(&a.out, &[&a.out])?;
    Ok(())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(v);
    }
    Ok(out)
}

/// Prints a report and, with `--out`, also writes it with a run record.
fn emit_report<T: Serialize>(
    report: &T,
    text: impl FnOnce() -> String,
    format: Format,
    out: Option<&Path>,
    rec: Recorder,
) -> Result<()> {
    let rendered = match format {
        Format::Json => serde_json::to_string_pretty(report)? + "\n",
        Format::Text => text(),
    };
    match out {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(rendered.as_bytes())?;
            w.flush()?;
            rec.finish(path, &[path])?;
        }
        None => print!("{rendered}"),
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct IqaReport {
    pub n: usize,
    pub srcc: f64,
    pub plcc: f64,
    pub avg: f64,
    pub plcc_mapping: PlccMapping,
    pub unmatched_predictions: usize,
    pub unmatched_ground_truth: usize,
}

pub fn eval_iqa(a: &EvalIqaArgs) -> Result<()> {
    // without a declared scale any finite MOS is accepted
    let scale = match &a.scale {
        Some(s) => s.parse()?,
        None => LevelScale::new(-1e300, 1e300)?,
    };
    let mapping = match a.plcc {
        PlccArg::Raw => PlccMapping::Raw,
        PlccArg::Logistic => PlccMapping::Logistic4,
    };
    let mut rec = Recorder::start("eval-iqa", None, json!({"plcc": mapping}));
    rec.input("scores", &a.scores)?;
    rec.input("mos", &a.mos)?;

    let scores: Vec<PredictedScore> = read_jsonl(&a.scores)?;
    let mos = read_mos(&a.mos, &scale, a.delimiter, true)?;
    let mut truth: HashMap<&str, f64> = HashMap::with_capacity(mos.len());
    for r in &mos {
        if truth.insert(&r.image_id, r.mos).is_some() {
            return Err(Error::Degenerate(format!(
                "duplicate image id '{}' in MOS file",
                r.image_id
            ))
            .into());
        }
    }
    let mut seen = HashMap::with_capacity(scores.len());
    let (mut pred, mut gt) = (Vec::new(), Vec::new());
    let mut unmatched_predictions = 0;
    for s in &scores {
        if seen.insert(s.id.as_str(), ()).is_some() {
            return Err(Error::Degenerate(format!("duplicate id '{}' in scores", s.id)).into());
        }
        match truth.get(s.id.as_str()) {
            Some(&m) => {
                pred.push(s.score);
                gt.push(m);
            }
            None => unmatched_predictions += 1,
        }
    }
    let unmatched_ground_truth = mos.len() - pred.len();
    if pred.is_empty() {
        return Err(Error::EmptyJoin {
            unmatched_left: unmatched_predictions,
            unmatched_right: unmatched_ground_truth,
        }
        .into());
    }
    if unmatched_predictions + unmatched_ground_truth > 0 {
        eprintln!(
            "join: {unmatched_predictions} prediction(s) and {unmatched_ground_truth} ground-truth row(s) unmatched"
        );
    }
    let sample = PairedSample::new(pred, gt)?;
    let (s, p) = (srcc(&sample)?, plcc_with(&sample, mapping)?);
    let report = IqaReport {
        n: sample.len(),
        srcc: s,
        plcc: p,
        avg: (s + p) / 2.0,
        plcc_mapping: mapping,
        unmatched_predictions,
        unmatched_ground_truth,
    };
    emit_iqa(report, a, rec)
}

fn emit_iqa(report: IqaReport, a: &EvalIqaArgs, rec: Recorder) -> Result<()> {
    let text = || {
        format!(
            "n     {}\nSRCC  {:.4}\nPLCC  {:.4}\navg   {:.4}\n",
            report.n, report.srcc, report.plcc, report.avg
        )
    };
    emit_report(&report, text, a.format, a.out.as_deref(), rec)
}

pub fn eval_mcq(a: &EvalMcqArgs) -> Result<()> {
    let mut rec = Recorder::start("eval-mcq", None, json!({}));
    rec.input("answers", &a.input)?;
    let records: Vec<McqRecord> = read_jsonl(&a.input)?;
    let report = mcq_report(&records)?;
    emit_report(
        &report,
        || report.to_table(),
        a.format,
        a.out.as_deref(),
        rec,
    )
}

pub fn eval_desc(a: &EvalDescArgs) -> Result<()> {
    let mut rec = Recorder::start("eval-desc", None, json!({}));
    rec.input("ratings", &a.input)?;
    let ratings: Vec<DescriptionRating> = read_jsonl(&a.input)?;
    let report = description_report(&ratings)?;
    emit_report(
        &report,
        || report.to_table(),
        a.format,
        a.out.as_deref(),
        rec,
    )
}

pub fn subsample(a: &SubsampleArgs) -> Result<()> {
    let scale: LevelScale = a.scale.parse()?;
    let mut rec = Recorder::start(
        "subsample",
        Some(a.seed),
        json!({"scale": [scale.min(), scale.max()], "target": a.target, "bins": a.bins,
               "delimiter": a.delimiter.to_string(), "lenient": a.lenient}),
    );
    rec.input("mos", &a.input)?;
    let records = read_mos(&a.input, &scale, a.delimiter, !a.lenient)?;
    let subset = subsample_balanced(&records, &scale, a.target, a.bins, a.seed)?;
    write_mos(create(&a.out)?, &subset, delimiter(a.delimiter)?)?;
    let (before, after) = (PoolStats::of(&records), PoolStats::of(&subset));
    println!("{:<8} {:>8} {:>10} {:>10}", "", "size", "mean", "std");
    for (name, s) in [("source", before), ("sampled", after)] {
        println!(
            "{name:<8} {:>8} {:>10.3} {:>10.3}",
            s.size, s.mean_mos, s.std_mos
        );
    }
    rec.finish(&a.out, &[&a.out])?;
    Ok(())
}

fn seed_of(flag: Option<u64>, cfg: &config::Config) -> u64 {
    flag.or(cfg.seed)
        .or(cfg.search.as_ref().map(|s| s.seed))
        .unwrap_or(0)
}

fn record_pools(rec: &mut Recorder, loaded: &config::Loaded) -> Result<()> {
    if let Some(path) = &loaded.path {
        rec.input("config", path)?;
    }
    if let Some(p) = &loaded.config.pools {
        for (tag, path) in p.files()? {
            rec.input(&format!("pool_{tag}"), &path)?;
        }
    }
    Ok(())
}

fn parse_counts(s: &str) -> Result<MixtureCounts> {
    let parts: Vec<u64> = s
        .split([',', ':'])
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| config_error(format!("count '{p}' is not a nonnegative integer")))
        })
        .collect::<Result<_>>()?;
    match parts[..] {
        [a, b, c] => Ok(MixtureCounts::new(a, b, c)),
        _ => Err(config_error(format!("counts '{s}' must have three parts"))),
    }
}

pub fn sample(a: &SampleArgs) -> Result<()> {
    let loaded = config::load(Some(&a.config))?;
    let cfg = &loaded.config;
    let seed = seed_of(a.seed, cfg);
    let counts = match (&a.counts, &a.ratio, a.base) {
        (Some(c), None, None) => parse_counts(c)?,
        (None, Some(r), Some(base)) => r.parse::<MixRatio>()?.counts_for_d1(base),
        (None, Some(r), None) => {
            let pools = cfg.pools_config()?.load()?;
            r.parse::<MixRatio>()?.counts_for_d1(pools.sizes().d1)
        }
        _ => {
            return Err(config_error(
                "give either --counts, or --ratio with an optional --base",
            ))
        }
    };
    let mut rec = Recorder::start(
        "sample",
        Some(seed),
        json!({"counts": counts, "allow_replacement": a.allow_replacement}),
    );
    record_pools(&mut rec, &loaded)?;
    let pools = cfg.pools_config()?.load()?;
    let manifest = sample_mixture(&pools, counts, seed, a.allow_replacement)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_manifest_file(&a.out, &manifest)?;
    println!(
        "sampled {} pairs (d1 {}, d2 {}, d3 {})",
        counts.total(),
        counts.d1,
        counts.d2,
        counts.d3
    );
    rec.finish(&a.out, &[&a.out])?;
    Ok(())
}

pub fn mix_search(a: &MixSearchArgs) -> Result<()> {
    let loaded = config::load(Some(&a.config))?;
    let cfg = &loaded.config;
    let mut search: SearchConfig = cfg.search.clone().unwrap_or_default();
    search.seed = seed_of(a.seed, cfg);
    if let Some(j) = a.jobs {
        search.jobs = j;
    }
    if let Some(w) = &a.work_dir {
        search.work_dir = w.clone();
    }
    search.keep_manifests |= a.keep_manifests;
    search.validate()?;

    let mut params = serde_json::to_value(&search)?;
    if let Some(o) = params.as_object_mut() {
        // scheduling and scratch space do not change the result
        o.remove("jobs");
        o.remove("work_dir");
        o.remove("keep_manifests");
    }
    let mut rec = Recorder::start("mix-search", Some(search.seed), params);
    record_pools(&mut rec, &loaded)?;
    let pools = cfg.pools_config()?.load()?;
    let oracle = cfg.oracle()?;

    match coarse_search(oracle.as_ref(), &pools, &search) {
        Ok(result) => {
            write_json(&a.out, &result)?;
            for w in &result.warnings {
                eprintln!("warning: {w}");
            }
            let [d1, d2, d3] = [result.ratio.d1, result.ratio.d2, result.ratio.d3];
            println!("D2:D3          {:.4}", result.d2_d3_ratio);
            println!("(D2+D3):D1     {:.4}", result.mixed_d1_ratio);
            println!("D1:D2:D3       {d1:.2}:{d2:.2}:{d3:.2}");
            println!("lambda_loss    {:.6}", result.lambda_loss);
            rec.finish(&a.out, &[&a.out])?;
            Ok(())
        }
        Err(failure) => {
            let partial = partial_path(&a.out);
            write_json(&partial, &failure.partial)?;
            eprintln!("partial results written to {}", partial.display());
            Err(failure.error.into())
        }
    }
}

fn partial_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".partial.json");
    out.with_file_name(name)
}

pub fn mix_adjust(a: &MixAdjustArgs) -> Result<()> {
    let loaded = config::load(Some(&a.config))?;
    let cfg = &loaded.config;
    let coarse_text =
        std::fs::read(&a.coarse).with_context(|| format!("reading {}", a.coarse.display()))?;
    let coarse: CoarseResult = serde_json::from_slice(&coarse_text).map_err(|e| Error::Record {
        path: a.coarse.display().to_string(),
        line: e.line(),
        message: format!("not a coarse search result: {e}"),
    })?;
    let mut plan = AdjustPlan::from_coarse(&coarse, format!("sha256:{}", file_sha256(&a.coarse)?));
    let adj = &cfg.adjust;
    if let Some(l) = a.lambda_loss.or(adj.lambda_loss) {
        plan.params.lambda_loss = l;
    }
    if let Some(t) = a.tolerance.or(adj.tolerance) {
        plan.params.tolerance = t;
    }
    if let Some(f) = a.factor.or(adj.factor) {
        plan.params.factor = f;
    }
    plan.params.validate()?;
    let seed = seed_of(a.seed, cfg);
    let mut lc = LoopConfig::new(
        seed,
        a.work_dir
            .clone()
            .or(adj.work_dir.clone())
            .unwrap_or_else(|| "work".into()),
    );
    if let Some(m) = a.max_epochs.or(adj.max_epochs) {
        lc.max_epochs = m;
    }
    lc.keep_manifests = a.keep_manifests || adj.keep_manifests;

    let mut rec = Recorder::start(
        "mix-adjust",
        Some(seed),
        json!({"params": plan.params, "max_epochs": lc.max_epochs,
               "initial_counts": plan.initial_counts, "d2_d3": plan.d2_d3}),
    );
    rec.input("coarse", &a.coarse)?;
    record_pools(&mut rec, &loaded)?;
    let pools = cfg.pools_config()?.load()?;
    let oracle = cfg.oracle()?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let trajectory = run_loop(oracle.as_ref(), &plan, &pools, &lc, &a.out).map_err(|f| {
        eprintln!(
            "{} epoch(s) kept in {}",
            f.trajectory.epochs.len(),
            a.out.display()
        );
        f.error
    })?;
    debug_assert_eq!(read_trajectory(&a.out).ok().as_ref(), Some(&trajectory));

    println!(
        "{:<6} {:>9} {:>9} {:>9} {:>10}  action",
        "epoch", "d1", "d2", "d3", "ratio"
    );
    for e in &trajectory.epochs {
        println!(
            "{:<6} {:>9} {:>9} {:>9} {:>10.6}  {}",
            e.epoch, e.counts.d1, e.counts.d2, e.counts.d3, e.ratio, e.action
        );
    }
    println!("lambda_loss {:.6}", plan.params.lambda_loss);
    rec.finish(&a.out, &[&a.out])?;
    Ok(())
}
