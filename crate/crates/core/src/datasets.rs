//! MOS-labelled datasets and instruction-pair pools.
//!
//! Three pools feed training: `d1` holds scoring pairs generated here from
//! MOS files, `d2` (quality interpreting) and `d3` (general visual
//! instructions) are produced elsewhere and loaded as opaque pair files.

use std::fmt;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Diagnostic, Error, Result};
use crate::levels::{score_to_level, LevelScale};
use crate::rng::rng_from_seed;

/// System prefix attached to every scoring pair.
pub const SCORING_SYSTEM_PROMPT: &str = "Assume you are an image quality evaluator";

/// Question of every scoring pair. `<img>` marks where the image is spliced in.
pub const SCORING_QUESTION: &str = "<img> How would you rate the quality of the image.";

/// Answer of a scoring pair for the given level label.
pub fn scoring_answer(label: &str) -> String {
    format!("The quality of the image is {label}.")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosRecord {
    pub image_id: String,
    pub mos: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolStats {
    pub size: usize,
    pub mean_mos: f64,
    /// Population standard deviation.
    pub std_mos: f64,
}

impl PoolStats {
    pub fn from_scores<'a>(scores: impl IntoIterator<Item = &'a f64>) -> Self {
        let scores: Vec<f64> = scores.into_iter().copied().collect();
        if scores.is_empty() {
            return Self {
                size: 0,
                mean_mos: 0.0,
                std_mos: 0.0,
            };
        }
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        Self {
            size: scores.len(),
            mean_mos: mean,
            std_mos: var.sqrt(),
        }
    }

    pub fn of(records: &[MosRecord]) -> Self {
        Self::from_scores(records.iter().map(|r| &r.mos))
    }
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub delimiter: u8,
    /// Fail on the first bad row instead of skipping it.
    pub strict: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            strict: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MosIngest {
    pub records: Vec<MosRecord>,
    pub stats: PoolStats,
    pub diagnostics: Vec<Diagnostic>,
}

/// Reads a delimited MOS table with a header naming `image_id` and `mos`.
/// Row numbers in errors count the header as line 1.
pub fn ingest_mos<R: Read>(
    input: R,
    scale: &LevelScale,
    opts: &IngestOptions,
    source: &str,
) -> Result<MosIngest> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| Error::record(source, 1, format!("unreadable header: {e}")))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::record(source, 1, format!("missing column '{name}'")))
    };
    let (id_col, mos_col) = (column("image_id")?, column("mos")?);

    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::record(source, line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let parsed = (|| {
            let id = row
                .get(id_col)
                .filter(|s| !s.is_empty())
                .ok_or("empty image_id")?;
            let raw = row.get(mos_col).ok_or("missing mos value")?;
            let mos: f64 = raw
                .parse()
                .map_err(|_| format!("mos '{raw}' is not a number"))?;
            if !scale.contains(mos) {
                return Err(format!(
                    "mos {mos} outside the scale [{}, {}]",
                    scale.min(),
                    scale.max()
                ));
            }
            Ok(MosRecord {
                image_id: id.to_string(),
                mos,
            })
        })();
        match parsed {
            Ok(r) => records.push(r),
            Err(message) if opts.strict => return Err(Error::record(source, line, message)),
            Err(message) => diagnostics.push(Diagnostic { line, message }),
        }
    }
    let stats = PoolStats::of(&records);
    Ok(MosIngest {
        records,
        stats,
        diagnostics,
    })
}

pub fn write_mos<W: Write>(w: W, records: &[MosRecord], delimiter: u8) -> Result<()> {
    let mut out = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(w);
    let wrap = |e: csv::Error| Error::io("writing MOS table", std::io::Error::other(e));
    out.write_record(["image_id", "mos"]).map_err(wrap)?;
    for r in records {
        out.write_record([r.image_id.as_str(), &r.mos.to_string()])
            .map_err(wrap)?;
    }
    out.flush().map_err(|e| Error::io("writing MOS table", e))
}

/// Draws `target_size` records so that the MOS histogram is as flat as the
/// data allows.
///
/// The scale is cut into `bins` equal-width bins. Slots are handed out one
/// per bin in rounds, skipping bins that have run out of records, until the
/// target is met; the first round alone reproduces the per-bin cap
/// `ceil(target / non_empty_bins)`, later rounds spread any shortfall. Each
/// bin then contributes a uniform sample without replacement. Output keeps
/// the input order.
pub fn subsample_balanced(
    records: &[MosRecord],
    scale: &LevelScale,
    target_size: usize,
    bins: usize,
    seed: u64,
) -> Result<Vec<MosRecord>> {
    if bins < 2 {
        return Err(Error::Config(format!("need at least 2 bins (got {bins})")));
    }
    if target_size > records.len() {
        return Err(Error::Infeasible(format!(
            "target size {target_size} exceeds the {} available records",
            records.len()
        )));
    }
    if target_size == records.len() {
        return Ok(records.to_vec());
    }
    let binning = LevelScale::with_levels(scale.min(), scale.max(), bins)?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); bins];
    for (i, r) in records.iter().enumerate() {
        members[binning.level_index(r.mos)? - 1].push(i);
    }

    let mut take = vec![0usize; bins];
    let mut remaining = target_size;
    while remaining > 0 {
        let open: Vec<usize> = (0..bins).filter(|&b| take[b] < members[b].len()).collect();
        // whole rounds at once, then a partial round in bin order
        let smallest_spare = open
            .iter()
            .map(|&b| members[b].len() - take[b])
            .min()
            .expect("target below record count leaves an open bin");
        let rounds = (remaining / open.len()).min(smallest_spare);
        if rounds > 0 {
            for &b in &open {
                take[b] += rounds;
            }
            remaining -= rounds * open.len();
        } else {
            for &b in open.iter().take(remaining) {
                take[b] += 1;
            }
            remaining = 0;
        }
    }

    let mut rng = rng_from_seed(seed);
    let mut chosen = Vec::with_capacity(target_size);
    for (b, idx) in members.iter().enumerate() {
        if take[b] == 0 {
            continue;
        }
        chosen.extend(
            index::sample(&mut rng, idx.len(), take[b])
                .into_iter()
                .map(|k| idx[k]),
        );
    }
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| records[i].clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolTag {
    D1,
    D2,
    D3,
}

impl PoolTag {
    pub const ALL: [PoolTag; 3] = [PoolTag::D1, PoolTag::D2, PoolTag::D3];

    pub fn as_str(self) -> &'static str {
        match self {
            PoolTag::D1 => "d1",
            PoolTag::D2 => "d2",
            PoolTag::D3 => "d3",
        }
    }
}

impl fmt::Display for PoolTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "d1" => Ok(PoolTag::D1),
            "d2" => Ok(PoolTag::D2),
            "d3" => Ok(PoolTag::D3),
            other => Err(Error::Config(format!("unknown pool '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub from: String,
    pub value: String,
}

/// A single-image instruction pair. Conversations longer than one exchange
/// keep their later turns in `extra_turns`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionPair {
    pub id: String,
    pub image_ref: Option<String>,
    pub system: Option<String>,
    pub question: String,
    pub answer: String,
    pub extra_turns: Vec<Turn>,
    pub pool: PoolTag,
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    system: Option<String>,
    conversations: Vec<Turn>,
}

impl InstructionPair {
    fn to_record(&self, inline_system: bool) -> PairRecord {
        let (system, question) = match (&self.system, inline_system) {
            (Some(s), true) => (None, format!("{s}\n{}", self.question)),
            (s, _) => (s.clone(), self.question.clone()),
        };
        let mut conversations = vec![
            Turn {
                from: "human".into(),
                value: question,
            },
            Turn {
                from: "gpt".into(),
                value: self.answer.clone(),
            },
        ];
        conversations.extend(self.extra_turns.iter().cloned());
        PairRecord {
            id: self.id.clone(),
            image: self.image_ref.clone(),
            system,
            conversations,
        }
    }

    fn from_record(rec: PairRecord, pool: PoolTag) -> std::result::Result<Self, String> {
        let mut turns = rec.conversations.into_iter();
        let q = turns.next().ok_or("conversation is empty")?;
        let a = turns.next().ok_or("conversation has no answer turn")?;
        if q.from != "human" || a.from != "gpt" {
            return Err(format!(
                "first exchange must be human then gpt (got {} then {})",
                q.from, a.from
            ));
        }
        Ok(Self {
            id: rec.id,
            image_ref: rec.image,
            system: rec.system,
            question: q.value,
            answer: a.value,
            extra_turns: turns.collect(),
            pool,
        })
    }
}

/// One scoring pair per record, in record order.
pub fn emit_d1_pairs(records: &[MosRecord], scale: &LevelScale) -> Result<Vec<InstructionPair>> {
    records
        .iter()
        .map(|r| {
            let level = score_to_level(r.mos, scale)?;
            Ok(InstructionPair {
                id: r.image_id.clone(),
                image_ref: Some(r.image_id.clone()),
                system: Some(SCORING_SYSTEM_PROMPT.to_string()),
                question: SCORING_QUESTION.to_string(),
                answer: scoring_answer(level.label()),
                extra_turns: Vec::new(),
                pool: PoolTag::D1,
            })
        })
        .collect()
}

/// Writes pairs as line-delimited conversation records. With
/// `inline_system`, the system prefix is prepended to the question on its own
/// line instead of occupying the `system` field.
pub fn write_pairs<W: Write>(
    mut w: W,
    pairs: &[InstructionPair],
    inline_system: bool,
) -> Result<()> {
    let ctx = |e| Error::io("writing instruction pairs", e);
    for p in pairs {
        serde_json::to_writer(&mut w, &p.to_record(inline_system))
            .map_err(|e| ctx(std::io::Error::other(e)))?;
        w.write_all(b"\n").map_err(ctx)?;
    }
    w.flush().map_err(ctx)
}

#[derive(Debug, Clone)]
pub struct LoadedPool {
    pub tag: PoolTag,
    pub pairs: Vec<InstructionPair>,
    /// 1-based line of each pair in its source file.
    pub source_lines: Vec<usize>,
    pub warnings: Vec<String>,
}

impl LoadedPool {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Loads a line-delimited pair file and tags every pair with `tag`.
/// Duplicate ids are kept.
pub fn load_pool<R: BufRead>(input: R, tag: PoolTag, source: &str) -> Result<LoadedPool> {
    let mut pairs = Vec::new();
    let mut source_lines = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {source}"), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord = serde_json::from_str(&line)
            .map_err(|e| Error::record(source, i + 1, format!("malformed pair: {e}")))?;
        let pair =
            InstructionPair::from_record(rec, tag).map_err(|m| Error::record(source, i + 1, m))?;
        pairs.push(pair);
        source_lines.push(i + 1);
    }
    let mut warnings = Vec::new();
    if pairs.is_empty() {
        warnings.push(format!("pool {tag} from {source} is empty"));
        log::warn!("pool {tag} from {source} is empty");
    }
    Ok(LoadedPool {
        tag,
        pairs,
        source_lines,
        warnings,
    })
}
