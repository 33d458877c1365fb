//! Training manifests: seeded, provenance-tagged samples drawn from the
//! three instruction pools.
//!
//! A manifest file is line-delimited JSON. The first line is a
//! [`ManifestHeader`]; each following line is a [`ManifestEntry`] naming the
//! pool, the 1-based source line and the id of one sampled pair.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::datasets::{LoadedPool, PoolTag};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Lightweight view of a pool: just what a manifest needs to reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndex {
    pub tag: PoolTag,
    pub ids: Vec<String>,
    pub source_lines: Vec<usize>,
}

impl PoolIndex {
    pub fn from_loaded(pool: &LoadedPool) -> Self {
        Self {
            tag: pool.tag,
            ids: pool.pairs.iter().map(|p| p.id.clone()).collect(),
            source_lines: pool.source_lines.clone(),
        }
    }

    /// A pool of `n` anonymous items with ids `"<tag>-<line>"`.
    pub fn synthetic(tag: PoolTag, n: usize) -> Self {
        Self {
            tag,
            ids: (1..=n).map(|i| format!("{tag}-{i}")).collect(),
            source_lines: (1..=n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixturePools {
    pub d1: PoolIndex,
    pub d2: PoolIndex,
    pub d3: PoolIndex,
}

impl MixturePools {
    pub fn synthetic(d1: usize, d2: usize, d3: usize) -> Self {
        Self {
            d1: PoolIndex::synthetic(PoolTag::D1, d1),
            d2: PoolIndex::synthetic(PoolTag::D2, d2),
            d3: PoolIndex::synthetic(PoolTag::D3, d3),
        }
    }

    pub fn get(&self, tag: PoolTag) -> &PoolIndex {
        match tag {
            PoolTag::D1 => &self.d1,
            PoolTag::D2 => &self.d2,
            PoolTag::D3 => &self.d3,
        }
    }

    pub fn sizes(&self) -> MixtureCounts {
        MixtureCounts {
            d1: self.d1.len() as u64,
            d2: self.d2.len() as u64,
            d3: self.d3.len() as u64,
        }
    }
}

/// Number of pairs drawn from each pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MixtureCounts {
    pub d1: u64,
    pub d2: u64,
    pub d3: u64,
}

impl MixtureCounts {
    pub fn new(d1: u64, d2: u64, d3: u64) -> Self {
        Self { d1, d2, d3 }
    }

    pub fn get(&self, tag: PoolTag) -> u64 {
        match tag {
            PoolTag::D1 => self.d1,
            PoolTag::D2 => self.d2,
            PoolTag::D3 => self.d3,
        }
    }

    pub fn total(&self) -> u64 {
        self.d1 + self.d2 + self.d3
    }

    /// Each pool's share of the total.
    pub fn fractions(&self) -> MixFractions {
        let t = self.total().max(1) as f64;
        MixFractions {
            d1: self.d1 as f64 / t,
            d2: self.d2 as f64 / t,
            d3: self.d3 as f64 / t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixFractions {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub seed: u64,
    pub counts: MixtureCounts,
    pub ratio: MixFractions,
    /// Pools whose requested count exceeded their size and were drawn with
    /// repetition.
    #[serde(default)]
    pub oversampled: Vec<PoolTag>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub pool: PoolTag,
    pub source_line: usize,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub entries: Vec<ManifestEntry>,
}

/// Draws `counts` pairs from the pools and shuffles them into one list.
///
/// Without `allow_replacement` every count must fit its pool. With it, an
/// oversized count takes whole copies of the pool and samples the remainder
/// without replacement, so every pair appears at least `count / size` times.
pub fn sample_mixture(
    pools: &MixturePools,
    counts: MixtureCounts,
    seed: u64,
    allow_replacement: bool,
) -> Result<Manifest> {
    let mut rng = rng_from_seed(seed);
    let mut entries = Vec::with_capacity(counts.total() as usize);
    let mut oversampled = Vec::new();
    for tag in PoolTag::ALL {
        let want = counts.get(tag) as usize;
        if want == 0 {
            continue;
        }
        let pool = pools.get(tag);
        if pool.is_empty() {
            return Err(Error::Infeasible(format!(
                "requested {want} pairs from empty pool {tag}"
            )));
        }
        if want > pool.len() {
            if !allow_replacement {
                return Err(Error::Infeasible(format!(
                    "requested {want} pairs from pool {tag} of size {}",
                    pool.len()
                )));
            }
            log::info!(
                "pool {tag}: {want} requested from {} available, sampling with repetition",
                pool.len()
            );
            oversampled.push(tag);
        }
        let push = |entries: &mut Vec<ManifestEntry>, i: usize| {
            entries.push(ManifestEntry {
                pool: tag,
                source_line: pool.source_lines[i],
                id: pool.ids[i].clone(),
            })
        };
        for _ in 0..want / pool.len() {
            for i in 0..pool.len() {
                push(&mut entries, i);
            }
        }
        for i in index::sample(&mut rng, pool.len(), want % pool.len()) {
            push(&mut entries, i);
        }
    }
    entries.shuffle(&mut rng);
    Ok(Manifest {
        header: ManifestHeader {
            seed,
            counts,
            ratio: counts.fractions(),
            oversampled,
        },
        entries,
    })
}

pub fn write_manifest<W: Write>(w: W, manifest: &Manifest) -> Result<()> {
    let ctx = |e| Error::io("writing manifest", e);
    let json = |e: serde_json::Error| ctx(std::io::Error::other(e));
    let mut w = BufWriter::new(w);
    serde_json::to_writer(&mut w, &manifest.header).map_err(json)?;
    w.write_all(b"\n").map_err(ctx)?;
    for e in &manifest.entries {
        serde_json::to_writer(&mut w, e).map_err(json)?;
        w.write_all(b"\n").map_err(ctx)?;
    }
    w.flush().map_err(ctx)
}

pub fn write_manifest_file(path: &Path, manifest: &Manifest) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    write_manifest(f, manifest)
}

/// Reads only the header line of a manifest file.
pub fn read_manifest_header(path: &Path) -> Result<ManifestHeader> {
    let f = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut first = String::new();
    BufReader::new(f)
        .read_line(&mut first)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&first).map_err(|e| {
        Error::record(
            path.display().to_string(),
            1,
            format!("malformed manifest header: {e}"),
        )
    })
}

pub fn read_manifest<R: BufRead>(input: R, source: &str) -> Result<Manifest> {
    let mut lines = input.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::record(source, 1, "manifest is empty"))?;
    let first = first.map_err(|e| Error::io(format!("reading {source}"), e))?;
    let header: ManifestHeader = serde_json::from_str(&first)
        .map_err(|e| Error::record(source, 1, format!("malformed manifest header: {e}")))?;
    let mut entries = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(format!("reading {source}"), e))?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::record(source, i + 1, format!("malformed entry: {e}")))?,
        );
    }
    Ok(Manifest { header, entries })
}
