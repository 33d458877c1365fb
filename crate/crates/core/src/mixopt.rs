//! Coarse data-mixture ratio search.
//!
//! The search runs in two one-dimensional stages. Stage one sweeps the
//! D2:D3 ratio with D1 absent and fits a quartic to the interpreting
//! performance; stage two fixes D2:D3 at that optimum, sweeps the ratio of
//! the merged D2+D3 data to D1 and fits a quartic to the weighted mean of
//! scoring and interpreting performance. The two optima compose into a
//! D1:D2:D3 ratio, and one confirmation run at that ratio records the
//! reference loss ratio `loss_scoring / loss_interpreting` used by the
//! epoch controller.
//!
//! Curves are fitted against the log10 of the swept ratio by default, which
//! makes the default 0.1..10 grids symmetric about zero.

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::manifest::{sample_mixture, write_manifest_file, MixtureCounts, MixturePools};
use crate::oracle::{Oracle, OracleRequest, OracleResponse};
use crate::rng::{derive_seed, round_half_up};
use crate::TOOL_VERSION;

/// Which ratio a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// D2:D3 with no D1.
    D2VsD3,
    /// (D2 + D3):D1 with D2:D3 held at the stage-one optimum.
    MixedVsD1,
}

impl Stage {
    fn id(self) -> u64 {
        match self {
            Stage::D2VsD3 => 1,
            Stage::MixedVsD1 => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::D2VsD3 => "d2_vs_d3",
            Stage::MixedVsD1 => "mixed_vs_d1",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameterization of the swept ratio `a:b` used as the regression axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// `log10(a / b)`.
    #[default]
    Log10,
    /// `a / (a + b)`.
    Fraction,
}

impl Axis {
    fn of_counts(self, a: u64, b: u64) -> f64 {
        let (a, b) = (a as f64, b as f64);
        match self {
            Axis::Log10 => (a / b).log10(),
            Axis::Fraction => a / (a + b),
        }
    }

    fn of_ratio(self, ratio: f64) -> f64 {
        match self {
            Axis::Log10 => ratio.log10(),
            Axis::Fraction => ratio / (1.0 + ratio),
        }
    }

    pub fn to_ratio(self, axis: f64) -> f64 {
        match self {
            Axis::Log10 => 10f64.powf(axis),
            Axis::Fraction => axis / (1.0 - axis),
        }
    }
}

/// One grid point: the nominal ratio and its log10.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub ratio: f64,
    pub log10: f64,
}

/// Default grid for a stage, sorted by ratio.
///
/// Stage one takes the full anchor pool against 10%, 20%, ..., 100% of the
/// other, in both directions: D2:D3 in {10/k} and {k/10} for k = 1..10,
/// sharing the 1:1 point. Stage two uses (D2+D3):D1 in 0.1, 0.2, ..., 0.9,
/// 1, 2, ..., 10.
pub fn default_grid(stage: Stage) -> Vec<GridPoint> {
    let mut points: Vec<GridPoint> = Vec::new();
    for k in 1..=10u32 {
        let lk = f64::from(k).log10();
        points.push(GridPoint {
            ratio: f64::from(k) / 10.0,
            log10: lk - 1.0,
        });
        let up = match stage {
            Stage::D2VsD3 => GridPoint {
                ratio: 10.0 / f64::from(k),
                log10: 1.0 - lk,
            },
            Stage::MixedVsD1 => GridPoint {
                ratio: f64::from(k),
                log10: lk,
            },
        };
        points.push(up);
    }
    normalize_grid(points)
}

fn normalize_grid(mut points: Vec<GridPoint>) -> Vec<GridPoint> {
    for p in &mut points {
        if p.log10 == 0.0 {
            p.log10 = 0.0; // drop a negative zero
        }
    }
    points.sort_by(|a, b| a.ratio.total_cmp(&b.ratio));
    points.dedup_by(|a, b| a.ratio == b.ratio);
    points
}

/// Grid from user-supplied ratios.
pub fn custom_grid(ratios: &[f64]) -> Result<Vec<GridPoint>> {
    if let Some(r) = ratios.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
        return Err(Error::Config(format!("grid ratio {r} must be positive")));
    }
    Ok(normalize_grid(
        ratios
            .iter()
            .map(|&ratio| GridPoint {
                ratio,
                log10: ratio.log10(),
            })
            .collect(),
    ))
}

/// The stage's default grid as ascending log10 values.
pub fn build_sweep_grid(stage: Stage) -> Vec<f64> {
    default_grid(stage).into_iter().map(|p| p.log10).collect()
}

/// Relative weights of the three pools.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixRatio {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl MixRatio {
    pub fn new(d1: f64, d2: f64, d3: f64) -> Result<Self> {
        let w = [d1, d2, d3];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().all(|v| *v == 0.0) {
            return Err(Error::Config(format!(
                "mix ratio {d1}:{d2}:{d3} needs nonnegative weights, at least one positive"
            )));
        }
        Ok(Self { d1, d2, d3 })
    }

    /// D1 = 1, with the merged D2+D3 data at `mixed_d1` times D1 split
    /// `d2_d3 : 1`.
    pub fn compose(d2_d3: f64, mixed_d1: f64) -> Self {
        Self {
            d1: 1.0,
            d2: mixed_d1 * d2_d3 / (1.0 + d2_d3),
            d3: mixed_d1 / (1.0 + d2_d3),
        }
    }

    /// Weights summing to one.
    pub fn simplex(&self) -> [f64; 3] {
        let t = self.d1 + self.d2 + self.d3;
        [self.d1 / t, self.d2 / t, self.d3 / t]
    }

    /// Counts with D1 at `base`, rounding half up.
    pub fn counts_for_d1(&self, base: u64) -> MixtureCounts {
        let scale = base as f64 / self.d1;
        MixtureCounts::new(
            base,
            round_half_up(self.d2 * scale),
            round_half_up(self.d3 * scale),
        )
    }
}

impl std::str::FromStr for MixRatio {
    type Err = Error;

    /// Parses `"1.00:2.50:1.04"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("ratio component '{p}' is not a number")))
            })
            .collect::<Result<_>>()?;
        match parts[..] {
            [a, b, c] => MixRatio::new(a, b, c),
            _ => Err(Error::Config(format!("ratio '{s}' must have three parts"))),
        }
    }
}

/// Splits `merged` pairs between D2 and D3 at `d2_d3 : 1`, rounding the D2
/// share half up.
pub fn split_merged(merged: u64, d2_d3: f64) -> (u64, u64) {
    let d2 = round_half_up(merged as f64 * d2_d3 / (1.0 + d2_d3)).min(merged);
    (d2, merged - d2)
}

/// Counts used for one grid point.
pub fn compose_counts(stage: Stage, ratio: f64, sizes: MixtureCounts, d2_d3: f64) -> MixtureCounts {
    match stage {
        Stage::D2VsD3 => {
            if ratio >= 1.0 {
                MixtureCounts::new(0, sizes.d2, round_half_up(sizes.d2 as f64 / ratio))
            } else {
                MixtureCounts::new(0, round_half_up(sizes.d3 as f64 * ratio), sizes.d3)
            }
        }
        Stage::MixedVsD1 => {
            let merged = round_half_up(sizes.d1 as f64 * ratio);
            let (d2, d3) = split_merged(merged, d2_d3);
            MixtureCounts::new(sizes.d1, d2, d3)
        }
    }
}

/// Oracle measurements at one grid point, averaged over repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformancePoint {
    /// Position on the regression axis, computed from the realized counts.
    pub ratio_axis_value: f64,
    pub nominal_ratio: f64,
    pub counts: MixtureCounts,
    /// Stage objective: interpreting performance in stage one, the weighted
    /// scoring/interpreting mean in stage two.
    pub performance: f64,
    pub perf_scoring: f64,
    pub perf_interpreting: f64,
    pub repeats: usize,
    pub loss_scoring: f64,
    pub loss_interpreting: f64,
}

/// Degree-4 least-squares polynomial on the ratio axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedCurve {
    /// Ascending powers: `c0 + c1 t + ... + c4 t^4`.
    pub coefficients: [f64; 5],
    pub fit_domain: [f64; 2],
    pub residual_rms: f64,
}

impl FittedCurve {
    pub fn eval(&self, t: f64) -> f64 {
        horner(&self.coefficients, t)
    }

    /// Whether the curve is constant over its domain up to rounding noise.
    pub fn is_flat(&self) -> bool {
        let [lo, hi] = self.fit_domain;
        let values: Vec<f64> = (0..=200)
            .map(|i| self.eval(lo + (hi - lo) * i as f64 / 200.0))
            .collect();
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        max - min <= 1e-9 * max.abs().max(1.0)
    }
}

fn horner(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * t + ci)
}

/// Fits a quartic to `(axis, performance)` pairs.
pub fn fit_curve(points: &[(f64, f64)]) -> Result<FittedCurve> {
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 5 {
        return Err(Error::RankDeficient(format!(
            "a quartic needs at least 5 distinct axis values (got {})",
            distinct.len()
        )));
    }
    if points
        .iter()
        .any(|(t, y)| !(t.is_finite() && y.is_finite()))
    {
        return Err(Error::Degenerate("non-finite sweep point".into()));
    }
    let design: Vec<Vec<f64>> = points
        .iter()
        .map(|&(t, _)| (0..5).map(|k| t.powi(k)).collect())
        .collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let coef = linalg::least_squares(&design, &y)
        .ok_or_else(|| Error::RankDeficient("ill-conditioned sweep design".into()))?;
    let coefficients = [coef[0], coef[1], coef[2], coef[3], coef[4]];
    let residual_rms = (points
        .iter()
        .map(|&(t, y)| (horner(&coefficients, t) - y).powi(2))
        .sum::<f64>()
        / points.len() as f64)
        .sqrt();
    Ok(FittedCurve {
        coefficients,
        fit_domain: [distinct[0], distinct[distinct.len() - 1]],
        residual_rms,
    })
}

pub fn fit_points(points: &[PerformancePoint]) -> Result<FittedCurve> {
    let pairs: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.ratio_axis_value, p.performance))
        .collect();
    fit_curve(&pairs)
}

/// Real roots of `a t^2 + b t + c` in a numerically stable form.
fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        return if b == 0.0 { vec![] } else { vec![-c / b] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let mut roots = vec![q / a];
    if q != 0.0 {
        roots.push(c / q);
    }
    roots
}

/// Stationary points of the curve inside `[lo, hi]`.
///
/// The cubic derivative is monotone between consecutive roots of the
/// second derivative, so each such segment holds at most one root, found by
/// bisection on a sign change.
fn stationary_points(c: &[f64; 5], lo: f64, hi: f64) -> Vec<f64> {
    let d1 = [c[1], 2.0 * c[2], 3.0 * c[3], 4.0 * c[4]];
    let mut knots = vec![lo];
    let mut inner: Vec<f64> = quadratic_roots(12.0 * c[4], 6.0 * c[3], 2.0 * c[2])
        .into_iter()
        .filter(|r| r.is_finite() && *r > lo && *r < hi)
        .collect();
    inner.sort_by(f64::total_cmp);
    knots.extend(inner);
    knots.push(hi);

    let mut roots = Vec::new();
    for w in knots.windows(2) {
        let (mut a, mut b) = (w[0], w[1]);
        let (mut fa, fb) = (horner(&d1, a), horner(&d1, b));
        if fa == 0.0 {
            roots.push(a);
            continue;
        }
        if fb == 0.0 {
            roots.push(b);
            continue;
        }
        if fa.signum() == fb.signum() {
            continue;
        }
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            let fm = horner(&d1, m);
            if fm == 0.0 {
                a = m;
                b = m;
                break;
            }
            if fm.signum() == fa.signum() {
                a = m;
                fa = fm;
            } else {
                b = m;
            }
        }
        roots.push(0.5 * (a + b));
    }
    roots
}

/// Axis value maximizing the fitted curve over its domain.
///
/// Candidates are the domain endpoints and every stationary point inside
/// it. Values equal to within `1e-12` relative count as ties and resolve to
/// the smaller axis value.
pub fn argmax_ratio(curve: &FittedCurve) -> f64 {
    let [lo, hi] = curve.fit_domain;
    let mut candidates = vec![lo, hi];
    candidates.extend(stationary_points(&curve.coefficients, lo, hi));
    candidates.sort_by(f64::total_cmp);
    let values: Vec<f64> = candidates.iter().map(|&t| curve.eval(t)).collect();
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * best.abs().max(1.0);
    candidates
        .iter()
        .zip(&values)
        .find(|(_, &v)| v >= best - tol)
        .map(|(&t, _)| t)
        .expect("at least the endpoints are candidates")
}

fn default_repeats() -> usize {
    3
}
fn default_jobs() -> usize {
    1
}
fn default_weight() -> f64 {
    0.5
}

/// Settings for a coarse search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Maximum concurrent oracle calls.
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub axis: Axis,
    /// Weight of scoring performance in the stage-two objective.
    #[serde(default = "default_weight")]
    pub scoring_weight: f64,
    /// Replacement D2:D3 grid, as ratios.
    #[serde(default)]
    pub grid_d2_vs_d3: Option<Vec<f64>>,
    /// Replacement (D2+D3):D1 grid, as ratios.
    #[serde(default)]
    pub grid_mixed_vs_d1: Option<Vec<f64>>,
    /// Directory for per-call manifests and result files.
    #[serde(default = "default_work_dir")]
    pub work_dir: PathBuf,
    #[serde(default)]
    pub keep_manifests: bool,
}

fn default_work_dir() -> PathBuf {
    PathBuf::from("work")
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            repeats: default_repeats(),
            jobs: default_jobs(),
            axis: Axis::default(),
            scoring_weight: default_weight(),
            grid_d2_vs_d3: None,
            grid_mixed_vs_d1: None,
            work_dir: default_work_dir(),
            keep_manifests: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.scoring_weight) {
            return Err(Error::Config("scoring_weight must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn grid(&self, stage: Stage) -> Result<Vec<GridPoint>> {
        let custom = match stage {
            Stage::D2VsD3 => &self.grid_d2_vs_d3,
            Stage::MixedVsD1 => &self.grid_mixed_vs_d1,
        };
        match custom {
            Some(r) => custom_grid(r),
            None => Ok(default_grid(stage)),
        }
    }

    fn objective(&self, stage: Stage, r: &OracleResponse) -> f64 {
        match stage {
            Stage::D2VsD3 => r.perf_interpreting,
            Stage::MixedVsD1 => {
                self.scoring_weight * r.perf_scoring
                    + (1.0 - self.scoring_weight) * r.perf_interpreting
            }
        }
    }
}

/// A sweep that stopped early, with every point completed before the first
/// failing one.
#[derive(Debug)]
pub struct SweepFailure {
    pub points: Vec<PerformancePoint>,
    pub error: Error,
}

/// Writes the manifest for one oracle call, runs the oracle, and removes the
/// manifest unless asked to keep it.
pub fn run_oracle_on(
    oracle: &dyn Oracle,
    pools: &MixturePools,
    counts: MixtureCounts,
    seed: u64,
    manifest_path: &Path,
    keep: bool,
) -> Result<OracleResponse> {
    let manifest = sample_mixture(pools, counts, seed, true)?;
    write_manifest_file(manifest_path, &manifest)?;
    drop(manifest);
    let req = OracleRequest::new(manifest_path, seed);
    let response = oracle.evaluate(&req);
    if !keep {
        let _ = std::fs::remove_file(manifest_path);
        let _ = std::fs::remove_file(req.result_path());
    }
    response
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Evaluates every grid point of a stage `repeats` times.
///
/// Each (point, repeat) call gets its own seed derived from the search seed,
/// used both to sample the manifest and as the oracle seed, so results do
/// not depend on `jobs`. Points come back in grid order.
pub fn sweep(
    oracle: &dyn Oracle,
    stage: Stage,
    pools: &MixturePools,
    config: &SearchConfig,
    d2_d3: f64,
) -> std::result::Result<Vec<PerformancePoint>, SweepFailure> {
    let fail = |error| SweepFailure {
        points: Vec::new(),
        error,
    };
    config.validate().map_err(fail)?;
    let grid = config.grid(stage).map_err(fail)?;
    std::fs::create_dir_all(&config.work_dir).map_err(|e| {
        fail(Error::io(
            format!("creating {}", config.work_dir.display()),
            e,
        ))
    })?;
    let sizes = pools.sizes();
    let counts: Vec<MixtureCounts> = grid
        .iter()
        .map(|g| compose_counts(stage, g.ratio, sizes, d2_d3))
        .collect();

    let tasks: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|p| (0..config.repeats).map(move |r| (p, r)))
        .collect();
    let run = |&(p, r): &(usize, usize)| -> Result<OracleResponse> {
        let seed = derive_seed(config.seed, &[stage.id(), p as u64, r as u64]);
        let path = config
            .work_dir
            .join(format!("{}-p{p:02}-r{r}.jsonl", stage.name()));
        run_oracle_on(oracle, pools, counts[p], seed, &path, config.keep_manifests)
    };
    let responses: Vec<Result<OracleResponse>> =
        with_pool(config.jobs, || tasks.par_iter().map(run).collect()).map_err(fail)?;

    let mut points = Vec::with_capacity(grid.len());
    let mut responses = responses.into_iter();
    for (p, g) in grid.iter().enumerate() {
        let mut got = Vec::with_capacity(config.repeats);
        for _ in 0..config.repeats {
            match responses.next().expect("one response per task") {
                Ok(r) => got.push(r),
                Err(error) => return Err(SweepFailure { points, error }),
            }
        }
        let n = got.len() as f64;
        let mean = |f: &dyn Fn(&OracleResponse) -> f64| got.iter().map(f).sum::<f64>() / n;
        let c = counts[p];
        let axis = match stage {
            Stage::D2VsD3 => config.axis.of_counts(c.d2, c.d3),
            Stage::MixedVsD1 => config.axis.of_counts(c.d2 + c.d3, c.d1),
        };
        points.push(PerformancePoint {
            ratio_axis_value: if axis.is_finite() {
                axis
            } else {
                config.axis.of_ratio(g.ratio)
            },
            nominal_ratio: g.ratio,
            counts: c,
            performance: mean(&|r| config.objective(stage, r)),
            perf_scoring: mean(&|r| r.perf_scoring),
            perf_interpreting: mean(&|r| r.perf_interpreting),
            repeats: got.len(),
            loss_scoring: mean(&|r| r.loss_scoring),
            loss_interpreting: mean(&|r| r.loss_interpreting),
        });
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCurves {
    pub d2_vs_d3: FittedCurve,
    pub mixed_vs_d1: FittedCurve,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StagePoints {
    pub d2_vs_d3: Vec<PerformancePoint>,
    pub mixed_vs_d1: Vec<PerformancePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confirmation {
    pub counts: MixtureCounts,
    pub response: OracleResponse,
}

/// Outcome of a completed coarse search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseResult {
    pub tool_version: String,
    pub oracle: String,
    pub seed: u64,
    pub repeats: usize,
    pub axis: Axis,
    pub scoring_weight: f64,
    pub pool_sizes: MixtureCounts,
    /// Optimal D2:D3.
    pub d2_d3_ratio: f64,
    /// Optimal (D2+D3):D1.
    pub mixed_d1_ratio: f64,
    /// Composed D1:D2:D3 with D1 = 1.
    pub ratio: MixRatio,
    /// `loss_scoring / loss_interpreting` at the confirmation run.
    pub lambda_loss: f64,
    pub confirmation: Confirmation,
    pub curves: StageCurves,
    pub sweep_points: StagePoints,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// What survives a search that failed part way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialCoarse {
    pub tool_version: String,
    pub oracle: String,
    pub seed: u64,
    pub failed_stage: String,
    pub error: String,
    pub d2_d3_ratio: Option<f64>,
    pub mixed_d1_ratio: Option<f64>,
    pub sweep_points: StagePoints,
    pub warnings: Vec<String>,
}

#[derive(Debug)]
pub struct CoarseFailure {
    pub partial: PartialCoarse,
    pub error: Error,
}

impl fmt::Display for CoarseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "search failed during {}: {}",
            self.partial.failed_stage, self.error
        )
    }
}

fn stage_optimum(
    stage: Stage,
    points: &[PerformancePoint],
    axis: Axis,
    warnings: &mut Vec<String>,
) -> Result<(FittedCurve, f64)> {
    let curve = fit_points(points)?;
    let t = argmax_ratio(&curve);
    if curve.is_flat() {
        let msg = format!(
            "{stage}: performance does not vary with the ratio; optimum falls back to the lower grid end"
        );
        log::warn!("{msg}");
        warnings.push(msg);
    } else if t == curve.fit_domain[0] || t == curve.fit_domain[1] {
        let msg = format!("{stage}: optimum lies on the grid boundary ({t})");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok((curve, axis.to_ratio(t)))
}

/// Runs both sweep stages and the confirmation call.
// the failure carries the completed work
#[allow(clippy::result_large_err)]
pub fn coarse_search(
    oracle: &dyn Oracle,
    pools: &MixturePools,
    config: &SearchConfig,
) -> std::result::Result<CoarseResult, CoarseFailure> {
    let mut partial = PartialCoarse {
        tool_version: TOOL_VERSION.to_string(),
        oracle: oracle.describe(),
        seed: config.seed,
        failed_stage: Stage::D2VsD3.name().into(),
        error: String::new(),
        d2_d3_ratio: None,
        mixed_d1_ratio: None,
        sweep_points: StagePoints::default(),
        warnings: Vec::new(),
    };
    let fail = |mut partial: PartialCoarse, error: Error| {
        partial.error = error.to_string();
        CoarseFailure { partial, error }
    };

    let points1 = match sweep(oracle, Stage::D2VsD3, pools, config, 1.0) {
        Ok(p) => p,
        Err(SweepFailure { points, error }) => {
            partial.sweep_points.d2_vs_d3 = points;
            return Err(fail(partial, error));
        }
    };
    partial.sweep_points.d2_vs_d3 = points1.clone();
    let (curve1, d2_d3) =
        match stage_optimum(Stage::D2VsD3, &points1, config.axis, &mut partial.warnings) {
            Ok(v) => v,
            Err(e) => return Err(fail(partial, e)),
        };
    partial.d2_d3_ratio = Some(d2_d3);

    partial.failed_stage = Stage::MixedVsD1.name().into();
    let points2 = match sweep(oracle, Stage::MixedVsD1, pools, config, d2_d3) {
        Ok(p) => p,
        Err(SweepFailure { points, error }) => {
            partial.sweep_points.mixed_vs_d1 = points;
            return Err(fail(partial, error));
        }
    };
    partial.sweep_points.mixed_vs_d1 = points2.clone();
    let (curve2, mixed_d1) = match stage_optimum(
        Stage::MixedVsD1,
        &points2,
        config.axis,
        &mut partial.warnings,
    ) {
        Ok(v) => v,
        Err(e) => return Err(fail(partial, e)),
    };
    partial.mixed_d1_ratio = Some(mixed_d1);

    partial.failed_stage = "confirmation".into();
    let ratio = MixRatio::compose(d2_d3, mixed_d1);
    let sizes = pools.sizes();
    let counts = compose_counts(Stage::MixedVsD1, mixed_d1, sizes, d2_d3);
    let seed = derive_seed(config.seed, &[3]);
    let path = config.work_dir.join("confirmation.jsonl");
    let response = match run_oracle_on(oracle, pools, counts, seed, &path, config.keep_manifests) {
        Ok(r) => r,
        Err(e) => return Err(fail(partial, e)),
    };

    Ok(CoarseResult {
        tool_version: partial.tool_version,
        oracle: partial.oracle,
        seed: config.seed,
        repeats: config.repeats,
        axis: config.axis,
        scoring_weight: config.scoring_weight,
        pool_sizes: sizes,
        d2_d3_ratio: d2_d3,
        mixed_d1_ratio: mixed_d1,
        ratio,
        lambda_loss: response.loss_ratio(),
        confirmation: Confirmation { counts, response },
        curves: StageCurves {
            d2_vs_d3: curve1,
            mixed_vs_d1: curve2,
        },
        sweep_points: StagePoints {
            d2_vs_d3: points1,
            mixed_vs_d1: points2,
        },
        warnings: partial.warnings,
    })
}
