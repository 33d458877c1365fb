//! Per-epoch mixture adjustment from the validation loss ratio.
//!
//! After the coarse search fixes a starting mixture, each epoch trains once,
//! compares `rho = loss_scoring / loss_interpreting` with the reference
//! `lambda_loss`, and grows whichever side is lagging by a factor `delta`:
//!
//! * `rho < lambda (1 - tau)`: the interpreting data (D2 + D3) grows, split
//!   at the coarse D2:D3 ratio;
//! * `rho > lambda (1 + tau)`: D1 grows;
//! * otherwise the counts are held.
//!
//! Counts never shrink. The loop stops at `max_epochs` or after two holds in
//! a row, and every epoch is appended to a line-delimited trajectory file as
//! soon as it is observed.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::PoolTag;
use crate::error::{Error, Result};
use crate::manifest::{sample_mixture, write_manifest_file, MixtureCounts, MixturePools};
use crate::mixopt::{split_merged, CoarseResult};
use crate::oracle::{Oracle, OracleRequest};
use crate::rng::{derive_seed, round_half_up};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    IncreaseInterpreting,
    IncreaseScoring,
    Hold,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::IncreaseInterpreting => "increase_interpreting",
            Action::IncreaseScoring => "increase_scoring",
            Action::Hold => "hold",
        })
    }
}

/// Validation losses observed after one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochObservation {
    pub epoch: u32,
    pub loss_scoring: f64,
    pub loss_interpreting: f64,
}

impl EpochObservation {
    pub fn new(epoch: u32, loss_scoring: f64, loss_interpreting: f64) -> Result<Self> {
        for (name, v) in [
            ("scoring", loss_scoring),
            ("interpreting", loss_interpreting),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Degenerate(format!(
                    "epoch {epoch}: {name} loss must be positive, got {v}"
                )));
            }
        }
        Ok(Self {
            epoch,
            loss_scoring,
            loss_interpreting,
        })
    }

    pub fn ratio(&self) -> f64 {
        self.loss_scoring / self.loss_interpreting
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjustmentDecision {
    pub action: Action,
    pub factor: f64,
    pub new_counts: MixtureCounts,
}

fn default_tolerance() -> f64 {
    0.1
}
fn default_factor() -> f64 {
    1.1
}
fn default_max_epochs() -> u32 {
    3
}

/// Band and step settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlParams {
    pub lambda_loss: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_factor")]
    pub factor: f64,
}

impl ControlParams {
    pub fn new(lambda_loss: f64) -> Self {
        Self {
            lambda_loss,
            tolerance: default_tolerance(),
            factor: default_factor(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_loss.is_finite() && self.lambda_loss > 0.0) {
            return Err(Error::Config(format!(
                "lambda_loss must be positive, got {}",
                self.lambda_loss
            )));
        }
        if !(0.0..1.0).contains(&self.tolerance) {
            return Err(Error::Config(format!(
                "tolerance must lie in [0, 1), got {}",
                self.tolerance
            )));
        }
        if !(self.factor.is_finite() && self.factor > 1.0) {
            return Err(Error::Config(format!(
                "factor must exceed 1, got {}",
                self.factor
            )));
        }
        Ok(())
    }
}

fn grow(n: u64, factor: f64) -> u64 {
    round_half_up(n as f64 * factor).max(n + 1)
}

/// Chooses the next epoch's counts from the last observation.
///
/// `d2_d3` is the coarse D2:D3 ratio used to split an interpreting increase.
pub fn decide(
    obs: &EpochObservation,
    params: &ControlParams,
    current: MixtureCounts,
    d2_d3: f64,
) -> Result<AdjustmentDecision> {
    params.validate()?;
    let obs = EpochObservation::new(obs.epoch, obs.loss_scoring, obs.loss_interpreting)?;
    let rho = obs.ratio();
    let lambda = params.lambda_loss;
    let (action, new_counts) = if rho < lambda * (1.0 - params.tolerance) {
        let (d2, d3) = split_merged(grow(current.d2 + current.d3, params.factor), d2_d3);
        (
            Action::IncreaseInterpreting,
            MixtureCounts::new(current.d1, d2.max(current.d2), d3.max(current.d3)),
        )
    } else if rho > lambda * (1.0 + params.tolerance) {
        (
            Action::IncreaseScoring,
            MixtureCounts::new(grow(current.d1, params.factor), current.d2, current.d3),
        )
    } else {
        (Action::Hold, current)
    };
    Ok(AdjustmentDecision {
        action,
        factor: params.factor,
        new_counts,
    })
}

/// Starting point of the epoch loop.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustPlan {
    pub initial_counts: MixtureCounts,
    pub d2_d3: f64,
    pub params: ControlParams,
    /// Free-form pointer to the coarse result, copied into the trajectory.
    pub coarse_ref: String,
}

impl AdjustPlan {
    /// Starts from the coarse confirmation counts and loss ratio.
    pub fn from_coarse(coarse: &CoarseResult, coarse_ref: impl Into<String>) -> Self {
        Self {
            initial_counts: coarse.confirmation.counts,
            d2_d3: coarse.d2_d3_ratio,
            params: ControlParams::new(coarse.lambda_loss),
            coarse_ref: coarse_ref.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub max_epochs: u32,
    pub seed: u64,
    pub work_dir: PathBuf,
    pub keep_manifests: bool,
}

impl LoopConfig {
    pub fn new(seed: u64, work_dir: impl Into<PathBuf>) -> Self {
        Self {
            max_epochs: default_max_epochs(),
            seed,
            work_dir: work_dir.into(),
            keep_manifests: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub lambda_loss: f64,
    pub tolerance: f64,
    pub factor: f64,
    pub seed: u64,
    pub max_epochs: u32,
    pub d2_d3_ratio: f64,
    pub coarse_result: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub scoring: f64,
    pub interpreting: f64,
}

/// One line of the trajectory. `action` is the decision taken on this
/// epoch's losses; it shapes the following epoch if there is one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub counts: MixtureCounts,
    pub losses: EpochLosses,
    pub ratio: f64,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub oversampled: Vec<PoolTag>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub header: TrajectoryHeader,
    pub epochs: Vec<EpochRecord>,
}

impl Trajectory {
    pub fn final_counts(&self) -> Option<MixtureCounts> {
        self.epochs.last().map(|e| e.counts)
    }
}

/// A loop that stopped on an error; the epochs before it are kept, both here
/// and in the trajectory file.
#[derive(Debug)]
pub struct LoopFailure {
    pub trajectory: Trajectory,
    pub error: Error,
}

impl fmt::Display for LoopFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "adjustment stopped after {} epoch(s): {}",
            self.trajectory.epochs.len(),
            self.error
        )
    }
}

struct Appender {
    file: File,
    path: PathBuf,
}

impl Appender {
    fn create(path: &Path) -> Result<Self> {
        let file =
            File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    fn line<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let mut buf = serde_json::to_vec(value)
            .map_err(|e| Error::io("encoding trajectory", std::io::Error::other(e)))?;
        buf.push(b'\n');
        self.file
            .write_all(&buf)
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(format!("writing {}", self.path.display()), e))
    }
}

/// Runs the epoch loop, appending to `trajectory_path` as it goes.
///
/// Epoch 1 trains on the plan's initial counts. Each epoch samples a fresh
/// manifest (with repetition when a count outgrows its pool) under a seed
/// derived from the loop seed and the epoch number.
// the failure carries the completed work
#[allow(clippy::result_large_err)]
pub fn run_loop(
    oracle: &dyn Oracle,
    plan: &AdjustPlan,
    pools: &MixturePools,
    config: &LoopConfig,
    trajectory_path: &Path,
) -> std::result::Result<Trajectory, LoopFailure> {
    let header = TrajectoryHeader {
        lambda_loss: plan.params.lambda_loss,
        tolerance: plan.params.tolerance,
        factor: plan.params.factor,
        seed: config.seed,
        max_epochs: config.max_epochs,
        d2_d3_ratio: plan.d2_d3,
        coarse_result: plan.coarse_ref.clone(),
    };
    let mut trajectory = Trajectory {
        header,
        epochs: Vec::new(),
    };
    match epochs(
        oracle,
        plan,
        pools,
        config,
        trajectory_path,
        &mut trajectory,
    ) {
        Ok(()) => Ok(trajectory),
        Err(error) => Err(LoopFailure { trajectory, error }),
    }
}

fn epochs(
    oracle: &dyn Oracle,
    plan: &AdjustPlan,
    pools: &MixturePools,
    config: &LoopConfig,
    trajectory_path: &Path,
    trajectory: &mut Trajectory,
) -> Result<()> {
    plan.params.validate()?;
    if config.max_epochs == 0 {
        return Err(Error::Config("max_epochs must be at least 1".into()));
    }
    if !(plan.d2_d3.is_finite() && plan.d2_d3 > 0.0) {
        return Err(Error::Config(format!(
            "D2:D3 ratio must be positive, got {}",
            plan.d2_d3
        )));
    }
    std::fs::create_dir_all(&config.work_dir)
        .map_err(|e| Error::io(format!("creating {}", config.work_dir.display()), e))?;
    let mut out = Appender::create(trajectory_path)?;
    out.line(&trajectory.header)?;

    let mut counts = plan.initial_counts;
    let mut holds = 0;
    for epoch in 1..=config.max_epochs {
        let seed = derive_seed(config.seed, &[u64::from(epoch)]);
        let manifest = sample_mixture(pools, counts, seed, true)?;
        let oversampled = manifest.header.oversampled.clone();
        if !oversampled.is_empty() {
            log::warn!("epoch {epoch}: pools {oversampled:?} exhausted, sampling with repetition");
        }
        let path = config.work_dir.join(format!("epoch-{epoch}.jsonl"));
        write_manifest_file(&path, &manifest)?;
        drop(manifest);
        let req = OracleRequest::new(&path, seed);
        let response = oracle.evaluate(&req);
        if !config.keep_manifests {
            let _ = std::fs::remove_file(&path);
            let _ = std::fs::remove_file(req.result_path());
        }
        let response = response?;

        let obs = EpochObservation::new(epoch, response.loss_scoring, response.loss_interpreting)?;
        let decision = decide(&obs, &plan.params, counts, plan.d2_d3)?;
        let record = EpochRecord {
            epoch,
            counts,
            losses: EpochLosses {
                scoring: obs.loss_scoring,
                interpreting: obs.loss_interpreting,
            },
            ratio: obs.ratio(),
            action: decision.action,
            oversampled,
        };
        log::info!(
            "epoch {epoch}: rho {:.6} vs lambda {:.6}, {}",
            record.ratio,
            plan.params.lambda_loss,
            record.action
        );
        out.line(&record)?;
        trajectory.epochs.push(record);

        holds = if decision.action == Action::Hold {
            holds + 1
        } else {
            0
        };
        if holds == 2 {
            break;
        }
        counts = decision.new_counts;
    }
    Ok(())
}

/// Reads a trajectory file back.
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let f = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let source = path.display().to_string();
    let mut lines = BufReader::new(f).lines();
    let mut next = |n: usize| -> Result<Option<String>> {
        lines
            .next()
            .transpose()
            .map_err(|e| Error::io(format!("reading {source}:{n}"), e))
    };
    let parse_err = |n: usize, e: serde_json::Error| {
        Error::record(path.display().to_string(), n, e.to_string())
    };
    let header: TrajectoryHeader = match next(1)? {
        Some(l) => serde_json::from_str(&l).map_err(|e| parse_err(1, e))?,
        None => {
            return Err(Error::record(
                path.display().to_string(),
                1,
                "missing header",
            ))
        }
    };
    let mut epochs = Vec::new();
    let mut n = 1;
    while let Some(l) = next(n + 1)? {
        n += 1;
        if l.trim().is_empty() {
            continue;
        }
        epochs.push(serde_json::from_str(&l).map_err(|e| parse_err(n, e))?);
    }
    Ok(Trajectory { header, epochs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{OracleResponse, SyntheticConfig, SyntheticOracle};
    use proptest::prelude::*;

    const LAMBDA: f64 = 0.2146;

    fn obs(s: f64, i: f64) -> EpochObservation {
        EpochObservation::new(1, s, i).unwrap()
    }

    #[test]
    fn decision_directions() {
        let p = ControlParams::new(LAMBDA);
        let c = MixtureCounts::new(1000, 2420, 1000);
        let d = decide(&obs(1.0, 10.0), &p, c, 2.42).unwrap();
        assert_eq!(d.action, Action::IncreaseInterpreting);
        assert_eq!(d.new_counts.d1, 1000);
        assert_eq!(d.new_counts.d2 + d.new_counts.d3, 3762);

        let d = decide(&obs(1.0, 2.0), &p, c, 2.42).unwrap();
        assert_eq!(d.action, Action::IncreaseScoring);
        assert_eq!(d.new_counts, MixtureCounts::new(1100, 2420, 1000));

        let d = decide(&obs(LAMBDA, 1.0), &p, c, 2.42).unwrap();
        assert_eq!(d.action, Action::Hold);
        assert_eq!(d.new_counts, c);
    }

    #[test]
    fn rejects_bad_losses_and_params() {
        assert!(EpochObservation::new(1, 0.0, 1.0).is_err());
        assert!(EpochObservation::new(1, 1.0, f64::NAN).is_err());
        let c = MixtureCounts::new(1, 1, 1);
        let mut p = ControlParams::new(LAMBDA);
        p.factor = 1.0;
        assert!(matches!(
            decide(&obs(1.0, 1.0), &p, c, 1.0),
            Err(Error::Config(_))
        ));
        let mut p = ControlParams::new(LAMBDA);
        p.tolerance = 1.0;
        assert!(decide(&obs(1.0, 1.0), &p, c, 1.0).is_err());
    }

    #[test]
    fn small_counts_still_grow() {
        let p = ControlParams::new(1.0);
        let d = decide(&obs(2.0, 1.0), &p, MixtureCounts::new(0, 3, 3), 1.0).unwrap();
        assert_eq!(d.new_counts.d1, 1);
    }

    proptest! {
        #[test]
        fn decide_is_direction_correct_and_monotone(
            s in 1e-3f64..10.0, i in 1e-3f64..10.0,
            lambda in 0.01f64..5.0, tol in 0.0f64..0.9, factor in 1.001f64..3.0,
            d1 in 0u64..100_000, d2 in 0u64..100_000, d3 in 0u64..100_000,
            r in 0.05f64..20.0,
        ) {
            let p = ControlParams { lambda_loss: lambda, tolerance: tol, factor };
            let c = MixtureCounts::new(d1, d2, d3);
            let d = decide(&obs(s, i), &p, c, r).unwrap();
            let n = d.new_counts;
            prop_assert!(n.d1 >= c.d1 && n.d2 >= c.d2 && n.d3 >= c.d3);
            match d.action {
                Action::Hold => prop_assert_eq!(n, c),
                Action::IncreaseScoring => {
                    prop_assert!(n.d1 > c.d1);
                    prop_assert_eq!((n.d2, n.d3), (c.d2, c.d3));
                }
                Action::IncreaseInterpreting => {
                    prop_assert_eq!(n.d1, c.d1);
                    prop_assert!(n.d2 + n.d3 > c.d2 + c.d3);
                }
            }
        }

        #[test]
        fn interpreting_split_tracks_ratio(
            d2 in 100u64..100_000, d3 in 100u64..100_000, r in 0.05f64..20.0,
        ) {
            let p = ControlParams::new(1.0);
            let c = MixtureCounts::new(10, 0, 0);
            let start = split_merged(d2 + d3, r);
            let c = MixtureCounts { d2: start.0, d3: start.1, ..c };
            let d = decide(&obs(0.1, 1.0), &p, c, r).unwrap();
            let n = d.new_counts;
            let merged = (n.d2 + n.d3) as f64;
            let ideal_d2 = merged * r / (1.0 + r);
            prop_assert!((n.d2 as f64 - ideal_d2).abs() <= 1.0);
        }
    }

    struct Constant(f64, f64);

    impl Oracle for Constant {
        fn describe(&self) -> String {
            "constant".into()
        }
        fn evaluate(&self, _: &OracleRequest) -> Result<OracleResponse> {
            Ok(OracleResponse {
                perf_scoring: 0.5,
                perf_interpreting: 0.5,
                loss_scoring: self.0,
                loss_interpreting: self.1,
            })
        }
    }

    fn plan(lambda: f64, counts: MixtureCounts) -> AdjustPlan {
        AdjustPlan {
            initial_counts: counts,
            d2_d3: 2.42,
            params: ControlParams::new(lambda),
            coarse_ref: "test".into(),
        }
    }

    #[test]
    fn fixed_point_stops_after_two_holds() {
        let dir = tempfile::tempdir().unwrap();
        let pools = MixturePools::synthetic(50, 50, 50);
        let cfg = LoopConfig {
            max_epochs: 5,
            ..LoopConfig::new(1, dir.path())
        };
        let path = dir.path().join("t.jsonl");
        let t = run_loop(
            &Constant(0.5, 2.0),
            &plan(0.25, MixtureCounts::new(10, 10, 10)),
            &pools,
            &cfg,
            &path,
        )
        .unwrap();
        assert_eq!(t.epochs.len(), 2);
        assert!(t.epochs.iter().all(|e| e.action == Action::Hold));
        assert_eq!(read_trajectory(&path).unwrap(), t);
    }

    #[test]
    fn single_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let pools = MixturePools::synthetic(50, 50, 50);
        let cfg = LoopConfig {
            max_epochs: 1,
            ..LoopConfig::new(1, dir.path())
        };
        let path = dir.path().join("t.jsonl");
        let t = run_loop(
            &Constant(1.0, 1.0),
            &plan(0.25, MixtureCounts::new(10, 10, 10)),
            &pools,
            &cfg,
            &path,
        )
        .unwrap();
        assert_eq!(t.epochs.len(), 1);
        assert_eq!(t.epochs[0].counts, MixtureCounts::new(10, 10, 10));
    }

    #[test]
    fn exhausted_pool_is_oversampled_and_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let pools = MixturePools::synthetic(50, 20, 20);
        let cfg = LoopConfig::new(9, dir.path());
        let mut syn = SyntheticConfig::planted(2.42, 3.54, 0.1);
        syn.loss_scoring_coef = 0.01;
        let oracle = SyntheticOracle::new(syn).unwrap();
        let p = plan(0.5, MixtureCounts::new(10, 28, 12));
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        let t = run_loop(&oracle, &p, &pools, &cfg, &a).unwrap();
        run_loop(&oracle, &p, &pools, &cfg, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert!(t.epochs.iter().any(|e| !e.oversampled.is_empty()));
        assert!(t
            .epochs
            .windows(2)
            .all(|w| w[1].counts.d2 >= w[0].counts.d2));
    }

    struct FailOn(u32, std::sync::atomic::AtomicU32);

    impl Oracle for FailOn {
        fn describe(&self) -> String {
            "fails".into()
        }
        fn evaluate(&self, _: &OracleRequest) -> Result<OracleResponse> {
            let n = self.1.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
            if n == self.0 {
                return Err(Error::Oracle("trainer crashed".into()));
            }
            Ok(OracleResponse {
                perf_scoring: 0.5,
                perf_interpreting: 0.5,
                loss_scoring: 1.0,
                loss_interpreting: 1.0,
            })
        }
    }

    #[test]
    fn failure_keeps_completed_epochs() {
        let dir = tempfile::tempdir().unwrap();
        let pools = MixturePools::synthetic(50, 50, 50);
        let cfg = LoopConfig::new(1, dir.path());
        let path = dir.path().join("t.jsonl");
        let err = run_loop(
            &FailOn(2, Default::default()),
            &plan(0.25, MixtureCounts::new(10, 10, 10)),
            &pools,
            &cfg,
            &path,
        )
        .unwrap_err();
        assert_eq!(err.trajectory.epochs.len(), 1);
        assert_eq!(err.error.class(), crate::ErrorClass::Oracle);
        assert_eq!(read_trajectory(&path).unwrap(), err.trajectory);
    }
}
