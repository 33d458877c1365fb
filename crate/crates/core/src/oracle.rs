//! The train-and-evaluate boundary.
//!
//! An [`Oracle`] takes a training manifest and a seed and reports validation
//! performance and loss for the scoring and interpreting tasks. The ratio
//! search and the epoch controller only ever talk to this trait.
//!
//! Two implementations ship: [`SyntheticOracle`], a closed-form surface used
//! for desk-scale verification, and [`ExternalOracle`], which runs a user
//! command and reads back a small JSON result file.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{read_manifest_header, MixtureCounts};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationTask {
    Scoring,
    Interpreting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRequest {
    pub manifest_path: PathBuf,
    pub seed: u64,
    pub validation_tags: Vec<ValidationTask>,
}

impl OracleRequest {
    pub fn new(manifest_path: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            manifest_path: manifest_path.into(),
            seed,
            validation_tags: vec![ValidationTask::Scoring, ValidationTask::Interpreting],
        }
    }

    /// Where an external trainer is asked to write its result.
    pub fn result_path(&self) -> PathBuf {
        let mut name = self
            .manifest_path
            .file_name()
            .map(|n| n.to_os_string())
            .unwrap_or_default();
        name.push(".result.json");
        self.manifest_path.with_file_name(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleResponse {
    /// Mean `(SRCC + PLCC) / 2` over the IQA validation sets.
    pub perf_scoring: f64,
    /// Multiple-choice accuracy on the interpreting validation set.
    pub perf_interpreting: f64,
    pub loss_scoring: f64,
    pub loss_interpreting: f64,
}

impl OracleResponse {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let r = self;
        if !(r.perf_scoring.is_finite() && (-1.0..=1.0).contains(&r.perf_scoring)) {
            return Err(format!(
                "perf_scoring {} is outside [-1, 1]",
                r.perf_scoring
            ));
        }
        if !(r.perf_interpreting.is_finite() && (0.0..=1.0).contains(&r.perf_interpreting)) {
            return Err(format!(
                "perf_interpreting {} is outside [0, 1]",
                r.perf_interpreting
            ));
        }
        for (name, v) in [
            ("loss_scoring", r.loss_scoring),
            ("loss_interpreting", r.loss_interpreting),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} {v} must be a positive number"));
            }
        }
        Ok(())
    }

    /// Scoring-to-interpreting loss ratio.
    pub fn loss_ratio(&self) -> f64 {
        self.loss_scoring / self.loss_interpreting
    }
}

pub trait Oracle: Send + Sync {
    /// Short description recorded next to every result the oracle produced.
    fn describe(&self) -> String;

    fn evaluate(&self, req: &OracleRequest) -> Result<OracleResponse>;
}

/// One concave bump in log10-ratio space:
/// `curvature * d^2 + quartic * d^4`, `d = log10(ratio) - log10(peak_ratio)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceTerm {
    pub peak_ratio: f64,
    pub curvature: f64,
    #[serde(default)]
    pub quartic: f64,
}

impl SurfaceTerm {
    fn penalty(&self, axis: Option<f64>, missing_penalty: f64) -> f64 {
        let Some(t) = axis else {
            return missing_penalty;
        };
        let d = t - self.peak_ratio.log10();
        let d2 = d * d;
        self.curvature * d2 + self.quartic * d2 * d2
    }
}

/// Parameters of the synthetic performance and loss model.
///
/// With `t_a = log10(d2 / d3)` and `t_b = log10((d2 + d3) / d1)`:
///
/// * interpreting = `interpreting_peak - d2_d3(t_a) - mixed_d1(t_b)`
/// * scoring = `scoring_peak - mixed_d1(t_b)`
/// * each plus independent `N(0, noise_sd)` noise drawn from the request seed
/// * scoring loss = `loss_scoring_coef * d1^-loss_exponent`
/// * interpreting loss = `loss_interpreting_coef * (d2 + d3)^-loss_exponent`
///
/// A term whose axis is undefined because a count is zero contributes the
/// flat `missing_penalty` instead. Performances are clamped to
/// their valid ranges and counts of zero count as one in the loss model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    #[serde(default = "defaults::interpreting_peak")]
    pub interpreting_peak: f64,
    #[serde(default = "defaults::scoring_peak")]
    pub scoring_peak: f64,
    pub d2_d3: SurfaceTerm,
    pub mixed_d1: SurfaceTerm,
    #[serde(default = "defaults::missing_penalty")]
    pub missing_penalty: f64,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default = "defaults::loss_exponent")]
    pub loss_exponent: f64,
    #[serde(default = "defaults::one")]
    pub loss_scoring_coef: f64,
    #[serde(default = "defaults::one")]
    pub loss_interpreting_coef: f64,
}

mod defaults {
    pub fn interpreting_peak() -> f64 {
        0.8
    }
    pub fn scoring_peak() -> f64 {
        0.85
    }
    pub fn missing_penalty() -> f64 {
        0.05
    }
    pub fn loss_exponent() -> f64 {
        0.5
    }
    pub fn one() -> f64 {
        1.0
    }
}

impl SyntheticConfig {
    /// Optima planted at the given D2:D3 and (D2+D3):D1 ratios.
    pub fn planted(d2_d3: f64, mixed_d1: f64, curvature: f64) -> Self {
        Self {
            interpreting_peak: defaults::interpreting_peak(),
            scoring_peak: defaults::scoring_peak(),
            d2_d3: SurfaceTerm {
                peak_ratio: d2_d3,
                curvature,
                quartic: 0.0,
            },
            mixed_d1: SurfaceTerm {
                peak_ratio: mixed_d1,
                curvature,
                quartic: 0.0,
            },
            missing_penalty: defaults::missing_penalty(),
            noise_sd: 0.0,
            loss_exponent: defaults::loss_exponent(),
            loss_scoring_coef: 1.0,
            loss_interpreting_coef: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, t) in [("d2_d3", &self.d2_d3), ("mixed_d1", &self.mixed_d1)] {
            if !(t.peak_ratio.is_finite() && t.peak_ratio > 0.0) {
                return bad(format!("{name}.peak_ratio must be positive"));
            }
            if t.curvature < 0.0 || t.quartic < 0.0 {
                return bad(format!(
                    "{name} must be concave (nonnegative curvature and quartic)"
                ));
            }
        }
        if self.noise_sd < 0.0 || !self.noise_sd.is_finite() {
            return bad("noise_sd must be a nonnegative number".into());
        }
        if self.loss_scoring_coef <= 0.0 || self.loss_interpreting_coef <= 0.0 {
            return bad("loss coefficients must be positive".into());
        }
        Ok(())
    }

    /// Noise-free model output for the given counts.
    pub fn expected(&self, counts: MixtureCounts) -> OracleResponse {
        let (d1, d2, d3) = (counts.d1 as f64, counts.d2 as f64, counts.d3 as f64);
        let t_a = (counts.d2 > 0 && counts.d3 > 0).then(|| (d2 / d3).log10());
        let t_b = (counts.d1 > 0 && counts.d2 + counts.d3 > 0).then(|| ((d2 + d3) / d1).log10());
        let mixed = self.mixed_d1.penalty(t_b, self.missing_penalty);
        OracleResponse {
            perf_scoring: self.scoring_peak - mixed,
            perf_interpreting: self.interpreting_peak
                - self.d2_d3.penalty(t_a, self.missing_penalty)
                - mixed,
            loss_scoring: self.loss_scoring_coef * d1.max(1.0).powf(-self.loss_exponent),
            loss_interpreting: self.loss_interpreting_coef
                * (d2 + d3).max(1.0).powf(-self.loss_exponent),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    config: SyntheticConfig,
}

impl SyntheticOracle {
    pub fn new(config: SyntheticConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }
}

/// Evaluates the synthetic model on the counts recorded in the manifest
/// header. A pure function of the request and configuration.
pub fn synthetic_evaluate(req: &OracleRequest, config: &SyntheticConfig) -> Result<OracleResponse> {
    let header = read_manifest_header(&req.manifest_path)?;
    let mut r = config.expected(header.counts);
    if config.noise_sd > 0.0 {
        let normal = Normal::new(0.0, config.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = rng_from_seed(req.seed);
        r.perf_scoring += normal.sample(&mut rng);
        r.perf_interpreting += normal.sample(&mut rng);
    }
    r.perf_scoring = r.perf_scoring.clamp(-1.0, 1.0);
    r.perf_interpreting = r.perf_interpreting.clamp(0.0, 1.0);
    Ok(r)
}

impl Oracle for SyntheticOracle {
    fn describe(&self) -> String {
        format!(
            "synthetic(d2_d3={}, mixed_d1={}, noise_sd={})",
            self.config.d2_d3.peak_ratio, self.config.mixed_d1.peak_ratio, self.config.noise_sd
        )
    }

    fn evaluate(&self, req: &OracleRequest) -> Result<OracleResponse> {
        synthetic_evaluate(req, &self.config)
    }
}

/// How to launch an external trainer.
///
/// `command` is split into arguments with shell quoting rules (no shell is
/// involved) and the placeholders `{manifest}`, `{seed}` and `{out}` are
/// substituted in every argument. The command must write an
/// [`OracleResponse`] as JSON to `{out}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalConfig {
    pub command: String,
    #[serde(default = "ExternalConfig::default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "ExternalConfig::default_parallel")]
    pub max_parallel: usize,
    #[serde(default = "ExternalConfig::default_inherit")]
    pub inherit_env: bool,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
    #[serde(default)]
    pub working_dir: Option<PathBuf>,
}

impl ExternalConfig {
    fn default_timeout() -> f64 {
        7.0 * 24.0 * 3600.0
    }
    fn default_parallel() -> usize {
        1
    }
    fn default_inherit() -> bool {
        true
    }

    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            timeout_secs: Self::default_timeout(),
            max_parallel: 1,
            inherit_env: true,
            env: BTreeMap::new(),
            working_dir: None,
        }
    }
}

/// Counting semaphore limiting concurrent trainer launches.
#[derive(Debug)]
struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug)]
pub struct ExternalOracle {
    config: ExternalConfig,
    argv: Vec<String>,
    slots: Semaphore,
}

impl ExternalOracle {
    pub fn new(config: ExternalConfig) -> Result<Self> {
        let argv = shell_words::split(&config.command)
            .map_err(|e| Error::Config(format!("oracle command: {e}")))?;
        if argv.is_empty() {
            return Err(Error::Config("oracle command is empty".into()));
        }
        if config.timeout_secs.is_nan() || config.timeout_secs <= 0.0 {
            return Err(Error::Config("oracle timeout must be positive".into()));
        }
        let slots = Semaphore::new(config.max_parallel);
        Ok(Self {
            config,
            argv,
            slots,
        })
    }

    fn render(&self, req: &OracleRequest, out: &Path) -> Vec<String> {
        let manifest = req.manifest_path.display().to_string();
        let out = out.display().to_string();
        let seed = req.seed.to_string();
        self.argv
            .iter()
            .map(|a| {
                a.replace("{manifest}", &manifest)
                    .replace("{seed}", &seed)
                    .replace("{out}", &out)
            })
            .collect()
    }
}

fn drain<R: Read + Send + 'static>(pipe: Option<R>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut p) = pipe {
            let _ = p.read_to_end(&mut buf);
        }
        String::from_utf8_lossy(&buf).into_owned()
    })
}

/// Runs the configured command for `req` and parses its result file.
pub fn external_evaluate(req: &OracleRequest, oracle: &ExternalOracle) -> Result<OracleResponse> {
    let out = req.result_path();
    if out.exists() {
        std::fs::remove_file(&out)
            .map_err(|e| Error::io(format!("removing stale {}", out.display()), e))?;
    }
    let argv = oracle.render(req, &out);
    let _slot = oracle.slots.acquire();

    let mut cmd = Command::new(&argv[0]);
    cmd.args(&argv[1..])
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    if !oracle.config.inherit_env {
        cmd.env_clear();
    }
    cmd.envs(&oracle.config.env);
    if let Some(dir) = &oracle.config.working_dir {
        cmd.current_dir(dir);
    }
    let mut child = cmd
        .spawn()
        .map_err(|e| Error::Oracle(format!("could not start '{}': {e}", argv[0])))?;
    let stdout = drain(child.stdout.take());
    let stderr = drain(child.stderr.take());

    let deadline = Instant::now() + Duration::from_secs_f64(oracle.config.timeout_secs);
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::OracleTimeout {
                    seconds: oracle.config.timeout_secs,
                    stderr: stderr.join().unwrap_or_default(),
                });
            }
            Ok(None) => thread::sleep(Duration::from_millis(10)),
            Err(e) => return Err(Error::Oracle(format!("waiting for trainer: {e}"))),
        }
    };
    let stdout = stdout.join().unwrap_or_default();
    let stderr = stderr.join().unwrap_or_default();
    if !status.success() {
        return Err(Error::OracleExit {
            status: status.to_string(),
            stdout,
            stderr,
        });
    }

    let text = match std::fs::read_to_string(&out) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::OracleMissingResult(out))
        }
        Err(e) => return Err(Error::io(format!("reading {}", out.display()), e)),
    };
    let invalid = |message: String| Error::OracleInvalidResult {
        path: out.clone(),
        message,
    };
    let response: OracleResponse =
        serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
    response.validate().map_err(invalid)?;
    Ok(response)
}

impl Oracle for ExternalOracle {
    fn describe(&self) -> String {
        format!("external({})", self.config.command)
    }

    fn evaluate(&self, req: &OracleRequest) -> Result<OracleResponse> {
        external_evaluate(req, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{sample_mixture, write_manifest_file, MixturePools};

    fn manifest_with(dir: &Path, counts: MixtureCounts) -> PathBuf {
        let pools =
            MixturePools::synthetic(counts.d1 as usize, counts.d2 as usize, counts.d3 as usize);
        let m = sample_mixture(&pools, counts, 0, false).unwrap();
        let path = dir.join("m.jsonl");
        write_manifest_file(&path, &m).unwrap();
        path
    }

    #[test]
    fn synthetic_peak_value() {
        let dir = tempfile::tempdir().unwrap();
        let path = manifest_with(dir.path(), MixtureCounts::new(1000, 2420, 1000));
        let cfg = SyntheticConfig::planted(2.42, 3.42, 0.3);
        let r = synthetic_evaluate(&OracleRequest::new(&path, 1), &cfg).unwrap();
        assert_eq!(r.perf_interpreting, cfg.interpreting_peak);
        assert_eq!(r.perf_scoring, cfg.scoring_peak);
    }

    #[test]
    fn synthetic_is_deterministic_and_noisy() {
        let dir = tempfile::tempdir().unwrap();
        let path = manifest_with(dir.path(), MixtureCounts::new(100, 300, 100));
        let mut cfg = SyntheticConfig::planted(2.42, 3.54, 0.3);
        cfg.noise_sd = 0.01;
        let oracle = SyntheticOracle::new(cfg).unwrap();
        let a = oracle.evaluate(&OracleRequest::new(&path, 5)).unwrap();
        assert_eq!(a, oracle.evaluate(&OracleRequest::new(&path, 5)).unwrap());
        assert_ne!(a, oracle.evaluate(&OracleRequest::new(&path, 6)).unwrap());
        a.validate().unwrap();
    }

    #[test]
    fn averaged_noise_within_standard_error_bound() {
        // mean of 3 draws of N(0, 0.01) lies within 3 * 0.01 / sqrt(3) of the truth
        let dir = tempfile::tempdir().unwrap();
        let path = manifest_with(dir.path(), MixtureCounts::new(100, 300, 100));
        let mut cfg = SyntheticConfig::planted(2.42, 3.54, 0.3);
        cfg.noise_sd = 0.01;
        let truth = cfg
            .expected(MixtureCounts::new(100, 300, 100))
            .perf_interpreting;
        let bound = 3.0 * 0.01 / 3f64.sqrt();
        let mut inside = 0;
        for base in 0..200u64 {
            let mean = (0..3)
                .map(|k| {
                    synthetic_evaluate(&OracleRequest::new(&path, base * 3 + k), &cfg)
                        .unwrap()
                        .perf_interpreting
                })
                .sum::<f64>()
                / 3.0;
            inside += ((mean - truth).abs() <= bound) as usize;
        }
        // a 3-sigma band holds about 99.7% of means
        assert!(inside >= 196, "{inside}/200");
    }

    #[test]
    fn synthetic_loss_model() {
        let cfg = SyntheticConfig {
            loss_scoring_coef: 2.0,
            loss_interpreting_coef: 3.0,
            ..SyntheticConfig::planted(1.0, 1.0, 0.1)
        };
        let r = cfg.expected(MixtureCounts::new(400, 50, 50));
        assert!((r.loss_scoring - 2.0 / 20.0).abs() < 1e-15);
        assert!((r.loss_interpreting - 3.0 / 10.0).abs() < 1e-15);
    }

    #[test]
    fn synthetic_rejects_bad_manifest_and_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{}\n").unwrap();
        let cfg = SyntheticConfig::planted(2.0, 2.0, 0.2);
        assert!(synthetic_evaluate(&OracleRequest::new(&path, 0), &cfg).is_err());
        let mut convex = cfg;
        convex.d2_d3.curvature = -1.0;
        assert!(SyntheticOracle::new(convex).is_err());
    }

    #[test]
    fn response_validation() {
        let ok = OracleResponse {
            perf_scoring: 0.5,
            perf_interpreting: 0.5,
            loss_scoring: 1.0,
            loss_interpreting: 4.66,
        };
        assert!(ok.validate().is_ok());
        assert!((ok.loss_ratio() - 1.0 / 4.66).abs() < 1e-15);
        for bad in [
            OracleResponse {
                loss_scoring: -1.0,
                ..ok
            },
            OracleResponse {
                perf_interpreting: 1.5,
                ..ok
            },
            OracleResponse {
                perf_scoring: f64::NAN,
                ..ok
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[cfg(unix)]
    mod external {
        use super::*;

        fn run(command: &str, timeout: f64) -> Result<OracleResponse> {
            let dir = tempfile::tempdir().unwrap();
            let manifest = dir.path().join("m.jsonl");
            std::fs::write(&manifest, "{}\n").unwrap();
            let mut cfg = ExternalConfig::new(command);
            cfg.timeout_secs = timeout;
            let oracle = ExternalOracle::new(cfg).unwrap();
            oracle.evaluate(&OracleRequest::new(&manifest, 42))
        }

        #[test]
        fn parses_result_file() {
            let r = run(
                r#"sh -c 'echo "{\"perf_scoring\":0.9,\"perf_interpreting\":0.7,\"loss_scoring\":1,\"loss_interpreting\":4.66}" > "$1"' _ {out}"#,
                30.0,
            )
            .unwrap();
            assert_eq!(
                r,
                OracleResponse {
                    perf_scoring: 0.9,
                    perf_interpreting: 0.7,
                    loss_scoring: 1.0,
                    loss_interpreting: 4.66
                }
            );
        }

        #[test]
        fn placeholders_are_substituted() {
            let r = run(
                r#"sh -c 'test "$2" = 42 && test -f "$1" && echo "{\"perf_scoring\":0,\"perf_interpreting\":0,\"loss_scoring\":1,\"loss_interpreting\":1}" > "$3"' _ {manifest} {seed} {out}"#,
                30.0,
            );
            assert!(r.is_ok(), "{r:?}");
        }

        #[test]
        fn nonzero_exit_captures_output() {
            let err = run("sh -c 'echo trainer exploded >&2; exit 3'", 30.0).unwrap_err();
            match err {
                Error::OracleExit { stderr, .. } => assert!(stderr.contains("trainer exploded")),
                other => panic!("unexpected {other:?}"),
            }
        }

        #[test]
        fn missing_result_is_an_error() {
            assert!(matches!(
                run("true", 30.0),
                Err(Error::OracleMissingResult(_))
            ));
        }

        #[test]
        fn invalid_result_is_rejected() {
            let err = run(
                r#"sh -c 'echo "{\"perf_scoring\":0.9,\"perf_interpreting\":0.7,\"loss_scoring\":-1,\"loss_interpreting\":4.66}" > "$1"' _ {out}"#,
                30.0,
            )
            .unwrap_err();
            assert!(matches!(err, Error::OracleInvalidResult { .. }), "{err}");
            assert_eq!(err.class(), crate::ErrorClass::Oracle);
        }

        #[test]
        fn timeout_kills_command() {
            let start = Instant::now();
            let err = run("sleep 5", 0.2).unwrap_err();
            assert!(matches!(err, Error::OracleTimeout { .. }));
            assert!(start.elapsed() < Duration::from_secs(4));
        }
    }
}
