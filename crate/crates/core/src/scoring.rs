//! Quality scores from level-token logits.
//!
//! The model's logits for the level tokens are renormalized with a softmax
//! restricted to those tokens, and the score is the probability-weighted mean
//! of the level indices. The two-level good/poor variant reduces to a
//! sigmoid of the logit difference.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Diagnostic, Error, Result};
use crate::levels::{LevelScale, FIVE_LEVEL_LABELS};

/// Raw logits for one item, one per level, lowest level first.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelLogits {
    pub item_id: String,
    pub logits: Vec<f64>,
}

impl LevelLogits {
    pub fn new(item_id: impl Into<String>, logits: Vec<f64>) -> Self {
        Self {
            item_id: item_id.into(),
            logits,
        }
    }
}

/// Closed-set probabilities, lowest level first.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelProbabilities(pub Vec<f64>);

impl LevelProbabilities {
    /// Probability-weighted mean of the 1-based level indices.
    pub fn expected_level(&self) -> f64 {
        self.0
            .iter()
            .enumerate()
            .map(|(i, p)| (i + 1) as f64 * p)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedScore {
    pub id: String,
    pub score: f64,
}

fn level_name(i: usize, count: usize) -> String {
    if count == FIVE_LEVEL_LABELS.len() {
        FIVE_LEVEL_LABELS[i].to_string()
    } else {
        format!("level {}", i + 1)
    }
}

/// Softmax over the level logits, shifted by the maximum logit.
pub fn softmax_levels(x: &LevelLogits) -> Result<LevelProbabilities> {
    if x.logits.is_empty() {
        return Err(Error::MalformedLogits(format!("{}: no logits", x.item_id)));
    }
    let n = x.logits.len();
    if let Some(i) = x.logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::MalformedLogits(format!(
            "{}: non-finite logit for {}",
            x.item_id,
            level_name(i, n)
        )));
    }
    let shift = x.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = x.logits.iter().map(|v| (v - shift).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(LevelProbabilities(
        weights.into_iter().map(|w| w / total).collect(),
    ))
}

pub fn score_from_logits(x: &LevelLogits) -> Result<PredictedScore> {
    let p = softmax_levels(x)?;
    Ok(PredictedScore {
        id: x.item_id.clone(),
        score: p.expected_level(),
    })
}

/// `e^good / (e^good + e^poor)`, computed as a sigmoid of the difference.
pub fn binary_score(x_good: f64, x_poor: f64) -> Result<f64> {
    if !x_good.is_finite() || !x_poor.is_finite() {
        return Err(Error::MalformedLogits(format!(
            "non-finite good/poor logits ({x_good}, {x_poor})"
        )));
    }
    let d = x_good - x_poor;
    Ok(if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreMode {
    #[default]
    FiveLevel,
    Binary,
}

#[derive(Debug, Clone, Default)]
pub struct BatchOptions {
    pub mode: ScoreMode,
    /// Abort on the first malformed record instead of skipping it.
    pub strict: bool,
    /// Map native scores onto this scale's `[min, max]`.
    pub rescale: Option<LevelScale>,
}

#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    pub scores: Vec<PredictedScore>,
    pub diagnostics: Vec<Diagnostic>,
}

fn parse_record(line: &str, mode: ScoreMode) -> std::result::Result<(String, Vec<f64>), String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value.as_object().ok_or("record is not an object")?;
    let id = obj
        .get("id")
        .and_then(Value::as_str)
        .ok_or("missing string field 'id'")?
        .to_string();
    let number =
        |o: &serde_json::Map<String, Value>, key: &str| -> std::result::Result<f64, String> {
            match o.get(key) {
                None => Err(format!("{id}: missing logit for '{key}'")),
                Some(v) => v
                    .as_f64()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| format!("{id}: logit for '{key}' is not a finite number")),
            }
        };
    let logits = match mode {
        ScoreMode::FiveLevel => {
            let logits = obj
                .get("logits")
                .and_then(Value::as_object)
                .ok_or_else(|| format!("{id}: missing object field 'logits'"))?;
            FIVE_LEVEL_LABELS
                .iter()
                .map(|l| number(logits, l))
                .collect::<std::result::Result<Vec<_>, _>>()?
        }
        ScoreMode::Binary => vec![number(obj, "good")?, number(obj, "poor")?],
    };
    Ok((id, logits))
}

/// Scores a stream of line-delimited logit records, preserving input order.
///
/// Blank lines are ignored. Malformed records become diagnostics unless
/// `strict` is set, in which case the first one aborts the batch.
pub fn score_batch<R: BufRead>(
    input: R,
    opts: &BatchOptions,
    source: &str,
) -> Result<BatchOutcome> {
    let mut out = BatchOutcome::default();
    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(format!("reading {source}"), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let scored = parse_record(&line, opts.mode).and_then(|(id, logits)| {
            let native = match opts.mode {
                ScoreMode::FiveLevel => {
                    score_from_logits(&LevelLogits::new(id.clone(), logits)).map(|s| s.score)
                }
                ScoreMode::Binary => binary_score(logits[0], logits[1]),
            }
            .map_err(|e| e.to_string())?;
            let score = match (&opts.rescale, opts.mode) {
                (None, _) => native,
                (Some(scale), ScoreMode::FiveLevel) => scale.rescale_from_levels(native),
                (Some(scale), ScoreMode::Binary) => {
                    scale.min() + native * (scale.max() - scale.min())
                }
            };
            Ok(PredictedScore { id, score })
        });
        match scored {
            Ok(s) => out.scores.push(s),
            Err(message) if opts.strict => return Err(Error::record(source, lineno, message)),
            Err(message) => out.diagnostics.push(Diagnostic {
                line: lineno,
                message,
            }),
        }
    }
    Ok(out)
}

pub fn write_scores<W: Write>(mut w: W, scores: &[PredictedScore]) -> std::io::Result<()> {
    for s in scores {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn five(x: [f64; 5]) -> LevelLogits {
        LevelLogits::new("x", x.to_vec())
    }

    fn ln_weights() -> [f64; 5] {
        [1.0f64, 2.0, 3.0, 4.0, 10.0].map(f64::ln)
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_levels(&five([0.0; 5])).unwrap();
        for v in &p.0 {
            assert!((v - 0.2).abs() < 1e-15);
        }
        // weights 1:2:3:4:10 over a total of 20
        let p = softmax_levels(&five(ln_weights())).unwrap();
        for (v, e) in p.0.iter().zip([0.05, 0.10, 0.15, 0.20, 0.50]) {
            assert!((v - e).abs() < 1e-15, "{v} vs {e}");
        }
        let p = softmax_levels(&five([-100.0, -100.0, -100.0, -100.0, 100.0])).unwrap();
        assert!((p.0[4] - 1.0).abs() < 1e-12);
        assert!(p.0[..4].iter().all(|v| *v < 1e-12));
    }

    #[test]
    fn score_examples() {
        assert!((score_from_logits(&five([0.0; 5])).unwrap().score - 3.0).abs() < 1e-12);
        // (1 + 4 + 9 + 16 + 50) / 20
        assert!((score_from_logits(&five(ln_weights())).unwrap().score - 4.0).abs() < 1e-12);
        let s = score_from_logits(&five([-100.0, -100.0, -100.0, -100.0, 100.0])).unwrap();
        assert!((s.score - 5.0).abs() < 1e-12);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let s = score_from_logits(&five([800.0, 800.0, 800.0, 800.0, 800.0])).unwrap();
        assert!((s.score - 3.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_logit_names_level() {
        let err = softmax_levels(&five([0.0, 0.0, f64::NAN, 0.0, 0.0])).unwrap_err();
        assert!(err.to_string().contains("fair"), "{err}");
        assert!(softmax_levels(&five([0.0, 0.0, 0.0, f64::INFINITY, 0.0])).is_err());
    }

    #[test]
    fn binary_examples() {
        assert_eq!(binary_score(0.7, 0.7).unwrap(), 0.5);
        let ln3 = 3f64.ln();
        assert!((binary_score(ln3, 0.0).unwrap() - 0.75).abs() < 1e-15);
        assert!((binary_score(0.0, ln3).unwrap() - 0.25).abs() < 1e-15);
        assert!(binary_score(f64::NAN, 0.0).is_err());
        assert!(binary_score(-1000.0, 1000.0).unwrap() >= 0.0);
    }

    #[test]
    fn batch_preserves_order_and_reports_bad_lines() {
        let input = concat!(
            r#"{"id":"a","logits":{"bad":0,"poor":0,"fair":0,"good":0,"excellent":0}}"#,
            "\n",
            r#"{"id":"b","logits":{"bad":0,"poor":0,"fair":0,"good":0}}"#,
            "\n\n",
            r#"{"id":"c","logits":{"bad":-100,"poor":-100,"fair":-100,"good":-100,"excellent":100}}"#,
            "\n",
        );
        let out = score_batch(input.as_bytes(), &BatchOptions::default(), "in").unwrap();
        let ids: Vec<_> = out.scores.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["a", "c"]);
        assert_eq!(out.diagnostics.len(), 1);
        assert_eq!(out.diagnostics[0].line, 2);
        assert!(out.diagnostics[0].message.contains("excellent"));

        let strict = BatchOptions {
            strict: true,
            ..Default::default()
        };
        let err = score_batch(input.as_bytes(), &strict, "in").unwrap_err();
        assert!(err.to_string().starts_with("in:2:"), "{err}");
    }

    #[test]
    fn batch_empty_and_binary() {
        let out = score_batch(&b""[..], &BatchOptions::default(), "in").unwrap();
        assert!(out.scores.is_empty() && out.diagnostics.is_empty());

        let line = format!(r#"{{"id":"q","good":{},"poor":0}}"#, 3f64.ln());
        let opts = BatchOptions {
            mode: ScoreMode::Binary,
            ..Default::default()
        };
        let out = score_batch(line.as_bytes(), &opts, "in").unwrap();
        assert!((out.scores[0].score - 0.75).abs() < 1e-15);
    }

    #[test]
    fn rescale_maps_native_range() {
        let opts = BatchOptions {
            rescale: Some(LevelScale::new(0.0, 100.0).unwrap()),
            ..Default::default()
        };
        let line = r#"{"id":"a","logits":{"bad":0,"poor":0,"fair":0,"good":0,"excellent":0}}"#;
        let out = score_batch(line.as_bytes(), &opts, "in").unwrap();
        assert!((out.scores[0].score - 50.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn shift_invariance(x in proptest::array::uniform5(-30.0f64..30.0), c in -50.0f64..50.0) {
            let a = score_from_logits(&five(x)).unwrap().score;
            let b = score_from_logits(&five(x.map(|v| v + c))).unwrap().score;
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn score_in_range_and_normalized(x in proptest::array::uniform5(-300.0f64..300.0)) {
            let p = softmax_levels(&five(x)).unwrap();
            prop_assert!((p.0.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let s = p.expected_level();
            prop_assert!((1.0..=5.0).contains(&s));
        }

        #[test]
        fn raising_top_logit_raises_score(x in proptest::array::uniform5(-10.0f64..10.0), bump in 0.01f64..5.0) {
            let mut y = x;
            y[4] += bump;
            prop_assert!(score_from_logits(&five(y)).unwrap().score > score_from_logits(&five(x)).unwrap().score);
        }

        #[test]
        fn two_level_reduces_to_binary(good in -40.0f64..40.0, poor in -40.0f64..40.0) {
            let two = score_from_logits(&LevelLogits::new("x", vec![poor, good])).unwrap().score;
            prop_assert!((two - 1.0 - binary_score(good, poor).unwrap()).abs() < 1e-12);
        }
    }
}
