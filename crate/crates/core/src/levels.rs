//! The five-level rating vocabulary and conversions between dataset scores
//! and rating levels.
//!
//! A [`LevelScale`] splits `[min, max]` into `level_count` equal-width
//! intervals that are open below and closed above, `(lo, hi]`. The minimum
//! score itself is assigned to the first level so that the whole closed range
//! is covered.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Labels of the five-level scheme, lowest first.
pub const FIVE_LEVEL_LABELS: [&str; 5] = ["bad", "poor", "fair", "good", "excellent"];

/// Labels of the two-level (good/poor) scheme, lowest first.
pub const TWO_LEVEL_LABELS: [&str; 2] = ["poor", "good"];

/// One of the five ordered rating levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatingLevel {
    Bad = 1,
    Poor = 2,
    Fair = 3,
    Good = 4,
    Excellent = 5,
}

impl RatingLevel {
    pub const ALL: [RatingLevel; 5] = [
        RatingLevel::Bad,
        RatingLevel::Poor,
        RatingLevel::Fair,
        RatingLevel::Good,
        RatingLevel::Excellent,
    ];

    /// 1-based position in the ordering.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index.checked_sub(1)?).copied()
    }

    pub fn label(self) -> &'static str {
        FIVE_LEVEL_LABELS[self.index() - 1]
    }

    pub fn from_label(label: &str) -> Option<Self> {
        FIVE_LEVEL_LABELS
            .iter()
            .position(|l| *l == label)
            .and_then(|i| Self::from_index(i + 1))
    }
}

impl fmt::Display for RatingLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Maps a level back to its numeric score: the level's 1-based index.
pub fn level_to_score(level: RatingLevel) -> u32 {
    level.index() as u32
}

/// A score range divided into equal-width rating intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelScale {
    min: f64,
    max: f64,
    level_count: usize,
}

impl LevelScale {
    /// A five-level scale over `[min, max]`.
    pub fn new(min: f64, max: f64) -> Result<Self> {
        Self::with_levels(min, max, 5)
    }

    pub fn with_levels(min: f64, max: f64, level_count: usize) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) {
            return Err(Error::Config(format!(
                "scale bounds must be finite (got [{min}, {max}])"
            )));
        }
        if max <= min {
            return Err(Error::Config(format!(
                "scale maximum must exceed minimum (got [{min}, {max}])"
            )));
        }
        if level_count < 2 {
            return Err(Error::Config(format!(
                "a scale needs at least 2 levels (got {level_count})"
            )));
        }
        Ok(Self {
            min,
            max,
            level_count,
        })
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn level_count(&self) -> usize {
        self.level_count
    }

    /// Labels for the scale, when it is one of the named schemes.
    pub fn labels(&self) -> Option<&'static [&'static str]> {
        match self.level_count {
            5 => Some(&FIVE_LEVEL_LABELS),
            2 => Some(&TWO_LEVEL_LABELS),
            _ => None,
        }
    }

    /// Upper edge of interval `k` (0-based edge index, `0..=level_count`).
    pub fn edge(&self, k: usize) -> f64 {
        if k >= self.level_count {
            return self.max;
        }
        self.min + (k as f64 / self.level_count as f64) * (self.max - self.min)
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.level_count).map(|k| self.edge(k)).collect()
    }

    pub fn contains(&self, score: f64) -> bool {
        score >= self.min && score <= self.max
    }

    /// 1-based interval index of `score`.
    ///
    /// Edges are compared exactly: a score equal to an interior edge belongs
    /// to the interval below it.
    pub fn level_index(&self, score: f64) -> Result<usize> {
        if !self.contains(score) {
            return Err(Error::OutOfRange {
                value: score,
                min: self.min,
                max: self.max,
            });
        }
        for i in 1..self.level_count {
            if score <= self.edge(i) {
                return Ok(i);
            }
        }
        Ok(self.level_count)
    }

    /// Affine map from the native level-index range `[1, level_count]` onto
    /// `[min, max]`.
    pub fn rescale_from_levels(&self, score: f64) -> f64 {
        let span = (self.level_count - 1) as f64;
        self.min + (score - 1.0) / span * (self.max - self.min)
    }
}

impl FromStr for LevelScale {
    type Err = Error;

    /// Parses `"min,max"` or `"min:max"`.
    fn from_str(s: &str) -> Result<Self> {
        let (lo, hi) = s
            .split_once([',', ':'])
            .ok_or_else(|| Error::Config(format!("scale '{s}' must look like 'min,max'")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("scale bound '{v}' is not a number")))
        };
        LevelScale::new(parse(lo)?, parse(hi)?)
    }
}

/// Converts a dataset score to its rating level on a five-level scale.
pub fn score_to_level(score: f64, scale: &LevelScale) -> Result<RatingLevel> {
    if scale.level_count != 5 {
        return Err(Error::Config(format!(
            "named rating levels need a five-level scale (got {})",
            scale.level_count
        )));
    }
    let index = scale.level_index(score)?;
    Ok(RatingLevel::from_index(index).expect("index within 1..=5"))
}

/// Whether a [`FrequencyVector`] holds proportions or raw counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrequencyForm {
    Normalized,
    Counts,
}

/// Per-level rating frequencies, lowest level first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyVector {
    values: [f64; 5],
    form: FrequencyForm,
}

impl FrequencyVector {
    pub fn normalized(values: [f64; 5]) -> Result<Self> {
        check_nonnegative(&values)?;
        Ok(Self {
            values,
            form: FrequencyForm::Normalized,
        })
    }

    pub fn counts(values: [f64; 5]) -> Result<Self> {
        check_nonnegative(&values)?;
        Ok(Self {
            values,
            form: FrequencyForm::Counts,
        })
    }

    pub fn values(&self) -> &[f64; 5] {
        &self.values
    }

    pub fn form(&self) -> FrequencyForm {
        self.form
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Divides counts by their total. Normalized input is returned as is.
    pub fn to_normalized(&self) -> Result<Self> {
        if self.form == FrequencyForm::Normalized {
            return Ok(self.clone());
        }
        let total = self.sum();
        if total <= 0.0 {
            return Err(Error::NotNormalized { sum: total });
        }
        Ok(Self {
            values: self.values.map(|v| v / total),
            form: FrequencyForm::Normalized,
        })
    }
}

fn check_nonnegative(values: &[f64; 5]) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Degenerate(format!(
            "frequencies must be finite and nonnegative (got {v})"
        )));
    }
    Ok(())
}

/// Mean opinion score of a normalized frequency vector: sum of `f_i * i`.
pub fn mos_from_frequencies(f: &FrequencyVector) -> Result<f64> {
    let sum = f.sum();
    if f.form != FrequencyForm::Normalized || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::NotNormalized { sum });
    }
    Ok(f.values
        .iter()
        .zip(RatingLevel::ALL)
        .map(|(p, l)| p * level_to_score(l) as f64)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> LevelScale {
        LevelScale::new(1.0, 5.0).unwrap()
    }

    #[test]
    fn score_to_level_examples() {
        let s = unit();
        assert_eq!(score_to_level(3.0, &s).unwrap(), RatingLevel::Fair);
        assert_eq!(score_to_level(5.0, &s).unwrap(), RatingLevel::Excellent);
        assert_eq!(score_to_level(1.0, &s).unwrap(), RatingLevel::Bad);
        // closed upper edge of the fourth interval
        assert_eq!(score_to_level(4.2, &s).unwrap(), RatingLevel::Good);
        assert_eq!(
            score_to_level(4.200000000000001, &s).unwrap(),
            RatingLevel::Excellent
        );
    }

    #[test]
    fn interior_edges_belong_to_lower_interval() {
        let s = LevelScale::new(0.0, 100.0).unwrap();
        for (edge, expect) in [(20.0, 1), (40.0, 2), (60.0, 3), (80.0, 4)] {
            assert_eq!(s.level_index(edge).unwrap(), expect, "edge {edge}");
            assert_eq!(s.level_index(edge + 1e-9).unwrap(), expect + 1);
        }
        assert_eq!(s.level_index(0.0).unwrap(), 1);
        assert_eq!(s.level_index(100.0).unwrap(), 5);
    }

    #[test]
    fn out_of_range_names_value() {
        let err = score_to_level(5.5, &unit()).unwrap_err();
        assert!(err.to_string().contains("5.5"), "{err}");
        assert!(score_to_level(0.999, &unit()).is_err());
        assert!(score_to_level(f64::NAN, &unit()).is_err());
    }

    #[test]
    fn invalid_scales_rejected() {
        assert!(LevelScale::new(5.0, 5.0).is_err());
        assert!(LevelScale::new(5.0, 1.0).is_err());
        assert!(LevelScale::with_levels(0.0, 1.0, 1).is_err());
        assert!("1,5".parse::<LevelScale>().is_ok());
        assert!("0:100".parse::<LevelScale>().is_ok());
        assert!("7".parse::<LevelScale>().is_err());
    }

    #[test]
    fn level_to_score_examples() {
        assert_eq!(level_to_score(RatingLevel::Fair), 3);
        assert_eq!(level_to_score(RatingLevel::Bad), 1);
        assert_eq!(level_to_score(RatingLevel::Excellent), 5);
        for l in RatingLevel::ALL {
            assert_eq!(RatingLevel::from_label(l.label()), Some(l));
            assert_eq!(RatingLevel::from_index(l.index()), Some(l));
        }
    }

    #[test]
    fn mos_examples() {
        let mos = |v| mos_from_frequencies(&FrequencyVector::normalized(v).unwrap()).unwrap();
        assert_eq!(mos([0.0, 0.0, 1.0, 0.0, 0.0]), 3.0);
        assert_eq!(mos([0.5, 0.0, 0.0, 0.0, 0.5]), 3.0);
        assert_eq!(mos([0.0, 0.0, 0.5, 0.5, 0.0]), 3.5);
    }

    #[test]
    fn mos_rejects_unnormalized() {
        let f = FrequencyVector::normalized([0.5, 0.5, 0.5, 0.0, 0.0]).unwrap();
        let err = mos_from_frequencies(&f).unwrap_err();
        assert!(err.to_string().contains("1.5"), "{err}");
        let counts = FrequencyVector::counts([1.0, 0.0, 0.0, 0.0, 3.0]).unwrap();
        assert!(mos_from_frequencies(&counts).is_err());
        let n = counts.to_normalized().unwrap();
        assert_eq!(mos_from_frequencies(&n).unwrap(), 4.0);
    }

    #[test]
    fn two_level_scale_has_named_labels() {
        let s = LevelScale::with_levels(0.0, 1.0, 2).unwrap();
        assert_eq!(s.labels(), Some(&TWO_LEVEL_LABELS[..]));
        assert_eq!(s.level_index(0.5).unwrap(), 1);
        assert_eq!(s.level_index(0.51).unwrap(), 2);
        assert!(score_to_level(0.5, &s).is_err());
    }

    proptest! {
        #[test]
        fn level_index_is_monotone(
            a in 0.0f64..=100.0, b in 0.0f64..=100.0,
        ) {
            let s = LevelScale::new(0.0, 100.0).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(s.level_index(lo).unwrap() <= s.level_index(hi).unwrap());
        }

        #[test]
        fn plateaus_have_equal_width(min in -50.0f64..50.0, width in 0.5f64..200.0, u in 0.0f64..1.0) {
            let s = LevelScale::new(min, min + width).unwrap();
            let score = min + u * width;
            let idx = s.level_index(score).unwrap();
            // the score lies inside its plateau, whose width is a fifth of the range
            let lo = s.edge(idx - 1);
            let hi = s.edge(idx);
            prop_assert!((hi - lo - width / 5.0).abs() < 1e-9 * width.max(1.0));
            prop_assert!(score <= hi);
            prop_assert!(score > lo || idx == 1);
        }

        #[test]
        fn mos_is_affine(
            f in proptest::array::uniform5(0.0f64..1.0),
            g in proptest::array::uniform5(0.0f64..1.0),
            alpha in 0.0f64..=1.0,
        ) {
            let norm = |v: [f64; 5]| {
                let t: f64 = v.iter().sum::<f64>() + 1e-3;
                let mut n = v.map(|x| x / t);
                n[0] += 1e-3 / t;
                n
            };
            let (f, g) = (norm(f), norm(g));
            let mix: [f64; 5] = std::array::from_fn(|i| alpha * f[i] + (1.0 - alpha) * g[i]);
            let mos = |v| mos_from_frequencies(&FrequencyVector::normalized(v).unwrap()).unwrap();
            prop_assert!((mos(mix) - (alpha * mos(f) + (1.0 - alpha) * mos(g))).abs() < 1e-12);
        }
    }
}
