//! Evaluation arithmetic: rank and linear correlation, conversion precision,
//! multiple-choice accuracy breakdowns and description-rating summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levels::LevelScale;
use crate::linalg;

/// Predictions paired with ground truth, validated once at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    predictions: Vec<f64>,
    ground_truth: Vec<f64>,
}

impl PairedSample {
    pub fn new(predictions: Vec<f64>, ground_truth: Vec<f64>) -> Result<Self> {
        if predictions.len() != ground_truth.len() {
            return Err(Error::Degenerate(format!(
                "length mismatch: {} predictions vs {} ground-truth values",
                predictions.len(),
                ground_truth.len()
            )));
        }
        if predictions.len() < 2 {
            return Err(Error::Degenerate(format!(
                "need at least 2 pairs (got {})",
                predictions.len()
            )));
        }
        if predictions.iter().chain(&ground_truth).any(|v| v.is_nan()) {
            return Err(Error::Degenerate("sample contains NaN".into()));
        }
        Ok(Self {
            predictions,
            ground_truth,
        })
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn ground_truth(&self) -> &[f64] {
        &self.ground_truth
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }
}

/// Fractional ranks (1-based); tied values share the mean of their ranks.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64], what: &str) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate(format!("zero variance in {what}")));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average ranks for ties.
pub fn srcc(sample: &PairedSample) -> Result<f64> {
    let rp = fractional_ranks(&sample.predictions);
    let rg = fractional_ranks(&sample.ground_truth);
    pearson(&rp, &rg, "ranks")
}

/// Optional monotone pre-mapping applied to predictions before PLCC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlccMapping {
    #[default]
    Raw,
    /// Four-parameter logistic fitted from predictions to ground truth.
    Logistic4,
}

/// Pearson linear correlation of the raw values.
pub fn plcc(sample: &PairedSample) -> Result<f64> {
    pearson(&sample.predictions, &sample.ground_truth, "sample")
}

pub fn plcc_with(sample: &PairedSample, mapping: PlccMapping) -> Result<f64> {
    match mapping {
        PlccMapping::Raw => plcc(sample),
        PlccMapping::Logistic4 => {
            let fit = Logistic4::fit(&sample.predictions, &sample.ground_truth);
            let mapped: Vec<f64> = sample.predictions.iter().map(|&x| fit.eval(x)).collect();
            pearson(&mapped, &sample.ground_truth, "logistic-mapped sample")
        }
    }
}

/// `(SRCC + PLCC) / 2`.
pub fn avg_metric(sample: &PairedSample) -> Result<f64> {
    Ok((srcc(sample)? + plcc(sample)?) / 2.0)
}

/// `(b1 - b2) / (1 + exp(-(x - b3) / |b4|)) + b2`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Logistic4 {
    pub params: [f64; 4],
}

impl Logistic4 {
    pub fn eval(&self, x: f64) -> f64 {
        let [b1, b2, b3, b4] = self.params;
        let g = 1.0 / (1.0 + (-(x - b3) / b4.abs().max(1e-12)).exp());
        (b1 - b2) * g + b2
    }

    /// Levenberg-Marquardt fit, started from the data's range and spread.
    pub fn fit(x: &[f64], y: &[f64]) -> Self {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let ymax = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ymin = y.iter().copied().fold(f64::INFINITY, f64::min);
        let mut b = [ymax, ymin, mean, sd.max(1e-6)];
        let sse = |b: &[f64; 4]| -> f64 {
            let m = Logistic4 { params: *b };
            x.iter()
                .zip(y)
                .map(|(&xi, &yi)| (m.eval(xi) - yi).powi(2))
                .sum()
        };
        let mut current = sse(&b);
        let mut lambda = 1e-3;
        for _ in 0..500 {
            let mut jtj = vec![vec![0.0; 4]; 4];
            let mut jtr = [0.0; 4];
            let s = b[3].abs().max(1e-12);
            for (&xi, &yi) in x.iter().zip(y) {
                let z = (xi - b[2]) / s;
                let g = 1.0 / (1.0 + (-z).exp());
                let h = (b[0] - b[1]) * g * (1.0 - g);
                let jac = [g, 1.0 - g, -h / s, -h * z / s * b[3].signum()];
                let r = (b[0] - b[1]) * g + b[1] - yi;
                for i in 0..4 {
                    jtr[i] += jac[i] * r;
                    for j in 0..4 {
                        jtj[i][j] += jac[i] * jac[j];
                    }
                }
            }
            let mut improved = false;
            while lambda < 1e12 {
                let mut a = jtj.clone();
                for (i, row) in a.iter_mut().enumerate() {
                    row[i] += lambda * jtj[i][i].max(1e-12);
                }
                let Some(step) = linalg::solve(a, jtr.iter().map(|v| -v).collect()) else {
                    lambda *= 10.0;
                    continue;
                };
                let trial: [f64; 4] = std::array::from_fn(|i| b[i] + step[i]);
                let t = sse(&trial);
                if t.is_finite() && t < current {
                    let rel = (current - t) / current.max(1e-300);
                    b = trial;
                    current = t;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = rel > 1e-14;
                    break;
                }
                lambda *= 10.0;
            }
            if !improved {
                break;
            }
        }
        Logistic4 { params: b }
    }
}

/// Correlations between scores and their level-quantized representatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConversionPrecision {
    pub srcc: f64,
    pub plcc: f64,
}

pub fn conversion_precision(scores: &[f64], scale: &LevelScale) -> Result<ConversionPrecision> {
    let quantized = scores
        .iter()
        .map(|&s| scale.level_index(s).map(|i| i as f64))
        .collect::<Result<Vec<_>>>()?;
    let sample = PairedSample::new(scores.to_vec(), quantized)?;
    Ok(ConversionPrecision {
        srcc: srcc(&sample)?,
        plcc: plcc(&sample)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QuestionType {
    #[serde(rename = "yes-or-no")]
    YesOrNo,
    #[serde(rename = "what")]
    What,
    #[serde(rename = "how")]
    How,
}

impl QuestionType {
    pub fn name(self) -> &'static str {
        match self {
            QuestionType::YesOrNo => "yes-or-no",
            QuestionType::What => "what",
            QuestionType::How => "how",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    #[serde(rename = "distortion")]
    Distortion,
    #[serde(rename = "other")]
    Other,
    #[serde(rename = "in-context distortion")]
    InContextDistortion,
    #[serde(rename = "in-context other")]
    InContextOther,
}

impl Quadrant {
    pub fn name(self) -> &'static str {
        match self {
            Quadrant::Distortion => "distortion",
            Quadrant::Other => "other",
            Quadrant::InContextDistortion => "in-context distortion",
            Quadrant::InContextOther => "in-context other",
        }
    }
}

/// One answered multiple-choice question. Choices are labelled A, B, C, ...
/// in order; `gold` may be either the label or the choice text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqRecord {
    pub id: String,
    #[serde(rename = "type")]
    pub question_type: QuestionType,
    pub quadrant: Quadrant,
    pub choices: Vec<String>,
    pub gold: String,
    pub predicted: String,
}

fn choice_letter(i: usize) -> Option<char> {
    u8::try_from(i)
        .ok()
        .filter(|i| *i < 26)
        .map(|i| (b'a' + i) as char)
}

fn strip_period(s: &str) -> &str {
    s.trim().trim_end_matches('.').trim()
}

/// Resolves an answer to a choice index: a bare letter, a leading letter
/// such as `"B."`, `"(b)"` or `"C: blur"`, or the full choice text.
/// Matching is case-insensitive and the first match wins.
pub fn resolve_answer(answer: &str, choices: &[String]) -> Option<usize> {
    let lower = answer.trim().to_lowercase();
    let letter_index =
        |c: char| -> Option<usize> { (0..choices.len()).find(|&i| choice_letter(i) == Some(c)) };
    let mut chars = lower.chars();
    let leading = match (chars.next(), chars.next(), chars.next()) {
        (Some(c), None, _) => Some(c),
        (Some('('), Some(c), Some(')')) => Some(c),
        (Some(c), Some('.' | ')' | ':'), _) => Some(c),
        _ => None,
    };
    if let Some(i) = leading.and_then(letter_index) {
        return Some(i);
    }
    let wanted = strip_period(&lower);
    choices
        .iter()
        .position(|c| strip_period(&c.to_lowercase()) == wanted)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

impl Accuracy {
    fn add(&mut self, hit: bool) {
        self.total += 1;
        self.correct += hit as usize;
        self.accuracy = self.correct as f64 / self.total as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqReport {
    pub overall: Accuracy,
    pub by_type: BTreeMap<QuestionType, Accuracy>,
    pub by_quadrant: BTreeMap<Quadrant, Accuracy>,
}

impl McqReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>8} {:>8} {:>9}",
            "category", "correct", "total", "accuracy"
        );
        let mut row = |name: &str, a: &Accuracy| {
            let _ = writeln!(
                out,
                "{:<24} {:>8} {:>8} {:>8.2}%",
                name,
                a.correct,
                a.total,
                a.accuracy * 100.0
            );
        };
        for (t, a) in &self.by_type {
            row(t.name(), a);
        }
        for (q, a) in &self.by_quadrant {
            row(q.name(), a);
        }
        row("overall", &self.overall);
        out
    }
}

pub fn mcq_report(records: &[McqRecord]) -> Result<McqReport> {
    if records.is_empty() {
        return Err(Error::Degenerate("no multiple-choice records".into()));
    }
    let mut report = McqReport {
        overall: Accuracy::default(),
        by_type: BTreeMap::new(),
        by_quadrant: BTreeMap::new(),
    };
    for r in records {
        let gold = resolve_answer(&r.gold, &r.choices).ok_or_else(|| {
            Error::Degenerate(format!(
                "{}: gold answer '{}' is not one of the declared choices",
                r.id, r.gold
            ))
        })?;
        let hit = resolve_answer(&r.predicted, &r.choices) == Some(gold);
        report.overall.add(hit);
        report.by_type.entry(r.question_type).or_default().add(hit);
        report.by_quadrant.entry(r.quadrant).or_default().add(hit);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Completeness,
    Precision,
    Relevance,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [
        Dimension::Completeness,
        Dimension::Precision,
        Dimension::Relevance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Completeness => "completeness",
            Dimension::Precision => "precision",
            Dimension::Relevance => "relevance",
        }
    }
}

/// A judged 0/1/2 rating of one description along one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionRating {
    #[serde(default)]
    pub id: String,
    pub dimension: Dimension,
    pub rating: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSummary {
    pub dimension: Dimension,
    pub count: usize,
    /// Frequencies of ratings 0, 1, 2.
    pub p: [f64; 3],
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionReport {
    pub dimensions: Vec<DimensionSummary>,
    pub sum: f64,
}

impl DescriptionReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "dimension", "n", "P0", "P1", "P2", "score"
        );
        for d in &self.dimensions {
            let _ = writeln!(
                out,
                "{:<14} {:>7} {:>6.2}% {:>6.2}% {:>6.2}% {:>7.3}",
                d.dimension.name(),
                d.count,
                d.p[0] * 100.0,
                d.p[1] * 100.0,
                d.p[2] * 100.0,
                d.score
            );
        }
        let _ = writeln!(out, "{:<14} {:>47.3}", "sum", self.sum);
        out
    }
}

pub fn description_report(ratings: &[DescriptionRating]) -> Result<DescriptionReport> {
    let mut counts: BTreeMap<Dimension, [usize; 3]> = BTreeMap::new();
    for r in ratings {
        if r.rating > 2 {
            return Err(Error::Degenerate(format!(
                "{}: rating {} is outside 0..=2",
                r.id, r.rating
            )));
        }
        counts.entry(r.dimension).or_default()[r.rating as usize] += 1;
    }
    let mut dimensions = Vec::with_capacity(3);
    for d in Dimension::ALL {
        let c = counts
            .get(&d)
            .ok_or_else(|| Error::MissingDimension(d.name().into()))?;
        let total: usize = c.iter().sum();
        let p = c.map(|k| k as f64 / total as f64);
        dimensions.push(DimensionSummary {
            dimension: d,
            count: total,
            p,
            score: p[1] + 2.0 * p[2],
        });
    }
    let sum = dimensions.iter().map(|d| d.score).sum();
    Ok(DescriptionReport { dimensions, sum })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(p: &[f64], g: &[f64]) -> PairedSample {
        PairedSample::new(p.to_vec(), g.to_vec()).unwrap()
    }

    #[test]
    fn srcc_examples() {
        assert!(
            (srcc(&sample(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0])).unwrap() - 1.0).abs() < 1e-15
        );
        assert!(
            (srcc(&sample(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0])).unwrap() + 1.0).abs() < 1e-15
        );
        // 1 - 6 * 2 / (3 * 8)
        assert!((srcc(&sample(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0])).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn plcc_examples() {
        let x = [0.3, 1.7, 2.2, 5.0, -1.0];
        let affine: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((plcc(&sample(&x, &affine)).unwrap() - 1.0).abs() < 1e-15);
        assert!((plcc(&sample(&x, &neg)).unwrap() + 1.0).abs() < 1e-15);
        let r = plcc(&sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0])).unwrap();
        assert!((r - 9.0 / 84f64.sqrt()).abs() < 1e-15, "{r}");
    }

    #[test]
    fn avg_examples() {
        assert!(
            (avg_metric(&sample(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0])).unwrap() - 1.0).abs() < 1e-15
        );
        assert!(
            (avg_metric(&sample(&[1.0, 2.0, 3.0], &[7.0, 5.0, 3.0])).unwrap() + 1.0).abs() < 1e-15
        );
    }

    #[test]
    fn degenerate_samples() {
        assert!(PairedSample::new(vec![1.0], vec![1.0]).is_err());
        assert!(PairedSample::new(vec![1.0, 2.0], vec![1.0]).is_err());
        assert!(PairedSample::new(vec![1.0, f64::NAN], vec![1.0, 2.0]).is_err());
        let flat = sample(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]);
        assert!(matches!(srcc(&flat), Err(Error::Degenerate(_))));
        assert!(matches!(plcc(&flat), Err(Error::Degenerate(_))));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(
            fractional_ranks(&[10.0, 20.0, 20.0, 5.0]),
            vec![2.0, 3.5, 3.5, 1.0]
        );
    }

    #[test]
    fn logistic_mapping_recovers_sigmoid_relation() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 / 4.0).collect();
        let truth = Logistic4 {
            params: [90.0, 10.0, 5.0, 1.3],
        };
        let y: Vec<f64> = x.iter().map(|&v| truth.eval(v)).collect();
        let s = sample(&x, &y);
        let raw = plcc(&s).unwrap();
        let mapped = plcc_with(&s, PlccMapping::Logistic4).unwrap();
        assert!(raw < 0.99);
        assert!(mapped > 0.999_999, "{mapped}");
    }

    #[test]
    fn conversion_precision_midpoints() {
        let scale = LevelScale::new(1.0, 5.0).unwrap();
        let mids = [1.4, 2.2, 3.0, 3.8, 4.6];
        let c = conversion_precision(&mids, &scale).unwrap();
        assert!((c.srcc - 1.0).abs() < 1e-15);
        assert!((c.plcc - 1.0).abs() < 1e-12);
        // every score in one bin
        assert!(conversion_precision(&[1.1, 1.2, 1.3], &scale).is_err());
    }

    fn mcq(t: QuestionType, q: Quadrant, gold: &str, predicted: &str) -> McqRecord {
        McqRecord {
            id: "q".into(),
            question_type: t,
            quadrant: q,
            choices: vec!["Yes".into(), "No".into()],
            gold: gold.into(),
            predicted: predicted.into(),
        }
    }

    #[test]
    fn answer_normalization() {
        let choices: Vec<String> = ["Noise", "Blur", "Overexposure", "None of the above"]
            .map(String::from)
            .to_vec();
        assert_eq!(resolve_answer("B", &choices), Some(1));
        assert_eq!(resolve_answer(" c. ", &choices), Some(2));
        assert_eq!(resolve_answer("(d)", &choices), Some(3));
        assert_eq!(resolve_answer("A: Noise", &choices), Some(0));
        assert_eq!(resolve_answer("blur.", &choices), Some(1));
        assert_eq!(resolve_answer("  OVEREXPOSURE ", &choices), Some(2));
        assert_eq!(resolve_answer("E", &choices), None);
        assert_eq!(resolve_answer("motion blur", &choices), None);
    }

    #[test]
    fn mcq_examples() {
        use Quadrant::*;
        use QuestionType::*;
        let records = vec![
            mcq(YesOrNo, Distortion, "A", "yes"),
            mcq(YesOrNo, Distortion, "B", "B"),
            mcq(What, Distortion, "No", "b."),
            mcq(How, Distortion, "A", "No"),
        ];
        let r = mcq_report(&records).unwrap();
        assert_eq!(r.overall.accuracy, 0.75);
        assert_eq!(r.by_quadrant[&Distortion], r.overall);
        assert_eq!(r.by_type[&How].accuracy, 0.0);
        assert!(r.to_table().contains("overall"));

        assert!(mcq_report(&[]).is_err());
        assert!(mcq_report(&[mcq(What, Other, "Maybe", "A")]).is_err());
    }

    fn rating(d: Dimension, r: u8) -> DescriptionRating {
        DescriptionRating {
            id: String::new(),
            dimension: d,
            rating: r,
        }
    }

    #[test]
    fn description_examples() {
        let mut ratings: Vec<_> = [1, 1, 2, 0]
            .into_iter()
            .map(|r| rating(Dimension::Completeness, r))
            .collect();
        ratings.push(rating(Dimension::Precision, 2));
        ratings.push(rating(Dimension::Relevance, 0));
        let rep = description_report(&ratings).unwrap();
        assert_eq!(rep.dimensions[0].p, [0.25, 0.5, 0.25]);
        assert_eq!(rep.dimensions[0].score, 1.0);
        assert_eq!(rep.sum, 3.0);

        let all = |r| Dimension::ALL.map(|d| rating(d, r)).to_vec();
        assert_eq!(description_report(&all(2)).unwrap().sum, 6.0);
        assert_eq!(description_report(&all(0)).unwrap().sum, 0.0);

        let err = description_report(&[rating(Dimension::Precision, 1)]).unwrap_err();
        assert!(matches!(err, Error::MissingDimension(ref d) if d == "completeness"));
        assert!(description_report(&[rating(Dimension::Precision, 3)]).is_err());
    }

    fn distinct(v: &[f64]) -> bool {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s.windows(2).all(|w| w[0] != w[1])
    }

    proptest! {
        #[test]
        fn srcc_monotone_invariance(
            pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40)
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assume!(distinct(&x) && distinct(&y));
            let base = srcc(&sample(&x, &y)).unwrap();
            let tx: Vec<f64> = x.iter().map(|v| v.exp() + v.powi(3)).collect();
            prop_assume!(distinct(&tx));
            prop_assert!((srcc(&sample(&tx, &y)).unwrap() - base).abs() < 1e-12);
            prop_assert!((srcc(&sample(&y, &x)).unwrap() - base).abs() < 1e-12);
        }

        #[test]
        fn plcc_affine_invariance(
            pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40),
            a in 0.1f64..10.0, b in -5.0f64..5.0,
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assume!(distinct(&x) && distinct(&y));
            let base = plcc(&sample(&x, &y)).unwrap();
            let tx: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            prop_assert!((plcc(&sample(&tx, &y)).unwrap() - base).abs() < 1e-12);
            prop_assert!((plcc(&sample(&y, &x)).unwrap() - base).abs() < 1e-12);
        }

        #[test]
        fn mcq_partition_recomposes_overall(
            rows in proptest::collection::vec((0usize..3, 0usize..4, any::<bool>()), 1..60)
        ) {
            let types = [QuestionType::YesOrNo, QuestionType::What, QuestionType::How];
            let quads = [Quadrant::Distortion, Quadrant::Other, Quadrant::InContextDistortion, Quadrant::InContextOther];
            let records: Vec<_> = rows
                .iter()
                .map(|&(t, q, hit)| mcq(types[t], quads[q], "A", if hit { "A" } else { "B" }))
                .collect();
            let r = mcq_report(&records).unwrap();
            for part in [r.by_type.values().copied().collect::<Vec<_>>(), r.by_quadrant.values().copied().collect()] {
                let n: usize = part.iter().map(|a| a.total).sum();
                let weighted: f64 = part.iter().map(|a| a.accuracy * a.total as f64).sum::<f64>() / n as f64;
                prop_assert!((weighted - r.overall.accuracy).abs() < 1e-12);
            }
        }
    }
}
