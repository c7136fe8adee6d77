//! Few-shot enrollment, open-set scoring and thresholded detection.
//!
//! A keyword is enrolled by averaging the embeddings of its K examples.
//! Queries are scored by cosine similarity against every prototype; the best
//! match is accepted when its score reaches the store's threshold.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::model::EMBED_DIM;

/// Version tag on the first line of a persisted store.
pub const STORE_HEADER: &str = "edgespot-prototypes 1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Cosine,
}

impl Metric {
    pub fn name(self) -> &'static str {
        "cosine"
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::Format(format!("unknown metric {other:?}"))),
        }
    }
}

/// Mean of the K enrollment embeddings of one keyword (not normalized).
#[derive(Clone, Debug, PartialEq)]
pub struct Prototype {
    pub label: String,
    pub vector: Vec<f32>,
    pub shots: usize,
}

impl Prototype {
    pub fn new(label: impl Into<String>, vector: Vec<f32>, shots: usize) -> Result<Self> {
        let label = label.into();
        check_label(&label)?;
        if vector.len() != EMBED_DIM {
            return Err(Error::dim("prototype length", EMBED_DIM, vector.len()));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("prototype {label}")));
        }
        if shots == 0 {
            return Err(Error::Parameter(format!("prototype {label} has zero shots")));
        }
        Ok(Prototype {
            label,
            vector,
            shots,
        })
    }
}

fn check_label(label: &str) -> Result<()> {
    if label.is_empty() || label.chars().any(char::is_whitespace) {
        return Err(Error::Parameter(format!(
            "label {label:?} must be non-empty without whitespace"
        )));
    }
    Ok(())
}

pub fn enroll(label: impl Into<String>, embeddings: &[Embedding]) -> Result<Prototype> {
    let label = label.into();
    if embeddings.is_empty() {
        return Err(Error::Empty(format!("no enrollment embeddings for {label}")));
    }
    let mut acc = vec![0.0f64; EMBED_DIM];
    for e in embeddings {
        let v = e.as_slice();
        if v.len() != EMBED_DIM {
            return Err(Error::dim("enrollment embedding length", EMBED_DIM, v.len()));
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += *x as f64;
        }
    }
    let k = embeddings.len() as f64;
    let vector = acc.into_iter().map(|a| (a / k) as f32).collect();
    Prototype::new(label, vector, embeddings.len())
}

fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("score operand length", a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Parameter("cosine similarity of a zero vector".into()));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Cosine similarity between a query and a prototype.
pub fn score(e: &Embedding, p: &Prototype) -> Result<f64> {
    cosine(e.as_slice(), &p.vector)
}

/// Outcome of scoring one query against a store.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub label: String,
    pub score: f64,
    pub accepted: bool,
    /// `(label, score)` for every prototype in label order.
    pub scores: Vec<(String, f64)>,
}

/// Enrolled prototypes keyed by label, plus the decision threshold.
///
/// Thresholds above 1 are allowed and reject every query.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeStore {
    metric: Metric,
    threshold: f64,
    prototypes: BTreeMap<String, Prototype>,
}

impl PrototypeStore {
    pub fn new(threshold: f64) -> Result<Self> {
        let mut s = PrototypeStore {
            metric: Metric::Cosine,
            threshold: 0.0,
            prototypes: BTreeMap::new(),
        };
        s.set_threshold(threshold)?;
        Ok(s)
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn set_threshold(&mut self, threshold: f64) -> Result<()> {
        if threshold.is_nan() || threshold < -1.0 {
            return Err(Error::Parameter(format!("threshold {threshold} below -1")));
        }
        self.threshold = threshold;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<&Prototype> {
        self.prototypes.get(label)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.prototypes.contains_key(label)
    }

    /// Prototypes in label order.
    pub fn prototypes(&self) -> impl Iterator<Item = &Prototype> {
        self.prototypes.values()
    }

    /// Adds a prototype; labels must be unique.
    pub fn insert(&mut self, p: Prototype) -> Result<()> {
        if self.prototypes.contains_key(&p.label) {
            return Err(Error::Parameter(format!("label {:?} already enrolled", p.label)));
        }
        self.prototypes.insert(p.label.clone(), p);
        Ok(())
    }

    pub fn enroll(&mut self, label: impl Into<String>, embeddings: &[Embedding]) -> Result<&Prototype> {
        let p = enroll(label, embeddings)?;
        let label = p.label.clone();
        self.insert(p)?;
        Ok(&self.prototypes[&label])
    }

    /// Scores `e` against every prototype. The best label is the highest
    /// score; ties go to the lexicographically smallest label.
    pub fn detect(&self, e: &Embedding) -> Result<Detection> {
        if self.prototypes.is_empty() {
            return Err(Error::Empty("prototype store".into()));
        }
        let scores = self
            .prototypes
            .values()
            .map(|p| Ok((p.label.clone(), score(e, p)?)))
            .collect::<Result<Vec<_>>>()?;
        let (mut best, mut best_score) = (0, scores[0].1);
        for (i, (_, s)) in scores.iter().enumerate().skip(1) {
            if *s > best_score {
                best = i;
                best_score = *s;
            }
        }
        Ok(Detection {
            label: scores[best].0.clone(),
            score: best_score,
            accepted: best_score >= self.threshold,
            scores,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{STORE_HEADER}");
        let _ = writeln!(s, "metric {}", self.metric.name());
        let _ = writeln!(s, "threshold {}", self.threshold);
        let _ = writeln!(s, "dim {EMBED_DIM}");
        let _ = writeln!(s, "count {}", self.prototypes.len());
        for p in self.prototypes.values() {
            let _ = write!(s, "label {} k {}", p.label, p.shots);
            for v in &p.vector {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut next = |what: &str| {
            lines
                .next()
                .map(|(i, l)| (i + 1, l))
                .ok_or_else(|| Error::Format(format!("prototype store truncated before {what}")))
        };
        let (_, header) = next("header")?;
        if header.trim() != STORE_HEADER {
            return Err(Error::Format(format!("unsupported prototype store header {header:?}")));
        }
        let field = |(n, line): (usize, &str), key: &str| -> Result<String> {
            match line.split_once(' ') {
                Some((k, v)) if k == key => Ok(v.trim().to_string()),
                _ => Err(Error::Format(format!("line {n}: expected `{key} ...`"))),
            }
        };
        let metric: Metric = field(next("metric")?, "metric")?.parse()?;
        let threshold: f64 = parse_num(&field(next("threshold")?, "threshold")?, "threshold")?;
        let dim: usize = parse_num(&field(next("dim")?, "dim")?, "dim")?;
        if dim != EMBED_DIM {
            return Err(Error::dim("stored embedding dim", EMBED_DIM, dim));
        }
        let count: usize = parse_num(&field(next("count")?, "count")?, "count")?;
        let mut store = PrototypeStore::new(threshold)?;
        store.metric = metric;
        for _ in 0..count {
            let (n, line) = next("label record")?;
            let mut tok = line.split_whitespace();
            let bad = || Error::Format(format!("line {n}: expected `label <name> k <K> <{dim} values>`"));
            if tok.next() != Some("label") {
                return Err(bad());
            }
            let label = tok.next().ok_or_else(bad)?.to_string();
            if tok.next() != Some("k") {
                return Err(bad());
            }
            let shots: usize = parse_num(tok.next().ok_or_else(bad)?, "k")?;
            let vector = tok
                .map(|t| parse_num::<f32>(t, "prototype value"))
                .collect::<Result<Vec<_>>>()?;
            store.insert(Prototype::new(label, vector, shots)?)?;
        }
        if let Some((n, _)) = lines.next() {
            return Err(Error::Format(format!("line {}: unexpected content after records", n + 1)));
        }
        Ok(store)
    }
}

fn parse_num<T: FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Format(format!("invalid {what} {s:?}")))
}

/// Smallest threshold whose acceptance rate over `negative_scores` is at most
/// `target_far`. The result is an observed score, or the next float above
/// the maximum when every observed value would admit too many negatives.
pub fn calibrate_threshold(negative_scores: &[f64], target_far: f64) -> Result<f64> {
    if negative_scores.is_empty() {
        return Err(Error::Empty("negative scores".into()));
    }
    if !(target_far > 0.0 && target_far < 1.0) {
        return Err(Error::Parameter(format!("target FAR {target_far} outside (0, 1)")));
    }
    if negative_scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("negative scores".into()));
    }
    let mut s = negative_scores.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let n = s.len();
    // at most `allowed` negatives may score >= θ
    let allowed = ((target_far * n as f64) + 1e-9).floor() as usize;
    let pivot = s[allowed.min(n - 1)];
    let above = s[..allowed.min(n - 1)]
        .iter()
        .rev()
        .find(|&&v| v > pivot)
        .copied();
    Ok(above.unwrap_or_else(|| pivot.next_up()))
}

/// Fraction of `scores` at or above `threshold`.
pub fn acceptance_rate(scores: &[f64], threshold: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|&&s| s >= threshold).count() as f64 / scores.len() as f64
}
