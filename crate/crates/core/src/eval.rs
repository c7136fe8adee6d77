//! Open-set metrics, episode generation and distillation-loss diagnostics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::model::EMBED_DIM;
use crate::proto::{acceptance_rate, calibrate_threshold, PrototypeStore};

/// An operating point: the requested FAR, the FAR actually realized on the
/// calibration negatives, the threshold, and the detection rate or accuracy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetPoint {
    pub target_far: f64,
    pub far: f64,
    pub threshold: f64,
    pub rate: f64,
}

fn check_scores(scores: &[f64], what: &str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Empty(format!("{what} scores")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("{what} scores")));
    }
    Ok(())
}

/// Detection rate of `pos_scores` at the threshold calibrated on
/// `neg_scores` for `far`.
pub fn det_at_far(pos_scores: &[f64], neg_scores: &[f64], far: f64) -> Result<DetPoint> {
    check_scores(pos_scores, "positive")?;
    check_scores(neg_scores, "negative")?;
    let threshold = calibrate_threshold(neg_scores, far)?;
    Ok(DetPoint {
        target_far: far,
        far: acceptance_rate(neg_scores, threshold),
        threshold,
        rate: acceptance_rate(pos_scores, threshold),
    })
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, computed from average ranks.
pub fn auroc(pos_scores: &[f64], neg_scores: &[f64]) -> Result<f64> {
    check_scores(pos_scores, "positive")?;
    check_scores(neg_scores, "negative")?;
    let mut all: Vec<(f64, bool)> = pos_scores
        .iter()
        .map(|&s| (s, true))
        .chain(neg_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * all[i..=j].iter().filter(|x| x.1).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (pos_scores.len() as f64, neg_scores.len() as f64);
    let u = rank_sum - np * (np + 1.0) / 2.0;
    Ok(u / (np * nn))
}

/// One utterance in an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    /// Index of the utterance in the source dataset.
    pub id: usize,
    pub label: String,
    pub embedding: Embedding,
}

/// One evaluation episode: K enrollment shots per target keyword, positive
/// test utterances of the targets and negatives from unknown keywords.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialSet {
    pub index: usize,
    pub seed: u64,
    pub shots: usize,
    pub targets: Vec<String>,
    pub unknown: Vec<String>,
    pub enrollment: Vec<Trial>,
    pub positives: Vec<Trial>,
    pub negatives: Vec<Trial>,
}

impl TrialSet {
    /// Prototypes of every target enrolled from this episode's shots.
    pub fn store(&self) -> Result<PrototypeStore> {
        let mut store = PrototypeStore::new(0.0)?;
        for label in &self.targets {
            let shots: Vec<_> = self
                .enrollment
                .iter()
                .filter(|t| &t.label == label)
                .map(|t| t.embedding.clone())
                .collect();
            store.enroll(label.clone(), &shots)?;
        }
        Ok(store)
    }
}

/// Builds `n_trials` episodes from a labeled embedding collection.
///
/// Each episode shuffles the sorted label set, takes the first `n_targets`
/// labels as keywords and the next `n_unknown` as non-targets, then splits
/// every keyword's utterances into `k` enrollment shots and test positives.
/// All utterances of the non-target labels are negatives.
pub fn make_episodes(
    dataset: &[(String, Embedding)],
    n_targets: usize,
    n_unknown: usize,
    k: usize,
    n_trials: usize,
    seed: u64,
) -> Result<Vec<TrialSet>> {
    if n_targets == 0 || k == 0 {
        return Err(Error::Parameter("need at least one target keyword and one shot".into()));
    }
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (label, _)) in dataset.iter().enumerate() {
        by_label.entry(label.as_str()).or_default().push(i);
    }
    if by_label.len() < n_targets + n_unknown {
        return Err(Error::Parameter(format!(
            "{} labels available, {} targets + {} unknown requested",
            by_label.len(),
            n_targets,
            n_unknown
        )));
    }
    if let Some((label, ids)) = by_label.iter().find(|(_, ids)| ids.len() <= k) {
        return Err(Error::Parameter(format!(
            "label {label:?} has {} utterances; {k}-shot episodes need more than {k}",
            ids.len()
        )));
    }
    let labels: Vec<&str> = by_label.keys().copied().collect();
    let trial = |id: usize| Trial {
        id,
        label: dataset[id].0.clone(),
        embedding: dataset[id].1.clone(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut episodes = Vec::with_capacity(n_trials);
    for index in 0..n_trials {
        let mut order = labels.clone();
        order.shuffle(&mut rng);
        let mut targets: Vec<String> = order[..n_targets].iter().map(|s| s.to_string()).collect();
        let mut unknown: Vec<String> = order[n_targets..n_targets + n_unknown]
            .iter()
            .map(|s| s.to_string())
            .collect();
        targets.sort();
        unknown.sort();

        let mut enrollment = Vec::new();
        let mut positives = Vec::new();
        for label in &targets {
            let mut ids = by_label[label.as_str()].clone();
            ids.shuffle(&mut rng);
            let (shots, tests) = ids.split_at(k);
            enrollment.extend(shots.iter().map(|&i| trial(i)));
            positives.extend(tests.iter().map(|&i| trial(i)));
        }
        let negatives = unknown
            .iter()
            .flat_map(|l| by_label[l.as_str()].iter().map(|&i| trial(i)))
            .collect();
        episodes.push(TrialSet {
            index,
            seed,
            shots: k,
            targets,
            unknown,
            enrollment,
            positives,
            negatives,
        });
    }
    Ok(episodes)
}

/// Best-match score of every negative trial against `store`.
pub fn negative_scores(trials: &TrialSet, store: &PrototypeStore) -> Result<Vec<f64>> {
    trials
        .negatives
        .iter()
        .map(|t| Ok(store.detect(&t.embedding)?.score))
        .collect()
}

/// Accuracy at the threshold calibrated on negative best-match scores: the
/// fraction of positives that are accepted and matched to their own label.
pub fn acc_at_far(trials: &TrialSet, store: &PrototypeStore, far: f64) -> Result<DetPoint> {
    if trials.positives.is_empty() {
        return Err(Error::Empty("positive trials".into()));
    }
    if let Some(t) = trials.positives.iter().find(|t| !store.contains(&t.label)) {
        return Err(Error::UnknownLabel(t.label.clone()));
    }
    let neg = negative_scores(trials, store)?;
    check_scores(&neg, "negative")?;
    let threshold = calibrate_threshold(&neg, far)?;
    let mut correct = 0usize;
    for t in &trials.positives {
        let d = store.detect(&t.embedding)?;
        if d.score >= threshold && d.label == t.label {
            correct += 1;
        }
    }
    Ok(DetPoint {
        target_far: far,
        far: acceptance_rate(&neg, threshold),
        threshold,
        rate: correct as f64 / trials.positives.len() as f64,
    })
}

/// Metrics of one episode at each requested FAR.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub index: usize,
    pub acc: Vec<DetPoint>,
    pub det: Vec<DetPoint>,
    /// Positive versus negative best-match scores.
    pub auroc: f64,
}

pub fn evaluate_episode(trials: &TrialSet, fars: &[f64]) -> Result<EpisodeResult> {
    let store = trials.store()?;
    let neg = negative_scores(trials, &store)?;
    let pos = trials
        .positives
        .iter()
        .map(|t| Ok(store.detect(&t.embedding)?.score))
        .collect::<Result<Vec<_>>>()?;
    Ok(EpisodeResult {
        index: trials.index,
        acc: fars
            .iter()
            .map(|&f| acc_at_far(trials, &store, f))
            .collect::<Result<_>>()?,
        det: fars
            .iter()
            .map(|&f| det_at_far(&pos, &neg, f))
            .collect::<Result<_>>()?,
        auroc: auroc(&pos, &neg)?,
    })
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    if values.is_empty() {
        return Summary {
            mean: f64::NAN,
            std: f64::NAN,
        };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Summary {
        mean,
        std: var.sqrt(),
    }
}

/// Per-episode results with aggregate statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeReport {
    pub fars: Vec<f64>,
    pub episodes: Vec<EpisodeResult>,
}

impl EpisodeReport {
    pub fn new(episodes: &[TrialSet], fars: &[f64]) -> Result<Self> {
        Ok(EpisodeReport {
            fars: fars.to_vec(),
            episodes: episodes
                .iter()
                .map(|e| evaluate_episode(e, fars))
                .collect::<Result<_>>()?,
        })
    }

    pub fn acc(&self, far_index: usize) -> Summary {
        let v: Vec<f64> = self.episodes.iter().map(|e| e.acc[far_index].rate).collect();
        summarize(&v)
    }

    pub fn det(&self, far_index: usize) -> Summary {
        let v: Vec<f64> = self.episodes.iter().map(|e| e.det[far_index].rate).collect();
        summarize(&v)
    }

    pub fn auroc(&self) -> Summary {
        let v: Vec<f64> = self.episodes.iter().map(|e| e.auroc).collect();
        summarize(&v)
    }

    /// Tab-separated per-episode rows followed by `mean±std` lines.
    pub fn to_text(&self) -> String {
        let pct = |f: f64| format!("{}%", f * 100.0);
        let mut s = String::from("episode");
        for &f in &self.fars {
            let _ = write!(s, "\tACC@{}\tDET@{}", pct(f), pct(f));
        }
        s.push_str("\tAUROC\n");
        for e in &self.episodes {
            let _ = write!(s, "{}", e.index);
            for (a, d) in e.acc.iter().zip(&e.det) {
                let _ = write!(s, "\t{:.4}\t{:.4}", a.rate, d.rate);
            }
            let _ = writeln!(s, "\t{:.4}", e.auroc);
        }
        let mut fmt_sum = |name: String, m: Summary| {
            let _ = writeln!(s, "{name}\t{:.4}±{:.4}", m.mean, m.std);
        };
        for (i, &f) in self.fars.iter().enumerate() {
            fmt_sum(format!("ACC@{}", pct(f)), self.acc(i));
            fmt_sum(format!("DET@{}", pct(f)), self.det(i));
        }
        fmt_sum("AUROC".into(), self.auroc());
        s
    }
}

/// Weighting of the distillation objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KdConfig {
    /// Weight of the angular-margin term added to the distillation loss.
    pub lambda: f64,
    pub dim: usize,
}

impl Default for KdConfig {
    fn default() -> Self {
        KdConfig {
            lambda: 5e-5,
            dim: EMBED_DIM,
        }
    }
}

impl KdConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Parameter(format!("lambda {lambda} must be positive")));
        }
        Ok(KdConfig {
            lambda,
            ..Default::default()
        })
    }

    /// `kd + λ·margin_loss`, with the margin loss supplied by the caller.
    pub fn total(&self, kd: f64, margin_loss: f64) -> f64 {
        kd + self.lambda * margin_loss
    }
}

fn check_pair(student: &[f32], teacher: &[f32]) -> Result<()> {
    if student.len() != teacher.len() {
        return Err(Error::dim("teacher embedding length", student.len(), teacher.len()));
    }
    if student.is_empty() {
        return Err(Error::Empty("embeddings".into()));
    }
    Ok(())
}

/// Mean squared difference between student and teacher embeddings.
pub fn kd_loss(student: &[f32], teacher: &[f32]) -> Result<f64> {
    check_pair(student, teacher)?;
    let sum: f64 = student
        .iter()
        .zip(teacher)
        .map(|(&s, &t)| (s as f64 - t as f64).powi(2))
        .sum();
    Ok(sum / student.len() as f64)
}

/// Gradient of [`kd_loss`] with respect to the student embedding.
pub fn kd_gradient(student: &[f32], teacher: &[f32]) -> Result<Vec<f64>> {
    check_pair(student, teacher)?;
    let n = student.len() as f64;
    Ok(student
        .iter()
        .zip(teacher)
        .map(|(&s, &t)| 2.0 * (s as f64 - t as f64) / n)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn det_examples() {
        let neg: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let p = det_at_far(&[0.3, 0.6, 0.8, 0.9], &neg, 0.1).unwrap();
        assert_eq!((p.threshold, p.rate), (1.0, 0.0));
        let p = det_at_far(&[0.9; 5], &[0.1; 5], 0.01).unwrap();
        assert_eq!(p.rate, 1.0);
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.8, 0.4], &[0.6, 0.2]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.1, 0.5], &[0.5, 0.1]).unwrap(), 0.5);
        assert_eq!(auroc(&[2.0], &[1.0]).unwrap(), 1.0);
        assert!(auroc(&[], &[1.0]).is_err());
    }

    #[test]
    fn kd_examples() {
        let t = vec![0.5f32; 64];
        let mut s = t.clone();
        assert_eq!(kd_loss(&s, &t).unwrap(), 0.0);
        s[0] += 1.0;
        assert!((kd_loss(&s, &t).unwrap() - 1.0 / 64.0).abs() < 1e-12);
        assert!(kd_loss(&s[..3], &t).is_err());
        assert_eq!(KdConfig::default().lambda, 5e-5);
        assert!(KdConfig::new(0.0).is_err());
    }

    #[test]
    fn population_std() {
        let s = summarize(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std), (2.0, 1.0));
    }
}
