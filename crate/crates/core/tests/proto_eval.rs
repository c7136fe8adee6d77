mod common;

use std::collections::BTreeSet;

use common::*;
use edgespot::eval::{
    acc_at_far, auroc, det_at_far, evaluate_episode, kd_gradient, kd_loss, make_episodes, summarize,
    EpisodeReport, KdConfig, TrialSet,
};
use edgespot::proto::{
    acceptance_rate, calibrate_threshold, enroll, score, Prototype, PrototypeStore,
};
use edgespot::Embedding;
use proptest::prelude::*;
use rand::Rng;

fn emb(v: &[f32]) -> Embedding {
    let mut x = vec![0.0; 64];
    x[..v.len()].copy_from_slice(v);
    Embedding::new(x).unwrap()
}

fn random_emb(r: &mut impl Rng) -> Embedding {
    Embedding::new((0..64).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Smallest candidate threshold whose acceptance count stays within the
/// allowance; candidates are the observed scores and the float just above
/// the maximum.
fn brute_threshold(neg: &[f64], far: f64) -> f64 {
    let max = neg.iter().cloned().fold(f64::MIN, f64::max);
    let mut cands: Vec<f64> = neg.to_vec();
    cands.push(max.next_up());
    cands
        .into_iter()
        .filter(|&t| neg.iter().filter(|&&s| s >= t).count() as f64 <= far * neg.len() as f64 + 1e-9)
        .fold(f64::INFINITY, f64::min)
}

fn brute_auroc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut acc = 0.0;
    for p in pos {
        for n in neg {
            acc += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
        }
    }
    acc / (pos.len() * neg.len()) as f64
}

// Scores from a small grid so ties are common.
fn score_list(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-20i32..=20).prop_map(|v| v as f64 / 20.0), 1..=max)
}

#[test]
fn enrollment_examples() {
    let e = emb(&[1.0, 2.0, 3.0]);
    assert_eq!(enroll("a", &[e.clone()]).unwrap().vector, e.as_slice());
    assert_eq!(enroll("a", &[e.clone(), e.clone(), e.clone()]).unwrap().vector, e.as_slice());
    let p = enroll("a", &[emb(&[1.0]), emb(&[0.0, 1.0])]).unwrap();
    assert_eq!(&p.vector[..3], &[0.5, 0.5, 0.0]);
    assert_eq!(p.shots, 2);
    assert!(enroll("a", &[]).is_err());
    assert!(Prototype::new("a", vec![0.0; 63], 1).is_err());
    assert!(Prototype::new("two words", vec![0.0; 64], 1).is_err());
}

#[test]
fn score_examples() {
    let p = enroll("p", &[emb(&[1.0])]).unwrap();
    assert!((score(&emb(&[1.0]), &p).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(score(&emb(&[0.0, 1.0]), &p).unwrap(), 0.0);
    assert!((score(&emb(&[1.0, 1.0]), &p).unwrap() - 0.5f64.sqrt()).abs() < 1e-7);
    assert!(score(&emb(&[]), &p).is_err());
}

#[test]
fn detect_examples() {
    let mut store = PrototypeStore::new(0.5).unwrap();
    store.enroll("only", &[emb(&[0.3, -0.2])]).unwrap();
    let d = store.detect(&emb(&[0.3, -0.2])).unwrap();
    assert!(d.accepted && d.label == "only" && (d.score - 1.0).abs() < 1e-12);
    store.set_threshold(1.0f64.next_up()).unwrap();
    assert!(!store.detect(&emb(&[0.3, -0.2])).unwrap().accepted);
    assert!(PrototypeStore::new(0.5).unwrap().detect(&emb(&[1.0])).is_err());

    // prototype i sits at angle acos(c_i) from the query along its own axis
    let mut store = PrototypeStore::new(0.5).unwrap();
    for (i, c) in [0.2f32, 0.9, 0.4].iter().enumerate() {
        let mut v = Embedding::basis(0, *c).into_vec();
        v[i + 1] = (1.0 - c * c).sqrt();
        store.insert(Prototype::new(format!("kw{i}"), v, 1).unwrap()).unwrap();
    }
    let d = store.detect(&emb(&[1.0])).unwrap();
    assert_eq!(d.label, "kw1");
    assert!(d.accepted && (d.score - 0.9).abs() < 1e-6);
    let table: Vec<f64> = d.scores.iter().map(|s| s.1).collect();
    assert_close(&table.iter().map(|&v| v as f32).collect::<Vec<_>>(), &[0.2, 0.9, 0.4], 1e-6, "table");
}

#[test]
fn ties_go_to_the_smallest_label() {
    let mut store = PrototypeStore::new(0.0).unwrap();
    for l in ["zeta", "alpha", "mid"] {
        store.enroll(l, &[emb(&[1.0])]).unwrap();
    }
    assert_eq!(store.detect(&emb(&[2.0])).unwrap().label, "alpha");
    assert!(store.enroll("mid", &[emb(&[1.0])]).is_err());
}

#[test]
fn calibration_examples() {
    let flat = vec![0.1; 50];
    let t = calibrate_threshold(&flat, 0.01).unwrap();
    assert_eq!(t, 0.1f64.next_up());
    assert_eq!(acceptance_rate(&flat, t), 0.0);

    let tenths: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    assert_eq!(calibrate_threshold(&tenths, 0.1).unwrap(), 1.0);
    assert_eq!(calibrate_threshold(&tenths, 0.5).unwrap(), 0.6);
    assert!(calibrate_threshold(&[], 0.1).is_err());
    assert!(calibrate_threshold(&tenths, 0.0).is_err());
    assert!(calibrate_threshold(&tenths, 1.0).is_err());
}

#[test]
fn det_and_auroc_examples() {
    let neg: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let p = det_at_far(&[0.3, 0.6, 0.8, 0.9], &neg, 0.1).unwrap();
    assert_eq!((p.threshold, p.rate), (1.0, 0.0));
    assert_eq!(det_at_far(&[0.9; 10], &[0.1; 10], 0.01).unwrap().rate, 1.0);

    let mut r = rng(40);
    let same: Vec<f64> = (0..1000).map(|_| r.random_range(0.0..1.0)).collect();
    let p = det_at_far(&same, &same, 0.05).unwrap();
    assert!((p.rate - 0.05).abs() <= 0.001, "{}", p.rate);

    assert_eq!(auroc(&[0.8, 0.4], &[0.6, 0.2]).unwrap(), 0.75);
    assert_eq!(auroc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
    assert_eq!(auroc(&[0.3, 0.5, 0.5], &[0.5, 0.3, 0.5]).unwrap(), 0.5);
    assert!(auroc(&[], &[0.1]).is_err());
    assert!(det_at_far(&[0.1], &[], 0.1).is_err());
}

#[test]
fn kd_examples() {
    let t: Vec<f32> = (0..64).map(|i| i as f32 * 0.1).collect();
    assert_eq!(kd_loss(&t, &t).unwrap(), 0.0);
    let mut s = t.clone();
    s[0] += 1.0;
    assert!((kd_loss(&s, &t).unwrap() - 1.0 / 64.0).abs() < 1e-12);
    assert!(kd_loss(&s[..63], &t).is_err());
    assert_eq!(KdConfig::default().lambda, 5e-5);
    assert!(KdConfig::new(0.0).is_err());
}

#[test]
fn kd_gradient_matches_central_differences() {
    let mut r = rng(41);
    for _ in 0..20 {
        let s: Vec<f32> = (0..64).map(|_| r.random_range(-1.0..1.0)).collect();
        let t: Vec<f32> = (0..64).map(|_| r.random_range(-1.0..1.0)).collect();
        let g = kd_gradient(&s, &t).unwrap();
        let h = 1e-2f32;
        for i in 0..64 {
            let (mut up, mut down) = (s.clone(), s.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (kd_loss(&up, &t).unwrap() - kd_loss(&down, &t).unwrap()) / (up[i] - down[i]) as f64;
            assert!((fd - g[i]).abs() < 1e-4, "{i}: {fd} vs {}", g[i]);
        }
    }
}

#[test]
fn store_text_round_trip_preserves_scores() {
    let mut r = rng(42);
    let mut store = PrototypeStore::new(0.37).unwrap();
    for i in 0..5 {
        let shots: Vec<_> = (0..3).map(|_| random_emb(&mut r)).collect();
        store.enroll(format!("kw{i}"), &shots).unwrap();
    }
    let back = PrototypeStore::from_text(&store.to_text()).unwrap();
    assert_eq!(back.threshold(), 0.37);
    assert_eq!(back.len(), 5);
    for _ in 0..50 {
        let q = random_emb(&mut r);
        let (a, b) = (store.detect(&q).unwrap(), back.detect(&q).unwrap());
        assert_eq!(a.label, b.label);
        for (x, y) in a.scores.iter().zip(&b.scores) {
            assert!((x.1 - y.1).abs() < 1e-6);
        }
    }
    assert!(PrototypeStore::from_text("edgespot-prototypes 2\n").is_err());
    let text = store.to_text();
    assert!(PrototypeStore::from_text(&text.replace("count 5", "count 6")).is_err());
    assert!(PrototypeStore::from_text(&text.replace("count 5", "count 4")).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn calibration_matches_brute_force(neg in score_list(100), far in 0.001f64..0.999) {
        prop_assert_eq!(calibrate_threshold(&neg, far).unwrap(), brute_threshold(&neg, far));
    }

    #[test]
    fn calibrated_threshold_is_tight(neg in score_list(100), far in 0.001f64..0.999) {
        let t = calibrate_threshold(&neg, far).unwrap();
        prop_assert!(acceptance_rate(&neg, t) <= far + 1e-12);
        for &s in neg.iter().filter(|&&s| s < t) {
            prop_assert!(acceptance_rate(&neg, s) > far);
        }
    }

    #[test]
    fn det_matches_brute_force(pos in score_list(60), neg in score_list(60), far in 0.001f64..0.999) {
        let p = det_at_far(&pos, &neg, far).unwrap();
        let t = brute_threshold(&neg, far);
        prop_assert_eq!(p.threshold, t);
        let want = pos.iter().filter(|&&s| s >= t).count() as f64 / pos.len() as f64;
        prop_assert!((p.rate - want).abs() <= 1e-12);
    }

    #[test]
    fn auroc_matches_pairwise_count(pos in score_list(100), neg in score_list(100)) {
        prop_assert!((auroc(&pos, &neg).unwrap() - brute_auroc(&pos, &neg)).abs() <= 1e-12);
    }

    #[test]
    fn auroc_is_invariant_under_increasing_maps(pos in score_list(50), neg in score_list(50)) {
        let f = |v: &f64| (3.0 * v).exp() + 0.5 * v;
        let (p2, n2): (Vec<f64>, Vec<f64>) = (pos.iter().map(f).collect(), neg.iter().map(f).collect());
        prop_assert!((auroc(&pos, &neg).unwrap() - auroc(&p2, &n2).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn metrics_ignore_list_order(mut pos in score_list(40), mut neg in score_list(40), far in 0.01f64..0.99) {
        let (a, d) = (auroc(&pos, &neg).unwrap(), det_at_far(&pos, &neg, far).unwrap());
        pos.reverse();
        let half = neg.len() / 2;
        neg.rotate_left(half);
        prop_assert_eq!(a, auroc(&pos, &neg).unwrap());
        prop_assert_eq!(d, det_at_far(&pos, &neg, far).unwrap());
    }

    #[test]
    fn detection_rate_falls_with_the_far_target(pos in score_list(60), neg in score_list(60),
                                              lo in 0.001f64..0.999, hi in 0.001f64..0.999) {
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        prop_assert!(det_at_far(&pos, &neg, lo).unwrap().rate <= det_at_far(&pos, &neg, hi).unwrap().rate);
    }

    #[test]
    fn scaling_a_query_changes_nothing(seed in any::<u64>(), k in 0.001f32..1000.0) {
        let mut r = rng(seed);
        let mut store = PrototypeStore::new(r.random_range(-1.0..1.0)).unwrap();
        for i in 0..4 {
            store.enroll(format!("w{i}"), &[random_emb(&mut r)]).unwrap();
        }
        let q = random_emb(&mut r);
        let (a, b) = (store.detect(&q).unwrap(), store.detect(&q.scaled(k)).unwrap());
        prop_assert_eq!(&a.label, &b.label);
        prop_assert_eq!(a.accepted, b.accepted);
        for (x, y) in a.scores.iter().zip(&b.scores) {
            prop_assert!((x.1 - y.1).abs() < 1e-6);
        }
    }

    #[test]
    fn enrollment_is_linear(seed in any::<u64>(), n1 in 1usize..6, n2 in 1usize..6) {
        let mut r = rng(seed);
        let a: Vec<_> = (0..n1).map(|_| random_emb(&mut r)).collect();
        let b: Vec<_> = (0..n2).map(|_| random_emb(&mut r)).collect();
        let both = enroll("x", &[a.clone(), b.clone()].concat()).unwrap();
        let (pa, pb) = (enroll("x", &a).unwrap(), enroll("x", &b).unwrap());
        prop_assert_eq!(both.shots, n1 + n2);
        for i in 0..64 {
            let w = (n1 as f64 * pa.vector[i] as f64 + n2 as f64 * pb.vector[i] as f64) / (n1 + n2) as f64;
            prop_assert!((both.vector[i] as f64 - w).abs() < 1e-6);
        }
    }

    #[test]
    fn best_score_is_the_table_maximum(seed in any::<u64>(), n in 1usize..8, theta in -1.0f64..1.5) {
        let mut r = rng(seed);
        let mut store = PrototypeStore::new(theta).unwrap();
        for i in 0..n {
            store.enroll(format!("w{i}"), &[random_emb(&mut r)]).unwrap();
        }
        let d = store.detect(&random_emb(&mut r)).unwrap();
        let max = d.scores.iter().map(|s| s.1).fold(f64::MIN, f64::max);
        prop_assert_eq!(d.score, max);
        prop_assert_eq!(&d.scores.iter().find(|s| s.1 == max).unwrap().0, &d.label);
        prop_assert_eq!(d.accepted, d.score >= theta);
        // raising θ never turns a rejection into an acceptance
        let mut higher = store.clone();
        higher.set_threshold(theta + 0.1).unwrap();
        prop_assert!(!higher.detect(&random_emb(&mut rng(seed))).unwrap().accepted
            || store.detect(&random_emb(&mut rng(seed))).unwrap().accepted);
    }
}

#[test]
fn calibration_monotone_over_many_sets() {
    let mut r = rng(43);
    for _ in 0..1000 {
        let n = r.random_range(1..200);
        let neg: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let far = r.random_range(0.001..0.999);
        let t = calibrate_threshold(&neg, far).unwrap();
        assert!(acceptance_rate(&neg, t) <= far);
        let below = neg.iter().filter(|&&s| s < t).cloned().fold(f64::MIN, f64::max);
        if below > f64::MIN {
            assert!(acceptance_rate(&neg, below) > far);
        }
    }
}

/// `n_labels` labels with `per_label` utterances each; every label points in
/// its own direction plus a little noise.
fn clustered_dataset(n_labels: usize, per_label: usize, seed: u64) -> Vec<(String, Embedding)> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for l in 0..n_labels {
        for _ in 0..per_label {
            let mut v: Vec<f32> = (0..64).map(|_| r.random_range(-0.05..0.05)).collect();
            v[l] += 1.0;
            out.push((format!("label{l:02}"), Embedding::new(v).unwrap()));
        }
    }
    out
}

fn ids(ts: &[edgespot::eval::Trial]) -> BTreeSet<usize> {
    ts.iter().map(|t| t.id).collect()
}

#[test]
fn episodes_follow_the_protocol() {
    let data = clustered_dataset(36, 4, 1);
    let eps = make_episodes(&data, 11, 25, 1, 100, 7).unwrap();
    assert_eq!(eps.len(), 100);
    for ep in &eps {
        assert_eq!(ep.targets.len(), 11);
        assert_eq!(ep.unknown.len(), 25);
        assert_eq!(ep.enrollment.len(), 11);
        assert_eq!(ep.positives.len(), 33);
        assert_eq!(ep.negatives.len(), 100);
        let (e, p, n) = (ids(&ep.enrollment), ids(&ep.positives), ids(&ep.negatives));
        assert!(e.is_disjoint(&p) && e.is_disjoint(&n) && p.is_disjoint(&n));
        let t: BTreeSet<_> = ep.targets.iter().collect();
        assert!(ep.unknown.iter().all(|u| !t.contains(u)));
        assert!(ep.positives.iter().all(|x| t.contains(&x.label)));
        assert!(ep.negatives.iter().all(|x| !t.contains(&x.label)));
    }
    let again = make_episodes(&data, 11, 25, 1, 100, 7).unwrap();
    let key = |e: &TrialSet| (e.targets.clone(), ids(&e.enrollment), ids(&e.positives), ids(&e.negatives));
    assert!(eps.iter().zip(&again).all(|(a, b)| key(a) == key(b)));
    let other = make_episodes(&data, 11, 25, 1, 100, 8).unwrap();
    assert!(eps.iter().zip(&other).any(|(a, b)| key(a) != key(b)));

    // K = utterances − 1 leaves one test utterance per target
    let eps = make_episodes(&data, 5, 3, 3, 4, 0).unwrap();
    assert!(eps.iter().all(|e| e.positives.len() == 5));
    assert!(make_episodes(&data, 5, 3, 4, 1, 0).is_err());
    assert!(make_episodes(&data, 30, 7, 1, 1, 0).is_err());
}

#[test]
fn separated_clusters_give_perfect_accuracy() {
    let data = clustered_dataset(20, 5, 2);
    for ep in make_episodes(&data, 6, 10, 2, 10, 3).unwrap() {
        let r = evaluate_episode(&ep, &[0.01, 0.05]).unwrap();
        assert!(r.acc.iter().all(|p| p.rate == 1.0));
        assert!(r.det.iter().all(|p| p.rate == 1.0));
        assert_eq!(r.auroc, 1.0);
    }
}

#[test]
fn exact_positives_and_orthogonal_negatives() {
    let mut data = Vec::new();
    for l in 0..3 {
        for _ in 0..3 {
            data.push((format!("t{l}"), Embedding::basis(l, 1.0)));
        }
    }
    for l in 3..6 {
        data.push((format!("u{l}"), Embedding::basis(l, 2.0)));
        data.push((format!("u{l}"), Embedding::basis(l + 10, 1.0)));
    }
    let eps = make_episodes(&data, 3, 3, 1, 20, 0).unwrap();
    // labels are drawn at random; keep the episodes whose targets are t0..t2
    let hits: Vec<_> = eps.iter().filter(|e| e.targets.iter().all(|t| t.starts_with('t'))).collect();
    assert!(!hits.is_empty());
    for ep in hits {
        let store = ep.store().unwrap();
        for far in [0.01, 0.3, 0.99] {
            assert_eq!(acc_at_far(ep, &store, far).unwrap().rate, 1.0);
        }
    }
}

#[test]
fn accuracy_matches_a_brute_force_trial_loop() {
    let mut r = rng(44);
    for case in 0..200 {
        let n_targets = r.random_range(1..=3);
        let data: Vec<_> = (0..n_targets + 2)
            .flat_map(|l| (0..r.random_range(2..5)).map(move |_| l))
            .collect::<Vec<_>>()
            .into_iter()
            .map(|l| (format!("l{l}"), random_emb(&mut r)))
            .collect();
        let ep = &make_episodes(&data, n_targets, 2, 1, 1, case).unwrap()[0];
        let store = ep.store().unwrap();
        let far = [0.5, 0.25, 0.1][case as usize % 3];
        let got = acc_at_far(ep, &store, far).unwrap();

        // oracle: best match by explicit cosine over the enrolled shots
        let cos = |a: &[f32], b: &[f32]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
            let n = |v: &[f32]| v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            d / (n(a) * n(b))
        };
        let best = |q: &Embedding| {
            let mut best = (String::new(), f64::MIN);
            for t in &ep.targets {
                let shot = ep.enrollment.iter().find(|e| &e.label == t).unwrap();
                let s = cos(q.as_slice(), shot.embedding.as_slice());
                if s > best.1 + 1e-12 {
                    best = (t.clone(), s);
                }
            }
            best
        };
        let neg: Vec<f64> = ep.negatives.iter().map(|t| best(&t.embedding).1).collect();
        let theta = brute_threshold(&neg, far);
        let correct = ep.positives.iter().filter(|t| {
            let (l, s) = best(&t.embedding);
            s >= theta - 1e-12 && l == t.label
        });
        let want = correct.count() as f64 / ep.positives.len() as f64;
        assert!((got.rate - want).abs() < 1e-12, "case {case}: {} vs {want}", got.rate);

        // correctness is a stricter event than acceptance
        let pos: Vec<f64> = ep.positives.iter().map(|t| store.detect(&t.embedding).unwrap().score).collect();
        assert!(got.rate <= det_at_far(&pos, &neg, far).unwrap().rate + 1e-12);

        let mut shuffled = ep.clone();
        shuffled.positives.reverse();
        shuffled.negatives.reverse();
        assert_eq!(acc_at_far(&shuffled, &store, far).unwrap(), got);
    }
}

#[test]
fn accuracy_rejects_labels_missing_from_the_store() {
    let data = clustered_dataset(4, 3, 5);
    let ep = &make_episodes(&data, 2, 2, 1, 1, 0).unwrap()[0];
    let mut store = PrototypeStore::new(0.0).unwrap();
    store.enroll(ep.targets[0].clone(), &[ep.enrollment[0].embedding.clone()]).unwrap();
    assert!(acc_at_far(ep, &store, 0.1).is_err());
}

#[test]
fn report_summaries() {
    let s = summarize(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(s.mean, 2.5);
    assert!((s.std - 1.25f64.sqrt()).abs() < 1e-12);
    let data = clustered_dataset(12, 4, 6);
    let eps = make_episodes(&data, 4, 6, 1, 5, 0).unwrap();
    let rep = EpisodeReport::new(&eps, &[0.01, 0.05]).unwrap();
    assert_eq!(rep.episodes.len(), 5);
    assert_eq!(rep.acc(0).mean, 1.0);
    assert_eq!(rep.to_text(), EpisodeReport::new(&eps, &[0.01, 0.05]).unwrap().to_text());
}
