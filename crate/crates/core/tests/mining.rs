mod common;

use common::*;
use proptest::prelude::*;
use termforge_core::baseline::{leader_cluster, LeaderParams};
use termforge_core::eval::gold_labels;
use termforge_core::mining::*;
use termforge_core::seqmatch::{discover_segments, DiscoveryConfig};
use termforge_core::synthgen::{generate, SynthConfig};

#[test]
fn two_member_cluster_by_hand() {
    let segs = vec![segment(0, syms(&[1, 2, 3])), segment(1, syms(&[1, 2, 4]))];
    let c = cluster(0, vec![0, 1], &segs);
    let s = purity_stats(&c, &segs, false);
    assert_eq!((s.mu_s, s.sigma_s), (0.5, 0.5));
    let t = MiningThresholds::default();
    assert_eq!(select_pure_clusters(std::slice::from_ref(&c), &segs, &t, false).len(), 1);
    let strict = MiningThresholds { thres_mu_s: 0.1, ..t };
    assert!(select_pure_clusters(&[c], &segs, &strict, false).is_empty());
}

#[test]
fn disjoint_singletons_contrast() {
    let segs = vec![segment(0, syms(&[1, 2, 3, 4])), segment(1, syms(&[5, 6, 7, 8]))];
    let clusters = vec![cluster(0, vec![0], &segs), cluster(1, vec![1], &segs)];
    let t = MiningThresholds::default();
    let retained = select_pure_clusters(&clusters, &segs, &t, false);
    let pairs = select_contrasting_pairs(&retained, &clusters, &segs, &t);
    assert_eq!(pairs.len(), 1);
    assert_eq!((pairs[0].stats.mu_d, pairs[0].stats.sigma_d), (4.0, 0.0));
    assert!(select_contrasting_pairs(&[], &clusters, &segs, &t).is_empty());
}

#[test]
fn stats_match_double_loop_oracle() {
    let mut r = rng(11);
    for _ in 0..100 {
        let segs = random_segments(&mut r, 60, 12);
        let clusters = random_partition(&mut r, segs.len(), 30, &segs);
        for c in &clusters {
            for ex in [false, true] {
                let s = purity_stats(c, &segs, ex);
                assert_eq!((s.mu_s, s.sigma_s), purity_oracle(c, &segs, ex));
            }
        }
        for pair in clusters.windows(2) {
            let s = contrast_stats(&pair[0], &pair[1], &segs);
            assert_eq!((s.mu_d, s.sigma_d), contrast_oracle(&pair[0], &pair[1], &segs));
        }
    }
}

#[test]
fn contrast_with_itself_is_purity() {
    let mut r = rng(12);
    let segs = random_segments(&mut r, 20, 8);
    let c = cluster(0, (0..20).collect(), &segs);
    let p = purity_stats(&c, &segs, false);
    let d = contrast_stats(&c, &c, &segs);
    assert_eq!((p.mu_s, p.sigma_s), (d.mu_d, d.sigma_d));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn selection_is_monotone_in_thresholds(seed in any::<u64>(), lo in 0.05f64..0.5, extra in 0.0f64..0.5) {
        let mut r = rng(seed);
        let segs = random_segments(&mut r, 40, 8);
        let clusters = random_partition(&mut r, segs.len(), 10, &segs);
        let tight = MiningThresholds { thres_mu_s: lo, thres_sigma_s: lo, ..Default::default() };
        let loose = MiningThresholds { thres_mu_s: lo + extra, thres_sigma_s: lo + extra, ..Default::default() };
        let a: Vec<usize> = select_pure_clusters(&clusters, &segs, &tight, false).iter().map(|r| r.cluster).collect();
        let b: Vec<usize> = select_pure_clusters(&clusters, &segs, &loose, false).iter().map(|r| r.cluster).collect();
        prop_assert!(a.iter().all(|c| b.contains(c)));
    }

    #[test]
    fn retained_clusters_satisfy_both_rules(seed in any::<u64>()) {
        let mut r = rng(seed);
        let segs = random_segments(&mut r, 40, 8);
        let clusters = random_partition(&mut r, segs.len(), 10, &segs);
        let t = MiningThresholds::default();
        let kept = select_pure_clusters(&clusters, &segs, &t, false);
        for c in &clusters {
            let (mu, sd) = purity_oracle(c, &segs, false);
            let expect = mu < t.thres_mu_s * c.mean_len && sd < t.thres_sigma_s * c.mean_len;
            prop_assert_eq!(expect, kept.iter().any(|k| k.cluster == c.id));
        }
        for p in select_contrasting_pairs(&kept, &clusters, &segs, &t) {
            let (mu, sd) = contrast_oracle(&clusters[p.a], &clusters[p.b], &segs);
            let avg = (clusters[p.a].mean_len + clusters[p.b].mean_len) / 2.0;
            prop_assert!(mu > t.thres_mu_d * avg && sd < t.thres_sigma_d * avg);
        }
    }
}

#[test]
fn manifest_labels_agree_with_gold_on_zero_noise() {
    let synth = SynthConfig {
        words_per_utterance_range: (1, 1),
        filler_rate: 0.0,
        occurrences_per_word: 10,
        vocabulary_size: 6,
        seed: 5,
        ..SynthConfig::default()
    };
    let (corpus, gold) = generate(&synth).unwrap();
    let segs = discover_segments(&corpus, &DiscoveryConfig::default()).unwrap();
    let clusters = leader_cluster(&segs, &LeaderParams::default()).unwrap().clusters;
    let t = MiningThresholds::default();
    let retained = select_pure_clusters(&clusters, &segs, &t, false);
    let contrasting = select_contrasting_pairs(&retained, &clusters, &segs, &t);
    let m = sample_manifest(&retained, &contrasting, &clusters, 500, 500, 9).unwrap();
    let labels = gold_labels(&segs, &gold).unwrap();
    assert!(!m.siamese_pairs.is_empty() && !m.triplets.is_empty());
    for p in &m.siamese_pairs {
        let (a, b) = (labels[p.a].unwrap(), labels[p.b].unwrap());
        assert_eq!(p.label == 1, a == b, "pair {p:?}");
    }
    for t in &m.triplets {
        assert_eq!(labels[t.anchor], labels[t.positive]);
        assert_ne!(labels[t.anchor], labels[t.negative]);
    }
}
