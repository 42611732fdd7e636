mod common;

use std::collections::BTreeMap;

use common::{binary, random_set, stimulus_with_ias};
use gazesal::compare::{
    align_all, align_token_scores, build_comparison_report, correlation_matrix, jaccard, pos_distribution,
    venn_partition, TokenScoreSet, TokenSource,
};
use gazesal::saliency::{BinaryMap, SaliencyMap};
use gazesal::stats::pearson_r;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn single_token_ias_are_identity_for_every_source() {
    let stim = stimulus_with_ias("s", 5);
    for source in [TokenSource::Surprisal, TokenSource::IntegratedGradients, TokenSource::HumanAnnotation] {
        let scores: BTreeMap<(String, usize), f64> = (0..5).map(|t| (("s".to_string(), t), t as f64 / 8.0)).collect();
        let aligned = align_token_scores(&TokenScoreSet::new(source, scores.clone()), &stim).unwrap();
        for ((s, t), v) in scores {
            assert_eq!(aligned[&(s, t)], v);
        }
    }
}

#[test]
fn human_two_of_three() {
    let stim = stimulus_with_ias("s", 1);
    let ann = gazesal::compare::parse_annotations(
        "stimulus_id,token_index,annotator_id,highlighted\ns,0,a,1\ns,0,b,0\ns,0,c,1\n",
        "mem",
    )
    .unwrap();
    let m = align_all(&ann, &[stim]).unwrap();
    assert_eq!(m.source, "human");
    assert!((m.get("s", 0).unwrap() - 0.6667).abs() < 1e-4);
}

#[test]
fn out_of_range_token_rejected() {
    let stim = stimulus_with_ias("s", 2);
    let set = TokenScoreSet::new(TokenSource::Surprisal, [(("s".to_string(), 9), 1.0)].into());
    assert!(align_all(&set, &[stim]).is_err());
}

#[test]
fn venn_matches_brute_force_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let maps: Vec<BinaryMap> = (0..3).map(|i| binary(&format!("m{i}"), random_set(&mut rng, 200, 50))).collect();
    let v = venn_partition([&maps[0], &maps[1], &maps[2]]);
    let mut oracle = [0usize; 8];
    for u in 0..200 {
        let key = (format!("s{}", u / 10), u % 10);
        let mask = (0..3).filter(|&i| maps[i].salient.contains(&key)).fold(0, |m, i| m | 1 << i);
        oracle[mask] += 1;
    }
    assert_eq!(&v.regions[1..], &oracle[1..]);
}

#[test]
fn identical_and_disjoint_triples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = random_set(&mut rng, 100, 12);
    let v = venn_partition([&binary("a", s.clone()), &binary("b", s.clone()), &binary("c", s)]);
    assert_eq!(v.region(7), 12);
    assert_eq!(v.three_way_iou(), 1.0);
    let parts: Vec<BinaryMap> = (0..3)
        .map(|i| binary("x", (0..5).map(|k| ("s".to_string(), i * 5 + k)).collect()))
        .collect();
    let v = venn_partition([&parts[0], &parts[1], &parts[2]]);
    assert!([3, 5, 6, 7].iter().all(|&m| v.region(m) == 0));
}

#[test]
fn correlation_matrix_matches_pairwise_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let maps: Vec<SaliencyMap> = (0..4)
        .map(|m| {
            let mut scores = BTreeMap::new();
            for i in 0..30 {
                if rng.gen_bool(0.9) {
                    scores.insert(("s".to_string(), i), rng.gen_range(-1.0..1.0) + m as f64 * (i as f64) / 30.0);
                }
            }
            SaliencyMap::new(format!("m{m}"), scores).unwrap()
        })
        .collect();
    let cm = correlation_matrix(&maps);
    for i in 0..4 {
        for j in 0..4 {
            let (x, y): (Vec<f64>, Vec<f64>) = maps[i]
                .scores
                .iter()
                .filter_map(|(k, v)| maps[j].scores.get(k).map(|w| (*v, *w)))
                .unzip();
            assert_eq!(cm.values[i][j], pearson_r(&x, &y).unwrap());
        }
    }
}

#[test]
fn comparison_report_shapes() {
    let stimuli = vec![stimulus_with_ias("a", 8), stimulus_with_ias("b", 8)];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let maps: Vec<SaliencyMap> = ["dt", "ig", "human"]
        .iter()
        .map(|name| {
            let scores = stimuli
                .iter()
                .flat_map(|s| (0..8).map(move |i| (s.stimulus_id.clone(), i)))
                .map(|k| (k, rng.gen_range(0.0..1.0)))
                .collect();
            SaliencyMap::new(*name, scores).unwrap()
        })
        .collect();
    let r = build_comparison_report(&maps, &stimuli, None).unwrap();
    for i in 0..3 {
        assert_eq!(r.jaccard[i][i], 1.0);
        for j in 0..3 {
            assert_eq!(r.jaccard[i][j], r.jaccard[j][i]);
        }
    }
    let venn = r.venn.as_ref().unwrap();
    assert_eq!(venn.counts.union(), {
        let b: Vec<_> = maps.iter().map(|m| gazesal::saliency::binarize_median(m).unwrap()).collect();
        b.iter().flat_map(|m| m.salient.iter()).collect::<std::collections::BTreeSet<_>>().len()
    });
    for hist in r.pos_hist.values() {
        assert!((hist.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let json = serde_json::to_string(&r).unwrap();
    assert!(json.contains("\"three_way_iou\""));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn venn_reconstructs_pairwise_jaccard(seed in any::<u64>(), sizes in proptest::array::uniform3(0usize..60)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let maps: Vec<BinaryMap> = sizes.iter().map(|&k| binary("m", random_set(&mut rng, 120, k))).collect();
        let v = venn_partition([&maps[0], &maps[1], &maps[2]]);
        let union: std::collections::BTreeSet<_> = maps.iter().flat_map(|m| m.salient.iter()).collect();
        prop_assert_eq!(v.union(), union.len());
        for i in 0..3 {
            for j in 0..3 {
                prop_assert_eq!(v.pairwise_jaccard(i, j), jaccard(&maps[i], &maps[j]));
                prop_assert_eq!(jaccard(&maps[i], &maps[j]), jaccard(&maps[j], &maps[i]));
            }
        }
    }

    #[test]
    fn pos_proportions_sum_to_one(seed in any::<u64>(), k in 1usize..20) {
        let stimuli = vec![stimulus_with_ias("s0", 10), stimulus_with_ias("s1", 10)];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let salient = random_set(&mut rng, 20, k);
        let hist = pos_distribution(&binary("m", salient), &stimuli).unwrap();
        prop_assert!((hist.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
