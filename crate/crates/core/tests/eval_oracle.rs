use ndarray::{Array2, ArrayView1};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use weaklearn_core::data::{generate_synthetic, SynthConfig};
use weaklearn_core::eval::{
    analogy_accuracy, dump_embeddings, linear_probe, precision_at_k, precision_at_k_scores, read_embeddings_csv,
    spearman_rho, spearman_similarity, translation_precision, word_vectors, AnalogyQuestion, Direction, ProbeConfig,
    SimilarityPair, TranslationPair,
};
use weaklearn_core::model::{extract_features, init_params, InputDims, ModelConfig};
use weaklearn_core::textpipe::{normalize_text, Dictionary, WordCounts};
use weaklearn_core::trainer::{train, TrainConfig};

/// Word `i` of a test dictionary: base-26 letters, so it survives normalization.
fn word(i: usize) -> String {
    let mut s = String::from("w");
    let mut n = i;
    for _ in 0..3 {
        s.push((b'a' + (n % 26) as u8) as char);
        n /= 26;
    }
    s
}

/// Dictionary whose index i holds word(i).
fn dict(k: usize) -> Dictionary {
    let mut counts = WordCounts::new();
    for i in 0..k {
        let text = vec![word(i); k - i].join(" ");
        counts.add_doc(&normalize_text(&text));
    }
    let d = Dictionary::from_counts(&counts, k, 0).unwrap();
    assert!((0..k).all(|i| d.word(i) == word(i)));
    d
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn oracle_cos(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Full sort, ties to the lower index.
fn oracle_ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    idx
}

fn oracle_precision(scores: &Array2<f64>, labels: &[Vec<u32>], k: usize) -> f64 {
    let mut hits = 0;
    for (row, l) in scores.outer_iter().zip(labels) {
        let ranking = oracle_ranking(&row.to_vec());
        hits += ranking[..k.min(ranking.len())].iter().filter(|&&c| l.contains(&(c as u32))).count();
    }
    hits as f64 / (k * labels.len()) as f64
}

#[test]
fn precision_matches_brute_force_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..40 {
        let k_classes = rng.random_range(2..=50);
        let n = rng.random_range(1..60);
        // few distinct values so ties are common
        let levels = if trial % 2 == 0 { 4 } else { 1000 };
        let scores = Array2::from_shape_fn((n, k_classes), |_| rng.random_range(0..levels) as f64);
        let labels: Vec<Vec<u32>> = (0..n)
            .map(|_| {
                let mut l: Vec<u32> =
                    (0..rng.random_range(1..=3)).map(|_| rng.random_range(0..k_classes) as u32).collect();
                l.sort_unstable();
                l.dedup();
                l
            })
            .collect();
        for k in [1, 2, 5, 10] {
            assert_eq!(precision_at_k_scores(scores.view(), &labels, k), oracle_precision(&scores, &labels, k));
        }
    }
}

#[test]
fn precision_of_a_model_matches_brute_force() {
    let data = generate_synthetic(&SynthConfig { img_size: 4, n_examples: 300, ..SynthConfig::default() }).unwrap();
    let model = ModelConfig::mlp(InputDims { height: 4, width: 4, channels: 1 }, &[8], 6);
    let k = data.dictionary.len();
    let p = init_params::<f64>(&model, k, 3).unwrap();
    let refs: Vec<_> = data.examples.iter().collect();
    let imgs: Vec<_> = data.examples.iter().map(|e| &e.image).collect();
    let e = extract_features(&p, &imgs, 64).unwrap();
    let scores = p.score_all(e.view()).unwrap();
    let labels: Vec<Vec<u32>> = data.examples.iter().map(|e| e.labels.clone()).collect();
    for kk in [1, 3, 10] {
        let r = precision_at_k(&p, &refs, kk).unwrap();
        assert_eq!(r.value, oracle_precision(&scores, &labels, kk));
        assert_eq!(r.n_items, 300);
    }
}

#[test]
fn random_scorer_is_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let labels: Vec<Vec<u32>> = (0..100).map(|_| vec![rng.random_range(0..20)]).collect();
    let scores = gaussian(100, 20, &mut rng);
    let p = precision_at_k_scores(scores.view(), &labels, 10);
    assert!((p - 0.05).abs() <= 0.01, "{p}");
    // and averaged over many draws
    let mean: f64 =
        (0..200).map(|_| precision_at_k_scores(gaussian(100, 20, &mut rng).view(), &labels, 10)).sum::<f64>() / 200.0;
    assert!((mean - 0.05).abs() < 0.002, "{mean}");
}

fn oracle_analogy(emb: &Array2<f64>, q: [usize; 4]) -> bool {
    let unit = |i: usize| {
        let r = emb.row(i);
        let n = r.dot(&r).sqrt();
        r.mapv(|v| v / n)
    };
    let t = unit(q[1]) - unit(q[0]) + unit(q[2]);
    let mut best = None::<(usize, f64)>;
    for k in 0..emb.nrows() {
        if k == q[0] || k == q[1] || k == q[2] {
            continue;
        }
        let c = oracle_cos(t.view(), emb.row(k));
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((k, c));
        }
    }
    best.map(|(k, _)| k) == Some(q[3])
}

#[test]
fn analogy_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in [10, 30, 50] {
        let d = dict(k);
        let emb = gaussian(k, 8, &mut rng);
        let mut qs = Vec::new();
        let mut expected = 0;
        for i in 0..50 {
            let mut pick = || rng.random_range(0..k);
            let (a, b, c) = (pick(), pick(), pick());
            let mut dd = pick();
            // half the questions use the vector nearest to the target as D
            if i % 2 == 0 {
                dd = (0..k).find(|&x| ![a, b, c].contains(&x) && oracle_analogy(&emb, [a, b, c, x])).unwrap_or(dd);
            }
            expected += usize::from(oracle_analogy(&emb, [a, b, c, dd]));
            qs.push(AnalogyQuestion { a: word(a), b: word(b), c: word(c), d: word(dd) });
        }
        qs.push(AnalogyQuestion { a: "zzz".into(), b: word(0), c: word(1), d: word(2) });
        let r = analogy_accuracy(emb.view(), &d, &qs).unwrap();
        assert_eq!(r.n_items, 50);
        assert_eq!(r.n_skipped, 1);
        assert_eq!(r.value, expected as f64 / 50.0);
        assert!(expected >= 25);
    }
}

#[test]
fn analogy_on_a_constructed_embedding() {
    let d = dict(5);
    let mut emb = Array2::<f64>::eye(5);
    // w_D = w_B − w_A + w_C over orthonormal A, B, C
    emb.row_mut(3).assign(&ndarray::arr1(&[-1.0, 1.0, 1.0, 0.0, 0.0]));
    let q = AnalogyQuestion { a: word(0), b: word(1), c: word(2), d: word(3) };
    assert_eq!(analogy_accuracy(emb.view(), &d, &[q]).unwrap().value, 1.0);
}

/// Ranks by counting, ties averaged.
fn oracle_spearman(x: &[f64], y: &[f64]) -> f64 {
    let ranks = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                1.0 + less + (equal - 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn spearman_five_hand_listed_pairs_with_a_tie() {
    // pair i: word 2i at angle 0, word 2i+1 at angle θ_i
    let angles = [0.1, 0.9, 0.4, 1.3, 0.4];
    let ratings = [9.0, 2.5, 6.0, 1.0, 7.5];
    let d = dict(10);
    let mut emb = Array2::<f64>::zeros((10, 2));
    let mut pairs = Vec::new();
    for (i, (&t, &r)) in angles.iter().zip(&ratings).enumerate() {
        emb[[2 * i, 0]] = 1.0;
        emb[[2 * i + 1, 0]] = f64::cos(t);
        emb[[2 * i + 1, 1]] = f64::sin(t);
        pairs.push(SimilarityPair { word1: word(2 * i), word2: word(2 * i + 1), rating: r });
    }
    let cos: Vec<f64> = (0..5).map(|i| oracle_cos(emb.row(2 * i), emb.row(2 * i + 1))).collect();
    assert_eq!(cos[2], cos[4]);
    let expected = oracle_spearman(&cos, &ratings);
    let got = spearman_similarity(emb.view(), &d, &pairs).unwrap();
    assert!((got.value - expected).abs() < 1e-12, "{} vs {expected}", got.value);
    assert_eq!(got.n_items, 5);
    // ranks 5,2,3.5,1,3.5 against 5,2,3,1,4
    let hand = 9.5 / (9.5_f64 * 10.0).sqrt();
    assert!((expected - hand).abs() < 1e-12);
}

#[test]
fn spearman_matches_oracle_on_random_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let n = rng.random_range(3..40);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..7) as f64).collect();
        if let Ok(r) = spearman_rho(&x, &y) {
            assert!((r - oracle_spearman(&x, &y)).abs() < 1e-12);
        }
    }
}

fn oracle_translation(emb: &Array2<f64>, pairs: &[(usize, usize)], k: usize) -> f64 {
    let mut cands: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    cands.sort_unstable();
    cands.dedup();
    let mut hits = 0;
    for &(q, t) in pairs {
        let scores: Vec<f64> = cands.iter().map(|&c| oracle_cos(emb.row(q), emb.row(c))).collect();
        let top: Vec<usize> = oracle_ranking(&scores).into_iter().take(k).map(|i| cands[i]).collect();
        hits += usize::from(top.contains(&t));
    }
    hits as f64 / pairs.len() as f64
}

#[test]
fn translation_matches_brute_force_on_twenty_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = dict(40);
    for _ in 0..10 {
        let emb = gaussian(40, 4, &mut rng);
        let pairs: Vec<(usize, usize)> = (0..20).map(|i| (i, 20 + (i * 7) % 20)).collect();
        let tp: Vec<TranslationPair> =
            pairs.iter().map(|&(s, t)| TranslationPair { source: word(s), target: word(t) }).collect();
        let reversed: Vec<(usize, usize)> = pairs.iter().map(|&(s, t)| (t, s)).collect();
        for k in [1, 3, 5] {
            let f = translation_precision(emb.view(), &d, &tp, Direction::Forward, k).unwrap();
            assert_eq!(f.value, oracle_translation(&emb, &pairs, k));
            let r = translation_precision(emb.view(), &d, &tp, Direction::Reverse, k).unwrap();
            assert_eq!(r.value, oracle_translation(&emb, &reversed, k));
        }
    }
}

#[test]
fn translation_of_shared_vectors_is_perfect_and_random_is_chance() {
    let n = 20;
    let d = dict(2 * n);
    let mut emb = Array2::<f64>::zeros((2 * n, n));
    for i in 0..n {
        emb[[i, i]] = 1.0;
        emb[[n + i, i]] = 1.0;
    }
    let tp: Vec<TranslationPair> = (0..n).map(|i| TranslationPair { source: word(i), target: word(n + i) }).collect();
    assert_eq!(translation_precision(emb.view(), &d, &tp, Direction::Forward, 1).unwrap().value, 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let trials = 300;
    let mean: f64 = (0..trials)
        .map(|_| {
            let e = gaussian(2 * n, 8, &mut rng);
            translation_precision(e.view(), &d, &tp, Direction::Forward, 1).unwrap().value
        })
        .sum::<f64>()
        / trials as f64;
    assert!((mean - 1.0 / n as f64).abs() < 0.015, "{mean}");
}

#[test]
fn dump_round_trips_and_neighbors_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let k = 30;
    let d = dict(k);
    let emb = gaussian(k, 5, &mut rng);
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("emb.csv");
    let npath = dump_embeddings(emb.view(), &d, &csv).unwrap();
    let (words, back) = read_embeddings_csv(&csv).unwrap();
    assert_eq!(words.len(), k);
    assert_eq!(words, d.words());
    assert!(back.iter().zip(emb.iter()).all(|(a, b)| (a - b).abs() < 1e-6));

    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(npath).unwrap()).unwrap();
    let lists = json.as_array().unwrap();
    assert_eq!(lists.len(), k);
    for (i, entry) in lists.iter().enumerate() {
        let scores: Vec<f64> =
            (0..k).map(|j| if j == i { f64::NEG_INFINITY } else { oracle_cos(emb.row(i), emb.row(j)) }).collect();
        let want: Vec<String> = oracle_ranking(&scores).into_iter().take(10).map(word).collect();
        let got: Vec<String> =
            entry["neighbors"].as_array().unwrap().iter().map(|n| n["word"].as_str().unwrap().to_owned()).collect();
        assert_eq!(entry["word"], word(i));
        assert_eq!(got, want);
    }
}

#[test]
fn probe_on_shuffled_labels_is_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 4000;
    let x = gaussian(n, 8, &mut rng);
    let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
    let ids: Vec<String> = (0..n).map(|i| format!("r{i}")).collect();
    let cfg = ProbeConfig { max_iter: 2000, ..ProbeConfig::default() };
    let r = linear_probe(x.view(), &labels, &ids, &cfg).unwrap();
    assert!((r.report.value - 0.10).abs() <= 0.03, "{}", r.report.value);
}

#[test]
fn probe_transfers_from_a_trained_model() {
    let base = SynthConfig { img_size: 8, n_examples: 2000, ..SynthConfig::default() };
    let data = generate_synthetic(&base).unwrap();
    let model = ModelConfig::mlp(InputDims { height: 8, width: 8, channels: 1 }, &[32], 16);
    let cfg = TrainConfig { epoch_size: 2000, max_epochs: 15, ..TrainConfig::default() };
    let out = train::<f32>(&cfg, &data.examples, data.dictionary.len(), &model).unwrap();
    // fresh single-label images from the same prototypes, grouped into 4 new classes
    let fresh =
        generate_synthetic(&SynthConfig { words_per_image: 1, example_stream: 9, n_examples: 1500, ..base }).unwrap();
    let labels: Vec<usize> = fresh.examples.iter().map(|e| fresh.label_classes[e.labels[0] as usize] % 4).collect();
    let ids: Vec<String> = fresh.examples.iter().map(|e| e.id.clone()).collect();
    let imgs: Vec<_> = fresh.examples.iter().map(|e| &e.image).collect();
    let f = extract_features(&out.params, &imgs, 256).unwrap().mapv(f64::from);
    let r = linear_probe(f.view(), &labels, &ids, &ProbeConfig::default()).unwrap();
    assert!(r.report.value > 3.0 * 0.25, "{}", r.report.value);
}

#[test]
fn zero_weight_model_gives_zero_features() {
    let model = ModelConfig::mlp(InputDims { height: 2, width: 2, channels: 1 }, &[3], 2);
    let mut p = init_params::<f64>(&model, 4, 0).unwrap();
    for l in &mut p.backbone {
        l.weight.fill(0.0);
        l.bias.fill(0.0);
    }
    let img = weaklearn_core::data::ImageTensor::new(2, 2, 1, vec![1.0, -2.0, 3.0, 0.5]).unwrap();
    let f = extract_features(&p, &[&img], 1).unwrap();
    assert!(f.iter().all(|&v| v == 0.0));
    assert_eq!(word_vectors(&p).dim(), (4, 2));
}

fn int_scores(n: usize, k: usize) -> impl Strategy<Value = (Vec<f64>, Vec<Vec<u32>>)> {
    (
        prop::collection::vec((-50i32..50).prop_map(f64::from), n * k),
        prop::collection::vec(prop::collection::btree_set(0..k as u32, 1..4).prop_map(|s| s.into_iter().collect()), n),
    )
}

proptest! {
    #[test]
    fn precision_is_rank_based_and_bounded((s, labels) in int_scores(6, 12), k in 1usize..12) {
        let scores = Array2::from_shape_vec((6, 12), s).unwrap();
        let p = precision_at_k_scores(scores.view(), &labels, k);
        prop_assert!((0.0..=1.0).contains(&p));
        let t = scores.mapv(|v| (v / 10.0).exp() * 3.0 + v.powi(3));
        prop_assert_eq!(precision_at_k_scores(t.view(), &labels, k), p);
    }

    #[test]
    fn spearman_is_rank_based_and_bounded(
        x in prop::collection::vec((-20i32..20).prop_map(f64::from), 8),
        y in prop::collection::vec((-20i32..20).prop_map(f64::from), 8),
    ) {
        if let Ok(r) = spearman_rho(&x, &y) {
            prop_assert!((-1.0..=1.0).contains(&r));
            let tx: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0 * v).collect();
            let ty: Vec<f64> = y.iter().map(|v| (v / 5.0).exp()).collect();
            let r2 = spearman_rho(&tx, &ty).unwrap();
            prop_assert!((r - r2).abs() < 1e-12);
        }
    }

    #[test]
    fn analogy_ignores_global_scale(seed in 0u64..1000, scale in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 12;
        let d = dict(k);
        let emb = gaussian(k, 4, &mut rng);
        let qs: Vec<AnalogyQuestion> = (0..10)
            .map(|_| {
                let mut w = || word(rng.random_range(0..k));
                AnalogyQuestion { a: w(), b: w(), c: w(), d: w() }
            })
            .collect();
        let a = analogy_accuracy(emb.view(), &d, &qs).unwrap().value;
        let scaled = emb.mapv(|v| v * scale);
        prop_assert_eq!(analogy_accuracy(scaled.view(), &d, &qs).unwrap().value, a);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn translation_in_range(seed in 0u64..1000, k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = dict(16);
        let emb = gaussian(16, 3, &mut rng);
        let tp: Vec<TranslationPair> = (0..8).map(|i| TranslationPair { source: word(i), target: word(8 + rng.random_range(0..8)) }).collect();
        let v = translation_precision(emb.view(), &d, &tp, Direction::Forward, k).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&v));
    }
}
