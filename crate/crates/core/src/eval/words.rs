//! Evaluations of the output-layer word embeddings. Embedding matrices here
//! hold one row per dictionary word (the transposed output matrix).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EvalError, EvalReport};
use crate::model::ModelParams;
use crate::scalar::Scalar;
use crate::textpipe::{normalize_text, Dictionary};

/// Neighbors listed per word by [`dump_embeddings`].
pub const NEIGHBORS: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalogyQuestion {
    pub a: String,
    pub b: String,
    pub c: String,
    pub d: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityPair {
    pub word1: String,
    pub word2: String,
    pub rating: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationPair {
    pub source: String,
    pub target: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Query with source words, rank target words.
    Forward,
    /// Query with target words, rank source words.
    Reverse,
}

impl std::str::FromStr for Direction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "forward" => Ok(Direction::Forward),
            "reverse" => Ok(Direction::Reverse),
            other => Err(format!("unknown direction {other:?} (forward|reverse)")),
        }
    }
}

/// K × E matrix of word vectors in f64.
pub fn word_vectors<T: Scalar>(params: &ModelParams<T>) -> Array2<f64> {
    params.output.t().mapv(|v| v.to_f64_lossless())
}

fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dot(&b) / (na * nb)
}

fn lookup(dict: &Dictionary, word: &str) -> Option<usize> {
    let doc = normalize_text(word);
    match doc.tokens.as_slice() {
        [w] => dict.index_of(w),
        _ => None,
    }
}

/// Highest-cosine rows to `query` among `candidates` (ties to the lower index).
fn rank_by_cosine(emb: ArrayView2<f64>, query: ArrayView1<f64>, candidates: &[usize], k: usize) -> Vec<usize> {
    let scores: Vec<f64> = candidates.iter().map(|&c| cosine(query, emb.row(c))).collect();
    super::top_k(&scores, k).into_iter().map(|i| candidates[i]).collect()
}

/// Predicts D as the row with the highest cosine to ŵ_B − ŵ_A + ŵ_C, A, B and
/// C excluded. Questions with an out-of-dictionary word are skipped.
pub fn analogy_accuracy(
    emb: ArrayView2<f64>,
    dict: &Dictionary,
    questions: &[AnalogyQuestion],
) -> Result<EvalReport, EvalError> {
    check_rows(emb, dict)?;
    let norms: Vec<f64> = emb.outer_iter().map(norm).collect();
    let unit = |i: usize| emb.row(i).mapv(|v| v / norms[i]);
    let mut scorable = Vec::new();
    for q in questions {
        let ids = [&q.a, &q.b, &q.c, &q.d].map(|w| lookup(dict, w));
        if let [Some(a), Some(b), Some(c), Some(d)] = ids {
            for (i, w) in [(a, &q.a), (b, &q.b), (c, &q.c)] {
                if norms[i] == 0.0 {
                    return Err(EvalError::ZeroNorm(w.clone()));
                }
            }
            scorable.push([a, b, c, d]);
        }
    }
    let correct: usize = scorable
        .par_iter()
        .map(|&[a, b, c, d]| {
            let t = unit(b) - unit(a) + unit(c);
            let candidates: Vec<usize> =
                (0..emb.nrows()).filter(|&k| k != a && k != b && k != c && norms[k] > 0.0).collect();
            let best = rank_by_cosine(emb, t.view(), &candidates, 1);
            usize::from(best.first() == Some(&d))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    let n = scorable.len();
    let value = if n == 0 { 0.0 } else { correct as f64 / n as f64 };
    Ok(EvalReport::new("analogy_accuracy", value, None, n, questions.len() - n))
}

/// 1-based ranks with ties sharing their average rank.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            ranks[p] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::InvalidArgument("sequences differ in length".into()));
    }
    if x.len() < 2 {
        return Err(EvalError::TooFewPairs(x.len()));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::ConstantRanks);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation between pair cosines and human ratings. Pairs with an
/// out-of-dictionary or zero-vector word are skipped.
pub fn spearman_similarity(
    emb: ArrayView2<f64>,
    dict: &Dictionary,
    pairs: &[SimilarityPair],
) -> Result<EvalReport, EvalError> {
    check_rows(emb, dict)?;
    let mut cos = Vec::new();
    let mut ratings = Vec::new();
    for p in pairs {
        if let (Some(a), Some(b)) = (lookup(dict, &p.word1), lookup(dict, &p.word2)) {
            let (ra, rb) = (emb.row(a), emb.row(b));
            if norm(ra) > 0.0 && norm(rb) > 0.0 {
                cos.push(cosine(ra, rb));
                ratings.push(p.rating);
            }
        }
    }
    if cos.len() < 2 {
        return Err(EvalError::TooFewPairs(cos.len()));
    }
    let rho = spearman_rho(&cos, &ratings)?;
    Ok(EvalReport::new("spearman_rho", rho, None, cos.len(), pairs.len() - cos.len()))
}

/// Fraction of queries whose counterpart is among the k candidates closest in
/// cosine. Candidates are the distinct counterpart words of the scorable pairs.
pub fn translation_precision(
    emb: ArrayView2<f64>,
    dict: &Dictionary,
    pairs: &[TranslationPair],
    direction: Direction,
    k: usize,
) -> Result<EvalReport, EvalError> {
    check_rows(emb, dict)?;
    if k == 0 {
        return Err(EvalError::InvalidArgument("k must be at least 1".into()));
    }
    let mut scorable = Vec::new();
    for p in pairs {
        let (q, t) = match direction {
            Direction::Forward => (&p.source, &p.target),
            Direction::Reverse => (&p.target, &p.source),
        };
        if q == t {
            continue;
        }
        if let (Some(qi), Some(ti)) = (lookup(dict, q), lookup(dict, t)) {
            if qi != ti && norm(emb.row(qi)) > 0.0 {
                scorable.push((qi, ti));
            }
        }
    }
    let mut candidates: Vec<usize> = scorable.iter().map(|&(_, t)| t).collect();
    candidates.sort_unstable();
    candidates.dedup();
    if candidates.is_empty() {
        return Err(EvalError::EmptyCandidates);
    }
    let hits: usize = scorable
        .par_iter()
        .map(|&(q, t)| usize::from(rank_by_cosine(emb, emb.row(q), &candidates, k).contains(&t)))
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    let n = scorable.len();
    let mut r = EvalReport::new("translation_precision", hits as f64 / n as f64, Some(k), n, pairs.len() - n);
    r.details.insert("candidates".into(), candidates.len() as f64);
    Ok(r)
}

/// The `n` rows closest in cosine to row `i`, excluding `i` itself.
pub fn top_neighbors(emb: ArrayView2<f64>, i: usize, n: usize) -> Vec<(usize, f64)> {
    let others: Vec<usize> = (0..emb.nrows()).filter(|&j| j != i).collect();
    rank_by_cosine(emb, emb.row(i), &others, n).into_iter().map(|j| (j, cosine(emb.row(i), emb.row(j)))).collect()
}

fn check_rows(emb: ArrayView2<f64>, dict: &Dictionary) -> Result<(), EvalError> {
    if emb.nrows() != dict.len() {
        return Err(EvalError::InvalidArgument(format!(
            "{} embedding rows for {} dictionary words",
            emb.nrows(),
            dict.len()
        )));
    }
    Ok(())
}

/// `<stem>.neighbors.json` next to the CSV.
pub fn neighbors_path(csv: &Path) -> PathBuf {
    csv.with_extension("neighbors.json")
}

#[derive(Serialize, Deserialize)]
struct NeighborEntry {
    word: String,
    cosine: f64,
}

#[derive(Serialize, Deserialize)]
struct NeighborList {
    word: String,
    neighbors: Vec<NeighborEntry>,
}

/// Writes `word,v1,…,vE` per dictionary word plus the nearest-neighbor JSON.
/// Returns the neighbor file path.
pub fn dump_embeddings(emb: ArrayView2<f64>, dict: &Dictionary, path: &Path) -> Result<PathBuf, EvalError> {
    check_rows(emb, dict)?;
    let mut csv = String::new();
    for (word, row) in dict.words().iter().zip(emb.outer_iter()) {
        csv.push_str(word);
        for v in row {
            write!(csv, ",{v}").expect("write to string");
        }
        csv.push('\n');
    }
    let lists: Vec<NeighborList> = (0..emb.nrows())
        .into_par_iter()
        .map(|i| NeighborList {
            word: dict.word(i).to_owned(),
            neighbors: top_neighbors(emb, i, NEIGHBORS)
                .into_iter()
                .map(|(j, cosine)| NeighborEntry { word: dict.word(j).to_owned(), cosine })
                .collect(),
        })
        .collect();
    crate::io_util::write_atomic(path, csv.as_bytes())?;
    let npath = neighbors_path(path);
    let json = serde_json::to_vec_pretty(&lists).map_err(|e| EvalError::InvalidArgument(e.to_string()))?;
    crate::io_util::write_atomic(&npath, &json)?;
    Ok(npath)
}

/// Parses a file written by [`dump_embeddings`].
pub fn read_embeddings_csv(path: &Path) -> Result<(Vec<String>, Array2<f64>), EvalError> {
    let text = std::fs::read_to_string(path)?;
    let mut words = Vec::new();
    let mut values = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let bad = |message: String| EvalError::Parse { line: i + 1, message };
        let mut fields = line.split(',');
        let word = fields.next().unwrap_or_default().to_owned();
        let row: Vec<f64> =
            fields.map(|f| f.parse::<f64>().map_err(|e| bad(format!("{f:?}: {e}")))).collect::<Result<_, _>>()?;
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(bad(format!("expected {} values, found {}", width.unwrap_or(0), row.len())));
        }
        words.push(word);
        values.extend(row);
    }
    let m = Array2::from_shape_vec((words.len(), width.unwrap_or(0)), values).expect("rows checked");
    Ok((words, m))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let t = l.trim();
        if t.is_empty() || t.starts_with('#') || t.starts_with(':') {
            None
        } else {
            Some((i + 1, t.split_whitespace().collect()))
        }
    })
}

/// Four words per line; blank lines and lines starting with `#` or `:` are ignored.
pub fn parse_analogy_questions(text: &str) -> Result<Vec<AnalogyQuestion>, EvalError> {
    content_lines(text)
        .map(|(line, f)| match f.as_slice() {
            [a, b, c, d] => {
                Ok(AnalogyQuestion { a: a.to_string(), b: b.to_string(), c: c.to_string(), d: d.to_string() })
            }
            _ => Err(EvalError::Parse { line, message: format!("expected 4 words, found {}", f.len()) }),
        })
        .collect()
}

/// `word1 word2 rating` per line.
pub fn parse_similarity_pairs(text: &str) -> Result<Vec<SimilarityPair>, EvalError> {
    content_lines(text)
        .map(|(line, f)| match f.as_slice() {
            [a, b, r] => {
                let rating = r
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| EvalError::Parse { line, message: format!("bad rating {r:?}") })?;
                Ok(SimilarityPair { word1: a.to_string(), word2: b.to_string(), rating })
            }
            _ => Err(EvalError::Parse {
                line,
                message: format!("expected word1 word2 rating, found {} fields", f.len()),
            }),
        })
        .collect()
}

/// `source target` per line.
pub fn parse_translation_pairs(text: &str) -> Result<Vec<TranslationPair>, EvalError> {
    content_lines(text)
        .map(|(line, f)| match f.as_slice() {
            [s, t] => Ok(TranslationPair { source: s.to_string(), target: t.to_string() }),
            _ => Err(EvalError::Parse { line, message: format!("expected 2 words, found {}", f.len()) }),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textpipe::{Dictionary, WordCounts};
    use ndarray::{array, Array2};

    pub(crate) fn dict_of(words: &[&str]) -> Dictionary {
        let mut wc = WordCounts::new();
        // strictly decreasing counts keep the given order
        for (i, w) in words.iter().enumerate() {
            for _ in 0..(words.len() - i) {
                wc.add_doc(&normalize_text(w));
            }
        }
        Dictionary::from_counts(&wc, words.len(), 0).unwrap()
    }

    #[test]
    fn constructed_analogy_is_solved() {
        let d = dict_of(&["king", "man", "woman", "queen", "apple"]);
        let e = 1.0 / 3f64.sqrt();
        // unit rows; queen = king − man + woman after normalization
        let emb = array![[e, e, e, 0.0], [e, 0.0, e, e], [0.0, e, e, e], [0.0, 1.0, e, 0.0], [0.0, 0.0, 0.0, 1.0],];
        let mut emb = emb;
        let q = &emb.row(0) - &emb.row(1) + emb.row(2);
        emb.row_mut(3).assign(&q);
        let qs = vec![
            AnalogyQuestion { a: "man".into(), b: "king".into(), c: "woman".into(), d: "queen".into() },
            AnalogyQuestion { a: "man".into(), b: "king".into(), c: "woman".into(), d: "zebra".into() },
        ];
        let r = analogy_accuracy(emb.view(), &d, &qs).unwrap();
        assert_eq!((r.value, r.n_items, r.n_skipped), (1.0, 1, 1));
        let scaled = emb.mapv(|v| v * 7.5);
        assert_eq!(analogy_accuracy(scaled.view(), &d, &qs).unwrap().value, 1.0);
        emb.row_mut(1).fill(0.0);
        assert!(matches!(analogy_accuracy(emb.view(), &d, &qs), Err(EvalError::ZeroNorm(w)) if w == "man"));
    }

    #[test]
    fn spearman_extremes_and_ties() {
        assert_eq!(spearman_rho(&[0.1, 0.2, 0.3], &[1.0, 5.0, 9.0]).unwrap(), 1.0);
        assert_eq!(spearman_rho(&[0.1, 0.2, 0.3], &[9.0, 5.0, 1.0]).unwrap(), -1.0);
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert!(matches!(spearman_rho(&[1.0, 1.0], &[1.0, 2.0]), Err(EvalError::ConstantRanks)));
        assert!(matches!(spearman_rho(&[1.0], &[1.0]), Err(EvalError::TooFewPairs(1))));
    }

    #[test]
    fn translation_with_shared_vectors() {
        let d = dict_of(&["dog", "chien", "cat", "chat", "red", "rouge"]);
        let mut emb = Array2::zeros((6, 3));
        for p in 0..3 {
            emb[[2 * p, p]] = 1.0;
            emb[[2 * p + 1, p]] = 1.0;
        }
        let pairs = parse_translation_pairs("dog chien\ncat chat\n# comment\nred rouge\nmoon lune\n").unwrap();
        for dir in [Direction::Forward, Direction::Reverse] {
            let r = translation_precision(emb.view(), &d, &pairs, dir, 1).unwrap();
            assert_eq!((r.value, r.n_items, r.n_skipped), (1.0, 3, 1));
        }
        assert!(matches!(
            translation_precision(emb.view(), &d, &pairs[3..], Direction::Forward, 1),
            Err(EvalError::EmptyCandidates)
        ));
    }

    #[test]
    fn parsers_report_lines() {
        assert!(matches!(parse_analogy_questions(": section\na b c\n"), Err(EvalError::Parse { line: 2, .. })));
        assert_eq!(parse_analogy_questions(": s\na b c d\n").unwrap().len(), 1);
        assert!(matches!(parse_similarity_pairs("a b x\n"), Err(EvalError::Parse { line: 1, .. })));
        assert_eq!(parse_similarity_pairs("a b 7.5\n").unwrap()[0].rating, 7.5);
    }

    #[test]
    fn dump_round_trip() {
        let d = dict_of(&["one", "two", "three"]);
        let emb = array![[0.1, -2.5e-7], [1.0 / 3.0, 4.0], [0.0, 0.0]];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.csv");
        let np = dump_embeddings(emb.view(), &d, &p).unwrap();
        let (words, back) = read_embeddings_csv(&p).unwrap();
        assert_eq!(words, ["one", "two", "three"]);
        assert_eq!(back, emb);
        let json: serde_json::Value = serde_json::from_slice(&std::fs::read(np).unwrap()).unwrap();
        assert_eq!(json.as_array().unwrap().len(), 3);
        assert_eq!(json[0]["neighbors"][0]["word"], "two");
    }
}
