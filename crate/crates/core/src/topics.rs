//! LDA topic model fit by collapsed Gibbs sampling, plus fold-in inference
//! of per-document topic proportions against a frozen model.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{ensure_dir, fnv1a64, read_f64_le, read_json, write_f64_le, write_json};

/// Lowercase whitespace tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Dense word <-> id mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocabulary { words, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Token ids of `text`; out-of-vocabulary tokens are dropped.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace()
            .filter_map(|w| self.id(&w.to_lowercase()))
            .collect()
    }
}

/// Builds a vocabulary from `corpus`, keeping words seen at least
/// `min_count` times. Ids follow descending frequency, ties broken
/// lexicographically.
pub fn build_vocabulary<S: AsRef<str>>(corpus: &[S], min_count: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::Config(
            "cannot build a vocabulary from an empty corpus".into(),
        ));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for doc in corpus {
        for tok in tokenize(doc.as_ref()) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .collect();
    if kept.is_empty() {
        return Err(Error::Config(format!(
            "vocabulary is empty after filtering with min_count={min_count}"
        )));
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(Vocabulary::from(
        kept.into_iter().map(|(w, _)| w).collect::<Vec<_>>(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdaConfig {
    pub topics: usize,
    /// Symmetric document-topic prior; `None` means `50 / topics`.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub infer_iterations: usize,
    /// Fold-in sweeps (from the end) whose proportions are averaged.
    pub infer_average: usize,
    pub min_count: usize,
    pub seed: u64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            topics: 64,
            alpha: None,
            beta: 0.01,
            iterations: 200,
            infer_iterations: 30,
            infer_average: 10,
            min_count: 1,
            seed: 11,
        }
    }
}

impl LdaConfig {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.topics as f64)
    }
}

/// A fitted topic model: `phi` is `topics x vocab`, row-major, each row a
/// probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    pub topics: usize,
    pub alpha: f64,
    pub beta: f64,
    pub phi: Vec<f64>,
    pub vocabulary: Vocabulary,
}

/// Per-topic proportions of one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityRelevance {
    pub theta: Vec<f64>,
    /// True when the document had no in-vocabulary tokens and `theta` is
    /// the uniform prior mean.
    pub fallback: bool,
}

/// Gibbs bookkeeping for a corpus of token-id documents.
struct GibbsState {
    topics: usize,
    vocab: usize,
    doc_topic: Vec<u32>,
    /// Word-major: `[word][topic]`.
    topic_word: Vec<u32>,
    topic_total: Vec<u32>,
    assignments: Vec<Vec<u16>>,
}

impl GibbsState {
    fn total_tokens(&self) -> u64 {
        self.topic_word.iter().map(|&c| u64::from(c)).sum()
    }
}

/// Fits LDA with collapsed Gibbs sampling. `docs` are token-id sequences
/// against a vocabulary of `vocab.len()` words.
pub fn fit_lda(docs: &[Vec<usize>], vocab: Vocabulary, cfg: &LdaConfig) -> Result<LdaModel> {
    fit_lda_observed(docs, vocab, cfg, |_, _| {})
}

/// As [`fit_lda`], calling `observe(sweep, total_tokens)` after every sweep.
pub fn fit_lda_observed<F: FnMut(usize, u64)>(
    docs: &[Vec<usize>],
    vocab: Vocabulary,
    cfg: &LdaConfig,
    mut observe: F,
) -> Result<LdaModel> {
    let k = cfg.topics;
    if k < 2 {
        return Err(Error::Config(format!(
            "LDA needs at least 2 topics, got {k}"
        )));
    }
    if k > usize::from(u16::MAX) {
        return Err(Error::Config(format!("too many topics: {k}")));
    }
    let v = vocab.len();
    if v == 0 {
        return Err(Error::Config("empty vocabulary".into()));
    }
    if docs.iter().all(Vec::is_empty) {
        return Err(Error::Data("LDA corpus has no tokens".into()));
    }
    if let Some(bad) = docs.iter().flatten().find(|&&w| w >= v) {
        return Err(Error::Data(format!(
            "token id {bad} outside vocabulary of {v}"
        )));
    }
    let alpha = cfg.alpha();
    let beta = cfg.beta;
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::Config("LDA priors must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut st = GibbsState {
        topics: k,
        vocab: v,
        doc_topic: vec![0; docs.len() * k],
        topic_word: vec![0; k * v],
        topic_total: vec![0; k],
        assignments: Vec::with_capacity(docs.len()),
    };
    for (d, doc) in docs.iter().enumerate() {
        let z: Vec<u16> = doc.iter().map(|_| rng.gen_range(0..k) as u16).collect();
        for (&w, &t) in doc.iter().zip(&z) {
            let t = usize::from(t);
            st.doc_topic[d * k + t] += 1;
            st.topic_word[w * k + t] += 1;
            st.topic_total[t] += 1;
        }
        st.assignments.push(z);
    }

    let vbeta = v as f64 * beta;
    let mut weights = vec![0.0f64; k];
    for sweep in 0..cfg.iterations {
        for (d, doc) in docs.iter().enumerate() {
            let dt = &mut st.doc_topic[d * k..(d + 1) * k];
            let z = &mut st.assignments[d];
            for (i, &w) in doc.iter().enumerate() {
                let old = usize::from(z[i]);
                dt[old] -= 1;
                st.topic_word[w * k + old] -= 1;
                st.topic_total[old] -= 1;

                let tw = &st.topic_word[w * k..(w + 1) * k];
                let mut total = 0.0;
                for t in 0..k {
                    let p = (f64::from(dt[t]) + alpha) * (f64::from(tw[t]) + beta)
                        / (f64::from(st.topic_total[t]) + vbeta);
                    total += p;
                    weights[t] = total;
                }
                let u = rng.gen::<f64>() * total;
                let new = weights.iter().position(|&c| u < c).unwrap_or(k - 1);

                z[i] = new as u16;
                dt[new] += 1;
                st.topic_word[w * k + new] += 1;
                st.topic_total[new] += 1;
            }
        }
        observe(sweep, st.total_tokens());
    }

    let mut phi = vec![0.0; k * v];
    for t in 0..k {
        let denom = f64::from(st.topic_total[t]) + vbeta;
        for w in 0..v {
            phi[t * v + w] = (f64::from(st.topic_word[w * k + t]) + beta) / denom;
        }
    }
    debug_assert_eq!(st.topics * st.vocab, phi.len());
    Ok(LdaModel {
        topics: k,
        alpha,
        beta,
        phi,
        vocabulary: vocab,
    })
}

impl LdaModel {
    pub fn vocab_len(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn phi_row(&self, t: usize) -> &[f64] {
        let v = self.vocab_len();
        &self.phi[t * v..(t + 1) * v]
    }

    /// Fold-in inference of a raw text document with `phi` held fixed.
    ///
    /// `theta` is the share of the document's tokens assigned to each topic,
    /// averaged over the last `average_last` sweeps. The prior shapes the
    /// sampler but is not added back into the proportions.
    ///
    /// The sampler is seeded from the document's bytes mixed with `seed`, so
    /// the same text always yields the same proportions.
    pub fn infer_relevance(
        &self,
        text: &str,
        sweeps: usize,
        average_last: usize,
        seed: u64,
    ) -> ActivityRelevance {
        let tokens = self.vocabulary.encode(text);
        self.infer_tokens(
            &tokens,
            sweeps,
            average_last,
            seed ^ fnv1a64(text.as_bytes()),
        )
    }

    pub fn infer_tokens(
        &self,
        tokens: &[usize],
        sweeps: usize,
        average_last: usize,
        seed: u64,
    ) -> ActivityRelevance {
        let k = self.topics;
        if tokens.is_empty() {
            return ActivityRelevance {
                theta: vec![1.0 / k as f64; k],
                fallback: true,
            };
        }
        let v = self.vocab_len();
        // Gather the phi columns this document touches, token-major.
        let mut local: Vec<usize> = tokens.to_vec();
        local.sort_unstable();
        local.dedup();
        let columns: Vec<f64> = local
            .iter()
            .flat_map(|&w| (0..k).map(move |t| t * v + w))
            .map(|i| self.phi[i])
            .collect();
        let slots: Vec<usize> = tokens
            .iter()
            .map(|w| local.binary_search(w).expect("token gathered"))
            .collect();

        let sweeps = sweeps.max(1);
        let average_last = average_last.clamp(1, sweeps);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = vec![0u32; k];
        let mut z: Vec<usize> = tokens
            .iter()
            .map(|_| {
                let t = rng.gen_range(0..k);
                counts[t] += 1;
                t
            })
            .collect();
        let mut acc = vec![0.0; k];
        let mut weights = vec![0.0; k];
        let n = tokens.len() as f64;
        for sweep in 0..sweeps {
            for (i, &slot) in slots.iter().enumerate() {
                counts[z[i]] -= 1;
                let col = &columns[slot * k..(slot + 1) * k];
                let mut total = 0.0;
                for t in 0..k {
                    total += (f64::from(counts[t]) + self.alpha) * col[t];
                    weights[t] = total;
                }
                let u = rng.gen::<f64>() * total;
                let new = weights.iter().position(|&c| u < c).unwrap_or(k - 1);
                z[i] = new;
                counts[new] += 1;
            }
            if sweep >= sweeps - average_last {
                for t in 0..k {
                    acc[t] += f64::from(counts[t]) / n;
                }
            }
        }
        let total: f64 = acc.iter().sum();
        ActivityRelevance {
            theta: acc.into_iter().map(|x| x / total).collect(),
            fallback: false,
        }
    }

    /// Writes `manifest.json` and `phi.f64` (little-endian, row-major).
    pub fn save(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        let manifest = LdaManifest {
            topics: self.topics,
            alpha: self.alpha,
            beta: self.beta,
            vocab_size: self.vocab_len(),
            vocabulary: self.vocabulary.clone(),
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        write_f64_le(&dir.join("phi.f64"), &self.phi)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: LdaManifest = read_json(&dir.join("manifest.json"))?;
        let phi = read_f64_le(&dir.join("phi.f64"))?;
        if m.vocabulary.len() != m.vocab_size || phi.len() != m.topics * m.vocab_size {
            return Err(Error::Data(format!(
                "LDA checkpoint {} is inconsistent: K={}, V={}, vocabulary {}, phi {}",
                dir.display(),
                m.topics,
                m.vocab_size,
                m.vocabulary.len(),
                phi.len()
            )));
        }
        Ok(LdaModel {
            topics: m.topics,
            alpha: m.alpha,
            beta: m.beta,
            phi,
            vocabulary: m.vocabulary,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LdaManifest {
    topics: usize,
    alpha: f64,
    beta: f64,
    vocab_size: usize,
    vocabulary: Vocabulary,
}

/// Infers every distinct text once; identical texts share one result.
pub fn infer_corpus<'a, I>(
    model: &LdaModel,
    texts: I,
    cfg: &LdaConfig,
) -> BTreeMap<String, ActivityRelevance>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut out = BTreeMap::new();
    for text in texts {
        if !out.contains_key(text) {
            let r = model.infer_relevance(text, cfg.infer_iterations, cfg.infer_average, cfg.seed);
            out.insert(text.to_string(), r);
        }
    }
    out
}

/// Cosine similarity of two equal-length vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Greedily pairs fitted topics with reference distributions by descending
/// cosine. Returns `(fitted, reference, cosine)` for each reference topic.
pub fn greedy_match(fitted: &[Vec<f64>], reference: &[Vec<f64>]) -> Vec<(usize, usize, f64)> {
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for (i, f) in fitted.iter().enumerate() {
        for (j, r) in reference.iter().enumerate() {
            pairs.push((i, j, cosine(f, r)));
        }
    }
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut used_f = vec![false; fitted.len()];
    let mut used_r = vec![false; reference.len()];
    let mut out = Vec::new();
    for (i, j, c) in pairs {
        if !used_f[i] && !used_r[j] {
            used_f[i] = true;
            used_r[j] = true;
            out.push((i, j, c));
        }
    }
    out.sort_by_key(|p| p.1);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block_corpus(docs: usize, seed: u64) -> (Vec<String>, Vec<Vec<String>>) {
        let blocks: Vec<Vec<String>> = (0..2)
            .map(|t| (0..6).map(|j| format!("b{t}w{j}")).collect())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus = (0..docs)
            .map(|_| {
                let t = rng.gen_range(0..2);
                (0..8)
                    .map(|_| blocks[t][rng.gen_range(0..6)].clone())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        (corpus, blocks)
    }

    #[test]
    fn vocabulary_orders_by_count_then_word() {
        let v = build_vocabulary(&["a b", "a"], 1).unwrap();
        assert_eq!(v.words(), &["a", "b"]);
        assert_eq!(v.id("b"), Some(1));
        let v = build_vocabulary(&["a b", "a"], 2).unwrap();
        assert_eq!(v.words(), &["a"]);
        let v1 = build_vocabulary(&["z y x", "Y q"], 1).unwrap();
        let v2 = build_vocabulary(&["z y x", "Y q"], 1).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(v1.words(), &["y", "q", "x", "z"]);
        assert_eq!(v1.encode("Z unknown y"), vec![3, 0]);
    }

    #[test]
    fn vocabulary_errors() {
        let empty: [&str; 0] = [];
        assert!(matches!(build_vocabulary(&empty, 1), Err(Error::Config(_))));
        assert!(matches!(build_vocabulary(&["a"], 2), Err(Error::Config(_))));
    }

    #[test]
    fn vocabulary_serializes_as_word_list() {
        let v = build_vocabulary(&["b a a"], 1).unwrap();
        assert_eq!(serde_json::to_string(&v).unwrap(), r#"["a","b"]"#);
    }

    #[test]
    fn recovers_two_disjoint_blocks() {
        let (corpus, blocks) = block_corpus(300, 1);
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let docs: Vec<Vec<usize>> = corpus.iter().map(|d| vocab.encode(d)).collect();
        let cfg = LdaConfig {
            topics: 2,
            iterations: 100,
            ..LdaConfig::default()
        };
        let model = fit_lda(&docs, vocab.clone(), &cfg).unwrap();
        let reference: Vec<Vec<f64>> = blocks
            .iter()
            .map(|b| {
                let mut r = vec![0.0; vocab.len()];
                for w in b {
                    r[vocab.id(w).unwrap()] = 1.0 / b.len() as f64;
                }
                r
            })
            .collect();
        let fitted: Vec<Vec<f64>> = (0..2).map(|t| model.phi_row(t).to_vec()).collect();
        for (_, _, c) in greedy_match(&fitted, &reference) {
            assert!(c >= 0.9, "cosine {c}");
        }
        // fold-in on a pure block-0 document
        let doc = blocks[0].join(" ");
        let r = model.infer_relevance(&doc, 30, 10, 5);
        let matched = greedy_match(&fitted, &reference);
        let t0 = matched.iter().find(|m| m.1 == 0).unwrap().0;
        assert!(r.theta[t0] >= 0.9, "{:?}", r.theta);
    }

    #[test]
    fn single_word_vocabulary_gives_unit_phi() {
        let vocab = build_vocabulary(&["w w w"], 1).unwrap();
        let docs = vec![vec![0, 0, 0], vec![0]];
        let cfg = LdaConfig {
            topics: 3,
            iterations: 5,
            ..LdaConfig::default()
        };
        let model = fit_lda(&docs, vocab, &cfg).unwrap();
        assert_eq!(model.phi, vec![1.0; 3]);
    }

    #[test]
    fn gibbs_conserves_tokens_every_sweep() {
        let (corpus, _) = block_corpus(50, 2);
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let docs: Vec<Vec<usize>> = corpus.iter().map(|d| vocab.encode(d)).collect();
        let total: u64 = docs.iter().map(|d| d.len() as u64).sum();
        let cfg = LdaConfig {
            topics: 3,
            iterations: 20,
            ..LdaConfig::default()
        };
        let mut seen = 0;
        fit_lda_observed(&docs, vocab, &cfg, |_, n| {
            assert_eq!(n, total);
            seen += 1;
        })
        .unwrap();
        assert_eq!(seen, 20);
    }

    #[test]
    fn fit_is_deterministic_and_rows_normalized() {
        let (corpus, _) = block_corpus(80, 3);
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let docs: Vec<Vec<usize>> = corpus.iter().map(|d| vocab.encode(d)).collect();
        let cfg = LdaConfig {
            topics: 4,
            iterations: 15,
            ..LdaConfig::default()
        };
        let a = fit_lda(&docs, vocab.clone(), &cfg).unwrap();
        let b = fit_lda(&docs, vocab, &cfg).unwrap();
        assert!(a
            .phi
            .iter()
            .zip(&b.phi)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        for t in 0..4 {
            let row = a.phi_row(t);
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(a.alpha, 12.5);
    }

    #[test]
    fn fit_errors() {
        let vocab = build_vocabulary(&["a b"], 1).unwrap();
        let cfg = LdaConfig {
            topics: 1,
            ..LdaConfig::default()
        };
        assert!(matches!(
            fit_lda(&[vec![0]], vocab.clone(), &cfg),
            Err(Error::Config(_))
        ));
        let cfg = LdaConfig {
            topics: 2,
            ..LdaConfig::default()
        };
        assert!(matches!(
            fit_lda(&[], vocab.clone(), &cfg),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            fit_lda(&[vec![]], vocab.clone(), &cfg),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            fit_lda(&[vec![5]], vocab, &cfg),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn inference_fallback_and_normalization() {
        let (corpus, _) = block_corpus(60, 4);
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let docs: Vec<Vec<usize>> = corpus.iter().map(|d| vocab.encode(d)).collect();
        let cfg = LdaConfig {
            topics: 4,
            iterations: 10,
            ..LdaConfig::default()
        };
        let model = fit_lda(&docs, vocab, &cfg).unwrap();
        let empty = model.infer_relevance("", 30, 10, 0);
        assert!(empty.fallback);
        assert_eq!(empty.theta, vec![0.25; 4]);
        let oov = model.infer_relevance("nothing known here", 30, 10, 0);
        assert!(oov.fallback);
        for doc in corpus.iter().take(20) {
            let r = model.infer_relevance(doc, 30, 10, 0);
            assert!(!r.fallback);
            assert!(r.theta.iter().all(|&x| x >= 0.0));
            assert!((r.theta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(r, model.infer_relevance(doc, 30, 10, 0));
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let (corpus, _) = block_corpus(30, 5);
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let docs: Vec<Vec<usize>> = corpus.iter().map(|d| vocab.encode(d)).collect();
        let cfg = LdaConfig {
            topics: 2,
            iterations: 5,
            ..LdaConfig::default()
        };
        let model = fit_lda(&docs, vocab, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        assert_eq!(
            std::fs::metadata(dir.path().join("phi.f64")).unwrap().len() as usize,
            8 * model.phi.len()
        );
        assert_eq!(LdaModel::load(dir.path()).unwrap(), model);
    }

    #[test]
    fn greedy_match_pairs_best_first() {
        let fitted = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let reference = vec![vec![1.0, 0.1], vec![0.1, 1.0]];
        let m = greedy_match(&fitted, &reference);
        assert_eq!(
            m.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>(),
            vec![(1, 0), (0, 1)]
        );
    }
}
