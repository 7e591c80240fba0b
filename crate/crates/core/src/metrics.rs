//! Caption metrics (corpus BLEU@4, CIDEr-D) and the log-linear fit used to
//! summarize scaling curves.
//!
//! Both metrics follow the COCO caption evaluation code: BLEU uses the
//! closest reference length for the brevity penalty, CIDEr-D uses clipped
//! TF-IDF n-gram vectors with a gaussian length penalty (sigma 6).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const CIDER_SIGMA: f64 = 6.0;
const MAX_N: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub image_id: String,
    pub candidate: String,
    pub references: Vec<String>,
}

impl EvalPair {
    pub fn new(image_id: impl Into<String>, candidate: impl Into<String>, references: Vec<String>) -> Result<Self> {
        if references.is_empty() {
            return Err(invalid("an evaluation pair needs at least one reference"));
        }
        Ok(Self {
            image_id: image_id.into(),
            candidate: candidate.into(),
            references,
        })
    }
}

/// Lowercases, separates punctuation from words and drops it.
pub fn metric_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| c.is_whitespace() || (c.is_ascii_punctuation() && c != '\'' && c != '[' && c != ']'))
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

type Ngram = Vec<String>;

fn ngram_counts(words: &[String]) -> BTreeMap<Ngram, usize> {
    let mut counts = BTreeMap::new();
    for n in 1..=MAX_N {
        for w in words.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU-1..4 precisions combined with the brevity penalty, ×100.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// BLEU@1 .. BLEU@4, each ×100.
    pub bleu: [f64; MAX_N],
    pub brevity_penalty: f64,
    pub candidate_len: usize,
    pub reference_len: usize,
}

pub fn bleu(pairs: &[EvalPair]) -> BleuReport {
    let mut correct = [0usize; MAX_N];
    let mut guess = [0usize; MAX_N];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for p in pairs {
        let cand = metric_tokens(&p.candidate);
        let refs: Vec<Vec<String>> = p.references.iter().map(|r| metric_tokens(r)).collect();
        let mut max_ref: BTreeMap<Ngram, usize> = BTreeMap::new();
        for r in &refs {
            for (g, c) in ngram_counts(r) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        for (g, c) in ngram_counts(&cand) {
            correct[g.len() - 1] += c.min(max_ref.get(&g).copied().unwrap_or(0));
        }
        for (n, slot) in guess.iter_mut().enumerate() {
            *slot += (cand.len() + 1).saturating_sub(n + 1);
        }
        c_len += cand.len();
        // closest reference length, shorter one on ties
        r_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .unwrap_or(0);
    }
    let bp = if c_len == 0 {
        0.0
    } else if c_len < r_len {
        (1.0 - r_len as f64 / c_len as f64).exp()
    } else {
        1.0
    };
    let mut out = [0.0; MAX_N];
    let mut log_sum = 0.0;
    for n in 0..MAX_N {
        if correct[n] == 0 || guess[n] == 0 {
            // later orders stay zero as well
            break;
        }
        log_sum += (correct[n] as f64 / guess[n] as f64).ln();
        out[n] = 100.0 * bp * (log_sum / (n + 1) as f64).exp();
    }
    BleuReport {
        bleu: out,
        brevity_penalty: bp,
        candidate_len: c_len,
        reference_len: r_len,
    }
}

/// Corpus BLEU@4 in [0, 100]; 0 for an empty pair list.
pub fn bleu4(pairs: &[EvalPair]) -> f64 {
    bleu(pairs).bleu[MAX_N - 1]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiderReport {
    /// Mean over images.
    pub score: f64,
    pub per_image: Vec<f64>,
    /// Set when the corpus has a single image: every IDF weight is zero.
    pub degenerate_idf: bool,
}

struct TfIdf {
    vec: [BTreeMap<Ngram, f64>; MAX_N],
    norm: [f64; MAX_N],
    /// Bigram count, the length measure of the COCO implementation.
    length: f64,
}

fn tfidf(counts: &BTreeMap<Ngram, usize>, df: &BTreeMap<Ngram, usize>, log_images: f64) -> TfIdf {
    let mut vec: [BTreeMap<Ngram, f64>; MAX_N] = Default::default();
    let mut norm = [0.0; MAX_N];
    let mut length = 0.0;
    for (g, &tf) in counts {
        let n = g.len() - 1;
        let d = (df.get(g).copied().unwrap_or(0).max(1) as f64).ln();
        let w = tf as f64 * (log_images - d);
        norm[n] += w * w;
        if n == 1 {
            length += tf as f64;
        }
        vec[n].insert(g.clone(), w);
    }
    for v in norm.iter_mut() {
        *v = v.sqrt();
    }
    TfIdf { vec, norm, length }
}

fn cider_sim(hyp: &TfIdf, r: &TfIdf) -> [f64; MAX_N] {
    let delta = hyp.length - r.length;
    let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut val = [0.0; MAX_N];
    for n in 0..MAX_N {
        for (g, &w) in &hyp.vec[n] {
            let rw = r.vec[n].get(g).copied().unwrap_or(0.0);
            val[n] += w.min(rw) * rw;
        }
        if hyp.norm[n] != 0.0 && r.norm[n] != 0.0 {
            val[n] /= hyp.norm[n] * r.norm[n];
        }
        val[n] *= penalty;
    }
    val
}

/// CIDEr-D with document frequencies taken over the references of `pairs`.
pub fn cider_d(pairs: &[EvalPair]) -> CiderReport {
    if pairs.is_empty() {
        return CiderReport {
            score: 0.0,
            per_image: Vec::new(),
            degenerate_idf: false,
        };
    }
    let refs: Vec<Vec<BTreeMap<Ngram, usize>>> = pairs
        .iter()
        .map(|p| p.references.iter().map(|r| ngram_counts(&metric_tokens(r))).collect())
        .collect();
    let mut df: BTreeMap<Ngram, usize> = BTreeMap::new();
    for image in &refs {
        let mut seen: Vec<&Ngram> = image.iter().flat_map(|c| c.keys()).collect();
        seen.sort();
        seen.dedup();
        for g in seen {
            *df.entry(g.clone()).or_insert(0) += 1;
        }
    }
    let log_images = (pairs.len() as f64).ln();
    let per_image: Vec<f64> = pairs
        .par_iter()
        .zip(refs.par_iter())
        .map(|(p, image_refs)| {
            let hyp = tfidf(&ngram_counts(&metric_tokens(&p.candidate)), &df, log_images);
            let mut total = [0.0; MAX_N];
            for rc in image_refs {
                let s = cider_sim(&hyp, &tfidf(rc, &df, log_images));
                for n in 0..MAX_N {
                    total[n] += s[n];
                }
            }
            let mean = total.iter().sum::<f64>() / MAX_N as f64;
            10.0 * mean / image_refs.len() as f64
        })
        .collect();
    let score = per_image.iter().sum::<f64>() / per_image.len() as f64;
    CiderReport {
        score,
        per_image,
        degenerate_idf: pairs.len() == 1,
    }
}

/// `score ≈ a + b · ln(data_size)` fitted by least squares.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub residuals: Vec<f64>,
    pub r_squared: f64,
}

impl LogLinearFit {
    pub fn predict(&self, data_size: f64) -> f64 {
        self.intercept + self.slope * data_size.ln()
    }
}

/// Fits `(data_size, score)` points; needs two distinct positive sizes.
pub fn fit_loglinear(points: &[(f64, f64)]) -> Result<LogLinearFit> {
    if points.iter().any(|&(x, y)| !(x > 0.0) || !y.is_finite()) {
        return Err(invalid("data sizes must be positive and scores finite"));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let n = points.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if points.is_empty() || sxx <= 0.0 {
        return Err(invalid("a log-linear fit needs at least two distinct data sizes"));
    }
    let sxy: f64 = xs.iter().zip(points).map(|(x, p)| (x - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = xs
        .iter()
        .zip(points)
        .map(|(x, p)| p.1 - (intercept + slope * x))
        .collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(LogLinearFit {
        intercept,
        slope,
        residuals,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(c: &str, refs: &[&str]) -> EvalPair {
        EvalPair::new("x", c, refs.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn tokens_lowercase_and_strip_punctuation() {
        assert_eq!(metric_tokens("A Dog, running."), vec!["a", "dog", "running"]);
    }

    #[test]
    fn identity_is_100() {
        let ps = vec![
            pair("a man riding a horse on the beach", &["a man riding a horse on the beach"]),
            pair("two dogs play in the snow", &["two dogs play in the snow"]),
        ];
        assert!((bleu4(&ps) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn no_overlap_is_zero() {
        let ps = vec![pair("zebra", &["a man"]), pair("giraffe", &["two dogs"])];
        assert_eq!(bleu4(&ps), 0.0);
        assert_eq!(cider_d(&ps).score, 0.0);
        assert_eq!(bleu4(&[]), 0.0);
    }

    #[test]
    fn missing_references_rejected() {
        assert!(EvalPair::new("x", "a", vec![]).is_err());
    }

    #[test]
    fn fit_two_points_exact() {
        let f = fit_loglinear(&[(10.0, 1.0), (100.0, 3.0)]).unwrap();
        assert!(f.residuals.iter().all(|r| r.abs() < 1e-12));
        assert!((f.slope - 2.0 / 10f64.ln()).abs() < 1e-12);
        assert!(fit_loglinear(&[(10.0, 1.0), (10.0, 3.0)]).is_err());
        assert!(fit_loglinear(&[(10.0, 1.0)]).is_err());
    }
}
