//! Downstream metrics: multi-label accuracy, retrieval, one-class
//! classification, distribution overlap, AUROC, rescue rate and the
//! one-sided sign test.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelScores {
    /// Class-mean balanced accuracy at the 0.5 sigmoid threshold.
    pub balanced_accuracy: f64,
    /// Mean Jaccard between predicted and true label sets.
    pub subset_jaccard: f64,
    /// Classes with neither positives nor negatives (left out of the mean).
    pub excluded_classes: Vec<usize>,
}

/// Thresholds `sigmoid(z) > 0.5`, i.e. `z > 0`.
pub fn predict_set(logits: &[f64]) -> Vec<bool> {
    logits.iter().map(|z| *z > 0.0).collect()
}

pub fn jaccard(a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len(), "label sets differ in length");
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Per-class balanced accuracy averaged over classes, plus subset Jaccard.
///
/// A class with positives but no negatives scores its TPR alone (and the
/// reverse); a class with neither is excluded and reported.
pub fn multilabel_accuracy(logits: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<MultiLabelScores> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::Shape {
            op: "multilabel_accuracy",
            left: format!("{} logit rows", logits.len()),
            right: format!("{} label rows", labels.len()),
        });
    }
    let classes = labels[0].len();
    if logits.iter().chain(std::iter::empty()).any(|z| z.len() != classes) || labels.iter().any(|y| y.len() != classes) {
        return Err(Error::Shape {
            op: "multilabel_accuracy",
            left: "ragged logits".into(),
            right: format!("{classes} classes"),
        });
    }
    let preds: Vec<Vec<bool>> = logits.iter().map(|z| predict_set(z)).collect();
    let mut per_class = Vec::with_capacity(classes);
    let mut excluded = Vec::new();
    for c in 0..classes {
        let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
        for (p, y) in preds.iter().zip(labels) {
            if y[c] {
                pos += 1;
                tp += p[c] as usize;
            } else {
                neg += 1;
                tn += !p[c] as usize;
            }
        }
        let rates: Vec<f64> = [(tp, pos), (tn, neg)]
            .iter()
            .filter(|(_, total)| *total > 0)
            .map(|(hit, total)| *hit as f64 / *total as f64)
            .collect();
        if rates.is_empty() {
            excluded.push(c);
        } else {
            per_class.push(rates.iter().sum::<f64>() / rates.len() as f64);
        }
    }
    let balanced = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().sum::<f64>() / per_class.len() as f64
    };
    let subset_jaccard = preds.iter().zip(labels).map(|(p, y)| jaccard(p, y)).sum::<f64>() / labels.len() as f64;
    Ok(MultiLabelScores {
        balanced_accuracy: balanced,
        subset_jaccard,
        excluded_classes: excluded,
    })
}

/// Fraction of samples whose arg-max logit is their first true label.
pub fn single_label_accuracy(logits: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<f64> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::Shape {
            op: "single_label_accuracy",
            left: format!("{} logit rows", logits.len()),
            right: format!("{} label rows", labels.len()),
        });
    }
    let hits = logits
        .iter()
        .zip(labels)
        .filter(|(z, y)| {
            let arg = z
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, v)| if *v > best.1 { (i, *v) } else { best })
                .0;
            y.get(arg).copied().unwrap_or(false) && y.iter().position(|b| *b) == Some(arg)
        })
        .count();
    Ok(hits as f64 / logits.len() as f64)
}

/// A representation vector tagged with its record and labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub record_id: u64,
    pub labels: Vec<bool>,
}

impl Embedding {
    pub fn class(&self) -> Option<usize> {
        self.labels.iter().position(|b| *b)
    }
}

/// Cosine similarity; 0 when either side has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Reference indices sorted by descending similarity to `query` (ties by index).
fn ranked(query: &[f64], reference: &[Embedding]) -> Vec<(usize, f64)> {
    let mut sims: Vec<(usize, f64)> = reference
        .iter()
        .enumerate()
        .map(|(i, e)| (i, cosine(query, &e.vector)))
        .collect();
    sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    sims
}

/// Majority vote among the `k` most cosine-similar references.
///
/// Vote ties go to the larger summed similarity, then the lower class id.
pub fn knn_classify(query: &[f64], reference: &[Embedding], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    if reference.is_empty() {
        return Err(Error::Protocol("kNN needs a nonempty reference set".into()));
    }
    let mut votes: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for (i, sim) in ranked(query, reference).into_iter().take(k) {
        let class = reference[i]
            .class()
            .ok_or_else(|| Error::Protocol(format!("reference {} has no label", reference[i].record_id)))?;
        let slot = votes.entry(class).or_insert((0, 0.0));
        slot.0 += 1;
        slot.1 += sim;
    }
    let mut best: Option<(usize, usize, f64)> = None;
    for (class, (count, sum)) in votes {
        let better = match best {
            None => true,
            Some((_, bc, bs)) => count > bc || (count == bc && sum > bs),
        };
        if better {
            best = Some((class, count, sum));
        }
    }
    Ok(best.expect("k >= 1 and reference nonempty").0)
}

/// Leave-one-out kNN accuracy; a prediction counts when it is one of the query's labels.
///
/// Neighbors vote with their first label.
pub fn knn_accuracy(embeddings: &[Embedding], k: usize) -> Result<f64> {
    if embeddings.len() < 2 {
        return Err(Error::Protocol("kNN accuracy needs at least two embeddings".into()));
    }
    let mut hits = 0;
    for (i, q) in embeddings.iter().enumerate() {
        let rest: Vec<Embedding> = embeddings
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, e)| e.clone())
            .collect();
        if q.labels.get(knn_classify(&q.vector, &rest, k)?).copied().unwrap_or(false) {
            hits += 1;
        }
    }
    Ok(hits as f64 / embeddings.len() as f64)
}

/// One query of the one-class protocol: does `vector` belong to `class`?
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccQuery {
    pub vector: Vec<f64>,
    pub class: usize,
    pub positive: bool,
}

fn occ_score(references: &BTreeMap<usize, Vec<Vec<f64>>>, k: usize, q: &OccQuery) -> Result<f64> {
    let refs = references
        .get(&q.class)
        .ok_or_else(|| Error::Protocol(format!("no references for class {}", q.class)))?;
    Ok(refs[..k].iter().map(|r| cosine(&q.vector, r)).sum::<f64>() / k as f64)
}

/// Threshold that best equalizes TPR and TNR on the calibration scores.
pub fn calibrate_threshold(pos: &[f64], neg: &[f64]) -> f64 {
    let mut cands: Vec<f64> = pos.iter().chain(neg).copied().collect();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let mut thresholds = Vec::with_capacity(cands.len() + 1);
    thresholds.push(cands.first().copied().unwrap_or(0.0) - 1.0);
    thresholds.extend(cands.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    thresholds.push(cands.last().copied().unwrap_or(0.0) + 1.0);
    let rate = |t: f64| {
        let tpr = pos.iter().filter(|s| **s > t).count() as f64 / pos.len().max(1) as f64;
        let tnr = neg.iter().filter(|s| **s <= t).count() as f64 / neg.len().max(1) as f64;
        ((tpr - tnr).abs(), tpr + tnr)
    };
    let mut best = (thresholds[0], f64::INFINITY, f64::NEG_INFINITY);
    for t in thresholds {
        let (gap, total) = rate(t);
        if gap < best.1 - 1e-12 || ((gap - best.1).abs() <= 1e-12 && total > best.2) {
            best = (t, gap, total);
        }
    }
    best.0
}

/// Accuracy of mean-similarity one-class decisions.
///
/// Each query is scored by its mean cosine similarity to the first `k`
/// references of its target class; the acceptance threshold is calibrated on
/// `calibration` to equalize TPR and TNR, then applied to `test`.
pub fn occ_accuracy(
    references: &BTreeMap<usize, Vec<Vec<f64>>>,
    k: usize,
    calibration: &[OccQuery],
    test: &[OccQuery],
) -> Result<f64> {
    if k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    for (class, refs) in references {
        if refs.len() < k {
            return Err(Error::Protocol(format!(
                "OCC with k={k} is undefined: class {class} has only {} references",
                refs.len()
            )));
        }
    }
    if test.is_empty() || calibration.is_empty() {
        return Err(Error::Protocol("OCC needs calibration and test queries".into()));
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for q in calibration {
        let s = occ_score(references, k, q)?;
        if q.positive {
            pos.push(s);
        } else {
            neg.push(s);
        }
    }
    let threshold = calibrate_threshold(&pos, &neg);
    let mut correct = 0;
    for q in test {
        let accept = occ_score(references, k, q)? > threshold;
        if accept == q.positive {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Builds the one-class protocol from a labeled pool and scores it.
///
/// Per class: `k` references, remaining members become positive queries,
/// each paired with one negative drawn from another class; queries alternate
/// between calibration and test.
pub fn occ_from_pool(embeddings: &[Embedding], k: usize, rng: &Rng) -> Result<f64> {
    let mut by_class: BTreeMap<usize, Vec<&Embedding>> = BTreeMap::new();
    for e in embeddings {
        let c = e
            .class()
            .ok_or_else(|| Error::Protocol(format!("embedding {} has no label", e.record_id)))?;
        by_class.entry(c).or_default().push(e);
    }
    if by_class.len() < 2 {
        return Err(Error::Protocol("OCC needs at least two classes".into()));
    }
    let mut rng = rng.fork(0x0CC);
    let mut references = BTreeMap::new();
    let mut queries = Vec::new();
    let classes: Vec<usize> = by_class.keys().copied().collect();
    for (&class, members) in &by_class {
        if members.len() < k {
            return Err(Error::Protocol(format!(
                "OCC with k={k} is undefined: class {class} has only {} members",
                members.len()
            )));
        }
        let mut members = members.clone();
        rng.shuffle(&mut members);
        references.insert(class, members[..k].iter().map(|e| e.vector.clone()).collect::<Vec<_>>());
        for pos in &members[k..] {
            queries.push(OccQuery {
                vector: pos.vector.clone(),
                class,
                positive: true,
            });
            let other = loop {
                let c = classes[rng.below(classes.len())];
                if c != class {
                    break c;
                }
            };
            let pool = &by_class[&other];
            queries.push(OccQuery {
                vector: pool[rng.below(pool.len())].vector.clone(),
                class,
                positive: false,
            });
        }
    }
    let (calibration, test): (Vec<_>, Vec<_>) = queries
        .into_iter()
        .enumerate()
        .partition(|(i, _)| (i / 2) % 2 == 0);
    let strip = |v: Vec<(usize, OccQuery)>| v.into_iter().map(|(_, q)| q).collect::<Vec<_>>();
    occ_accuracy(&references, k, &strip(calibration), &strip(test))
}

/// Overlap coefficient of two score samples on a shared histogram over `[-1, 1]`.
pub fn ovl(pos: &[f64], neg: &[f64], bins: usize) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Protocol("OVL needs nonempty positive and negative samples".into()));
    }
    if bins == 0 {
        return Err(Error::param("bins", "must be at least 1"));
    }
    let hist = |xs: &[f64]| {
        let mut h = vec![0usize; bins];
        for x in xs {
            let pos = ((x + 1.0) / 2.0 * bins as f64).floor();
            let idx = if pos.is_nan() { 0 } else { (pos.max(0.0) as usize).min(bins - 1) };
            h[idx] += 1;
        }
        h
    };
    let (hp, hn) = (hist(pos), hist(neg));
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    // density·width per bin is count / total, so the width cancels
    Ok(hp
        .iter()
        .zip(&hn)
        .map(|(a, b)| (*a as f64 / np).min(*b as f64 / nn))
        .sum())
}

/// Mann–Whitney AUROC: `P(pos > neg) + ½·P(tie)`.
pub fn auroc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Protocol("AUROC needs nonempty positive and negative samples".into()));
    }
    let mut all: Vec<(f64, bool)> = pos.iter().map(|s| (*s, true)).chain(neg.iter().map(|s| (*s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // tie-averaged ranks, doubled to stay integral
    let mut rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg_x2 = (i + 1 + j) as u128;
        let pos_in_group = all[i..j].iter().filter(|(_, p)| *p).count() as u128;
        rank_sum_x2 += avg_x2 * pos_in_group;
        i = j;
    }
    let (np, nn) = (pos.len() as u128, neg.len() as u128);
    let u_x2 = rank_sum_x2 - np * (np + 1);
    Ok(u_x2 as f64 / (2 * np * nn) as f64)
}

/// Fraction of the hard subset whose improvement flag is set.
pub fn rescue_rate(hard: &[bool], improved: &[bool]) -> Result<f64> {
    if hard.len() != improved.len() {
        return Err(Error::Shape {
            op: "rescue_rate",
            left: format!("{} hard flags", hard.len()),
            right: format!("{} improvement flags", improved.len()),
        });
    }
    let size = hard.iter().filter(|h| **h).count();
    if size == 0 {
        return Err(Error::Protocol("rescue rate needs a nonempty hard subset".into()));
    }
    let rescued = hard.iter().zip(improved).filter(|(h, i)| **h && **i).count();
    Ok(rescued as f64 / size as f64)
}

/// Flags the lowest `fraction` of samples by score (at least one; ties by index).
pub fn bottom_fraction(scores: &[f64], fraction: f64) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]).then(a.cmp(b)));
    let take = ((fraction * scores.len() as f64).round() as usize).clamp(1, scores.len().max(1));
    let mut flags = vec![false; scores.len()];
    for i in idx.into_iter().take(take) {
        flags[i] = true;
    }
    flags
}

/// Label-set Jaccard between each sample and its nearest other sample.
pub fn nn1_jaccard(embeddings: &[Embedding]) -> Vec<f64> {
    (0..embeddings.len())
        .map(|i| {
            let nn = embeddings
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, e)| (j, cosine(&embeddings[i].vector, &e.vector)))
                .fold(None, |best: Option<(usize, f64)>, cur| match best {
                    Some(b) if b.1 >= cur.1 => Some(b),
                    _ => Some(cur),
                });
            nn.map_or(0.0, |(j, _)| jaccard(&embeddings[i].labels, &embeddings[j].labels))
        })
        .collect()
}

/// Whether each sample's `k` nearest other samples include its class.
pub fn topk_contains_class(embeddings: &[Embedding], k: usize) -> Vec<bool> {
    (0..embeddings.len())
        .map(|i| {
            let rest: Vec<Embedding> = embeddings
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, e)| e.clone())
                .collect();
            let class = embeddings[i].class();
            ranked(&embeddings[i].vector, &rest)
                .into_iter()
                .take(k)
                .any(|(j, _)| rest[j].class() == class)
        })
        .collect()
}

/// Multi-label rescue rate: bottom-20% baseline NN₁ Jaccard, improvement ≥ 0.05.
pub fn jaccard_rescue_rate(baseline: &[Embedding], candidate: &[Embedding]) -> Result<f64> {
    let base = nn1_jaccard(baseline);
    let cand = nn1_jaccard(candidate);
    let hard = bottom_fraction(&base, 0.2);
    let improved: Vec<bool> = base.iter().zip(&cand).map(|(b, c)| c - b >= 0.05 - 1e-12).collect();
    rescue_rate(&hard, &improved)
}

/// Single-label rescue rate: baseline NN₁ misses whose candidate top-5 holds the class.
pub fn top5_rescue_rate(baseline: &[Embedding], candidate: &[Embedding]) -> Result<f64> {
    let hard: Vec<bool> = topk_contains_class(baseline, 1).into_iter().map(|hit| !hit).collect();
    let improved = topk_contains_class(candidate, 5);
    rescue_rate(&hard, &improved)
}

/// Cosine similarities of positive (`J ≥ 0.5`) and negative (`J ≤ 0.25`) pairs.
///
/// For single-label data these are same-class and different-class pairs.
pub fn similarity_pairs(embeddings: &[Embedding]) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for i in 0..embeddings.len() {
        for j in i + 1..embeddings.len() {
            let jac = jaccard(&embeddings[i].labels, &embeddings[j].labels);
            let s = cosine(&embeddings[i].vector, &embeddings[j].vector);
            if jac >= 0.5 {
                pos.push(s);
            } else if jac <= 0.25 {
                neg.push(s);
            }
        }
    }
    (pos, neg)
}

/// Two-column CSV (`score,group`) of similarity distributions.
pub fn similarity_csv(pos: &[f64], neg: &[f64]) -> String {
    let mut out = String::from("score,group\n");
    for s in pos {
        out.push_str(&format!("{s},positive\n"));
    }
    for s in neg {
        out.push_str(&format!("{s},negative\n"));
    }
    out
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

const EXACT_SIGN_TEST_MAX_N: u64 = 120;

/// `P(Binomial(n, ½) ≥ k)`: exact integer tail for small `n`, log-space sum beyond.
pub fn sign_test_one_sided(k: u64, n: u64) -> Result<f64> {
    if k > n {
        return Err(Error::param("k", format!("k={k} exceeds n={n}")));
    }
    if k == 0 {
        return Ok(1.0);
    }
    if n <= EXACT_SIGN_TEST_MAX_N {
        // Σ C(n, i) fits in u128, so the tail is one rounding away from exact
        let mut choose: u128 = 1;
        let mut tail: u128 = 0;
        for i in 0..=n as u128 {
            if i >= k as u128 {
                tail += choose;
            }
            choose = choose * (n as u128 - i) / (i + 1);
        }
        return Ok(tail as f64 / 2f64.powi(n as i32));
    }
    let mut log_fact = Vec::with_capacity(n as usize + 1);
    log_fact.push(0.0f64);
    for i in 1..=n {
        let prev = log_fact[(i - 1) as usize];
        log_fact.push(prev + (i as f64).ln());
    }
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    let mut acc = f64::NEG_INFINITY;
    for i in k..=n {
        let ln_choose = log_fact[n as usize] - log_fact[i as usize] - log_fact[(n - i) as usize];
        acc = log_add(acc, ln_choose + ln_half_n);
    }
    Ok(acc.exp().min(1.0))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multilabel_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset_jaccard: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub single_label_acc: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub knn_acc: BTreeMap<usize, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub occ_acc: BTreeMap<usize, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ovl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auroc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rescue_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sign_test_p: Option<f64>,
}

impl EvalReport {
    /// Every populated rate and p-value lies in `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        let singles = [
            self.multilabel_acc,
            self.subset_jaccard,
            self.single_label_acc,
            self.ovl,
            self.auroc,
            self.rescue_rate,
            self.sign_test_p,
        ];
        let maps = self.knn_acc.values().chain(self.occ_acc.values()).copied();
        for v in singles.into_iter().flatten().chain(maps) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Consistency(format!("metric {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: &[f64], class: usize, classes: usize) -> Embedding {
        let mut labels = vec![false; classes];
        labels[class] = true;
        Embedding {
            vector: v.to_vec(),
            record_id: 0,
            labels,
        }
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn multilabel_cases() {
        let labels = vec![vec![true, false, true], vec![false, true, false]];
        let perfect: Vec<Vec<f64>> = labels
            .iter()
            .map(|y| y.iter().map(|b| if *b { 10.0 } else { -10.0 }).collect())
            .collect();
        let s = multilabel_accuracy(&perfect, &labels).unwrap();
        assert_eq!((s.balanced_accuracy, s.subset_jaccard), (1.0, 1.0));
        let inverted: Vec<Vec<f64>> = perfect.iter().map(|z| z.iter().map(|v| -v).collect()).collect();
        assert_eq!(multilabel_accuracy(&inverted, &labels).unwrap().balanced_accuracy, 0.0);

        let z = vec![vec![logit(0.9), logit(0.6), logit(0.4)]];
        let y = vec![vec![true, false, true]];
        let s = multilabel_accuracy(&z, &y).unwrap();
        assert!((s.subset_jaccard - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(jaccard(&[true, true, false], &[true, true, false]), 1.0);
        assert_eq!(jaccard(&[true, false], &[false, true]), 0.0);
        let a = [false, true, true, true, false];
        let b = [false, false, true, true, true];
        assert_eq!(jaccard(&a, &b), 0.5);
        assert_eq!(jaccard(&[false, false], &[false, false]), 1.0);
    }

    #[test]
    fn knn_cases() {
        let refs = vec![emb(&[1.0, 0.0], 0, 3), emb(&[0.0, 1.0], 1, 3), emb(&[-1.0, 0.2], 2, 3)];
        assert_eq!(knn_classify(&[0.0, 1.0], &refs, 1).unwrap(), 1);
        let same = vec![emb(&[1.0, 0.0], 2, 3), emb(&[0.0, 1.0], 2, 3), emb(&[0.3, 0.3], 2, 3)];
        for k in 1..=3 {
            assert_eq!(knn_classify(&[0.5, -0.1], &same, k).unwrap(), 2);
        }
        // similarities 0.95 (class 1), 0.9 (class 0), 0.8 (class 0): 2-vs-1 vote
        let q = [1.0, 0.0];
        let unit = |s: f64| [s, (1.0 - s * s).sqrt()];
        let refs = vec![emb(&unit(0.95), 1, 2), emb(&unit(0.9), 0, 2), emb(&unit(0.8), 0, 2)];
        assert_eq!(knn_classify(&q, &refs, 3).unwrap(), 0);
        assert_eq!(knn_classify(&q, &refs, 1).unwrap(), 1);
        // tie on votes and on similarity: lowest class id
        let refs = vec![emb(&[0.0, 1.0], 1, 2), emb(&[0.0, -1.0], 0, 2)];
        assert_eq!(knn_classify(&[1.0, 0.0], &refs, 2).unwrap(), 0);
        assert!(knn_classify(&q, &[], 1).is_err());
    }

    #[test]
    fn zero_norm_similarity_is_zero() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn occ_separable_and_undefined() {
        let mut refs = BTreeMap::new();
        refs.insert(0, vec![vec![1.0, 0.0, 0.0]; 3]);
        let q = |v: [f64; 3], positive| OccQuery {
            vector: v.to_vec(),
            class: 0,
            positive,
        };
        let cal = vec![q([1.0, 0.0, 0.0], true), q([0.0, 1.0, 0.0], false)];
        let test = vec![q([1.0, 0.0, 0.0], true), q([0.0, 0.0, 1.0], false), q([0.0, 1.0, 0.0], false)];
        assert_eq!(occ_accuracy(&refs, 3, &cal, &test).unwrap(), 1.0);
        assert!(matches!(occ_accuracy(&refs, 5, &cal, &test), Err(Error::Protocol(_))));
    }

    #[test]
    fn ovl_cases() {
        let xs: Vec<f64> = (0..200).map(|i| -0.9 + i as f64 * 0.009).collect();
        assert!((ovl(&xs, &xs, 100).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(ovl(&[0.5, 0.6], &[-0.5, -0.6], 100).unwrap(), 0.0);
        assert!(ovl(&[], &[0.1], 100).is_err());
    }

    #[test]
    fn auroc_cases() {
        assert_eq!(auroc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3, 0.3], &[0.3]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.9, 0.4], &[0.5]).unwrap(), 0.5);
        let a = [0.1, 0.5, 0.5, 0.7];
        let b = [0.2, 0.5, 0.9];
        assert!((auroc(&a, &b).unwrap() + auroc(&b, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rescue_cases() {
        assert_eq!(rescue_rate(&[true, true, false], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(rescue_rate(&[true, true, false], &[false, false, true]).unwrap(), 0.0);
        let hard = vec![true; 54];
        let improved: Vec<bool> = (0..54).map(|i| i < 28).collect();
        let r = rescue_rate(&hard, &improved).unwrap();
        assert!((r - 0.519).abs() < 5e-4);
        assert!(matches!(rescue_rate(&[false], &[true]), Err(Error::Protocol(_))));
    }

    #[test]
    fn bottom_fraction_counts() {
        let s: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let f = bottom_fraction(&s, 0.2);
        assert_eq!(f.iter().filter(|b| **b).count(), 2);
        assert!(f[0] && f[1]);
    }

    #[test]
    fn sign_test_values() {
        assert_eq!(sign_test_one_sided(0, 10).unwrap(), 1.0);
        assert!((sign_test_one_sided(10, 10).unwrap() - 2f64.powi(-10)).abs() < 1e-18);
        let p = sign_test_one_sided(290, 325).unwrap();
        assert!((p / 1.98e-51 - 1.0).abs() < 0.02, "{p:e}");
        assert!(sign_test_one_sided(11, 10).is_err());
        // both evaluation paths agree where they overlap
        let exact = sign_test_one_sided(70, 120).unwrap();
        let tail: f64 = (70..=120u64)
            .map(|i| {
                let ln_c: f64 = (1..=120u64).map(|j| (j as f64).ln()).sum::<f64>()
                    - (1..=i).map(|j| (j as f64).ln()).sum::<f64>()
                    - (1..=120 - i).map(|j| (j as f64).ln()).sum::<f64>();
                (ln_c - 120.0 * std::f64::consts::LN_2).exp()
            })
            .sum();
        assert!((exact / tail - 1.0).abs() < 1e-10);
    }

    #[test]
    fn report_ranges() {
        let mut r = EvalReport {
            auroc: Some(0.7),
            ..Default::default()
        };
        r.validate().unwrap();
        r.knn_acc.insert(1, 1.2);
        assert!(r.validate().is_err());
    }
}
