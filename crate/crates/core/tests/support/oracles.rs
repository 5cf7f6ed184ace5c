//! Brute-force reference implementations of the captioning metrics, written
//! from the metric definitions without touching the library code. Tokens are
//! plain string slices; counting is linear search, LCS is exhaustive.

#![allow(dead_code)]

pub type Pair<'a> = (Vec<&'a str>, Vec<&'a str>);

/// Candidate/reference fixture, ten pairs, already tokenized by whitespace.
pub const FIXTURE: [(&str, &str); 10] = [
    (
        "small left pleural effusion",
        "small left pleural effusion is present",
    ),
    ("the heart is normal in size", "heart size is normal"),
    ("no pneumothorax is seen", "there is no pneumothorax"),
    (
        "mild pulmonary edema with small effusions",
        "mild pulmonary edema and small bilateral effusions",
    ),
    ("lungs are clear", "the lungs are clear"),
    (
        "right lower lobe opacity concerning for pneumonia",
        "opacity in the right lower lobe may represent pneumonia",
    ),
    ("stable cardiomegaly", "moderate cardiomegaly is stable"),
    (
        "endotracheal tube in standard position",
        "the endotracheal tube is in standard position",
    ),
    (
        "no acute cardiopulmonary process",
        "no acute cardiopulmonary abnormality",
    ),
    ("bibasilar atelectasis", "atelectasis at both lung bases"),
];

pub fn fixture_pairs() -> Vec<Pair<'static>> {
    FIXTURE
        .iter()
        .map(|(c, r)| {
            (
                c.split_whitespace().collect(),
                r.split_whitespace().collect(),
            )
        })
        .collect()
}

/// All order-`n` windows, with multiplicity, as (gram, count) in first-seen order.
fn count_grams<'a>(tokens: &[&'a str], n: usize) -> Vec<(Vec<&'a str>, usize)> {
    let mut out: Vec<(Vec<&'a str>, usize)> = Vec::new();
    if tokens.len() < n {
        return out;
    }
    for start in 0..=tokens.len() - n {
        let gram = tokens[start..start + n].to_vec();
        match out.iter_mut().find(|(g, _)| *g == gram) {
            Some((_, c)) => *c += 1,
            None => out.push((gram, 1)),
        }
    }
    out
}

fn lookup(grams: &[(Vec<&str>, usize)], gram: &[&str]) -> usize {
    grams
        .iter()
        .find(|(g, _)| g.as_slice() == gram)
        .map_or(0, |(_, c)| *c)
}

pub fn bleu(pairs: &[Pair], order: usize) -> f64 {
    let mut log_sum = 0.0;
    for n in 1..=order {
        let mut matched = 0usize;
        let mut total = 0usize;
        for (cand, refr) in pairs {
            let cg = count_grams(cand, n);
            let rg = count_grams(refr, n);
            for (gram, count) in &cg {
                matched += (*count).min(lookup(&rg, gram));
                total += count;
            }
        }
        if matched == 0 || total == 0 {
            return 0.0;
        }
        log_sum += (matched as f64 / total as f64).ln() / order as f64;
    }
    let c: usize = pairs.iter().map(|(c, _)| c.len()).sum();
    let r: usize = pairs.iter().map(|(_, r)| r.len()).sum();
    let bp = if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    bp * log_sum.exp()
}

/// Longest common subsequence by trying every subset of the shorter side
/// (fine for fixture-sized sentences).
pub fn lcs_exhaustive(a: &[&str], b: &[&str]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    assert!(short.len() <= 16, "exhaustive LCS only for short sequences");
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let picked: Vec<&str> = (0..short.len())
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| short[i])
            .collect();
        if picked.len() <= best {
            continue;
        }
        let mut it = long.iter();
        if picked.iter().all(|p| it.any(|x| x == p)) {
            best = picked.len();
        }
    }
    best
}

pub fn rouge_l(pairs: &[Pair]) -> f64 {
    let beta2 = 1.2f64 * 1.2;
    let mut sum = 0.0;
    for (cand, refr) in pairs {
        let l = lcs_exhaustive(cand, refr) as f64;
        if l > 0.0 {
            let p = l / cand.len() as f64;
            let r = l / refr.len() as f64;
            sum += (1.0 + beta2) * p * r / (r + beta2 * p);
        }
    }
    sum / pairs.len() as f64
}

/// Strip the first of ing/es/ed/s that leaves at least three characters.
fn oracle_stem(word: &str) -> String {
    for suffix in ["ing", "es", "ed", "s"] {
        if word.ends_with(suffix) && word.chars().count() - suffix.chars().count() >= 3 {
            return word[..word.len() - suffix.len()].to_string();
        }
    }
    word.to_string()
}

/// Leftmost-greedy one-to-one matching, exact then stem. Returns, for each
/// candidate position, the matched reference position.
fn meteor_matches(cand: &[&str], refr: &[&str]) -> Vec<Option<usize>> {
    let mut link = vec![None; cand.len()];
    let mut used = vec![false; refr.len()];
    for stage in 0..2 {
        for i in 0..cand.len() {
            if link[i].is_some() {
                continue;
            }
            for j in 0..refr.len() {
                let same = if stage == 0 {
                    cand[i] == refr[j]
                } else {
                    oracle_stem(cand[i]) == oracle_stem(refr[j])
                };
                if !used[j] && same {
                    used[j] = true;
                    link[i] = Some(j);
                    break;
                }
            }
        }
    }
    link
}

pub fn meteor_pair(cand: &[&str], refr: &[&str]) -> f64 {
    let link = meteor_matches(cand, refr);
    let m = link.iter().flatten().count();
    if m == 0 {
        return 0.0;
    }
    // A chunk continues while both candidate and reference positions step by one.
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for (i, j) in link.iter().enumerate() {
        match (j, prev) {
            (Some(j), Some((pi, pj))) if i == pi + 1 && *j == pj + 1 => prev = Some((i, *j)),
            (Some(j), _) => {
                chunks += 1;
                prev = Some((i, *j));
            }
            (None, _) => prev = None,
        }
    }
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / refr.len() as f64;
    let f = p * r / (0.9 * p + 0.1 * r);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    f * (1.0 - penalty)
}

pub fn meteor(pairs: &[Pair]) -> f64 {
    pairs.iter().map(|(c, r)| meteor_pair(c, r)).sum::<f64>() / pairs.len() as f64
}

pub fn cider(pairs: &[Pair]) -> f64 {
    let n_docs = pairs.len() as f64;
    let mut total = 0.0;
    for (cand, refr) in pairs {
        let delta = cand.len() as f64 - refr.len() as f64;
        let lp = (-delta * delta / 72.0).exp();
        let mut per_pair = 0.0;
        for n in 1..=4 {
            let idf = |gram: &[&str]| {
                let df = pairs
                    .iter()
                    .filter(|(_, r)| lookup(&count_grams(r, n), gram) > 0)
                    .count() as f64;
                (n_docs / (1.0 + df)).ln().max(0.0)
            };
            let vc: Vec<(Vec<&str>, f64)> = count_grams(cand, n)
                .into_iter()
                .map(|(g, c)| {
                    let w = c as f64 * idf(&g);
                    (g, w)
                })
                .collect();
            let vr: Vec<(Vec<&str>, f64)> = count_grams(refr, n)
                .into_iter()
                .map(|(g, c)| {
                    let w = c as f64 * idf(&g);
                    (g, w)
                })
                .collect();
            let norm = |v: &[(Vec<&str>, f64)]| v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
            let denom = norm(&vc) * norm(&vr);
            if denom == 0.0 {
                continue;
            }
            let mut dot = 0.0;
            for (g, wr) in &vr {
                if let Some((_, wc)) = vc.iter().find(|(h, _)| h == g) {
                    dot += wc.min(*wr) * wr;
                }
            }
            per_pair += 10.0 * lp * dot / denom;
        }
        total += per_pair / 4.0;
    }
    total / n_docs
}
