//! Destination-text normalization and fuzzy matching against port identifiers.

use std::collections::{BTreeSet, HashMap};

use super::PortRecord;

/// Uppercases, turns every non-alphanumeric character into a separator and
/// returns all contiguous token n-grams for `n = 1..=max_n`, shortest first.
pub fn regularize(expr: &str, max_n: usize) -> Vec<String> {
    let cleaned: String = expr
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .to_uppercase();
    let tokens: Vec<&str> = cleaned.split_whitespace().collect();
    let mut grams = Vec::new();
    for n in 1..=max_n.min(tokens.len()) {
        for window in tokens.windows(n) {
            grams.push(window.join(" "));
        }
    }
    grams
}

/// Unrestricted Damerau-Levenshtein distance: insertions, deletions,
/// substitutions and transpositions of adjacent characters, where a
/// transposed pair may still be edited afterwards.
pub fn dl_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (la, lb) = (a.len(), b.len());
    if la == 0 {
        return lb;
    }
    if lb == 0 {
        return la;
    }
    let inf = la + lb;
    let w = lb + 2;
    let mut d = vec![0usize; (la + 2) * w];
    d[0] = inf;
    for i in 0..=la {
        d[(i + 1) * w] = inf;
        d[(i + 1) * w + 1] = i;
    }
    for j in 0..=lb {
        d[j + 1] = inf;
        d[w + j + 1] = j;
    }
    // last row where each character of `a` occurred; identifiers are short,
    // so a linear scan beats hashing
    let mut last_row: Vec<(char, usize)> = Vec::new();
    for i in 1..=la {
        let mut last_match_col = 0;
        for j in 1..=lb {
            let i1 = last_row.iter().find(|(c, _)| *c == b[j - 1]).map_or(0, |&(_, r)| r);
            let j1 = last_match_col;
            let cost = if a[i - 1] == b[j - 1] {
                last_match_col = j;
                0
            } else {
                1
            };
            let sub = d[i * w + j] + cost;
            let ins = d[(i + 1) * w + j] + 1;
            let del = d[i * w + j + 1] + 1;
            let trans = d[i1 * w + j1] + (i - i1 - 1) + 1 + (j - j1 - 1);
            d[(i + 1) * w + j + 1] = sub.min(ins).min(del).min(trans);
        }
        match last_row.iter_mut().find(|(c, _)| *c == a[i - 1]) {
            Some(e) => e.1 = i,
            None => last_row.push((a[i - 1], i)),
        }
    }
    d[(la + 1) * w + lb + 1]
}

/// `1 - dl(gram, ident) / |gram|`.
pub fn similarity(gram: &str, ident: &str) -> f64 {
    let len = gram.chars().count();
    if len == 0 {
        return f64::NEG_INFINITY;
    }
    1.0 - dl_distance(gram, ident) as f64 / len as f64
}

/// Ports whose name or locode scores strictly above `threshold` against any
/// gram of `expr`.
pub fn extract_candidates(
    expr: &str,
    ports: &[PortRecord],
    threshold: f64,
    max_n: usize,
) -> BTreeSet<usize> {
    let grams: Vec<(String, usize)> = regularize(expr, max_n)
        .into_iter()
        .map(|g| {
            let n = g.chars().count();
            (g, n)
        })
        .collect();
    // the distance is at least the length difference, which bounds the score
    let above = |g: &str, len: usize, ident: &str| {
        let bound = 1.0 - len.abs_diff(ident.chars().count()) as f64 / len as f64;
        bound > threshold && similarity(g, ident) > threshold
    };
    let mut out = BTreeSet::new();
    for port in ports {
        let name = port.name.to_uppercase();
        let code = port.locode.to_uppercase();
        let hit = grams
            .iter()
            .any(|(g, n)| above(g, *n, &name) || (!code.is_empty() && above(g, *n, &code)));
        if hit {
            out.insert(port.port_id);
        }
    }
    out
}

/// Memoizes [`extract_candidates`] per distinct destination text; AIS feeds
/// repeat the same handful of strings for thousands of messages.
pub struct CandidateMatcher<'a> {
    ports: &'a [PortRecord],
    threshold: f64,
    max_n: usize,
    cache: HashMap<String, Vec<usize>>,
}

impl<'a> CandidateMatcher<'a> {
    pub fn new(ports: &'a [PortRecord], threshold: f64, max_n: usize) -> Self {
        Self {
            ports,
            threshold,
            max_n,
            cache: HashMap::new(),
        }
    }

    pub fn candidates(&mut self, expr: &str) -> &[usize] {
        if !self.cache.contains_key(expr) {
            let set = extract_candidates(expr, self.ports, self.threshold, self.max_n);
            self.cache.insert(expr.to_string(), set.into_iter().collect());
        }
        &self.cache[expr]
    }
}
