//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

pub mod criteria;

use std::collections::{HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use way_core::annotate::{annotate_all, AnnotateConfig, PortRegistry};
use way_core::nn::{Graph, Tensor, Var};
use way_core::pipeline::{refine_all, represent_all, RepresentConfig};
use way_core::refine::{ClusterLabel, RefineConfig};
use way_core::represent::NestedSequence;
use way_core::synth::{generate, WorldSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Largest norm-wise relative error, over all inputs, between the tape
/// gradient and central finite differences of `sum(f(inputs) * w)` for a
/// fixed random weight `w`.
pub fn fd_check(inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let h = 1e-6;
    let mut weight: Option<Tensor> = None;
    let mut eval = |inputs: &[Tensor], grads: bool| -> (f64, Vec<Option<Tensor>>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars);
        let w = weight
            .get_or_insert_with(|| random_tensor(g.shape(out), &mut rng(99)))
            .clone();
        let w = g.constant(w);
        let prod = g.mul(out, w).unwrap();
        let loss = g.sum(prod);
        let value = g.value(loss).item();
        if !grads {
            return (value, vec![]);
        }
        let gr = g.backward(loss).unwrap();
        (value, vars.iter().map(|&v| gr.get(v).cloned()).collect())
    };
    let (_, analytic) = eval(inputs, true);
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let a = analytic[k].clone().unwrap_or_else(|| Tensor::zeros(t.shape()));
        let mut numeric = vec![0.0; t.len()];
        for e in 0..t.len() {
            let mut shifted = inputs.to_vec();
            shifted[k].data_mut()[e] += h;
            let up = eval(&shifted, false).0;
            shifted[k].data_mut()[e] -= 2.0 * h;
            let down = eval(&shifted, false).0;
            numeric[e] = (up - down) / (2.0 * h);
        }
        let diff: f64 = a.data().iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na: f64 = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = na.max(nn);
        if scale > 1e-12 {
            worst = worst.max(diff / scale);
        } else {
            worst = worst.max(diff);
        }
    }
    worst
}

/// The graph of strings over `alphabet` up to `max_len`, with an edge for
/// every unit-cost insertion, deletion, substitution or adjacent
/// transposition. Breadth-first search over it gives edit distances.
pub struct EditGraph {
    pub strings: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
    adj: Vec<Vec<usize>>,
}

impl EditGraph {
    pub fn new(alphabet: &[u8], max_len: usize) -> Self {
        let strings = all_strings(alphabet, max_len);
        let index: HashMap<Vec<u8>, usize> = strings.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let adj = strings
            .iter()
            .map(|s| {
                let mut next = Vec::new();
                for i in 0..s.len() {
                    let mut t = s.clone();
                    t.remove(i);
                    next.push(t);
                    for &c in alphabet {
                        if c != s[i] {
                            let mut t = s.clone();
                            t[i] = c;
                            next.push(t);
                        }
                    }
                    if i + 1 < s.len() && s[i] != s[i + 1] {
                        let mut t = s.clone();
                        t.swap(i, i + 1);
                        next.push(t);
                    }
                }
                if s.len() < max_len {
                    for i in 0..=s.len() {
                        for &c in alphabet {
                            let mut t = s.clone();
                            t.insert(i, c);
                            next.push(t);
                        }
                    }
                }
                let mut ids: Vec<usize> = next.iter().map(|t| index[t]).collect();
                ids.sort_unstable();
                ids.dedup();
                ids
            })
            .collect();
        Self { strings, index, adj }
    }

    pub fn id(&self, s: &[u8]) -> usize {
        self.index[s]
    }

    /// Distances from string `source` to every string, by id.
    pub fn distances(&self, source: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.strings.len()];
        let mut queue = VecDeque::new();
        dist[source] = 0;
        queue.push_back(source);
        while let Some(s) = queue.pop_front() {
            for &t in &self.adj[s] {
                if dist[t] == usize::MAX {
                    dist[t] = dist[s] + 1;
                    queue.push_back(t);
                }
            }
        }
        dist
    }
}

/// Every string over `alphabet` with length `0..=max_len`.
pub fn all_strings(alphabet: &[u8], max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    let mut layer = vec![vec![]];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|s: &Vec<u8>| {
                alphabet.iter().map(move |&c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

/// Density clustering from the definitions, quadratic in the point count:
/// core points have at least `min_pts` points (themselves included) within
/// `eps`; clusters are connected components of core points; other points
/// within `eps` of a core point join their nearest core point's cluster.
/// Cluster ids are arbitrary.
pub fn dbscan_oracle(points: &[[f64; 3]], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let dist = |a: usize, b: usize| {
        ((points[a][0] - points[b][0]).powi(2) + (points[a][1] - points[b][1]).powi(2) + (points[a][2] - points[b][2]).powi(2))
            .sqrt()
    };
    let near = |a: usize, b: usize| dist(a, b) <= eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    // union-find over core-core adjacency
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    for i in 0..n {
        for j in 0..n {
            if core[i] && core[j] && near(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    (0..n)
        .map(|i| {
            if core[i] {
                Some(find(&mut parent, i))
            } else {
                (0..n)
                    .filter(|&j| core[j] && near(i, j))
                    .min_by(|&a, &b| dist(i, a).total_cmp(&dist(i, b)))
                    .map(|j| find(&mut parent, j))
            }
        })
        .collect()
}

/// True when both labelings induce the same partition and the same noise set.
pub fn same_partition(labels: &[ClusterLabel], oracle: &[Option<usize>]) -> bool {
    let mut fwd: HashMap<usize, usize> = HashMap::new();
    let mut back: HashMap<usize, usize> = HashMap::new();
    labels.iter().zip(oracle).all(|(l, o)| match (l, o) {
        (ClusterLabel::Noise, None) => true,
        (ClusterLabel::Cluster(a), Some(b)) => *fwd.entry(*a).or_insert(*b) == *b && *back.entry(*b).or_insert(*a) == *a,
        _ => false,
    })
}

/// Spatial encoding of one point evaluated term by term (degrees in).
pub fn se_scalar(lon_deg: f64, lat_deg: f64, d: usize) -> Vec<f64> {
    let lam = lon_deg * std::f64::consts::PI / 180.0;
    let phi = lat_deg * std::f64::consts::PI / 180.0;
    let c = std::f64::consts::PI.ln() * std::f64::consts::PI.ln();
    let mut v = Vec::with_capacity(d);
    for i in 0..d / 4 {
        let s = (2.0 * std::f64::consts::PI).powf(4.0 * i as f64 / (d * d) as f64);
        v.push((phi / s).cos() * (lam / s).sin());
        v.push(c * (phi / s).sin());
        v.push((phi / s).cos() * (lam / s).cos());
        v.push(-c * (phi / s).sin());
    }
    v
}

pub fn te_scalar(delta: f64, d: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(d);
    for i in 0..d / 2 {
        let w = 1000f64.powf(2.0 * i as f64 / d as f64);
        v.push((delta / w).cos());
        v.push((delta / w).sin());
    }
    v
}

/// Runs the whole preprocessing chain on a synthetic world.
pub fn synthetic_sequences(spec: &WorldSpec) -> Vec<NestedSequence> {
    let data = generate(spec).unwrap();
    let registry = PortRegistry::new(data.world.ports.clone()).unwrap();
    let ann = annotate_all(data.messages, &registry, &AnnotateConfig::default());
    let refined = refine_all(&ann.segments, &RefineConfig::default());
    represent_all(&refined.segments, &RepresentConfig { seed: spec.seed, ..Default::default() }).unwrap().sequences
}
