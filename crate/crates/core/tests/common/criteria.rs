//! One check per acceptance criterion. Each returns whether it passed and a
//! one-line summary of what was measured.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use way_core::annotate::{annotate_all, dl_distance, AnnotateConfig, PortRegistry, Segment};
use way_core::eval::{
    macro_f1, overall_accuracy, predict, quartile_accuracy, quartile_counts, DepartureBaseline, PredictionRecord,
};
use way_core::geo::GeoPoint;
use way_core::nn::{Graph, Tensor, Var};
use way_core::pipeline::refine_all;
use way_core::refine::{dbscan, RefineConfig};
use way_core::represent::{spatial_encode, time_encode, NestedSequence, Split};
use way_core::synth::{generate, NoiseProfile, VoyageTruth, WorldSpec};
use way_core::train::{draw_mask, evaluate, gd_ratios, masked_mean, train, StepMask, TrainConfig};
use way_core::way::{Preset, WayConfig, WayModel};

use super::{dbscan_oracle, fd_check, random_tensor, rng, same_partition, se_scalar, te_scalar, EditGraph};

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

type Primitive = (&'static str, Vec<Vec<usize>>, Box<dyn Fn(&mut Graph, &[Var]) -> Var>);

fn primitives() -> Vec<Primitive> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], Box::new(|g, v| g.matmul(v[0], v[1]).unwrap())),
        ("add", vec![vec![3, 4], vec![4]], Box::new(|g, v| g.add(v[0], v[1]).unwrap())),
        ("mul", vec![vec![2, 3, 4], vec![2, 3, 1]], Box::new(|g, v| g.mul(v[0], v[1]).unwrap())),
        ("sub", vec![vec![3, 4], vec![1, 4]], Box::new(|g, v| g.sub(v[0], v[1]).unwrap())),
        ("scale", vec![vec![3, 4]], Box::new(|g, v| g.scale(v[0], -1.7))),
        ("sigmoid", vec![vec![3, 4]], Box::new(|g, v| g.sigmoid(v[0]))),
        ("tanh", vec![vec![3, 4]], Box::new(|g, v| g.tanh(v[0]))),
        ("relu", vec![vec![3, 4]], Box::new(|g, v| g.relu(v[0]))),
        ("softmax", vec![vec![3, 4]], Box::new(|g, v| g.softmax(v[0], 1).unwrap())),
        ("softmax_axis0", vec![vec![3, 4]], Box::new(|g, v| g.softmax(v[0], 0).unwrap())),
        ("log_softmax", vec![vec![3, 5]], Box::new(|g, v| g.log_softmax(v[0], 1).unwrap())),
        ("layer_norm", vec![vec![3, 5]], Box::new(|g, v| g.layer_norm(v[0], 1).unwrap())),
        (
            "dropout",
            vec![vec![4, 5]],
            Box::new(|g, v| g.dropout(v[0], 0.3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()),
        ),
        ("mean_pool", vec![vec![2, 3, 4]], Box::new(|g, v| g.mean_pool(v[0], 1).unwrap())),
        ("max_pool", vec![vec![4, 3, 5]], Box::new(|g, v| g.max_pool(v[0], 0).unwrap())),
        ("sum", vec![vec![3, 4]], Box::new(|g, v| g.sum(v[0]))),
        ("concat", vec![vec![2, 3], vec![2, 2]], Box::new(|g, v| g.concat(&[v[0], v[1]], 1).unwrap())),
        ("slice", vec![vec![3, 6]], Box::new(|g, v| g.slice(v[0], 1, 2, 3).unwrap())),
        ("select", vec![vec![3, 2, 4]], Box::new(|g, v| g.select(v[0], 1).unwrap())),
        ("reshape", vec![vec![2, 6]], Box::new(|g, v| g.reshape(v[0], &[3, 4]).unwrap())),
        ("transpose", vec![vec![2, 5]], Box::new(|g, v| g.transpose(v[0]).unwrap())),
        ("embedding", vec![vec![5, 3]], Box::new(|g, v| g.embedding(v[0], &[0, 2, 2, 4]).unwrap())),
        (
            "causal_mask_fill",
            vec![vec![4, 4]],
            Box::new(|g, v| {
                let m = g.causal_mask_fill(v[0]).unwrap();
                g.softmax(m, 1).unwrap()
            }),
        ),
        ("pick", vec![vec![3, 4]], Box::new(|g, v| g.pick(v[0], &[1, 0, 3]).unwrap())),
    ]
}

pub fn block_config(dropout: f64) -> WayConfig {
    WayConfig {
        layers: 2,
        d: 8,
        heads: 2,
        d_k: 4,
        d_f: 16,
        gamma: 2,
        ports: 3,
        ship_types: 3,
        dropout,
    }
}

/// Finite-difference error of one CASP block over its parameters and input.
pub fn casp_block_error(dropout: f64) -> f64 {
    let mut r = rng(7);
    let model = WayModel::new(block_config(dropout), &mut r).unwrap();
    let mut inputs: Vec<Tensor> = model.params().to_vec();
    // perturb the identity/zero initializations of the norms
    for (name, t) in model.names().iter().zip(inputs.iter_mut()) {
        if name.contains("norm") {
            *t = random_tensor(t.shape(), &mut r);
        }
    }
    inputs.push(random_tensor(&[4, 3, 8], &mut r));
    let p = model.params().len();
    fd_check(&inputs, |g, v| {
        let mut drop = ChaCha8Rng::seed_from_u64(11);
        let rng_ref: Option<&mut dyn rand::RngCore> = (dropout > 0.0).then_some(&mut drop as &mut dyn rand::RngCore);
        model.casp_block(g, &v[..p], 0, v[p], &mut { rng_ref }).unwrap()
    })
}

pub fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst = (0.0, "");
    for (name, shapes, f) in primitives() {
        let inputs: Vec<Tensor> = shapes.iter().map(|s| random_tensor(s, &mut r)).collect();
        let e = fd_check(&inputs, f);
        if e > worst.0 || worst.1.is_empty() {
            worst = (e, name);
        }
    }
    let block = casp_block_error(0.0).max(casp_block_error(0.3));
    let secs = start.elapsed().as_secs_f64();
    let pass = worst.0 < 1e-4 && block < 1e-4 && secs < 60.0;
    Outcome::new(
        pass,
        format!(
            "worst primitive rel err {:.2e} ({}), CASP block rel err {block:.2e}, {secs:.1}s",
            worst.0, worst.1
        ),
    )
}

pub fn small_world_sequences(seed: u64, voyages: usize) -> Vec<NestedSequence> {
    super::synthetic_sequences(&WorldSpec {
        seed,
        vessels: (voyages / 10).max(1),
        voyages,
        ..WorldSpec::default()
    })
}

pub fn prefix_mismatches(model: &WayModel, seq: &NestedSequence) -> usize {
    let full = model.logits(seq).unwrap();
    let mut bad = 0;
    for n in 1..=seq.len() {
        let part = model.logits(&seq.prefix(n)).unwrap();
        let cols = full.shape()[1];
        if part.data() != &full.data()[..n * cols] {
            bad += 1;
        }
    }
    bad
}

pub fn c2_causality() -> Outcome {
    let seqs = small_world_sequences(21, 60);
    let model = WayModel::new(WayConfig::preset(Preset::Tiny, 20, 100), &mut rng(2)).unwrap();
    let picked: Vec<&NestedSequence> = seqs.iter().take(50).collect();
    let bad: usize = picked.iter().map(|s| prefix_mismatches(&model, s)).sum();
    let steps: usize = picked.iter().map(|s| s.len()).sum();
    Outcome::new(
        picked.len() == 50 && bad == 0,
        format!("{} trajectories, {steps} prefixes, {bad} differing", picked.len()),
    )
}

pub fn c3_encodings() -> Outcome {
    let d = 32;
    let tau = 2.0 * std::f64::consts::PI;
    let mut worst: f64 = 0.0;
    let origin = spatial_encode(&[GeoPoint { lon: 0.0, lat: 0.0 }], d).unwrap();
    for (k, v) in origin.data().iter().enumerate() {
        let expect = if k % 4 == 2 { 1.0 } else { 0.0 };
        worst = worst.max((v - expect).abs());
    }
    let mut r = rng(3);
    for _ in 0..200 {
        let lon = r.random_range(-180.0..180.0);
        let lat = r.random_range(-90.0..90.0);
        let base = spatial_encode(&[GeoPoint { lon, lat }], d).unwrap();
        for i in 0..d / 4 {
            let s = tau.powf(4.0 * i as f64 / (d * d) as f64);
            // shift of 2 pi s radians, in degrees
            let shifted = GeoPoint {
                lon: lon + 360.0 * s,
                lat,
            };
            // no wrapping, the encoding takes any real longitude
            let moved = spatial_encode(&[shifted], d).unwrap();
            for k in [4 * i, 4 * i + 2] {
                worst = worst.max((base.data()[k] - moved.data()[k]).abs());
            }
        }
    }
    let te0 = time_encode(&[0.0], d).unwrap();
    let te_exact = te0
        .data()
        .iter()
        .enumerate()
        .all(|(k, &v)| v == if k % 2 == 0 { 1.0 } else { 0.0 });
    let mut scalar_err: f64 = 0.0;
    for _ in 0..1000 {
        let lon = r.random_range(-180.0..180.0);
        let lat = r.random_range(-90.0..90.0);
        let dd = 4 * r.random_range(1..=32);
        let se = spatial_encode(&[GeoPoint { lon, lat }], dd).unwrap();
        for (a, b) in se.data().iter().zip(se_scalar(lon, lat, dd)) {
            scalar_err = scalar_err.max((a - b).abs());
        }
        let delta = r.random_range(0.0..60.0);
        let te = time_encode(&[delta], dd).unwrap();
        for (a, b) in te.data().iter().zip(te_scalar(delta, dd)) {
            scalar_err = scalar_err.max((a - b).abs());
        }
    }
    Outcome::new(
        worst <= 1e-9 && te_exact && scalar_err <= 1e-12,
        format!("SE pattern/periodicity max err {worst:.1e}, TE(0) exact {te_exact}, scalar max err {scalar_err:.1e}"),
    )
}

pub fn c4_oracles() -> Outcome {
    let graph = EditGraph::new(b"ABC", 7);
    let short: Vec<usize> = (0..graph.strings.len()).filter(|&i| graph.strings[i].len() <= 6).collect();
    let mut dl_bad = 0;
    let mut pairs = 0;
    for &a in &short {
        let dist = graph.distances(a);
        let sa = std::str::from_utf8(&graph.strings[a]).unwrap();
        for &b in &short {
            let sb = std::str::from_utf8(&graph.strings[b]).unwrap();
            pairs += 1;
            if dl_distance(sa, sb) != dist[b] {
                dl_bad += 1;
            }
        }
    }
    let mut r = rng(4);
    let mut db_bad = 0;
    for _ in 0..30 {
        let points = random_cloud(&mut r);
        let eps = r.random_range(0.1..0.6);
        let min_pts = r.random_range(2..7);
        let got = dbscan(&points, eps, min_pts).unwrap();
        if !same_partition(&got, &dbscan_oracle(&points, eps, min_pts)) {
            db_bad += 1;
        }
    }
    Outcome::new(
        dl_bad == 0 && db_bad == 0,
        format!("dl mismatches {dl_bad}/{pairs} pairs, dbscan mismatches {db_bad}/30 datasets"),
    )
}

/// A few Gaussian blobs plus uniform background points in 3-D.
pub fn random_cloud(r: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let mut points = Vec::new();
    for _ in 0..r.random_range(1..5) {
        let c: [f64; 3] = [r.random_range(-3.0..3.0), r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)];
        let spread = r.random_range(0.05..0.4);
        for _ in 0..r.random_range(5..40) {
            points.push([
                c[0] + spread * r.random_range(-1.0..1.0),
                c[1] + spread * r.random_range(-1.0..1.0),
                c[2] + spread * r.random_range(-1.0..1.0),
            ]);
        }
    }
    for _ in 0..r.random_range(0..30) {
        points.push([r.random_range(-4.0..4.0), r.random_range(-4.0..4.0), r.random_range(-4.0..4.0)]);
    }
    points
}

pub fn c5_gradient_dropout() -> Outcome {
    let lengths = [4, 8, 16];
    let ratios = gd_ratios(&lengths);
    let exact = ratios == vec![1.0, 0.75, 0.5];
    let mut r = rng(5);
    let draws = 10_000;
    let mut kept = [0usize; 3];
    for _ in 0..draws {
        let m = draw_mask(&lengths, &ratios, &mut r);
        for k in 0..3 {
            kept[k] += m.keep[k].iter().filter(|&&x| x).count();
        }
    }
    let fractions: Vec<f64> = (0..3).map(|k| kept[k] as f64 / (draws * lengths[k]) as f64).collect();
    let mc_ok = fractions.iter().zip(&ratios).all(|(f, d)| (f - d).abs() <= 0.02);
    let mut plain_ok = true;
    for _ in 0..100 {
        let losses: Vec<Vec<f64>> = (0..r.random_range(1..8))
            .map(|_| (0..r.random_range(1..20)).map(|_| r.random_range(0.0..5.0)).collect())
            .collect();
        let lens: Vec<usize> = losses.iter().map(Vec::len).collect();
        let flat: Vec<f64> = losses.iter().flatten().copied().collect();
        let plain = flat.iter().sum::<f64>() / flat.len() as f64;
        plain_ok &= masked_mean(&losses, &StepMask::all(&lens)).to_bits() == plain.to_bits();
    }
    Outcome::new(
        exact && mc_ok && plain_ok,
        format!("ratios {ratios:?}, kept fractions {fractions:.4?}, GD-off bit-exact {plain_ok}"),
    )
}

type Key = (String, i64, i64);

fn segment_key(s: &Segment) -> Key {
    let first = s.messages.first().unwrap().msg.timestamp;
    let last = s.messages.last().unwrap().msg.timestamp;
    (s.vessel_id.clone(), first, last)
}

fn truth_key(t: &VoyageTruth) -> Key {
    (t.vessel_id.clone(), t.first_timestamp, t.last_timestamp)
}

pub struct Recovery {
    pub truth: usize,
    pub segments: usize,
    pub exact: usize,
    pub teleports: usize,
    pub teleports_removed: usize,
    pub clean: usize,
    pub clean_kept: usize,
    pub labeled: usize,
    pub correct: usize,
}

/// Matches annotated-then-refined segments to the generator's truth by
/// vessel and first timestamp.
pub fn recovery(spec: &WorldSpec) -> Recovery {
    let data = generate(spec).unwrap();
    let registry = PortRegistry::new(data.world.ports.clone()).unwrap();
    let ann = annotate_all(data.messages, &registry, &AnnotateConfig::default());
    let refined = refine_all(&ann.segments, &RefineConfig::default());
    let truth: std::collections::BTreeMap<Key, &VoyageTruth> = data.truth.iter().map(|t| (truth_key(t), t)).collect();
    let by_start: std::collections::BTreeMap<(String, i64), &VoyageTruth> =
        data.truth.iter().map(|t| ((t.vessel_id.clone(), t.first_timestamp), t)).collect();
    let exact = ann
        .segments
        .iter()
        .filter(|s| {
            truth
                .get(&segment_key(s))
                .is_some_and(|t| (t.departure, t.destination) == (s.departure, s.destination) && t.messages == s.messages.len())
        })
        .count();
    let mut out = Recovery {
        truth: data.truth.len(),
        segments: ann.segments.len(),
        exact,
        teleports: data.truth.iter().map(|t| t.teleports.len()).sum(),
        teleports_removed: 0,
        clean: data.truth.iter().map(|t| t.messages - t.teleports.len() - t.dropped.len()).sum(),
        clean_kept: 0,
        labeled: refined.segments.len(),
        correct: 0,
    };
    for s in &refined.segments {
        let k = segment_key(s);
        let Some(t) = by_start.get(&(k.0, k.1)) else { continue };
        if (s.departure, s.destination) == (t.departure, t.destination) {
            out.correct += 1;
        }
        let kept: std::collections::BTreeSet<i64> = s.raw_messages().map(|m| m.timestamp).collect();
        let tele_kept = t.teleports.iter().filter(|ts| kept.contains(ts)).count();
        out.teleports_removed += t.teleports.len() - tele_kept;
        out.clean_kept += kept.len() - tele_kept;
    }
    out
}

pub fn pipeline_spec(noise: NoiseProfile) -> WorldSpec {
    WorldSpec {
        seed: 6,
        ports: 20,
        vessels: 50,
        voyages: 500,
        noise,
        ..WorldSpec::default()
    }
}

pub fn c6_pipeline() -> Outcome {
    let start = Instant::now();
    let clean = recovery(&pipeline_spec(NoiseProfile::none()));
    let clean_ok = clean.exact == clean.truth && clean.segments == clean.truth;
    let noisy = recovery(&pipeline_spec(NoiseProfile::default()));
    let tele = noisy.teleports_removed as f64 / noisy.teleports.max(1) as f64;
    let kept = noisy.clean_kept as f64 / noisy.clean as f64;
    let labels = noisy.correct as f64 / noisy.truth as f64;
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        clean_ok && noisy.teleports > 0 && tele >= 0.95 && kept >= 0.99 && labels >= 0.98 && secs < 300.0,
        format!(
            "zero noise {}/{} exact; noisy: teleports removed {:.4}, clean kept {:.4}, correctly labeled {:.4}, {secs:.1}s",
            clean.exact, clean.truth, tele, kept, labels
        ),
    )
}

/// Learning-run settings used by the learning and GD-direction checks.
pub const LEARNING_TRAJECTORIES: usize = 2000;
pub const LEARNING_EPOCHS: usize = 30;
pub const LEARNING_LR: f64 = 1e-3;

pub struct LearningRun {
    pub accuracy: f64,
    pub q1: f64,
    pub q4: f64,
    pub baseline: f64,
    pub seconds: f64,
}

pub fn split_sets(seqs: &[NestedSequence]) -> [Vec<&NestedSequence>; 3] {
    [Split::Train, Split::Val, Split::Test].map(|sp| seqs.iter().filter(|s| s.split == sp).collect())
}

pub fn learning_run(seqs: &[NestedSequence], seed: u64, gd: bool, epochs: usize) -> LearningRun {
    let start = Instant::now();
    let [tr, va, te] = split_sets(seqs);
    let model = WayModel::new(WayConfig::preset(Preset::Tiny, 20, 100), &mut rng(seed)).unwrap();
    let config = TrainConfig {
        epochs,
        lr: LEARNING_LR,
        gd_enabled: gd,
        seed,
        ..TrainConfig::default()
    };
    let out = train(model, &tr, &va, &config, |_, _| Ok(())).unwrap();
    let (_, records) = evaluate(&out.best, &te).unwrap();
    let baseline = DepartureBaseline::fit(tr.iter().map(|s| (s.departure, s.label))).unwrap();
    LearningRun {
        accuracy: overall_accuracy(&records).unwrap(),
        q1: quartile_accuracy(&records, 1).unwrap_or(0.0),
        q4: quartile_accuracy(&records, 4).unwrap_or(0.0),
        baseline: overall_accuracy(&baseline.records(&te)).unwrap(),
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn learning_spec(seed: u64, trajectories: usize) -> WorldSpec {
    WorldSpec {
        seed,
        ports: 20,
        vessels: trajectories / 20,
        voyages: trajectories,
        ..WorldSpec::default()
    }
}

pub fn c7_learning() -> Outcome {
    let start = Instant::now();
    let seqs = super::synthetic_sequences(&learning_spec(7, LEARNING_TRAJECTORIES));
    let run = learning_run(&seqs, 7, true, LEARNING_EPOCHS);
    let secs = start.elapsed().as_secs_f64();
    let margin = run.accuracy - run.baseline;
    Outcome::new(
        margin >= 0.20 && run.q4 >= run.q1 && secs < 1800.0,
        format!(
            "{} trajectories: test accuracy {:.4} vs baseline {:.4} (+{:.1} pp), Q1 {:.4}, Q4 {:.4}, {secs:.0}s",
            seqs.len(),
            run.accuracy,
            run.baseline,
            100.0 * margin,
            run.q1,
            run.q4
        ),
    )
}

/// Trajectories and epochs per GD-direction run; three seeds with and
/// without GD make six runs.
pub const GD_TRAJECTORIES: usize = 1000;
pub const GD_EPOCHS: usize = 15;

pub fn c8_gd_direction() -> Outcome {
    let mut with = Vec::new();
    let mut without = Vec::new();
    for seed in [81, 82, 83] {
        let seqs = super::synthetic_sequences(&learning_spec(seed, GD_TRAJECTORIES));
        with.push(learning_run(&seqs, seed, true, GD_EPOCHS).accuracy);
        without.push(learning_run(&seqs, seed, false, GD_EPOCHS).accuracy);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (a, b) = (mean(&with), mean(&without));
    Outcome::new(
        a >= b - 0.005,
        format!("mean accuracy with GD {a:.4} {with:.4?}, without {b:.4} {without:.4?}"),
    )
}

/// Final-step accuracy over `seqs`.
pub fn final_step_accuracy(model: &WayModel, seqs: &[&NestedSequence]) -> f64 {
    let hits = seqs
        .iter()
        .filter(|s| predict(model, s).unwrap().predictions.last() == Some(&s.label))
        .count();
    hits as f64 / seqs.len() as f64
}

pub fn c9_overfit() -> Outcome {
    let seqs = small_world_sequences(9, 40);
    let mut picked: Vec<&NestedSequence> = Vec::new();
    // eight trajectories with distinct labels where possible
    for s in &seqs {
        if picked.len() < 8 && !picked.iter().any(|p| p.label == s.label) {
            picked.push(s);
        }
    }
    for s in &seqs {
        if picked.len() < 8 && !picked.iter().any(|p| p.id == s.id) {
            picked.push(s);
        }
    }
    let model = WayModel::new(WayConfig::preset(Preset::Tiny, 20, 100), &mut rng(9)).unwrap();
    let config = TrainConfig {
        batch_size: 8,
        epochs: 200,
        lr: 1e-3,
        gd_enabled: false,
        seed: 9,
    };
    let mut first_perfect = None;
    let out = train(model, &picked, &picked, &config, |log, best| {
        if let Some(m) = best {
            if first_perfect.is_none() && final_step_accuracy(m, &picked) == 1.0 {
                first_perfect = Some(log.epoch);
            }
        }
        Ok(())
    })
    .unwrap();
    let acc = final_step_accuracy(&out.best, &picked);
    Outcome::new(
        acc == 1.0,
        format!(
            "{} trajectories, final-step accuracy {acc:.3}, first perfect at epoch {first_perfect:?}",
            picked.len()
        ),
    )
}

fn rec(label: usize, preds: &[usize]) -> PredictionRecord {
    PredictionRecord {
        id: String::new(),
        label,
        predictions: preds.to_vec(),
    }
}

pub fn c10_metrics() -> Outcome {
    let mut ok = true;
    ok &= overall_accuracy(&[rec(1, &[1, 1]), rec(1, &[0, 1, 1, 1])]).unwrap() == 5.0 / 6.0;
    ok &= overall_accuracy(&[rec(2, &[0, 1])]).unwrap() == 0.0;
    let (f, table) = macro_f1(&[rec(0, &[0, 0]), rec(1, &[0, 1])]);
    ok &= table[0].f1 == 0.8 && table[1].f1 == 1.0 / 1.5 && (f - (0.8 + 1.0 / 1.5) / 2.0).abs() < 1e-15;
    ok &= macro_f1(&[rec(0, &[0, 0, 0])]).0 == 1.0;
    ok &= macro_f1(&[rec(0, &[1, 1])]).0 == 0.0;
    let hand = ok;

    let mut r = rng(10);
    let mut partition_ok = true;
    for _ in 0..100 {
        let records: Vec<PredictionRecord> = (0..r.random_range(1..20))
            .map(|_| {
                let label = r.random_range(0..5);
                let n = r.random_range(1..40);
                rec(label, &(0..n).map(|_| r.random_range(0..5)).collect::<Vec<_>>())
            })
            .collect();
        let (mut c, mut t) = (0, 0);
        for q in 1..=4 {
            let (cq, tq) = quartile_counts(&records, q);
            c += cq;
            t += tq;
        }
        let total: usize = records.iter().map(|x| x.predictions.len()).sum();
        partition_ok &= t == total && c as f64 / t as f64 == overall_accuracy(&records).unwrap();
    }
    Outcome::new(
        hand && partition_ok,
        format!("hand-computed examples {hand}, quartile partition reconstructs overall accuracy {partition_ok}"),
    )
}
