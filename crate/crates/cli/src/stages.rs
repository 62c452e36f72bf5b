//! One function per subcommand. Stages talk to each other only through the
//! files they read and write.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use way_core::annotate::{annotate_all, PortRecord, PortRegistry, Segment, SEGMENT_SCHEMA_VERSION};
use way_core::eval::{overall_accuracy, DepartureBaseline, MetricsReport};
use way_core::io::{read_ais_csv, read_jsonl, read_ports, write_ais_csv, write_jsonl, write_ports};
use way_core::pipeline::{refine_all, represent_all};
use way_core::represent::{NestedSequence, Split, Standardizer, SEQUENCE_SCHEMA_VERSION};
use way_core::synth::generate;
use way_core::train::{evaluate, train, EpochLog};
use way_core::way::{Checkpoint, WayModel};
use way_core::Error;

use crate::config::{RunConfig, UsageError};
use crate::manifest::Manifest;

fn prepare_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn finish(
    stage: &'static str,
    cfg: &RunConfig,
    sections: &[&str],
    out: &Path,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> anyhow::Result<()> {
    Manifest::new(stage, cfg.seed()?, cfg.section(sections), inputs, outputs)?.write(out)?;
    Ok(())
}

fn read_standardizer(path: &Path) -> anyhow::Result<Standardizer> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| {
        Error::Parse {
            file: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        }
        .into()
    })
}

fn read_sequences(path: &Path) -> anyhow::Result<Vec<NestedSequence>> {
    Ok(read_jsonl(path, Some(SEQUENCE_SCHEMA_VERSION))?)
}

fn read_segments(path: &Path) -> anyhow::Result<Vec<Segment>> {
    Ok(read_jsonl(path, Some(SEGMENT_SCHEMA_VERSION))?)
}

fn of_split(seqs: &[NestedSequence], split: Split) -> Vec<&NestedSequence> {
    seqs.iter().filter(|s| s.split == split).collect()
}

pub fn synth(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let spec = cfg.world_spec()?;
    prepare_dir(out)?;
    let data = generate(&spec)?;
    let ais = out.join("ais.csv");
    let ports = out.join("ports.json");
    let truth = out.join("truth.jsonl");
    write_ais_csv(std::io::BufWriter::new(std::fs::File::create(&ais)?), &data.messages)?;
    write_ports(&ports, &data.world.ports)?;
    write_jsonl(&truth, &data.truth)?;
    eprintln!(
        "synth: {} ports, {} voyages, {} messages",
        data.world.ports.len(),
        data.truth.len(),
        data.messages.len()
    );
    finish("synth", cfg, &["synth."], out, &[], &[ais, ports, truth])
}

pub fn annotate(cfg: &RunConfig, ais: &Path, ports: &Path, out: &Path) -> anyhow::Result<()> {
    let config = cfg.annotate()?;
    let alpha = cfg.boundary_alpha()?;
    let records = read_ports(ports)?
        .into_iter()
        .map(|p| PortRecord::from_polygon(p.port_id, &p.name, &p.locode, p.polygon, alpha))
        .collect::<Result<Vec<_>, _>>()?;
    let registry = PortRegistry::new(records)?;
    let msgs = read_ais_csv(ais)?;
    prepare_dir(out)?;
    let ann = annotate_all(msgs, &registry, &config);
    let segments = out.join("segments.jsonl");
    let rejections = out.join("rejections.jsonl");
    write_jsonl(&segments, &ann.segments)?;
    write_jsonl(&rejections, &ann.rejections)?;
    eprintln!("annotate: {} segments, {} rejected", ann.segments.len(), ann.rejections.len());
    finish(
        "annotate",
        cfg,
        &["annotate.", "ports."],
        out,
        &[ais.to_path_buf(), ports.to_path_buf()],
        &[segments, rejections],
    )
}

pub fn refine(cfg: &RunConfig, segments: &Path, out: &Path) -> anyhow::Result<()> {
    let config = cfg.refine()?;
    let input = read_segments(segments)?;
    prepare_dir(out)?;
    let refined = refine_all(&input, &config);
    let kept = out.join("refined.jsonl");
    let rejections = out.join("refine_rejections.jsonl");
    write_jsonl(&kept, &refined.segments)?;
    write_jsonl(&rejections, &refined.rejections)?;
    eprintln!(
        "refine: {} segments kept, {} dropped, {} messages removed",
        refined.segments.len(),
        refined.rejections.len(),
        refined.removed
    );
    finish("refine", cfg, &["refine."], out, &[segments.to_path_buf()], &[kept, rejections])
}

pub fn represent(cfg: &RunConfig, segments: &Path, out: &Path) -> anyhow::Result<()> {
    let config = cfg.represent()?;
    let input = read_segments(segments)?;
    prepare_dir(out)?;
    let rep = represent_all(&input, &config)?;
    let sequences = out.join("sequences.jsonl");
    let standardizer = out.join("standardizer.json");
    write_jsonl(&sequences, &rep.sequences)?;
    std::fs::write(&standardizer, serde_json::to_string_pretty(&rep.standardizer)? + "\n")?;
    let count = |s| rep.sequences.iter().filter(|q| q.split == s).count();
    eprintln!(
        "represent: {} sequences (train {}, val {}, test {})",
        rep.sequences.len(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test)
    );
    finish(
        "represent",
        cfg,
        &["represent."],
        out,
        &[segments.to_path_buf()],
        &[sequences, standardizer],
    )
}

pub fn train_model(cfg: &RunConfig, sequences: &Path, standardizer: &Path, out: &Path) -> anyhow::Result<()> {
    let train_config = cfg.train()?;
    let grid = cfg.represent()?.grid;
    let seqs = read_sequences(sequences)?;
    let std = read_standardizer(standardizer)?;
    let data_ports = seqs.iter().map(|s| s.departure.max(s.label) + 1).max().unwrap_or(0);
    let model_config = cfg.model(data_ports)?;
    prepare_dir(out)?;
    let model = WayModel::new(model_config, &mut ChaCha8Rng::seed_from_u64(cfg.seed()?))?;
    let (train_set, val_set) = (of_split(&seqs, Split::Train), of_split(&seqs, Split::Val));
    eprintln!(
        "train: {} parameters, {} train / {} val sequences",
        model.parameter_count(),
        train_set.len(),
        val_set.len()
    );
    let outcome = train(model, &train_set, &val_set, &train_config, |log: &EpochLog, _| {
        let val = log.val_loss.map_or("-".to_string(), |v| format!("{v:.4}"));
        eprintln!("epoch {:>3}: train loss {:.4}, val loss {val}", log.epoch, log.train_loss);
        Ok(())
    })?;
    let model_path = out.join("model.json");
    let log_path = out.join("train_log.jsonl");
    Checkpoint::new(&outcome.best, grid.cell_size(), std).save(&model_path)?;
    write_jsonl(&log_path, &outcome.log)?;
    eprintln!("train: best epoch {}", outcome.best_epoch);
    finish(
        "train",
        cfg,
        &["model.", "train.", "represent.grid_cell"],
        out,
        &[sequences.to_path_buf(), standardizer.to_path_buf()],
        &[model_path, log_path],
    )
}

pub fn eval(cfg: &RunConfig, model: &Path, sequences: &Path, out: &Path) -> anyhow::Result<()> {
    let net = Checkpoint::load(model)?.model()?;
    let seqs = read_sequences(sequences)?;
    let test = of_split(&seqs, Split::Test);
    if test.is_empty() {
        return Err(Error::Empty("test split").into());
    }
    prepare_dir(out)?;
    let (_, records) = evaluate(&net, &test)?;
    let baseline = DepartureBaseline::fit(of_split(&seqs, Split::Train).iter().map(|s| (s.departure, s.label)))?;
    let baseline_accuracy = overall_accuracy(&baseline.records(&test))?;
    let report = MetricsReport::new(&records, Some(cfg.seed()?), Some(baseline_accuracy))?;
    let metrics = out.join("metrics.json");
    let quartiles = out.join("quartiles.csv");
    let predictions = out.join("predictions.jsonl");
    std::fs::write(&metrics, serde_json::to_string_pretty(&report)? + "\n")?;
    std::fs::write(&quartiles, report.quartile_csv(&records))?;
    write_jsonl(&predictions, &records)?;
    eprintln!(
        "eval: accuracy {:.4}, macro F1 {:.4}, baseline {:.4}",
        report.overall_accuracy, report.macro_f1, baseline_accuracy
    );
    finish(
        "eval",
        cfg,
        &[],
        out,
        &[model.to_path_buf(), sequences.to_path_buf()],
        &[metrics, quartiles, predictions],
    )
}

/// Row-wise softmax of one logit row.
fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

pub struct InferRequest<'a> {
    pub model: &'a Path,
    pub sequences: &'a Path,
    pub ports: Option<&'a Path>,
    pub id: Option<&'a str>,
    pub prefix: Option<usize>,
}

pub fn infer(cfg: &RunConfig, req: &InferRequest<'_>, out: &mut impl std::io::Write) -> anyhow::Result<()> {
    let top_k: usize = cfg.get("infer.top_k")?;
    if top_k == 0 {
        bail!(UsageError("infer.top_k must be at least 1".into()));
    }
    let net = Checkpoint::load(req.model)?.model()?;
    let seqs = read_sequences(req.sequences)?;
    let names: Vec<String> = match req.ports {
        Some(p) => read_ports(p)?.into_iter().map(|r| r.name).collect(),
        None => Vec::new(),
    };
    let seq = match req.id {
        Some(id) => seqs
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| UsageError(format!("no sequence with id '{id}'")))?,
        None => seqs
            .iter()
            .find(|s| s.split == Split::Test)
            .or_else(|| seqs.first())
            .ok_or(Error::Empty("sequence file"))?,
    };
    let seq = match req.prefix {
        Some(0) => bail!(UsageError("prefix must be at least 1".into())),
        Some(n) => seq.prefix(n),
        None => seq.clone(),
    };
    let logits = net.logits(&seq)?;
    writeln!(
        out,
        "{}: departure {}, {} step(s), true destination {}",
        seq.id,
        seq.departure,
        seq.len(),
        seq.label
    )?;
    for (t, element) in seq.elements.iter().enumerate() {
        let probs = softmax(logits.row(t));
        let mut order: Vec<usize> = (0..probs.len()).collect();
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        let ranked: Vec<String> = order
            .iter()
            .take(top_k)
            .map(|&p| match names.get(p) {
                Some(name) => format!("{p} {name} {:.4}", probs[p]),
                None => format!("{p} {:.4}", probs[p]),
            })
            .collect();
        writeln!(
            out,
            "step {:>3} ({:.2}, {:.2}): {}",
            t + 1,
            element.cell.center.lon,
            element.cell.center.lat,
            ranked.join(" | ")
        )?;
    }
    Ok(())
}
