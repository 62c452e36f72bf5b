//! Stage drivers over whole datasets: refinement of every segment and the
//! split-aware nested-sequence build.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotate::Segment;
use crate::error::{Error, Result};
use crate::geo::GridSpec;
use crate::refine::{refine_segment, RefineConfig, RefineFailure};
use crate::represent::{build_sequence, reorganize, NestedSequence, Split, Standardizer, SAMPLE_POISSON_MEAN};
use crate::train::stratified_split;

/// A segment dropped during refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineRejection {
    pub vessel_id: String,
    pub first_timestamp: i64,
    pub reason: RefineFailure,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RefineOutcome {
    pub segments: Vec<Segment>,
    pub rejections: Vec<RefineRejection>,
    /// Messages removed across all surviving segments.
    pub removed: usize,
}

pub fn refine_all(segments: &[Segment], config: &RefineConfig) -> RefineOutcome {
    let results: Vec<_> = segments.par_iter().map(|s| refine_segment(s, config)).collect();
    let mut out = RefineOutcome::default();
    for (seg, r) in segments.iter().zip(results) {
        match r {
            Ok(refined) => {
                out.removed += refined.removed.len();
                out.segments.push(refined.segment);
            }
            Err(reason) => out.rejections.push(RefineRejection {
                vessel_id: seg.vessel_id.clone(),
                first_timestamp: seg.messages.first().map_or(0, |m| m.msg.timestamp),
                reason,
            }),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepresentConfig {
    pub grid: GridSpec,
    /// Mean of the Poisson draw for messages kept per element.
    pub sample_mean: f64,
    pub seed: u64,
}

impl Default for RepresentConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            sample_mean: SAMPLE_POISSON_MEAN,
            seed: 0,
        }
    }
}

impl RepresentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_mean.is_finite() && self.sample_mean > 0.0) {
            return Err(Error::Config(format!("sample mean {} must be positive", self.sample_mean)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Represented {
    pub sequences: Vec<NestedSequence>,
    pub standardizer: Standardizer,
}

/// Splits segments per destination label, fits the standardizer on the
/// training split only and builds every sequence. Sequence `i` samples with
/// its own random stream, so output is independent of thread count.
pub fn represent_all(segments: &[Segment], config: &RepresentConfig) -> Result<Represented> {
    config.validate()?;
    let seed = config.seed;
    let reorgs = segments
        .iter()
        .map(|s| reorganize(s, &config.grid))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = reorgs.iter().map(|r| r.label).collect();
    let splits = stratified_split(&labels, seed);
    let standardizer = Standardizer::fit(
        segments
            .iter()
            .zip(&splits)
            .filter(|(_, &s)| s == Split::Train)
            .flat_map(|(seg, _)| seg.raw_messages()),
    );
    let sequences = reorgs
        .par_iter()
        .zip(splits.par_iter())
        .enumerate()
        .map(|(i, (r, &split))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            build_sequence(r, &standardizer, split, config.sample_mean, &mut rng)
        })
        .collect();
    Ok(Represented { sequences, standardizer })
}
