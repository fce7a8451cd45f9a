//! Prior training samples cached as JSON lines: `{"theta": ..., "d": ..., "provenance": ...}`.

use std::path::Path;

use orpose_core::prior::{PriorSample, Provenance};

use crate::error::{Error, Result};
use crate::fsutil;

pub fn write_samples(path: &Path, samples: &[PriorSample]) -> Result<()> {
    fsutil::write_jsonl(path, samples)
}

pub fn read_samples(path: &Path) -> Result<Vec<PriorSample>> {
    let rows: Vec<PriorSample> = fsutil::read_jsonl(path)?;
    for (i, s) in rows.iter().enumerate() {
        let ok = s.d.is_finite() && s.d >= 0.0 && (s.d == 0.0) == (s.provenance == Provenance::GroundTruth);
        if !ok {
            return Err(Error::format(path, format!("line {}: target distance {} does not fit provenance {:?}", i + 1, s.d, s.provenance)));
        }
    }
    Ok(rows)
}

/// Counts per provenance, in declaration order.
pub fn provenance_counts(samples: &[PriorSample]) -> [(Provenance, usize); 3] {
    let count = |p| samples.iter().filter(|s| s.provenance == p).count();
    [Provenance::GroundTruth, Provenance::OccludedPrediction, Provenance::Vonmises].map(|p| (p, count(p)))
}
