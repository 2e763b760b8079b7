//! Anomaly scoring and ranking quality.
//!
//! A test image's anomaly score is the squared reconstruction error summed
//! over all pixels and channels. Scores are summarized by AUROC in the
//! Mann-Whitney formulation: the probability that a random anomalous
//! sample outranks a random normal one, ties counted half.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use crate::types::{Image, Label, RealMatrix};
use crate::{Error, Result};

/// One scored test sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub identifier: String,
    pub score: f64,
    pub label: Label,
}

/// Scored samples plus the resulting AUROC.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub samples: Vec<ScoredSample>,
    pub auroc: f64,
    /// (normal count, anomalous count)
    pub counts: (usize, usize),
}

impl EvalReport {
    pub fn from_samples(samples: Vec<ScoredSample>) -> Result<EvalReport> {
        let auroc = auroc(&samples)?;
        let normal = samples.iter().filter(|s| s.label == Label::Normal).count();
        let anomalous = samples.len() - normal;
        Ok(EvalReport {
            samples,
            auroc,
            counts: (normal, anomalous),
        })
    }

    /// Comma-separated table (identifier, score, label) plus a summary line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("identifier,score,label\n");
        for s in &self.samples {
            out.push_str(&format!(
                "{},{:.12e},{}\n",
                s.identifier,
                s.score,
                s.label.as_str()
            ));
        }
        out.push_str(&format!(
            "# auroc = {:.6} ({} normal, {} anomalous)\n",
            self.auroc, self.counts.0, self.counts.1
        ));
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        file.write_all(self.to_csv().as_bytes())
            .map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })
    }
}

/// Squared reconstruction error summed over pixels and channels.
///
/// Zero exactly when the reconstruction equals the input.
pub fn anomaly_score(f: &Image, f_hat: &Image) -> Result<f64> {
    if !f.same_shape(f_hat) {
        return Err(Error::shape(f.shape_string(), f_hat.shape_string()));
    }
    let mut total = 0.0;
    for (a, b) in f.planes().iter().zip(f_hat.planes()) {
        total += a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>();
    }
    Ok(total)
}

/// Per-pixel squared difference, averaged over channels.
///
/// The raw map satisfies `sum(map) * channels == anomaly_score`; use
/// [`rescale_for_display`] for a unit-range copy.
pub fn residual_map(f: &Image, f_hat: &Image) -> Result<RealMatrix> {
    if !f.same_shape(f_hat) {
        return Err(Error::shape(f.shape_string(), f_hat.shape_string()));
    }
    let mut map = RealMatrix::zeros((f.height(), f.width()));
    for (a, b) in f.planes().iter().zip(f_hat.planes()) {
        map = map + (a - b).mapv(|d| d * d);
    }
    Ok(map / f.channels() as f64)
}

/// Affine rescale of a plane to `[0, 1]`; a constant plane maps to zeros.
pub fn rescale_for_display(map: &RealMatrix) -> RealMatrix {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in map.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi > lo {
        map.mapv(|v| (v - lo) / (hi - lo))
    } else {
        RealMatrix::zeros(map.dim())
    }
}

/// AUROC with half-credit ties, computed with exact integer counting.
///
/// Requires at least one sample of each class.
pub fn auroc(samples: &[ScoredSample]) -> Result<f64> {
    let n_anom = samples
        .iter()
        .filter(|s| s.label == Label::Anomalous)
        .count() as u64;
    let n_norm = samples.len() as u64 - n_anom;
    if n_anom == 0 || n_norm == 0 {
        return Err(Error::InvalidArgument(format!(
            "auroc needs both classes, got {n_norm} normal / {n_anom} anomalous"
        )));
    }
    if let Some(s) = samples.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite score for sample '{}'",
            s.identifier
        )));
    }

    let mut sorted: Vec<(f64, Label)> = samples.iter().map(|s| (s.score, s.label)).collect();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));

    // Sweep groups of tied scores; count (anomalous, normal) pairs where
    // the anomalous score is strictly greater (a win) or equal (a tie).
    let mut wins: u64 = 0;
    let mut ties: u64 = 0;
    let mut normals_below: u64 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let mut group_norm = 0u64;
        let mut group_anom = 0u64;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            match sorted[j].1 {
                Label::Normal => group_norm += 1,
                Label::Anomalous => group_anom += 1,
            }
            j += 1;
        }
        wins += group_anom * normals_below;
        ties += group_anom * group_norm;
        normals_below += group_norm;
        i = j;
    }

    Ok((2 * wins + ties) as f64 / (2 * n_anom * n_norm) as f64)
}
