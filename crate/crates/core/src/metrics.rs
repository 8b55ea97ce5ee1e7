//! Structure-prediction metrics: C-RMSD, distance errors and ADwT.

use crate::error::{Error, Result};
use crate::geom::{kabsch_align, rmsd, GeometricState};

/// Number of ADwT thresholds, `β_k = (10 + k)/1000` Å for `k = 0..=490`.
pub const ADWT_THRESHOLDS: usize = 491;

pub fn adwt_threshold(k: usize) -> f64 {
    (10 + k) as f64 / 1000.0
}

fn check_pair(pred: &GeometricState, reference: &GeometricState) -> Result<()> {
    if pred.n_atoms() != reference.n_atoms() || pred.features != reference.features {
        return Err(Error::Shape(format!(
            "prediction has {} atoms, reference {} (or features differ)",
            pred.n_atoms(),
            reference.n_atoms()
        )));
    }
    Ok(())
}

/// RMSD after optimal rigid superposition of `pred` onto `reference`.
pub fn c_rmsd(pred: &GeometricState, reference: &GeometricState) -> Result<f64> {
    let (aligned, _) = kabsch_align(pred, reference)?;
    Ok(rmsd(&aligned.coords, &reference.coords))
}

/// Distances of all pairs `i < j` in lexicographic order.
pub fn pairwise_distances(state: &GeometricState) -> Result<Vec<f64>> {
    let n = state.n_atoms();
    if n < 2 {
        return Err(Error::Input(format!("pairwise distances need two atoms, got {n}")));
    }
    let c = &state.coords;
    Ok((0..n).flat_map(|i| (i + 1..n).map(move |j| (c[i] - c[j]).norm())).collect())
}

/// Mean absolute error between two distance lists.
pub fn distance_mae(pred: &[f64], reference: &[f64]) -> Result<f64> {
    check_lists(pred, reference)?;
    Ok(pred.iter().zip(reference).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64)
}

/// Root mean square error between two distance lists.
pub fn distance_rmse(pred: &[f64], reference: &[f64]) -> Result<f64> {
    check_lists(pred, reference)?;
    Ok((pred.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / pred.len() as f64).sqrt())
}

fn check_lists(pred: &[f64], reference: &[f64]) -> Result<()> {
    if pred.is_empty() || pred.len() != reference.len() {
        return Err(Error::Shape(format!("distance lists of length {} and {}", pred.len(), reference.len())));
    }
    Ok(())
}

pub fn d_mae(pred: &GeometricState, reference: &GeometricState) -> Result<f64> {
    check_pair(pred, reference)?;
    distance_mae(&pairwise_distances(pred)?, &pairwise_distances(reference)?)
}

pub fn d_rmse(pred: &GeometricState, reference: &GeometricState) -> Result<f64> {
    check_pair(pred, reference)?;
    distance_rmse(&pairwise_distances(pred)?, &pairwise_distances(reference)?)
}

/// Mean per-atom displacement, optionally after rigid alignment.
pub fn position_mae(pred: &GeometricState, reference: &GeometricState, aligned: bool) -> Result<f64> {
    check_pair(pred, reference)?;
    let moved;
    let coords = if aligned {
        moved = kabsch_align(pred, reference)?.0;
        &moved.coords
    } else {
        &pred.coords
    };
    Ok(coords.iter().zip(&reference.coords).map(|(a, b)| (a - b).norm()).sum::<f64>() / coords.len() as f64)
}

/// Percentage of structures with position MAE strictly below each threshold,
/// averaged over the threshold grid.
pub fn adwt(preds: &[GeometricState], refs: &[GeometricState], aligned: bool) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Input("ADwT needs at least one structure".into()));
    }
    if preds.len() != refs.len() {
        return Err(Error::Shape(format!("{} predictions for {} references", preds.len(), refs.len())));
    }
    let maes = preds.iter().zip(refs).map(|(p, r)| position_mae(p, r, aligned)).collect::<Result<Vec<_>>>()?;
    // Integer pass counts keep the sum exact.
    let passes: usize = (0..ADWT_THRESHOLDS)
        .map(|k| {
            let beta = adwt_threshold(k);
            maes.iter().filter(|&&m| m < beta).count()
        })
        .sum();
    Ok(passes as f64 * 100.0 / (ADWT_THRESHOLDS * maes.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub c_rmsd: f64,
    pub d_mae: f64,
    pub d_rmse: f64,
    pub adwt_percent: f64,
}

impl MetricReport {
    /// Per-structure metrics averaged over the set, plus ADwT over the set.
    pub fn evaluate(preds: &[GeometricState], refs: &[GeometricState], aligned: bool) -> Result<Self> {
        let adwt_percent = adwt(preds, refs, aligned)?;
        let n = preds.len() as f64;
        let (mut c, mut mae, mut rmse) = (0.0, 0.0, 0.0);
        for (p, r) in preds.iter().zip(refs) {
            c += c_rmsd(p, r)?;
            if p.n_atoms() >= 2 {
                mae += d_mae(p, r)?;
                rmse += d_rmse(p, r)?;
            }
        }
        Ok(Self { c_rmsd: c / n, d_mae: mae / n, d_rmse: rmse / n, adwt_percent })
    }

    /// Key and value pairs in a fixed order.
    pub fn entries(&self) -> [(&'static str, f64); 4] {
        [
            ("c_rmsd", self.c_rmsd),
            ("d_mae", self.d_mae),
            ("d_rmse", self.d_rmse),
            ("adwt_percent", self.adwt_percent),
        ]
    }
}
