use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::density::{distance, DistanceKind, Family};
use super::row_major;
use crate::error::{Error, Result};

/// Pairwise distance used by the median heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    SquaredL2,
    L1,
}

impl Metric {
    /// The metric each family's bandwidth is measured in.
    pub fn for_family(family: Family) -> Metric {
        match family {
            Family::CauchyProduct => Metric::L1,
            _ => Metric::SquaredL2,
        }
    }
}

/// Median-heuristic bandwidth.
///
/// `SquaredL2` returns γ with γ² equal to the lower median of ‖Xᵢ−Xⱼ‖₂² over
/// i < j; `L1` returns the lower median of ‖Xᵢ−Xⱼ‖₁. If more than half of the
/// pairs coincide (heavy duplication) the median of the nonzero distances is
/// used instead so that the bandwidth stays positive.
pub fn median_heuristic(x: &DMatrix<f64>, metric: Metric) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InsufficientData(format!("median heuristic needs at least 2 rows, got {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariates"));
    }
    let d = x.ncols();
    let rows = row_major(x);
    let kind = match metric {
        Metric::SquaredL2 => DistanceKind::SquaredL2,
        Metric::L1 => DistanceKind::L1,
    };
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let xi = &rows[i * d..(i + 1) * d];
        for j in (i + 1)..n {
            dists.push(distance(kind, xi, &rows[j * d..(j + 1) * d]));
        }
    }
    let mut med = lower_median(&mut dists);
    if med <= 0.0 {
        let mut positive: Vec<f64> = dists.into_iter().filter(|v| *v > 0.0).collect();
        if positive.is_empty() {
            return Err(Error::DegenerateBandwidth);
        }
        med = lower_median(&mut positive);
    }
    Ok(match metric {
        Metric::SquaredL2 => med.sqrt(),
        Metric::L1 => med,
    })
}

/// [`median_heuristic`] for the sample in which row i of `x` appears
/// `counts[i]` times, without materializing the duplicates.
pub fn median_heuristic_counts(x: &DMatrix<f64>, counts: &[usize], metric: Metric) -> Result<f64> {
    let n = x.nrows();
    if counts.len() != n {
        return Err(Error::Shape(format!("{} counts for {n} rows", counts.len())));
    }
    let total: usize = counts.iter().sum();
    if total < 2 {
        return Err(Error::InsufficientData(format!("median heuristic needs at least 2 rows, got {total}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariates"));
    }
    let d = x.ncols();
    let rows = row_major(x);
    let kind = match metric {
        Metric::SquaredL2 => DistanceKind::SquaredL2,
        Metric::L1 => DistanceKind::L1,
    };
    let zero_pairs: u64 = counts.iter().map(|&c| (c as u64) * (c as u64).saturating_sub(1) / 2).sum();
    let mut pairs: Vec<(f64, u64)> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        if counts[i] == 0 {
            continue;
        }
        let xi = &rows[i * d..(i + 1) * d];
        for j in (i + 1)..n {
            if counts[j] > 0 {
                pairs.push((distance(kind, xi, &rows[j * d..(j + 1) * d]), (counts[i] * counts[j]) as u64));
            }
        }
    }
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let mut med = weighted_lower_median(&pairs, zero_pairs);
    if med <= 0.0 {
        let positive: Vec<(f64, u64)> = pairs.into_iter().filter(|p| p.0 > 0.0).collect();
        if positive.is_empty() {
            return Err(Error::DegenerateBandwidth);
        }
        med = weighted_lower_median(&positive, 0);
    }
    Ok(match metric {
        Metric::SquaredL2 => med.sqrt(),
        Metric::L1 => med,
    })
}

// `sorted` holds (value, multiplicity) in increasing order; `zeros` extra
// copies of 0 precede it.
fn weighted_lower_median(sorted: &[(f64, u64)], zeros: u64) -> f64 {
    let total = zeros + sorted.iter().map(|p| p.1).sum::<u64>();
    let rank = (total - 1) / 2;
    if rank < zeros {
        return 0.0;
    }
    let mut seen = zeros;
    for &(v, c) in sorted {
        seen += c;
        if seen > rank {
            return v;
        }
    }
    sorted.last().map_or(0.0, |p| p.0)
}

/// Lower median: element of rank ⌊(m−1)/2⌋ in sorted order.
pub fn lower_median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    let k = (values.len() - 1) / 2;
    let (_, m, _) = values.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    *m
}
