//! Residual binning and density-based voxel weights for the weighted Dice term.
//!
//! The L1 residual `Δ = |g - p|` of every voxel is histogrammed into bins of
//! nominal width `Γ` centred on `0, Γ, 2Γ, …`. Bins touching the ends of
//! `[0, 1]` are truncated, so each bin's count is divided by its effective
//! width to get a density, and each voxel is weighted by `N / density` of its
//! bin. Rare residuals get large weights, common ones (typically the easy
//! background at `Δ ≈ 0`) get small ones.

use super::LossError;
use serde::Serialize;

/// The full binning table plus per-voxel lookups.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BinWeighting {
    pub bin_width: f64,
    /// Bin centres `Γ·k`.
    pub centers: Vec<f64>,
    /// Number of residuals falling in each bin.
    pub counts: Vec<usize>,
    /// Bin width after truncation to `[0, 1]`.
    pub eff_width: Vec<f64>,
    /// `counts[k] / eff_width[k]`.
    pub density: Vec<f64>,
    /// `N / density[k]`; `None` for empty bins, which are never looked up.
    pub bin_weight: Vec<Option<f64>>,
    pub voxel_bin: Vec<usize>,
    pub voxel_weight: Vec<f64>,
    pub n_samples: usize,
}

impl BinWeighting {
    pub fn n_bins(&self) -> usize {
        self.centers.len()
    }
}

/// Per-voxel residuals `|g_i - p_i|` on the foreground channel.
pub fn l1_norms(p: &[f64], g: &[f64]) -> Result<Vec<f64>, LossError> {
    if p.len() != g.len() {
        return Err(LossError::LengthMismatch {
            p: p.len(),
            g: g.len(),
        });
    }
    Ok(p.iter().zip(g).map(|(&p, &g)| (g - p).abs()).collect())
}

/// Number of bins for a nominal width: `ceil(1/Γ + 1)`, minus any trailing
/// bin whose lower edge already lies at or beyond 1.
pub fn bin_count(bin_width: f64) -> usize {
    let raw = 1.0 / bin_width + 1.0;
    // 1/Γ is frequently an integer up to representation error (Γ = 0.1).
    let n = if (raw - raw.round()).abs() < 1e-9 {
        raw.round()
    } else {
        raw.ceil()
    } as usize;
    let mut n = n.max(1);
    while n > 1 && effective_width(bin_width * (n - 1) as f64, bin_width) <= 0.0 {
        n -= 1;
    }
    n
}

/// `min(B + Γ/2, 1) - max(B - Γ/2, 0)`, evaluated as
/// `min(Γ/2, 1 - B) + min(Γ/2, B)` which is exact at the truncated ends.
pub fn effective_width(center: f64, bin_width: f64) -> f64 {
    let half = bin_width / 2.0;
    half.min(1.0 - center) + half.min(center)
}

/// Bin of a residual: half-open `[B_k - Γ/2, B_k + Γ/2)`, top bin closed at 1.
#[inline]
pub fn bin_index(delta: f64, bin_width: f64, n_bins: usize) -> usize {
    ((delta / bin_width + 0.5).floor() as usize).min(n_bins - 1)
}

/// Builds the binning table and voxel weights for residuals in `[0, 1]`.
pub fn bin_weights(deltas: &[f64], bin_width: f64) -> Result<BinWeighting, LossError> {
    if !(bin_width > 0.0 && bin_width <= 1.0) {
        return Err(LossError::BadConfig(format!(
            "bin width must lie in (0, 1], got {bin_width}"
        )));
    }
    if let Some((index, &value)) = deltas
        .iter()
        .enumerate()
        .find(|(_, &d)| !(0.0..=1.0).contains(&d))
    {
        return Err(LossError::ResidualOutOfRange { index, value });
    }
    let n_bins = bin_count(bin_width);
    let centers: Vec<f64> = (0..n_bins).map(|k| bin_width * k as f64).collect();
    let eff_width: Vec<f64> = centers.iter().map(|&c| effective_width(c, bin_width)).collect();

    let mut counts = vec![0usize; n_bins];
    let voxel_bin: Vec<usize> = deltas
        .iter()
        .map(|&d| {
            let k = bin_index(d, bin_width, n_bins);
            counts[k] += 1;
            k
        })
        .collect();

    let n_samples = deltas.len();
    let density: Vec<f64> = counts
        .iter()
        .zip(&eff_width)
        .map(|(&c, &w)| c as f64 / w)
        .collect();
    let bin_weight: Vec<Option<f64>> = density
        .iter()
        .zip(&counts)
        .map(|(&d, &c)| (c > 0).then(|| n_samples as f64 / d))
        .collect();
    let voxel_weight = voxel_bin
        .iter()
        .map(|&k| bin_weight[k].expect("occupied bin has a weight"))
        .collect();

    Ok(BinWeighting {
        bin_width,
        centers,
        counts,
        eff_width,
        density,
        bin_weight,
        voxel_bin,
        voxel_weight,
        n_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eleven_bins_at_a_tenth() {
        let bw = bin_weights(&[0.0], 0.1).unwrap();
        assert_eq!(bw.n_bins(), 11);
        for (k, &c) in bw.centers.iter().enumerate() {
            assert!((c - k as f64 / 10.0).abs() < 1e-15);
        }
        assert_eq!(bw.centers[0], 0.0);
        assert_eq!(bw.centers[10], 1.0);
    }

    #[test]
    fn effective_widths() {
        let bw = bin_weights(&[0.5], 0.1).unwrap();
        assert_eq!(bw.eff_width[0], 0.05);
        assert_eq!(bw.eff_width[5], 0.1);
        assert_eq!(bw.eff_width[10], 0.05);
        assert!(bw.eff_width.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn hand_worked_table() {
        let bw = bin_weights(&[0.0, 0.0, 0.0, 1.0], 0.1).unwrap();
        assert_eq!(bw.counts[0], 3);
        assert_eq!(bw.counts[10], 1);
        assert_eq!(bw.counts.iter().sum::<usize>(), 4);
        assert_eq!(bw.density[0], 60.0);
        assert_eq!(bw.density[10], 20.0);
        assert_eq!(bw.bin_weight[0], Some(1.0 / 15.0));
        assert_eq!(bw.bin_weight[10], Some(1.0 / 5.0));
        assert!(bw.bin_weight[1..10].iter().all(Option::is_none));
        assert_eq!(bw.voxel_weight, vec![1.0 / 15.0, 1.0 / 15.0, 1.0 / 15.0, 0.2]);
    }

    #[test]
    fn boundaries_are_half_open_with_closed_top() {
        let n = bin_count(0.25);
        assert_eq!(n, 5);
        assert_eq!(bin_index(0.125, 0.25, n), 1);
        assert_eq!(bin_index(0.124, 0.25, n), 0);
        assert_eq!(bin_index(0.875, 0.25, n), 4);
        assert_eq!(bin_index(1.0, 0.25, n), 4);
    }

    #[test]
    fn bins_beyond_one_are_dropped() {
        // ceil(1/0.3 + 1) = 5 would put a centre at 1.2, entirely above 1.
        assert_eq!(bin_count(0.3), 4);
        // ceil(1/0.4 + 1) = 4: centre 1.2 has its lower edge exactly at 1.
        assert_eq!(bin_count(0.4), 3);
        assert_eq!(bin_index(1.0, 0.4, 3), 2);
        assert_eq!(bin_count(1.0), 2);
        let bw = bin_weights(&[0.0, 0.7, 1.0], 0.4).unwrap();
        assert_eq!(bw.counts, vec![1, 0, 2]);
        assert!(bw.eff_width.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            bin_weights(&[0.2, 1.5], 0.1),
            Err(LossError::ResidualOutOfRange { index: 1, .. })
        ));
        assert!(bin_weights(&[0.2], 0.0).is_err());
        assert!(bin_weights(&[0.2], 1.5).is_err());
    }

    #[test]
    fn l1_examples() {
        assert_eq!(l1_norms(&[0.2, 0.2, 0.0], &[1.0, 0.0, 0.0]).unwrap()[2], 0.0);
        let d = l1_norms(&[0.2, 0.2], &[1.0, 0.0]).unwrap();
        assert!((d[0] - 0.8).abs() < 1e-15);
        assert_eq!(d[1], 0.2);
    }

    proptest! {
        #[test]
        fn counts_partition_and_weights_positive(
            deltas in prop::collection::vec(0.0f64..=1.0, 1..300),
            bin_width in 0.02f64..=1.0,
        ) {
            let bw = bin_weights(&deltas, bin_width).unwrap();
            prop_assert_eq!(bw.counts.iter().sum::<usize>(), deltas.len());
            prop_assert!(bw.eff_width.iter().all(|&w| w > 0.0));
            prop_assert!(bw.voxel_weight.iter().all(|&w| w.is_finite() && w > 0.0));
            for (i, &k) in bw.voxel_bin.iter().enumerate() {
                prop_assert_eq!(bw.voxel_weight[i], bw.bin_weight[k].unwrap());
            }
        }

        #[test]
        fn residual_symmetric_under_label_swap(
            pairs in prop::collection::vec((0.0f64..=1.0, prop::bool::ANY), 1..100)
        ) {
            let p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
            let g: Vec<f64> = pairs.iter().map(|x| if x.1 { 1.0 } else { 0.0 }).collect();
            let p2: Vec<f64> = p.iter().map(|v| 1.0 - v).collect();
            let g2: Vec<f64> = g.iter().map(|v| 1.0 - v).collect();
            let a = l1_norms(&p, &g).unwrap();
            let b = l1_norms(&p2, &g2).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-15);
            }
        }

        /// A larger residual in a sparser bin never gets the smaller weight.
        #[test]
        fn monotone_focusing(
            deltas in prop::collection::vec(0.0f64..=1.0, 2..200),
            i in 0usize..200,
            j in 0usize..200,
        ) {
            let (i, j) = (i % deltas.len(), j % deltas.len());
            let bw = bin_weights(&deltas, 0.1).unwrap();
            let (ki, kj) = (bw.voxel_bin[i], bw.voxel_bin[j]);
            if deltas[i] > deltas[j] && bw.density[ki] < bw.density[kj] {
                prop_assert!(bw.voxel_weight[i] >= bw.voxel_weight[j]);
            }
        }
    }
}
