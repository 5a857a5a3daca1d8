//! Quantile-based summaries and the paired Wilcoxon signed-rank test.

use super::MetricsError;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Linear-interpolation quantile of ascending `sorted` data, `q` in `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(quantile_sorted(&v, q))
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// A volume threshold, either a fixed value or a quantile of the observed volumes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Threshold {
    Absolute(f64),
    Quantile(f64),
}

/// `{0, Q25, Q50, Q75, P85}`.
pub fn default_thresholds() -> Vec<Threshold> {
    vec![
        Threshold::Absolute(0.0),
        Threshold::Quantile(0.25),
        Threshold::Quantile(0.50),
        Threshold::Quantile(0.75),
        Threshold::Quantile(0.85),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub label: String,
    pub threshold: f64,
    pub n_items: usize,
    /// Median DSC over items with volume strictly above the threshold.
    pub median_dsc: Option<f64>,
}

/// Median DSC of `(volume, dsc)` items whose volume exceeds each threshold.
pub fn threshold_sweep(items: &[(f64, f64)], thresholds: &[Threshold]) -> Result<Vec<SweepRow>, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::EmptyInput("threshold sweep"));
    }
    let mut volumes: Vec<f64> = items.iter().map(|x| x.0).collect();
    volumes.sort_by(f64::total_cmp);
    Ok(thresholds
        .iter()
        .map(|&t| {
            let (label, threshold) = match t {
                Threshold::Absolute(v) => (format!("{v}"), v),
                Threshold::Quantile(q) => (format!("P{}", (q * 100.0).round()), quantile_sorted(&volumes, q)),
            };
            let selected: Vec<f64> = items.iter().filter(|x| x.0 > threshold).map(|x| x.1).collect();
            SweepRow {
                label,
                threshold,
                n_items: selected.len(),
                median_dsc: median(&selected),
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DmaxGrouping {
    /// Q25, Q50 and Q75 of the supplied values.
    pub cuts: [f64; 3],
    /// Group 0..=3 per input value.
    pub groups: Vec<u8>,
    /// Set when fewer than 4 values were supplied; every value is then in G0.
    pub degenerate: bool,
}

/// Quartile groups: `G0 = [min, Q25]`, `G1 = (Q25, Q50]`, `G2 = (Q50, Q75]`,
/// `G3 = (Q75, max]`.
pub fn dmax_groups(values: &[f64]) -> Result<DmaxGrouping, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput("dmax groups"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cuts = [
        quantile_sorted(&sorted, 0.25),
        quantile_sorted(&sorted, 0.50),
        quantile_sorted(&sorted, 0.75),
    ];
    if values.len() < 4 {
        return Ok(DmaxGrouping {
            cuts,
            groups: vec![0; values.len()],
            degenerate: true,
        });
    }
    let groups = values
        .iter()
        .map(|&v| cuts.iter().filter(|&&c| v > c).count() as u8)
        .collect();
    Ok(DmaxGrouping {
        cuts,
        groups,
        degenerate: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WilcoxonResult {
    /// Sum of the ranks of positive differences.
    pub statistic: f64,
    /// One-tailed p-value for the alternative `a > b`.
    pub p_value: f64,
    /// Number of non-zero differences.
    pub n: usize,
    pub exact: bool,
}

/// Largest `n` for which the null distribution is computed exactly.
pub const EXACT_MAX_N: usize = 20;

/// Average ranks of `|d|`, doubled so tied ranks stay integral, plus the tie
/// group sizes.
pub fn doubled_ranks(abs_diffs: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..abs_diffs.len()).collect();
    order.sort_by(|&a, &b| abs_diffs[a].total_cmp(&abs_diffs[b]));
    let mut ranks = vec![0u64; abs_diffs.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && abs_diffs[order[end + 1]] == abs_diffs[order[start]] {
            end += 1;
        }
        // 1-based positions start+1..=end+1 average to (start + end + 2) / 2.
        let doubled = (start + end + 2) as u64;
        for &i in &order[start..=end] {
            ranks[i] = doubled;
        }
        ties.push(end - start + 1);
        start = end + 1;
    }
    (ranks, ties)
}

/// Paired one-tailed Wilcoxon signed-rank test of `a > b`.
///
/// Zero differences are dropped. For up to [`EXACT_MAX_N`] pairs the p-value
/// is `P(W+ >= observed)` under the exact sign-flip null (conditional on the
/// observed tie pattern); beyond that a normal approximation with tie and
/// continuity corrections is used.
pub fn wilcoxon_signed_rank_one_tailed(a: &[f64], b: &[f64]) -> Result<WilcoxonResult, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|&d| d != 0.0).collect();
    let n = diffs.len();
    if n < 5 {
        return Err(MetricsError::InsufficientPairs(n));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = doubled_ranks(&abs);
    let w2: u64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, &r)| r).sum();
    let statistic = w2 as f64 / 2.0;

    if n <= EXACT_MAX_N {
        // counts[s] = number of sign assignments whose doubled W+ equals s.
        let total: u64 = ranks.iter().sum();
        let mut counts = vec![0u64; total as usize + 1];
        counts[0] = 1;
        let mut reach = 0usize;
        for &r in &ranks {
            let r = r as usize;
            for s in (0..=reach).rev() {
                if counts[s] != 0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let upper: u64 = counts[w2 as usize..].iter().sum();
        let p_value = upper as f64 / (1u64 << n) as f64;
        return Ok(WilcoxonResult {
            statistic,
            p_value,
            n,
            exact: true,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let z = (statistic - mean - 0.5) / var.sqrt();
    let normal = Normal::standard();
    Ok(WilcoxonResult {
        statistic,
        p_value: normal.cdf(-z),
        n,
        exact: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    /// Direct enumeration of all 2^n sign patterns over the averaged ranks.
    fn enumerate_p(a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|&d| d != 0.0).collect();
        let n = d.len();
        let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
        let ranks: Vec<f64> = abs
            .iter()
            .map(|&v| {
                let below = abs.iter().filter(|&&u| u < v).count() as f64;
                let equal = abs.iter().filter(|&&u| u == v).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect();
        let observed: f64 = d.iter().zip(&ranks).filter(|x| *x.0 > 0.0).map(|x| x.1).sum();
        let mut hits = 0u64;
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if w >= observed - 1e-9 {
                hits += 1;
            }
        }
        hits as f64 / (1u64 << n) as f64
    }

    #[test]
    fn quantile_examples() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert!((quantile(&v, 0.85).unwrap() - 8.65).abs() < 1e-12);
        assert_eq!(quantile(&v, 0.0), Some(1.0));
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn sweep_examples() {
        let items: Vec<(f64, f64)> = (1..=10).map(|v| (v as f64, v as f64 / 10.0)).collect();
        let rows = threshold_sweep(&items, &default_thresholds()).unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[0].n_items, 10);
        assert!((rows[0].median_dsc.unwrap() - 0.55).abs() < 1e-12);
        assert!((rows[4].threshold - 8.65).abs() < 1e-12);
        assert_eq!(rows[4].n_items, 2);
        let all_small = threshold_sweep(&[(1.0, 0.5)], &[Threshold::Absolute(2.0)]).unwrap();
        assert_eq!(all_small[0].median_dsc, None);
        assert!(threshold_sweep(&[], &default_thresholds()).is_err());
    }

    #[test]
    fn dmax_group_examples() {
        let g = dmax_groups(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(g.cuts, [1.75, 2.5, 3.25]);
        assert_eq!(g.groups, vec![0, 1, 2, 3]);
        let g = dmax_groups(&[5.0; 6]).unwrap();
        assert!(g.groups.iter().all(|&x| x == 0));
        let g = dmax_groups(&[1.0, 9.0]).unwrap();
        assert!(g.degenerate);
        assert!(dmax_groups(&[]).is_err());
    }

    #[test]
    fn wilcoxon_all_positive() {
        for n in 5..=10 {
            let a: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
            let b = vec![0.0; n];
            let r = wilcoxon_signed_rank_one_tailed(&a, &b).unwrap();
            assert_eq!(r.p_value, 0.5f64.powi(n as i32));
            assert!(r.exact);
        }
    }

    #[test]
    fn wilcoxon_insufficient() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!(matches!(
            wilcoxon_signed_rank_one_tailed(&a, &a),
            Err(MetricsError::InsufficientPairs(0))
        ));
        assert!(wilcoxon_signed_rank_one_tailed(&a, &a[..4]).is_err());
    }

    #[test]
    fn wilcoxon_matches_enumeration() {
        let mut r = rng::seeded(9);
        for _ in 0..30 {
            let n = r.random_range(5..=12);
            // Coarse values so ties and zero differences occur.
            let a: Vec<f64> = (0..n).map(|_| r.random_range(0..6) as f64).collect();
            let b: Vec<f64> = (0..n).map(|_| r.random_range(0..6) as f64).collect();
            match wilcoxon_signed_rank_one_tailed(&a, &b) {
                Ok(res) => assert!((res.p_value - enumerate_p(&a, &b)).abs() < 1e-12),
                Err(MetricsError::InsufficientPairs(_)) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn wilcoxon_normal_branch_is_sane() {
        let a: Vec<f64> = (0..30).map(|i| i as f64 + 0.5).collect();
        let b: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let r = wilcoxon_signed_rank_one_tailed(&a, &b).unwrap();
        assert!(!r.exact);
        assert!(r.p_value > 0.0 && r.p_value < 1e-5);
        let r = wilcoxon_signed_rank_one_tailed(&b, &a).unwrap();
        assert!(r.p_value > 0.99);
    }
}
