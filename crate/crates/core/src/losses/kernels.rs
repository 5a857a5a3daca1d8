//! Slice-level forward/backward kernels.
//!
//! All kernels take the foreground probability `p` and binary target `g` as
//! flat slices of equal length and return `(value, ∂value/∂p)`. Inputs are not
//! validated here; the public wrappers in the parent module do that. Sums run
//! sequentially in index order so results are bit-reproducible.

use super::FocalReduction;

/// Probability floor applied before taking logarithms in the focal term.
pub const PROB_FLOOR: f64 = 1e-7;

/// Two-class soft Dice with `ε` in the denominator only.
pub fn dice(p: &[f64], g: &[f64], eps: f64) -> (f64, Vec<f64>) {
    let (mut inter_fg, mut sum_p, mut sum_g) = (0.0, 0.0, 0.0);
    let (mut inter_bg, mut sum_q, mut sum_h) = (0.0, 0.0, 0.0);
    for (&pi, &gi) in p.iter().zip(g) {
        let (qi, hi) = (1.0 - pi, 1.0 - gi);
        inter_fg += pi * gi;
        sum_p += pi;
        sum_g += gi;
        inter_bg += qi * hi;
        sum_q += qi;
        sum_h += hi;
    }
    let den_fg = sum_p + sum_g + eps;
    let den_bg = sum_q + sum_h + eps;
    let value = 1.0 - 0.5 * (2.0 * inter_fg / den_fg + 2.0 * inter_bg / den_bg);

    let fg_shift = 2.0 * inter_fg / (den_fg * den_fg);
    let bg_shift = 2.0 * inter_bg / (den_bg * den_bg);
    let grad = g
        .iter()
        .map(|&gi| {
            let d_fg = 2.0 * gi / den_fg - fg_shift;
            // q = 1 - p, so d/dp of the background ratio flips sign.
            let d_bg = -(2.0 * (1.0 - gi) / den_bg - bg_shift);
            -0.5 * (d_fg + d_bg)
        })
        .collect();
    (value, grad)
}

/// Binary focal loss on the true-class probability, `p` clamped to
/// `[PROB_FLOOR, 1 - PROB_FLOOR]` (zero gradient outside).
pub fn focal(
    p: &[f64],
    g: &[f64],
    gamma: f64,
    alpha: f64,
    reduction: FocalReduction,
) -> (f64, Vec<f64>) {
    let scale = match reduction {
        FocalReduction::Mean if !p.is_empty() => 1.0 / p.len() as f64,
        _ => 1.0,
    };
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (&pi, &gi) in p.iter().zip(g) {
        let pc = pi.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        let foreground = gi != 0.0;
        let pt = if foreground { pc } else { 1.0 - pc };
        let miss = 1.0 - pt;
        let modulator = miss.powf(gamma);
        let log_pt = pt.ln();
        total += -alpha * modulator * log_pt;

        let active = (PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&pi);
        let g_i = if active {
            let focus = if gamma == 0.0 {
                0.0
            } else {
                gamma * miss.powf(gamma - 1.0) * log_pt
            };
            let d_pt = alpha * (focus - modulator / pt);
            let sign = if foreground { 1.0 } else { -1.0 };
            d_pt * sign * scale
        } else {
            0.0
        };
        grad.push(g_i);
    }
    (total * scale, grad)
}

/// Two-class squared-denominator Dice with per-voxel weights `w` held
/// constant, `ε` in numerator and denominator, classes averaged with ½.
pub fn weighted_dice(p: &[f64], g: &[f64], w: &[f64], eps: f64) -> (f64, Vec<f64>) {
    let (mut num_fg, mut den_fg, mut num_bg, mut den_bg) = (0.0, 0.0, 0.0, 0.0);
    for ((&pi, &gi), &wi) in p.iter().zip(g).zip(w) {
        let (qi, hi) = (1.0 - pi, 1.0 - gi);
        num_fg += wi * gi * pi;
        den_fg += wi * (gi * gi + pi * pi);
        num_bg += wi * hi * qi;
        den_bg += wi * (hi * hi + qi * qi);
    }
    let num_fg = 2.0 * num_fg + eps;
    let den_fg = den_fg + eps;
    let num_bg = 2.0 * num_bg + eps;
    let den_bg = den_bg + eps;
    let value = 1.0 - 0.5 * (num_fg / den_fg + num_bg / den_bg);

    let ratio_fg = num_fg / (den_fg * den_fg);
    let ratio_bg = num_bg / (den_bg * den_bg);
    let grad = p
        .iter()
        .zip(g)
        .zip(w)
        .map(|((&pi, &gi), &wi)| {
            let (qi, hi) = (1.0 - pi, 1.0 - gi);
            let d_fg = 2.0 * wi * gi / den_fg - ratio_fg * 2.0 * wi * pi;
            let d_bg = -(2.0 * wi * hi / den_bg - ratio_bg * 2.0 * wi * qi);
            -0.5 * (d_fg + d_bg)
        })
        .collect();
    (value, grad)
}
