//! Small summary statistics for sweep curves.

/// Median of the finite values; the mean of the middle two for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// 1-based ranks, tied values sharing the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
/// Undefined for fewer than two points or when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "paired samples");
    if x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let mean = (x.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Lowest SNR at which a curve reaches `level`, interpolating linearly
/// between grid points. `None` if it never does.
pub fn snr_at_level(snr: &[f64], values: &[Option<f64>], level: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = snr
        .iter()
        .zip(values)
        .filter_map(|(&s, v)| v.map(|v| (s, v)))
        .collect();
    let first = pts.first()?;
    if first.1 >= level {
        return Some(first.0);
    }
    pts.windows(2).find_map(|w| {
        let ((s0, v0), (s1, v1)) = (w[0], w[1]);
        (v0 < level && v1 >= level).then(|| s0 + (level - v0) / (v1 - v0) * (s1 - s0))
    })
}
