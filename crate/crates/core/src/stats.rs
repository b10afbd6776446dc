//! Small numeric helpers shared across modules.

/// Type-7 quantile (linear interpolation between order statistics) of a
/// pre-sorted slice. `q` must lie in [0, 1].
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&q), "quantile level out of range");
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Type-7 quantile of an unsorted buffer, via selection (the buffer is
/// reordered in place).
pub fn quantile_unstable(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty slice");
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let h = q * (n - 1) as f64;
    let lo = (h.floor() as usize).min(n - 1);
    let frac = h - lo as f64;
    let (_, v_lo, rest) = values.select_nth_unstable_by(lo, f64::total_cmp);
    let v_lo = *v_lo;
    if frac == 0.0 || rest.is_empty() {
        return v_lo;
    }
    let v_hi = rest.iter().copied().fold(f64::INFINITY, f64::min);
    v_lo + frac * (v_hi - v_lo)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n-1 denominator).
pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    assert!(n >= 2, "sample sd needs at least two values");
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_matches_linear_interpolation() {
        // 1..=100: the 95th type-7 quantile is 1 + 0.95*99 = 95.05
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert!((quantile_sorted(&v, 0.95) - 95.05).abs() < 1e-12);
        let mut shuffled: Vec<f64> = v.iter().rev().copied().collect();
        assert!((quantile_unstable(&mut shuffled, 0.95) - 95.05).abs() < 1e-12);
    }

    #[test]
    fn quantile_endpoints_and_singleton() {
        let v = [3.0, 1.0, 2.0];
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 3.0);
        assert_eq!(quantile_sorted(&[7.0], 0.5), 7.0);
        let mut one = [7.0];
        assert_eq!(quantile_unstable(&mut one, 0.025), 7.0);
    }

    #[test]
    fn unstable_agrees_with_sorted_on_random_data() {
        let mut state = 0x2545F4914F6CDD1Du64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let values: Vec<f64> = (0..257).map(|_| next()).collect();
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        for q in [0.0, 0.025, 0.25, 0.5, 0.8, 0.9, 0.975, 1.0] {
            let mut buf = values.clone();
            let a = quantile_sorted(&sorted, q);
            let b = quantile_unstable(&mut buf, q);
            assert!((a - b).abs() < 1e-12, "q={q}: {a} vs {b}");
        }
    }
}
