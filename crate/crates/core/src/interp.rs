//! Piecewise-linear interpolation over sorted sample times.

/// Value of the piecewise-linear function through `(ts[i], ys[i])` at `q`.
///
/// Queries outside `[ts[0], ts[last]]` clamp to the nearest endpoint; the
/// second element of the result is true when that happened. `ts` must be
/// strictly increasing and non-empty, and `ys` the same length.
pub fn linear_at(ts: &[f64], ys: &[f64], q: f64) -> (f64, bool) {
    debug_assert_eq!(ts.len(), ys.len());
    let n = ts.len();
    if q <= ts[0] {
        return (ys[0], q < ts[0]);
    }
    if q >= ts[n - 1] {
        return (ys[n - 1], q > ts[n - 1]);
    }
    // first index with ts[i] > q; 1 <= hi <= n-1 here
    let hi = ts.partition_point(|&t| t <= q);
    let lo = hi - 1;
    if ts[lo] == q {
        return (ys[lo], false);
    }
    let w = (q - ts[lo]) / (ts[hi] - ts[lo]);
    (ys[lo] + w * (ys[hi] - ys[lo]), false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_and_knots() {
        let ts = [0.0, 1.0, 3.0];
        let ys = [1.0, 2.0, -2.0];
        assert_eq!(linear_at(&ts, &ys, 0.5), (1.5, false));
        assert_eq!(linear_at(&ts, &ys, 1.0), (2.0, false));
        assert_eq!(linear_at(&ts, &ys, 3.0), (-2.0, false));
        assert_eq!(linear_at(&ts, &ys, 2.0), (0.0, false));
    }

    #[test]
    fn outside_range_clamps_and_flags() {
        let ts = [1.0, 2.0];
        let ys = [5.0, 7.0];
        assert_eq!(linear_at(&ts, &ys, 0.0), (5.0, true));
        assert_eq!(linear_at(&ts, &ys, 9.0), (7.0, true));
    }

    #[test]
    fn single_sample_is_constant() {
        assert_eq!(linear_at(&[2.0], &[4.0], 2.0), (4.0, false));
        assert_eq!(linear_at(&[2.0], &[4.0], 3.0), (4.0, true));
    }
}
