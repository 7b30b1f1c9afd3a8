//! Composite Simpson quadrature.

/// Composite Simpson rule on `[a, b]` with `intervals` subintervals
/// (rounded up to the next even number).
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, intervals: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let n = intervals.max(2).div_ceil(2) * 2;
    let h = (b - a) / n as f64;
    let mut odd = 0.0;
    let mut even = 0.0;
    for i in 1..n {
        let x = a + i as f64 * h;
        if i % 2 == 1 {
            odd += f(x);
        } else {
            even += f(x);
        }
    }
    h / 3.0 * (f(a) + 4.0 * odd + 2.0 * even + f(b))
}

/// Simpson on each piece between consecutive breakpoints inside `[a, b]`.
///
/// Breakpoints outside the range are ignored; duplicates are merged. Use this
/// when the integrand has kinks or jumps at known locations.
pub fn simpson_pieces<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breakpoints: &[f64], intervals_per_piece: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let knots = knots(a, b, breakpoints);
    let last = knots.len() - 2;
    knots
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            // interior knots are evaluated as one-sided limits so that jumps
            // in the integrand do not leak into the neighbouring piece
            let lo = if k > 0 { nudge_up(w[0]) } else { w[0] };
            let hi = if k < last { nudge_down(w[1]) } else { w[1] };
            simpson(&f, lo, hi, intervals_per_piece)
        })
        .sum()
}

fn nudge_up(x: f64) -> f64 {
    x + 1e-13 * x.abs().max(1e-3)
}

fn nudge_down(x: f64) -> f64 {
    x - 1e-13 * x.abs().max(1e-3)
}

/// Sorted, deduplicated `[a, breakpoints within (a, b)..., b]`.
pub fn knots(a: f64, b: f64, breakpoints: &[f64]) -> Vec<f64> {
    let mut knots = Vec::with_capacity(breakpoints.len() + 2);
    knots.push(a);
    knots.extend(breakpoints.iter().copied().filter(|&x| x > a && x < b));
    knots.push(b);
    knots.sort_by(f64::total_cmp);
    knots.dedup_by(|x, y| (*x - *y).abs() <= 1e-15 * (1.0 + y.abs()));
    knots
}
