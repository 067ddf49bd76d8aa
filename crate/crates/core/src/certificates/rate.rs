use crate::error::{invalid, Result};

/// Fewest points accepted by [`fit_rate`].
pub const MIN_FIT_POINTS: usize = 10;

/// Least-squares slope of `log y` against `log x`.
pub fn fit_loglog(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(invalid("slope fit needs at least two points"));
    }
    if points.iter().any(|(x, y)| !(*x > 0.0) || !(*y > 0.0)) {
        return Err(invalid("slope fit needs positive coordinates"));
    }
    let n = points.len() as f64;
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(invalid("slope fit needs distinct abscissae"));
    }
    Ok(sxy / sxx)
}

/// Log-log slope of `(t, a_t)` over the last `tail` fraction of the series.
pub fn fit_rate(series: &[(usize, f64)], tail: f64) -> Result<f64> {
    if !(tail > 0.0 && tail <= 1.0) {
        return Err(invalid("tail fraction must lie in (0, 1]"));
    }
    let keep = ((series.len() as f64) * tail).ceil() as usize;
    let window = &series[series.len() - keep.min(series.len())..];
    if window.len() < MIN_FIT_POINTS {
        return Err(invalid(format!(
            "rate fit needs at least {MIN_FIT_POINTS} points, window has {}",
            window.len()
        )));
    }
    if window.iter().any(|(t, a)| *t == 0 || !(*a > 0.0)) {
        return Err(invalid("rate fit needs t >= 1 and positive values in the window"));
    }
    let points: Vec<(f64, f64)> = window.iter().map(|(t, a)| (*t as f64, *a)).collect();
    fit_loglog(&points)
}
