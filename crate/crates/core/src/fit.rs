/// Straight-line least-squares fit `y ~ slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual.
    pub residual: f64,
}

/// Returns `None` for fewer than two points or zero spread in `x`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let k = xs.len();
    if k < 2 || ys.len() != k {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / k as f64;
    let my = ys.iter().sum::<f64>() / k as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 1e-300 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    Some(LineFit { slope, intercept, residual: (ss / k as f64).sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let f = least_squares(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-15);
        assert!((f.intercept - 1.0).abs() < 1e-15);
        assert!(f.residual < 1e-15);
    }

    #[test]
    fn degenerate_spread() {
        assert!(least_squares(&[1.0, 1.0], &[0.0, 2.0]).is_none());
        assert!(least_squares(&[1.0], &[0.0]).is_none());
    }
}
