//! Dense least squares by Householder QR.

use super::AnalysisError;

/// Relative threshold on |R_kk| below which a column is considered
/// dependent on the ones before it.
const RANK_TOL: f64 = 1e-10;

/// Minimizes ‖A·x − y‖₂ where `rows[i]` is row i of A.
pub fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>, AnalysisError> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if n == 0 || m != y.len() || rows.iter().any(|r| r.len() != n) {
        return Err(AnalysisError::InvalidInput("design matrix shape".into()));
    }
    if m < n {
        return Err(AnalysisError::DegenerateFit(format!("{m} rows for {n} unknowns")));
    }
    if rows.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(AnalysisError::InvalidInput("non-finite value".into()));
    }
    // column-major working copy
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let mut b = y.to_vec();
    let scale = a
        .iter()
        .map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(AnalysisError::DegenerateFit("all-zero design".into()));
    }
    for k in 0..n {
        let norm = a[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= RANK_TOL * scale {
            return Err(AnalysisError::DegenerateFit(format!(
                "column {k} is linearly dependent"
            )));
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        for col in a.iter_mut().skip(k) {
            let dot: f64 = v.iter().zip(&col[k..]).map(|(p, q)| p * q).sum();
            let f = 2.0 * dot / vnorm2;
            for (c, vi) in col[k..].iter_mut().zip(&v) {
                *c -= f * vi;
            }
        }
        let dot: f64 = v.iter().zip(&b[k..]).map(|(p, q)| p * q).sum();
        let f = 2.0 * dot / vnorm2;
        for (c, vi) in b[k..].iter_mut().zip(&v) {
            *c -= f * vi;
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = ((k + 1)..n).map(|j| a[j][k] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let rows: Vec<Vec<f64>> = [0.0, 100.0, 200.0].iter().map(|&t| vec![1.0, t]).collect();
        let x = least_squares(&rows, &[100.0, 300.0, 500.0]).unwrap();
        assert!((x[0] - 100.0).abs() < 1e-9 && (x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn overdetermined_average() {
        let rows = vec![vec![1.0]; 4];
        let x = least_squares(&rows, &[1.0, 2.0, 3.0, 6.0]).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn dependent_columns_are_degenerate() {
        let rows: Vec<Vec<f64>> = (0..5).map(|_| vec![1.0, 3.0]).collect();
        assert!(matches!(
            least_squares(&rows, &[1.0; 5]),
            Err(AnalysisError::DegenerateFit(_))
        ));
        assert!(least_squares(&[vec![1.0, 2.0]], &[1.0]).is_err());
    }
}
