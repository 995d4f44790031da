//! Small dense LU with partial pivoting, used by the enumeration oracle.

/// Solves `M x = b` for a row-major square `M`. Returns `None` when a pivot
/// falls below `pivot_tol` times the largest entry.
pub(crate) fn solve_dense(mut m: Vec<f64>, mut b: Vec<f64>, pivot_tol: f64) -> Option<Vec<f64>> {
    let n = b.len();
    debug_assert_eq!(m.len(), n * n);
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    for k in 0..n {
        let (mut piv, mut best) = (k, m[k * n + k].abs());
        for r in k + 1..n {
            let v = m[r * n + k].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best <= pivot_tol * scale {
            return None;
        }
        if piv != k {
            for c in 0..n {
                m.swap(k * n + c, piv * n + c);
            }
            b.swap(k, piv);
        }
        let d = m[k * n + k];
        for r in k + 1..n {
            let f = m[r * n + k] / d;
            if f == 0.0 {
                continue;
            }
            m[r * n + k] = 0.0;
            for c in k + 1..n {
                m[r * n + c] -= f * m[k * n + c];
            }
            b[r] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = b[k];
        for c in k + 1..n {
            s -= m[k * n + c] * x[c];
        }
        x[k] = s / m[k * n + k];
    }
    Some(x)
}
