//! Small dense least-squares helpers for coefficient fitting.

/// Failure of a dense solve, with a rough condition estimate.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Singular {
    pub condition: f64,
}

const PIVOT_FLOOR: f64 = 1e-14;

/// Solves the least-squares problem `min ‖A·x − y‖² + Σ ridge[j]·x[j]²`
/// through Jacobi-scaled normal equations. `rows` holds `A` row-major with
/// `cols` columns.
pub(crate) fn least_squares(rows: &[f64], y: &[f64], cols: usize, ridge: &[f64]) -> Result<Vec<f64>, Singular> {
    let n_rows = y.len();
    let mut ata = vec![0.0; cols * cols];
    let mut aty = vec![0.0; cols];
    for r in 0..n_rows {
        let row = &rows[r * cols..(r + 1) * cols];
        for i in 0..cols {
            aty[i] += row[i] * y[r];
            for j in 0..cols {
                ata[i * cols + j] += row[i] * row[j];
            }
        }
    }
    for (j, l) in ridge.iter().enumerate() {
        ata[j * cols + j] += l;
    }
    solve_spd_scaled(&mut ata, &mut aty, cols)
}

/// Gaussian elimination with partial pivoting on a symmetric system after
/// scaling it to unit diagonal.
pub(crate) fn solve_spd_scaled(m: &mut [f64], rhs: &mut [f64], n: usize) -> Result<Vec<f64>, Singular> {
    let scale: Vec<f64> = (0..n)
        .map(|i| {
            let d = m[i * n + i];
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    if scale.iter().any(|&s| s == 0.0) {
        return Err(Singular {
            condition: f64::INFINITY,
        });
    }
    for i in 0..n {
        rhs[i] *= scale[i];
        for j in 0..n {
            m[i * n + j] *= scale[i] * scale[j];
        }
    }

    let mut max_pivot: f64 = 0.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&a, &b| m[a * n + col].abs().total_cmp(&m[b * n + col].abs()))
            .unwrap();
        if piv != col {
            for j in 0..n {
                m.swap(col * n + j, piv * n + j);
            }
            rhs.swap(col, piv);
        }
        let p = m[col * n + col];
        max_pivot = max_pivot.max(p.abs());
        if p.abs() < PIVOT_FLOOR {
            return Err(Singular {
                condition: max_pivot / p.abs().max(f64::MIN_POSITIVE),
            });
        }
        for r in col + 1..n {
            let f = m[r * n + col] / p;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[r * n + j] -= f * m[col * n + j];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for j in i + 1..n {
            s -= m[i * n + j] * x[j];
        }
        x[i] = s / m[i * n + i];
    }
    for (xi, s) in x.iter_mut().zip(&scale) {
        *xi *= s;
    }
    Ok(x)
}
