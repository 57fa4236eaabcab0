//! Dense row-major kernels used by the models.

/// `out += W x` with `W` of shape `out.len() × x.len()`.
pub fn matvec_add(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut s = 0.0;
        for c in 0..cols {
            s += row[c] * x[c];
        }
        *o += s;
    }
}

/// `out += Wᵀ y` with `W` of shape `y.len() × out.len()`.
pub fn matvec_t_add(out: &mut [f64], w: &[f64], y: &[f64]) {
    let cols = out.len();
    for (r, &yr) in y.iter().enumerate() {
        if yr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for c in 0..cols {
            out[c] += row[c] * yr;
        }
    }
}

/// `G += a bᵀ`.
pub fn outer_add(g: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (r, &ar) in a.iter().enumerate() {
        if ar == 0.0 {
            continue;
        }
        let row = &mut g[r * cols..(r + 1) * cols];
        for c in 0..cols {
            row[c] += ar * b[c];
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// Numerically stable `ln Σ exp`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
