//! Small dense-vector helpers shared by the loss oracles and solvers.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `out += c * v`
pub fn axpy(out: &mut [f64], c: f64, v: &[f64]) {
    for (o, x) in out.iter_mut().zip(v) {
        *o += c * x;
    }
}

pub fn scale(v: &[f64], c: f64) -> Vec<f64> {
    v.iter().map(|x| c * x).collect()
}
