//! Rank statistics.

use crate::error::{Error, Result};

/// Twice the average rank (1-based) of every entry. Tied entries share the
/// mean of their positions, so doubling keeps every rank an integer.
pub fn doubled_ranks(xs: &[f64]) -> Result<Vec<i64>> {
    if xs.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("NaN in rank input".into()));
    }
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0i64; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        // positions i+1 ..= j+1 share (i+1 + j+1)/2
        let r = (i + j + 2) as i64;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    Ok(out)
}

/// Pearson correlation of integer vectors, exact up to the final square root.
pub fn pearson_int(a: &[i64], b: &[i64]) -> Result<f64> {
    let n = a.len() as i128;
    let (sa, sb): (i128, i128) = (a.iter().map(|&v| v as i128).sum(), b.iter().map(|&v| v as i128).sum());
    let sab: i128 = a.iter().zip(b).map(|(&x, &y)| x as i128 * y as i128).sum();
    let saa: i128 = a.iter().map(|&x| x as i128 * x as i128).sum();
    let sbb: i128 = b.iter().map(|&y| y as i128 * y as i128).sum();
    let cov = n * sab - sa * sb;
    let va = n * saa - sa * sa;
    let vb = n * sbb - sb * sb;
    if va == 0 || vb == 0 {
        return Err(Error::Degenerate("zero rank variance".into()));
    }
    Ok(cov as f64 / ((va as f64) * (vb as f64)).sqrt())
}

/// Spearman's ρ with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!("lengths {} and {} differ", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidInput("spearman needs at least two pairs".into()));
    }
    pearson_int(&doubled_ranks(xs)?, &doubled_ranks(ys)?)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (divisor `n − 1`); 0 for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}
