//! Potential normalization: per-sentence standardization of score tensors.

use crate::error::{Error, Result};

/// Statistics kept from the forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct PnStats {
    pub mean: f64,
    pub std: f64,
    pub degenerate: bool,
}

/// Below this standard deviation the output is all zeros.
pub const PN_MIN_STD: f64 = 1e-6;

/// Standardizes the entries flagged in `valid` (population statistics);
/// invalid entries are set to 0.
pub fn potential_normalize(values: &[f64], valid: &[bool]) -> Result<(Vec<f64>, PnStats)> {
    let count = valid.iter().filter(|v| **v).count();
    if count == 0 {
        return Err(Error::Shape(
            "potential normalization needs a valid entry".into(),
        ));
    }
    let c = count as f64;
    let mean = values
        .iter()
        .zip(valid)
        .filter(|(_, v)| **v)
        .map(|(x, _)| x)
        .sum::<f64>()
        / c;
    let var = values
        .iter()
        .zip(valid)
        .filter(|(_, v)| **v)
        .map(|(x, _)| (x - mean) * (x - mean))
        .sum::<f64>()
        / c;
    let std = var.sqrt();
    let degenerate = std < PN_MIN_STD;
    let out = values
        .iter()
        .zip(valid)
        .map(|(x, v)| {
            if *v && !degenerate {
                (x - mean) / std
            } else {
                0.0
            }
        })
        .collect();
    Ok((
        out,
        PnStats {
            mean,
            std,
            degenerate,
        },
    ))
}

/// `dL/dx` from `dL/dy`, given the normalized output `y`.
pub fn potential_normalize_backward(
    grad: &[f64],
    output: &[f64],
    valid: &[bool],
    stats: &PnStats,
) -> Vec<f64> {
    if stats.degenerate {
        return vec![0.0; grad.len()];
    }
    let c = valid.iter().filter(|v| **v).count() as f64;
    let mut g_mean = 0.0;
    let mut gy_mean = 0.0;
    for ((g, y), v) in grad.iter().zip(output).zip(valid) {
        if *v {
            g_mean += g;
            gy_mean += g * y;
        }
    }
    g_mean /= c;
    gy_mean /= c;
    grad.iter()
        .zip(output)
        .zip(valid)
        .map(|((g, y), v)| {
            if *v {
                (g - g_mean - y * gy_mean) / stats.std
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let (y, _) = potential_normalize(&[3.0, 3.0, 3.0], &[true; 3]).unwrap();
        assert_eq!(y, vec![0.0; 3]);
        let (y, s) = potential_normalize(&[0.0, 2.0, 100.0], &[true, true, false]).unwrap();
        assert_eq!(y, vec![-1.0, 1.0, 0.0]);
        assert_eq!((s.mean, s.std), (1.0, 1.0));
        assert!(potential_normalize(&[1.0], &[false]).is_err());
    }

    #[test]
    fn output_is_standardized() {
        let x: Vec<f64> = (0..50)
            .map(|k| ((k * 7919) % 101) as f64 * 0.13 - 2.0)
            .collect();
        let (y, _) = potential_normalize(&x, &[true; 50]).unwrap();
        let mean = y.iter().sum::<f64>() / 50.0;
        let std = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0).sqrt();
        assert!(mean.abs() < 1e-6 && (std - 1.0).abs() < 1e-6);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = [0.3, -1.2, 2.0, 0.7, 5.0];
        let valid = [true, true, true, true, false];
        let w = [0.5, -1.0, 2.0, 0.1, 3.0];
        let f = |x: &[f64]| -> f64 {
            let (y, _) = potential_normalize(x, &valid).unwrap();
            y.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let (y, s) = potential_normalize(&x, &valid).unwrap();
        let g = potential_normalize_backward(&w, &y, &valid, &s);
        for k in 0..5 {
            let mut a = x;
            a[k] += 1e-6;
            let mut b = x;
            b[k] -= 1e-6;
            let fd = (f(&a) - f(&b)) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-7, "{k}: {fd} vs {}", g[k]);
        }
    }
}
