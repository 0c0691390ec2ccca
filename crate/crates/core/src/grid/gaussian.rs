//! Least-squares fit of `A * exp(-(x - mu)^2 / (2 sigma^2))` to histogram
//! bins.
//!
//! The solver is a damped Gauss-Newton iteration (Levenberg-Marquardt style
//! diagonal damping). A step is only accepted if it lowers the residual sum
//! of squares, so the SSE sequence is non-increasing. Starting values come
//! from the count-weighted moments of the bins.

use serde::{Deserialize, Serialize};

use super::DisplacementHistogram;
use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 200;
const RELATIVE_SSE_TOLERANCE: f64 = 1e-10;
const PARAMETERS: usize = 3;
const INITIAL_DAMPING: f64 = 1e-3;
const MAX_DAMPING: f64 = 1e16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub amplitude: f64,
    pub mean_m: f64,
    pub sigma_m: f64,
}

impl GaussianParams {
    pub fn eval(&self, x: f64) -> f64 {
        let z = (x - self.mean_m) / self.sigma_m;
        self.amplitude * (-0.5 * z * z).exp()
    }

    fn to_array(self) -> [f64; 3] {
        [self.amplitude, self.mean_m, self.sigma_m]
    }

    fn from_array(p: [f64; 3]) -> Self {
        GaussianParams {
            amplitude: p[0],
            mean_m: p[1],
            sigma_m: p[2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub mean_m: f64,
    pub sigma_m: f64,
    pub r_squared: f64,
    pub adjusted_r_squared: f64,
    pub bin_width_m: f64,
    pub bin_counts: Vec<f64>,
    pub iterations: usize,
    /// SSE at the start and after every accepted step.
    pub sse_history: Vec<f64>,
}

impl GaussianFit {
    pub fn params(&self) -> GaussianParams {
        GaussianParams {
            amplitude: self.amplitude,
            mean_m: self.mean_m,
            sigma_m: self.sigma_m,
        }
    }
}

/// Fits the histogram over all bins from zero to the last non-empty one.
pub fn fit_gaussian(hist: &DisplacementHistogram) -> Result<GaussianFit> {
    let nonzero = hist.nonzero_bins();
    if nonzero < PARAMETERS + 1 {
        return Err(Error::DegenerateHistogram(format!(
            "{nonzero} non-empty bin(s); at least {} are needed",
            PARAMETERS + 1
        )));
    }
    let ys: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    fit_gaussian_curve(&hist.bin_centers(), &ys)
}

/// Fits the curve to arbitrary `(x, y)` points; `bin_width_m` in the result
/// is the spacing of the first two abscissae.
pub fn fit_gaussian_curve(xs: &[f64], ys: &[f64]) -> Result<GaussianFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            context: "gaussian fit",
            expected: xs.len(),
            got: ys.len(),
        });
    }
    let n = xs.len();
    if n < PARAMETERS + 2 {
        return Err(Error::DegenerateHistogram(format!(
            "{n} bins leave no degree of freedom for the adjusted R²"
        )));
    }
    let mean_y = ys.iter().sum::<f64>() / n as f64;
    let sst: f64 = ys.iter().map(|y| (y - mean_y).powi(2)).sum();
    if sst == 0.0 {
        return Err(Error::DegenerateHistogram("all bins are equal".into()));
    }

    let init = moment_start(xs, ys)?;
    let (params, iterations, sse_history) = levenberg_marquardt(xs, ys, init, sst)?;
    let sse = *sse_history.last().expect("history starts with initial SSE");
    let r_squared = 1.0 - sse / sst;
    let adjusted_r_squared =
        1.0 - (1.0 - r_squared) * (n as f64 - 1.0) / (n as f64 - PARAMETERS as f64 - 1.0);
    Ok(GaussianFit {
        amplitude: params.amplitude,
        mean_m: params.mean_m,
        sigma_m: params.sigma_m,
        r_squared,
        adjusted_r_squared,
        bin_width_m: xs[1] - xs[0],
        bin_counts: ys.to_vec(),
        iterations,
        sse_history,
    })
}

fn moment_start(xs: &[f64], ys: &[f64]) -> Result<GaussianParams> {
    let weights: Vec<f64> = ys.iter().map(|y| y.max(0.0)).collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateHistogram("no positive mass".into()));
    }
    let mean = xs.iter().zip(&weights).map(|(x, w)| x * w).sum::<f64>() / total;
    let var = xs
        .iter()
        .zip(&weights)
        .map(|(x, w)| w * (x - mean).powi(2))
        .sum::<f64>()
        / total;
    let spacing = (xs[xs.len() - 1] - xs[0]).abs() / (xs.len() - 1) as f64;
    Ok(GaussianParams {
        amplitude: ys.iter().cloned().fold(f64::MIN, f64::max),
        mean_m: mean,
        sigma_m: var.sqrt().max(spacing / 2.0),
    })
}

fn sse(xs: &[f64], ys: &[f64], p: &GaussianParams) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| (y - p.eval(x)).powi(2))
        .sum()
}

fn levenberg_marquardt(
    xs: &[f64],
    ys: &[f64],
    start: GaussianParams,
    sst: f64,
) -> Result<(GaussianParams, usize, Vec<f64>)> {
    let mut params = start;
    let mut current = sse(xs, ys, &params);
    let mut history = vec![current];
    let mut damping = INITIAL_DAMPING;

    for iteration in 1..=MAX_ITERATIONS {
        // Normal equations J^T J and J^T r.
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        let [a, mu, sigma] = params.to_array();
        for (&x, &y) in xs.iter().zip(ys) {
            let d = x - mu;
            let e = (-0.5 * d * d / (sigma * sigma)).exp();
            let grad = [
                e,
                a * e * d / (sigma * sigma),
                a * e * d * d / sigma.powi(3),
            ];
            let r = y - a * e;
            for i in 0..3 {
                jtr[i] += grad[i] * r;
                for j in 0..3 {
                    jtj[i][j] += grad[i] * grad[j];
                }
            }
        }

        let mut damped = jtj;
        for (i, row) in damped.iter_mut().enumerate() {
            row[i] += damping * jtj[i][i].max(f64::MIN_POSITIVE);
        }
        let accepted = solve3(damped, jtr).and_then(|step| {
            let p = params.to_array();
            let trial =
                GaussianParams::from_array([p[0] + step[0], p[1] + step[1], p[2] + step[2]]);
            let trial_sse = sse(xs, ys, &trial);
            (trial.sigma_m > 0.0 && trial_sse.is_finite() && trial_sse < current)
                .then_some((trial, trial_sse))
        });

        match accepted {
            Some((trial, trial_sse)) => {
                let improvement = current - trial_sse;
                params = trial;
                current = trial_sse;
                history.push(current);
                damping = (damping / 10.0).max(1e-12);
                if improvement <= RELATIVE_SSE_TOLERANCE * (current + improvement)
                    || current <= 1e-30 * sst
                {
                    return Ok((params, iteration, history));
                }
            }
            None => {
                damping *= 10.0;
                // No descent direction left at any step size: stationary point.
                if damping > MAX_DAMPING {
                    return Ok((params, iteration, history));
                }
            }
        }
    }
    Err(Error::FitDidNotConverge {
        iterations: MAX_ITERATIONS,
        last: Box::new(params),
    })
}

/// Solves a 3x3 system by Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
fn solve3(mut m: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let tail: f64 = (row + 1..3).map(|k| m[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / m[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn exact_gaussian_recovered() {
        let truth = GaussianParams {
            amplitude: 37.0,
            mean_m: 0.31,
            sigma_m: 0.08,
        };
        let xs: Vec<f64> = (0..16).map(|k| (k as f64 + 0.5) * 0.05).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| truth.eval(x)).collect();
        let fit = fit_gaussian_curve(&xs, &ys).unwrap();
        assert!((fit.r_squared - 1.0).abs() < 1e-6);
        assert!((fit.adjusted_r_squared - 1.0).abs() < 1e-6);
        assert!(rel(fit.amplitude, truth.amplitude) < 1e-6);
        assert!(rel(fit.mean_m, truth.mean_m) < 1e-6);
        assert!(rel(fit.sigma_m, truth.sigma_m) < 1e-6);
    }

    #[test]
    fn rayleigh_like_draws_fit_well() {
        // 1e4 Rayleigh draws with sigma 0.25 m, binned at 0.05 m.
        let mut rng = seeded_rng(17);
        let values: Vec<f64> = (0..10_000)
            .map(|_| {
                let e: f64 = rng.sample(StandardNormal);
                let n: f64 = rng.sample(StandardNormal);
                0.25 * e.hypot(n)
            })
            .collect();
        let hist = DisplacementHistogram::from_values(&values, 0.05).unwrap();
        let fit = fit_gaussian(&hist).unwrap();
        assert!(
            fit.adjusted_r_squared >= 0.95,
            "adj R² {}",
            fit.adjusted_r_squared
        );
        assert!(fit.adjusted_r_squared <= fit.r_squared && fit.r_squared <= 1.0);
    }

    #[test]
    fn uniform_values_fit_poorly() {
        let mut rng = seeded_rng(23);
        let values: Vec<f64> = (0..2_000).map(|_| rng.random::<f64>()).collect();
        let hist = DisplacementHistogram::from_values(&values, 0.05).unwrap();
        let fit = fit_gaussian(&hist).unwrap();
        assert!(
            fit.adjusted_r_squared < 0.5,
            "adj R² {}",
            fit.adjusted_r_squared
        );
    }

    #[test]
    fn degenerate_histograms_rejected() {
        let one_bin = DisplacementHistogram::from_values(&[0.3; 50], 0.05).unwrap();
        assert!(matches!(
            fit_gaussian(&one_bin),
            Err(Error::DegenerateHistogram(_))
        ));
        let three = DisplacementHistogram::from_values(&[0.01, 0.06, 0.11], 0.05).unwrap();
        assert!(matches!(
            fit_gaussian(&three),
            Err(Error::DegenerateHistogram(_))
        ));
        let flat = fit_gaussian_curve(&[0.0, 1.0, 2.0, 3.0, 4.0], &[2.0; 5]);
        assert!(matches!(flat, Err(Error::DegenerateHistogram(_))));
    }

    #[test]
    fn sse_never_increases() {
        let mut rng = seeded_rng(5);
        for _ in 0..50 {
            let values: Vec<f64> = (0..300)
                .map(|_| (0.3 + 0.06 * rng.sample::<f64, _>(StandardNormal)).abs())
                .collect();
            let hist = DisplacementHistogram::from_values(&values, 0.02).unwrap();
            let fit = fit_gaussian(&hist).unwrap();
            assert!(fit.sse_history.windows(2).all(|w| w[1] <= w[0]));
            assert!(fit.sigma_m > 0.0);
        }
    }

    #[test]
    fn solve3_matches_known_solution() {
        let m = [[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 4.0]];
        let x = [1.0, -2.0, 0.5];
        let b = [
            2.0 * x[0] + x[1],
            x[0] + 3.0 * x[1] + x[2],
            x[1] + 4.0 * x[2],
        ];
        let got = solve3(m, b).unwrap();
        for i in 0..3 {
            assert!((got[i] - x[i]).abs() < 1e-12);
        }
    }
}
