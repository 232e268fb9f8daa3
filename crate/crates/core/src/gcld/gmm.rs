//! Two-component 1-D Gaussian mixture fit by EM, used to split the
//! self-entropy distribution into likely-shared (low mean) and
//! likely-unknown (high mean) samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_ITERS: usize = 100;
const LL_TOL: f64 = 1e-6;

/// Which side of the entropy split a sample fell on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Division {
    /// Low-entropy component: the sample is probably a shared-class one.
    LikelyShared,
    /// High-entropy component: probably an unknown-class sample.
    LikelyUnknown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    /// Component weights, low-mean component first.
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub variances: [f64; 2],
    /// Posterior of the low-mean component per sample.
    pub shared_posteriors: Vec<f64>,
    /// Total log-likelihood after each EM iteration; non-decreasing.
    pub log_likelihood: Vec<f64>,
    /// All inputs (numerically) identical: means coincide and every
    /// posterior is 0.5.
    pub degenerate: bool,
}

/// Compact serializable snapshot for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmSummary {
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub iterations: usize,
    pub degenerate: bool,
}

impl GmmFit {
    pub fn summary(&self) -> GmmSummary {
        GmmSummary {
            weights: self.weights,
            means: self.means,
            variances: self.variances,
            iterations: self.log_likelihood.len(),
            degenerate: self.degenerate,
        }
    }
}

fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mean) * (x - mean) / (2.0 * var)
}

/// Fits a two-component GMM by expectation maximization, initialized from
/// a median split. Converges when the log-likelihood improves by less
/// than `1e-6` or after 100 iterations.
pub fn fit_gmm2(values: &[f64]) -> Result<GmmFit> {
    if values.len() < 4 {
        return Err(Error::Config(format!(
            "gmm fit needs at least 4 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("gmm fit on non-finite values".into()));
    }
    let n = values.len();
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let spread = hi - lo;
    if spread < 1e-12 {
        return Ok(GmmFit {
            weights: [0.5, 0.5],
            means: [lo, lo],
            variances: [0.0, 0.0],
            shared_posteriors: vec![0.5; n],
            log_likelihood: Vec::new(),
            degenerate: true,
        });
    }
    let var_floor = 1e-12 * (spread * spread) + 1e-300;

    // Median-split initialization.
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let half = n / 2;
    let side_stats = |vs: &[f64]| {
        let mean = vs.iter().sum::<f64>() / vs.len() as f64;
        let var = vs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vs.len() as f64;
        (mean, var)
    };
    let (m0, v0) = side_stats(&sorted[..half]);
    let (m1, v1) = side_stats(&sorted[half..]);
    let global_var = side_stats(&sorted).1;
    let mut weights = [0.5f64, 0.5f64];
    let mut means = [m0, m1];
    let mut variances = [
        v0.max(0.05 * global_var).max(var_floor),
        v1.max(0.05 * global_var).max(var_floor),
    ];

    let mut resp0 = vec![0.5; n];
    let mut ll_trace = Vec::new();
    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..MAX_ITERS {
        // E-step in log space.
        let mut ll = 0.0;
        for (i, &x) in values.iter().enumerate() {
            let a0 = weights[0].max(1e-300).ln() + log_normal_pdf(x, means[0], variances[0]);
            let a1 = weights[1].max(1e-300).ln() + log_normal_pdf(x, means[1], variances[1]);
            let m = a0.max(a1);
            let lse = m + ((a0 - m).exp() + (a1 - m).exp()).ln();
            resp0[i] = (a0 - lse).exp();
            ll += lse;
        }
        ll_trace.push(ll);
        if (ll - prev_ll).abs() < LL_TOL {
            break;
        }
        prev_ll = ll;

        // M-step.
        let n0: f64 = resp0.iter().sum();
        let n1 = n as f64 - n0;
        weights = [n0 / n as f64, n1 / n as f64];
        if n0 > 1e-12 {
            let m = values.iter().zip(&resp0).map(|(x, r)| x * r).sum::<f64>() / n0;
            let v = values
                .iter()
                .zip(&resp0)
                .map(|(x, r)| r * (x - m) * (x - m))
                .sum::<f64>()
                / n0;
            means[0] = m;
            variances[0] = v.max(var_floor);
        }
        if n1 > 1e-12 {
            let m = values
                .iter()
                .zip(&resp0)
                .map(|(x, r)| x * (1.0 - r))
                .sum::<f64>()
                / n1;
            let v = values
                .iter()
                .zip(&resp0)
                .map(|(x, r)| (1.0 - r) * (x - m) * (x - m))
                .sum::<f64>()
                / n1;
            means[1] = m;
            variances[1] = v.max(var_floor);
        }
    }

    // Order components by mean so index 0 is the low-entropy one.
    if means[0] > means[1] {
        means.swap(0, 1);
        variances.swap(0, 1);
        weights.swap(0, 1);
        for r in &mut resp0 {
            *r = 1.0 - *r;
        }
    }
    Ok(GmmFit {
        weights,
        means,
        variances,
        shared_posteriors: resp0,
        log_likelihood: ll_trace,
        degenerate: false,
    })
}

/// Thresholds the shared posteriors: `w_i >= sigma` lands in the
/// likely-shared set.
pub fn divide_samples(fit: &GmmFit, sigma: f64) -> Result<Vec<Division>> {
    if !(0.0..=1.0).contains(&sigma) {
        return Err(Error::Config(format!(
            "division threshold sigma must be in [0,1], got {sigma}"
        )));
    }
    Ok(fit
        .shared_posteriors
        .iter()
        .map(|&w| {
            if w >= sigma {
                Division::LikelyShared
            } else {
                Division::LikelyUnknown
            }
        })
        .collect())
}
