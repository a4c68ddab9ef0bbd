//! Monte Carlo accumulators and goodness-of-fit statistics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{domain, Result};
use crate::rng::{split_budget, substream, Stream};

/// Running mean and variance (Welford), mergeable across workers.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Pooled combination of two accumulators.
    pub fn merge(&mut self, o: &Welford) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * (self.n as f64) * (o.n as f64) / n as f64;
        self.n = n;
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            return f64::INFINITY;
        }
        (self.variance() / self.n as f64).sqrt()
    }
}

/// Monte Carlo budget: sample count, root seed and worker count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { samples: 100_000, seed: 42, workers: 1 }
    }
}

impl McConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        McConfig { samples, seed, workers: 1 }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: u64,
}

/// Runs `work(stream, count)` on each worker's substream and merges the
/// accumulators in worker order.
pub fn run_workers<F>(cfg: &McConfig, stream_offset: u64, work: F) -> Result<Welford>
where
    F: Fn(&mut Stream, usize) -> Result<Welford> + Sync,
{
    if cfg.samples == 0 {
        return Err(domain("Monte Carlo budget must be positive"));
    }
    let shares = split_budget(cfg.samples, cfg.workers);
    let results: Vec<Result<Welford>> = if shares.len() == 1 {
        let mut rng = substream(cfg.seed, stream_offset);
        vec![work(&mut rng, shares[0])]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = shares
                .iter()
                .enumerate()
                .map(|(w, &count)| {
                    let work = &work;
                    s.spawn(move || {
                        let mut rng = substream(cfg.seed, stream_offset + w as u64);
                        work(&mut rng, count)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        })
    };
    let mut acc = Welford::default();
    for r in results {
        acc.merge(&r?);
    }
    Ok(acc)
}

/// Two-sided one-sample Kolmogorov–Smirnov statistic of `samples` against
/// `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the KS statistic `d` at sample size `n`, with
/// Stephens' finite-sample correction.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=200 {
        let j = j as f64;
        let term = (-2.0 * j * j * lambda * lambda).exp();
        sum += if j as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness-of-fit of observed counts against expected counts.
/// Bins with expected count below 5 are pooled into their neighbour.
pub fn chi_square_gof(observed: &[u64], expected: &[f64]) -> Result<ChiSquareResult> {
    if observed.len() != expected.len() || observed.is_empty() {
        return Err(domain("observed and expected bins must match and be non-empty"));
    }
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (&o, &e) in observed.iter().zip(expected) {
        o_acc += o as f64;
        e_acc += e;
        if e_acc >= 5.0 {
            bins.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 || o_acc > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += o_acc;
                last.1 += e_acc;
            }
            None => bins.push((o_acc, e_acc)),
        }
    }
    if bins.len() < 2 {
        return Err(domain("too few populated bins for a chi-square test"));
    }
    let statistic: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = bins.len() - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| domain(e.to_string()))?;
    Ok(ChiSquareResult { statistic, dof, p_value: dist.sf(statistic) })
}
