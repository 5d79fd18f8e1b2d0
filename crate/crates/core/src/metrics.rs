//! SRCC, PLCC, RMSE and RMAE.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A correlation value; `degenerate` is set (and `value` is 0) when either
/// input has zero variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correlation {
    pub value: f64,
    pub degenerate: bool,
}

fn check_pair(pred: &[f64], gt: &[f64], min_len: usize) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::shape("metric inputs", pred.len(), gt.len()));
    }
    if pred.len() < min_len {
        return Err(Error::Invalid(format!(
            "metric needs at least {min_len} samples, got {}",
            pred.len()
        )));
    }
    if pred.iter().chain(gt).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("metric input"));
    }
    Ok(())
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|a| *a == v[0])
}

fn pearson(x: &[f64], y: &[f64]) -> Correlation {
    // Tested directly: the mean of equal values can round off them, which
    // would leave a tiny spurious variance.
    if is_constant(x) || is_constant(y) {
        return Correlation {
            value: 0.0,
            degenerate: true,
        };
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Correlation {
            value: 0.0,
            degenerate: true,
        };
    }
    Correlation {
        value: (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// 1-based ranks; ties share the average of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn srcc(pred: &[f64], gt: &[f64]) -> Result<Correlation> {
    check_pair(pred, gt, 2)?;
    Ok(pearson(&average_ranks(pred), &average_ranks(gt)))
}

pub fn plcc(pred: &[f64], gt: &[f64]) -> Result<Correlation> {
    check_pair(pred, gt, 2)?;
    Ok(pearson(pred, gt))
}

pub fn rmse(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_pair(pred, gt, 1)?;
    let mse = pred.iter().zip(gt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

pub fn mae(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_pair(pred, gt, 1)?;
    Ok(pred.iter().zip(gt).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64)
}

/// Square root of the mean absolute error.
pub fn rmae(pred: &[f64], gt: &[f64]) -> Result<f64> {
    Ok(mae(pred, gt)?.sqrt())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RmaeMode {
    /// `sqrt(mean |pred - gt|)`
    #[default]
    Root,
    /// Plain mean absolute error, for comparison with tables that report MAE.
    Plain,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub n: usize,
    pub srcc: f64,
    pub plcc: f64,
    pub rmse: f64,
    pub rmae: f64,
    pub srcc_degenerate: bool,
    pub plcc_degenerate: bool,
}

impl MetricReport {
    pub fn compute(pred: &[f64], gt: &[f64], mode: RmaeMode) -> Result<Self> {
        let s = srcc(pred, gt)?;
        let p = plcc(pred, gt)?;
        Ok(MetricReport {
            n: pred.len(),
            srcc: s.value,
            plcc: p.value,
            rmse: rmse(pred, gt)?,
            rmae: match mode {
                RmaeMode::Root => rmae(pred, gt)?,
                RmaeMode::Plain => mae(pred, gt)?,
            },
            srcc_degenerate: s.degenerate,
            plcc_degenerate: p.degenerate,
        })
    }

    pub fn degenerate(&self) -> bool {
        self.srcc_degenerate || self.plcc_degenerate
    }

    /// `key = value` lines.
    pub fn to_kv_block(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n = {}", self.n);
        let _ = writeln!(out, "srcc = {:.6}", self.srcc);
        let _ = writeln!(out, "plcc = {:.6}", self.plcc);
        let _ = writeln!(out, "rmse = {:.6}", self.rmse);
        let _ = writeln!(out, "rmae = {:.6}", self.rmae);
        let _ = writeln!(out, "degenerate = {}", self.degenerate());
        out
    }

    pub const ROW_HEADER: &'static str = "srcc\tplcc\trmse\trmae\tn\tdegenerate";

    pub fn to_row(&self) -> String {
        format!(
            "{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
            self.srcc,
            self.plcc,
            self.rmse,
            self.rmae,
            self.n,
            self.degenerate()
        )
    }
}

/// Percentile bootstrap interval of `metric` with a fixed seed.
pub fn bootstrap_interval(
    pred: &[f64],
    gt: &[f64],
    metric: impl Fn(&[f64], &[f64]) -> Result<f64>,
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    check_pair(pred, gt, 2)?;
    if resamples == 0 || !(0.0 < level && level < 1.0) {
        return Err(Error::Invalid("bootstrap needs resamples > 0 and 0 < level < 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = pred.len();
    let mut stats = Vec::with_capacity(resamples);
    let (mut p, mut g) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..resamples {
        for k in 0..n {
            let i = rng.gen_range(0..n);
            p[k] = pred[i];
            g[k] = gt[i];
        }
        stats.push(metric(&p, &g)?);
    }
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let lo = ((tail * resamples as f64).floor() as usize).min(resamples - 1);
    let hi = (((1.0 - tail) * resamples as f64).ceil() as usize).clamp(1, resamples) - 1;
    Ok((stats[lo], stats[hi]))
}
