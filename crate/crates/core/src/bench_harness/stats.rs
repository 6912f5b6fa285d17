use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("confusion matrix must be square and nonempty")]
    NotSquare,
    #[error("confusion matrix has no observations")]
    Empty,
    #[error("result sets cover different items: {0}")]
    ItemSetMismatch(String),
}

/// `num / den` as a percentage string with `decimals` digits, rounded half
/// up in exact integer arithmetic. `None` when `den` is zero.
pub fn percent(num: u64, den: u64, decimals: u32) -> Option<String> {
    if den == 0 {
        return None;
    }
    let scale = 10u128.pow(decimals);
    let scaled = (2 * num as u128 * 100 * scale + den as u128) / (2 * den as u128);
    let whole = scaled / scale;
    if decimals == 0 {
        return Some(whole.to_string());
    }
    let frac = scaled % scale;
    Some(format!("{whole}.{frac:0width$}", width = decimals as usize))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rate {
    pub count: u64,
    pub total: u64,
}

impl Rate {
    pub fn new(count: u64, total: u64) -> Self {
        Self { count, total }
    }

    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count as f64 / self.total as f64
        }
    }

    /// "30.23%"; "0%" for an empty total.
    pub fn display(&self, decimals: u32) -> String {
        match percent(self.count, self.total, decimals) {
            Some(p) => format!("{p}%"),
            None => "0%".into(),
        }
    }
}

/// Successes over all results.
pub fn success_rate<'a>(outcomes: impl IntoIterator<Item = &'a super::Outcome>) -> Rate {
    let mut r = Rate::new(0, 0);
    for o in outcomes {
        r.total += 1;
        r.count += o.is_success() as u64;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    /// `None` when expected agreement is 1 and kappa is undefined.
    pub kappa: Option<f64>,
    pub agreement: f64,
    pub degenerate: bool,
}

/// Cohen's kappa for a square confusion matrix (rows: rater A, columns: rater B).
pub fn cohen_kappa(matrix: &[Vec<u64>]) -> Result<Kappa, StatsError> {
    let k = matrix.len();
    if k == 0 || matrix.iter().any(|r| r.len() != k) {
        return Err(StatsError::NotSquare);
    }
    let total: u64 = matrix.iter().flatten().sum();
    if total == 0 {
        return Err(StatsError::Empty);
    }
    let n = total as f64;
    let trace: u64 = (0..k).map(|i| matrix[i][i]).sum();
    let po = trace as f64 / n;
    let pe: f64 = (0..k)
        .map(|i| {
            let row: u64 = matrix[i].iter().sum();
            let col: u64 = matrix.iter().map(|r| r[i]).sum();
            (row as f64 / n) * (col as f64 / n)
        })
        .sum();
    if (1.0 - pe).abs() < 1e-15 {
        return Ok(Kappa { kappa: None, agreement: po, degenerate: true });
    }
    Ok(Kappa { kappa: Some((po - pe) / (1.0 - pe)), agreement: po, degenerate: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    pub p: f64,
    /// Set when there are no discordant pairs and `p` is 1 by convention.
    pub undefined: bool,
}

fn ln_choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

/// Exact two-sided McNemar test: a binomial test of `min(b, c)` against
/// `n = b + c` at probability 1/2, summed in log space.
pub fn mcnemar_exact(b: u64, c: u64) -> McNemar {
    let n = b + c;
    if n == 0 {
        return McNemar { p: 1.0, undefined: true };
    }
    let m = b.min(c);
    let logs: Vec<f64> = (0..=m).map(|i| ln_choose(n, i) - n as f64 * std::f64::consts::LN_2).collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tail = top.exp() * logs.iter().map(|l| (l - top).exp()).sum::<f64>();
    McNemar { p: (2.0 * tail).min(1.0), undefined: false }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub both: u64,
    pub only_a: u64,
    pub only_b: u64,
    pub union: u64,
    pub total: u64,
}

impl Coverage {
    pub fn from_counts(both: u64, only_a: u64, only_b: u64, total: u64) -> Self {
        Self { both, only_a, only_b, union: both + only_a + only_b, total }
    }

    pub fn rate(&self) -> Rate {
        Rate::new(self.union, self.total)
    }

    /// The discordant pair counts for [`mcnemar_exact`].
    pub fn discordant(&self) -> (u64, u64) {
        (self.only_a, self.only_b)
    }
}

/// Items solved by either agent. Both maps must cover the same item keys.
pub fn oracle_coverage(a: &BTreeMap<String, bool>, b: &BTreeMap<String, bool>) -> Result<Coverage, StatsError> {
    let ka: BTreeSet<&String> = a.keys().collect();
    let kb: BTreeSet<&String> = b.keys().collect();
    if ka != kb {
        let diff: Vec<&str> = ka.symmetric_difference(&kb).map(|s| s.as_str()).collect();
        return Err(StatsError::ItemSetMismatch(diff.join(", ")));
    }
    let (mut both, mut only_a, mut only_b) = (0, 0, 0);
    for (key, &sa) in a {
        match (sa, b[key]) {
            (true, true) => both += 1,
            (true, false) => only_a += 1,
            (false, true) => only_b += 1,
            _ => {}
        }
    }
    Ok(Coverage::from_counts(both, only_a, only_b, a.len() as u64))
}
