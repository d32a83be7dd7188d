//! Classification and ranking metrics.

use crate::error::{Error, Result};

pub fn accuracy(predicted: &[u8], truth: &[u8]) -> f64 {
    assert_eq!(predicted.len(), truth.len());
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len() as f64
}

/// Average precision of `scores` against binary `labels`: the mean over
/// positives of the precision at that positive's rank. Items are ranked by
/// descending score with ties kept in input order. A set without both
/// classes has AP 0.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> f64 {
    assert_eq!(scores.len(), labels.len());
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == labels.len() {
        log::warn!("average precision over a single-class set is reported as 0");
        return 0.0;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    // (hits, rank) at every positive
    let steps: Vec<(u128, u128)> = order
        .iter()
        .enumerate()
        .filter(|(_, &i)| labels[i] == 1)
        .scan(0u128, |hits, (k, _)| {
            *hits += 1;
            Some((*hits, k as u128 + 1))
        })
        .collect();
    exact_mean(&steps, positives as u128).unwrap_or_else(|| {
        steps.iter().map(|&(h, r)| h as f64 / r as f64).sum::<f64>() / positives as f64
    })
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `sum(h / r) / count` rounded once, or `None` when the reduced fraction
/// outgrows exact integer arithmetic.
fn exact_mean(steps: &[(u128, u128)], count: u128) -> Option<f64> {
    let (mut num, mut den) = (0u128, 1u128);
    for &(h, r) in steps {
        num = num.checked_mul(r)?.checked_add(h.checked_mul(den)?)?;
        den = den.checked_mul(r)?;
        let g = gcd(num, den);
        (num, den) = (num / g, den / g);
    }
    den = den.checked_mul(count)?;
    let g = gcd(num, den);
    (num, den) = (num / g, den / g);
    const EXACT: u128 = 1 << f64::MANTISSA_DIGITS;
    (num <= EXACT && den <= EXACT).then(|| num as f64 / den as f64)
}

/// 1-based ranks; tied values share the average of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks. Zero
/// when either side is constant.
pub fn spearman(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Data(format!(
            "spearman: {} predictions for {} targets",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.len() < 2 {
        return Err(Error::Data("spearman needs at least 2 samples".into()));
    }
    let (rx, ry) = (average_ranks(predicted), average_ranks(truth));
    let mean = (rx.len() + 1) as f64 / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in rx.iter().zip(&ry) {
        let (dx, dy) = (x - mean, y - mean);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}
