//! Score-threshold fitting shared by the 2D and 3D detectors.
//!
//! Decision rule: `score > t` is an attack. Candidates are the midpoints
//! between adjacent distinct scores plus one value below the minimum (all
//! attack) and the maximum itself (all bona fide). The winner minimizes the
//! number of misclassifications, then `|APCER - BPCER|`, then takes the
//! lowest candidate.

use crate::error::{Error, Result};
use crate::types::Class;

/// Errors made by threshold `t` on `scores`, as `(attack_errors, bonafide_errors)`.
pub fn errors_at(scores: &[(f64, Class)], t: f64) -> (usize, usize) {
    scores.iter().fold((0, 0), |(a, b), &(s, c)| match c {
        Class::Attack if s <= t => (a + 1, b),
        Class::BonaFide if s > t => (a, b + 1),
        _ => (a, b),
    })
}

/// Candidate thresholds in ascending order.
pub fn candidates(scores: &[(f64, Class)]) -> Vec<f64> {
    let mut distinct: Vec<f64> = scores.iter().map(|&(s, _)| s).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let (Some(&lo), Some(&hi)) = (distinct.first(), distinct.last()) else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(distinct.len() + 1);
    out.push(lo - lo.abs().max(1.0));
    out.extend(distinct.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    out.push(hi);
    out
}

pub fn fit_threshold(scores: &[(f64, Class)]) -> Result<f64> {
    if let Some((s, _)) = scores.iter().find(|(s, _)| !s.is_finite()) {
        return Err(Error::InvalidInput(format!("score {s} is not finite")));
    }
    let attacks = scores.iter().filter(|(_, c)| *c == Class::Attack).count();
    let bonafides = scores.len() - attacks;
    if attacks == 0 {
        return Err(Error::SingleClass("no attack samples"));
    }
    if bonafides == 0 {
        return Err(Error::SingleClass("no bona fide samples"));
    }

    // Sweep candidates in ascending order over the sorted scores, tracking how
    // many of each class sit at or below the current threshold.
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut idx = 0;
    let (mut attacks_below, mut bonafide_below) = (0usize, 0usize);

    let mut best: Option<(usize, f64, f64)> = None;
    for t in candidates(scores) {
        while idx < sorted.len() && sorted[idx].0 <= t {
            match sorted[idx].1 {
                Class::Attack => attacks_below += 1,
                Class::BonaFide => bonafide_below += 1,
            }
            idx += 1;
        }
        let attack_errors = attacks_below;
        let bonafide_errors = bonafides - bonafide_below;
        let errors = attack_errors + bonafide_errors;
        let imbalance = (attack_errors as f64 / attacks as f64
            - bonafide_errors as f64 / bonafides as f64)
            .abs();
        let better = match best {
            None => true,
            Some((e, gap, _)) => errors < e || (errors == e && imbalance < gap),
        };
        if better {
            best = Some((errors, imbalance, t));
        }
    }
    Ok(best.expect("at least two samples yield candidates").2)
}
