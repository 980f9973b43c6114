//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

/// |S ∩ G| / |S ∪ G| by hashing.
pub fn iou_by_sets(selected: &BTreeSet<usize>, gold: &BTreeSet<usize>) -> f64 {
    let s: HashSet<usize> = selected.iter().copied().collect();
    let g: HashSet<usize> = gold.iter().copied().collect();
    let union = s.union(&g).count();
    if union == 0 {
        return 0.0;
    }
    s.intersection(&g).count() as f64 / union as f64
}

/// Maximum one-to-one matching between selected and gold frames within
/// `tolerance`, by augmenting paths.
pub fn max_matching(selected: &[usize], gold: &[usize], tolerance: usize) -> usize {
    fn augment(s: usize, selected: &[usize], gold: &[usize], w: usize, seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for g in 0..gold.len() {
            if seen[g] || selected[s].abs_diff(gold[g]) > w {
                continue;
            }
            seen[g] = true;
            if owner[g].is_none() || augment(owner[g].unwrap(), selected, gold, w, seen, owner) {
                owner[g] = Some(s);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; gold.len()];
    (0..selected.len())
        .filter(|&s| augment(s, selected, gold, tolerance, &mut vec![false; gold.len()], &mut owner))
        .count()
}

/// Nearest other context frame by linear scan; ties go to the later frame.
pub fn nearest_interval(context: &[usize], key: usize) -> (usize, usize) {
    let mut best: Option<usize> = None;
    for &f in context {
        if f == key {
            continue;
        }
        best = match best {
            None => Some(f),
            Some(b) => {
                let (df, db) = (f.abs_diff(key), b.abs_diff(key));
                if df < db || (df == db && f > b) {
                    Some(f)
                } else {
                    Some(b)
                }
            }
        };
    }
    let n = best.expect("context has another frame");
    (key.min(n), key.max(n))
}

/// Merges until no two intervals share more than an endpoint.
pub fn merge_to_fixpoint(mut ivs: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    loop {
        let mut merged = false;
        'outer: for i in 0..ivs.len() {
            for j in 0..ivs.len() {
                if i != j && ivs[i].0.max(ivs[j].0) < ivs[i].1.min(ivs[j].1) {
                    let (a, b) = (ivs[i], ivs[j]);
                    ivs[i] = (a.0.min(b.0), a.1.max(b.1));
                    ivs.remove(j);
                    merged = true;
                    break 'outer;
                }
            }
        }
        if !merged {
            break;
        }
    }
    ivs.sort();
    ivs.dedup();
    ivs
}

pub fn interior_capacity((lo, hi): (usize, usize)) -> usize {
    (hi - lo).saturating_sub(1)
}

/// Checks a re-sampling result against the brute-force interval model.
/// Returns a description of the first violation.
pub fn check_resample(
    context: &[usize],
    selected: &BTreeSet<usize>,
    n_max: usize,
    intervals: &[(usize, usize)],
    slots: &[usize],
    output: &[usize],
) -> Result<(), String> {
    let expected = merge_to_fixpoint(selected.iter().map(|&k| nearest_interval(context, k)).collect());
    if expected != intervals {
        return Err(format!("intervals {intervals:?}, expected {expected:?}"));
    }
    let capacity: usize = expected.iter().map(|&iv| interior_capacity(iv)).sum();
    let total: usize = slots.iter().sum();
    if total != n_max.min(capacity) {
        return Err(format!("slot total {total}, expected {}", n_max.min(capacity)));
    }
    for (&iv, &s) in expected.iter().zip(slots) {
        if s > interior_capacity(iv) {
            return Err(format!("{s} slots exceed capacity of {iv:?}"));
        }
    }
    if output.len() > n_max + selected.len() {
        return Err(format!("output has {} frames", output.len()));
    }
    if !output.windows(2).all(|w| w[0] < w[1]) {
        return Err("output is not strictly increasing".into());
    }
    if !selected.iter().all(|s| output.contains(s)) {
        return Err("a selected key was dropped".into());
    }
    for &f in output {
        let inside = expected.iter().any(|&(lo, hi)| lo < f && f < hi);
        if !inside && !selected.contains(&f) {
            return Err(format!("frame {f} is outside every interval"));
        }
    }
    let sampled = output.iter().filter(|f| !selected.contains(f)).count();
    if sampled > total {
        return Err(format!("{sampled} sampled frames for {total} slots"));
    }
    Ok(())
}
