//! Brute-force replay of the greedy max-min permutation selection.

#![allow(dead_code)]

pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for v in 0..used.len() {
            if !used[v] {
                used[v] = true;
                prefix.push(v);
                rec(prefix, used, out);
                prefix.pop();
                used[v] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out.sort();
    out
}

pub fn distance(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Identity first, then repeatedly the candidate whose minimum distance to the
/// chosen set is largest; ties go to the lexicographically smallest.
pub fn oracle(n: usize, count: usize) -> Vec<Vec<usize>> {
    let all = all_permutations(n);
    let mut chosen = vec![all[0].clone()];
    while chosen.len() < count {
        let mut best: Option<(usize, &Vec<usize>)> = None;
        // chosen entries sit at distance 0 and can never win
        for cand in &all {
            let d = chosen.iter().map(|c| distance(c, cand)).min().unwrap();
            if best.is_none_or(|(bd, _)| d > bd) {
                best = Some((d, cand));
            }
        }
        chosen.push(best.unwrap().1.clone());
    }
    chosen
}

pub fn min_pairwise(set: &[Vec<usize>]) -> usize {
    let mut m = usize::MAX;
    for i in 0..set.len() {
        for j in i + 1..set.len() {
            m = m.min(distance(&set[i], &set[j]));
        }
    }
    m
}
