//! Synthetic preference oracles and the average-rank combiner that turns k
//! candidates into a single (preferred, rejected) pair.
//!
//! Two oracle families: a score oracle (distance to a per-prompt target,
//! preferences via a logistic map of the score gap) and an intransitive
//! oracle built from angular sectors with cyclic dominance, which no
//! Bradley-Terry reward vector can represent.

use crate::Error;

/// Score oracle: `score(x, c) = -||x - mu_c||^2`, preferences from the
/// logistic of the sharpened score gap.
#[derive(Clone, Debug)]
pub struct ScoreOracle {
    /// Per-prompt target points.
    pub targets: Vec<Vec<f64>>,
    /// Sharpness of the score-to-probability map.
    pub kappa: f64,
}

/// Cyclic dominance outcome between two sectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dominance {
    Win,
    Lose,
    Tie,
}

/// Intransitive oracle: the plane around a per-prompt center is split into
/// `k` angular sectors; sector i strictly beats sector i+1 (mod k).
#[derive(Clone, Debug)]
pub struct IntransitiveOracle {
    pub centers: Vec<Vec<f64>>,
    pub k: usize,
    table: Vec<Dominance>, // k x k, row = own sector, col = opponent sector
}

impl IntransitiveOracle {
    pub fn new(centers: Vec<Vec<f64>>, k: usize) -> Result<Self, Error> {
        if k < 3 {
            return Err(Error::Config(format!("need at least 3 sectors, got {k}")));
        }
        if centers.iter().any(|c| c.len() != 2) {
            return Err(Error::Config("intransitive oracle centers must be 2-D".into()));
        }
        let mut table = vec![Dominance::Tie; k * k];
        for i in 0..k {
            for j in 0..k {
                let d = (j + k - i) % k;
                table[i * k + j] = if d == 0 || (k % 2 == 0 && d == k / 2) {
                    Dominance::Tie
                } else if d <= (k - 1) / 2 {
                    Dominance::Win
                } else {
                    Dominance::Lose
                };
            }
        }
        Ok(IntransitiveOracle { centers, k, table })
    }

    pub fn sector(&self, x: &[f64], c: usize) -> usize {
        let cx = &self.centers[c];
        let angle = (x[1] - cx[1]).atan2(x[0] - cx[0]); // (-pi, pi]
        let frac = (angle + std::f64::consts::PI) / std::f64::consts::TAU; // [0, 1)
        ((frac * self.k as f64) as usize).min(self.k - 1)
    }

    pub fn dominance(&self, own: usize, opp: usize) -> Dominance {
        self.table[own * self.k + opp]
    }
}

#[derive(Clone, Debug)]
pub enum Oracle {
    Score(ScoreOracle),
    Intransitive(IntransitiveOracle),
}

impl Oracle {
    /// Deterministic score when one exists (score oracles only).
    pub fn score(&self, x: &[f64], c: usize) -> Option<f64> {
        match self {
            Oracle::Score(o) => {
                let mu = &o.targets[c];
                Some(-x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            }
            Oracle::Intransitive(_) => None,
        }
    }

    /// Preference probability P(x beats x' | c), with
    /// P(x beats x') + P(x' beats x) = 1 and self-comparison = 0.5.
    pub fn pairwise_pref(&self, x: &[f64], x_other: &[f64], c: usize) -> f64 {
        match self {
            Oracle::Score(o) => {
                let sa = self.score(x, c).unwrap();
                let sb = self.score(x_other, c).unwrap();
                crate::losses::sigmoid(o.kappa * (sa - sb))
            }
            Oracle::Intransitive(o) => {
                match o.dominance(o.sector(x, c), o.sector(x_other, c)) {
                    Dominance::Win => 1.0,
                    Dominance::Lose => 0.0,
                    Dominance::Tie => 0.5,
                }
            }
        }
    }
}

/// Per-oracle ranks, average ranks, and the selected best/worst candidates.
#[derive(Clone, Debug)]
pub struct RankResult {
    /// `ranks[o][i]` is candidate i's rank (1 = best) under oracle o.
    pub ranks: Vec<Vec<usize>>,
    pub avg_ranks: Vec<f64>,
    pub best: usize,
    pub worst: usize,
}

/// Rank by descending key; ties broken by lower candidate index.
fn rank_by_key(keys: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[b].partial_cmp(&keys[a]).unwrap().then(a.cmp(&b)));
    let mut ranks = vec![0usize; keys.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = pos + 1;
    }
    ranks
}

/// Rank `k` candidates under every oracle and average. Score oracles rank by
/// descending score; pairwise-only oracles rank by Copeland count of
/// pairwise wins. Best = argmin of the average rank, worst = argmax, ties
/// broken by the lowest candidate index.
pub fn rank_candidates(
    candidates: &[Vec<f64>],
    c: usize,
    oracles: &[Oracle],
) -> Result<RankResult, Error> {
    let k = candidates.len();
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 candidates, got {k}")));
    }
    if oracles.is_empty() {
        return Err(Error::Config("need at least one oracle".into()));
    }
    let mut ranks = Vec::with_capacity(oracles.len());
    for oracle in oracles {
        let keys: Vec<f64> = match oracle {
            Oracle::Score(_) => candidates
                .iter()
                .map(|x| oracle.score(x, c).unwrap())
                .collect(),
            Oracle::Intransitive(_) => {
                // Copeland count: wins minus losses across all opponents.
                (0..k)
                    .map(|i| {
                        let mut s = 0.0;
                        for j in 0..k {
                            if i == j {
                                continue;
                            }
                            let p = oracle.pairwise_pref(&candidates[i], &candidates[j], c);
                            if p > 0.5 {
                                s += 1.0;
                            } else if p < 0.5 {
                                s -= 1.0;
                            }
                        }
                        s
                    })
                    .collect()
            }
        };
        ranks.push(rank_by_key(&keys));
    }
    let avg_ranks: Vec<f64> = (0..k)
        .map(|i| ranks.iter().map(|r| r[i] as f64).sum::<f64>() / oracles.len() as f64)
        .collect();
    let mut best = 0;
    let mut worst = 0;
    for i in 1..k {
        if avg_ranks[i] < avg_ranks[best] {
            best = i;
        }
        if avg_ranks[i] > avg_ranks[worst] {
            worst = i;
        }
    }
    Ok(RankResult { ranks, avg_ranks, best, worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;

    fn score_oracle() -> Oracle {
        Oracle::Score(ScoreOracle { targets: vec![vec![0.0, 0.0], vec![2.0, 1.0]], kappa: 1.0 })
    }

    fn rps_oracle() -> Oracle {
        Oracle::Intransitive(IntransitiveOracle::new(vec![vec![0.0, 0.0]], 3).unwrap())
    }

    /// A point in the middle of sector s (k=3 sectors over (-pi, pi]).
    fn sector_point(s: usize) -> Vec<f64> {
        let angle = -std::f64::consts::PI + (s as f64 + 0.5) * std::f64::consts::TAU / 3.0;
        vec![angle.cos(), angle.sin()]
    }

    #[test]
    fn self_comparison_is_half() {
        let x = vec![0.7, -0.3];
        assert_eq!(score_oracle().pairwise_pref(&x, &x, 0), 0.5);
        assert_eq!(rps_oracle().pairwise_pref(&x, &x, 0), 0.5);
    }

    #[test]
    fn score_pref_monotone_in_gap() {
        let o = score_oracle();
        let at_target = vec![0.0, 0.0];
        let near = vec![1.0, 0.0];
        let far = vec![10.0, 0.0];
        let p_near = o.pairwise_pref(&at_target, &near, 0);
        let p_far = o.pairwise_pref(&at_target, &far, 0);
        assert!(p_near > 0.5);
        assert!(p_far > p_near);
        assert!(p_far > 0.9999);
    }

    #[test]
    fn complement_law() {
        let mut rng = StreamRng::new(1).derive("pairs");
        for oracle in [score_oracle(), rps_oracle()] {
            for _ in 0..50 {
                let a = rng.normal_vec(2);
                let b = rng.normal_vec(2);
                let p = oracle.pairwise_pref(&a, &b, 0);
                let q = oracle.pairwise_pref(&b, &a, 0);
                assert!((p + q - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn intransitive_cycle_is_strict() {
        let o = rps_oracle();
        let (a, b, c) = (sector_point(0), sector_point(1), sector_point(2));
        assert_eq!(o.pairwise_pref(&a, &b, 0), 1.0);
        assert_eq!(o.pairwise_pref(&b, &c, 0), 1.0);
        assert_eq!(o.pairwise_pref(&c, &a, 0), 1.0);
    }

    #[test]
    fn intransitive_table_antisymmetric() {
        for k in [3, 4, 5, 7] {
            let o = IntransitiveOracle::new(vec![vec![0.0, 0.0]], k).unwrap();
            for i in 0..k {
                for j in 0..k {
                    let d = o.dominance(i, j);
                    let r = o.dominance(j, i);
                    match d {
                        Dominance::Win => assert_eq!(r, Dominance::Lose),
                        Dominance::Lose => assert_eq!(r, Dominance::Win),
                        Dominance::Tie => assert_eq!(r, Dominance::Tie),
                    }
                }
            }
        }
        assert!(IntransitiveOracle::new(vec![vec![0.0, 0.0]], 2).is_err());
    }

    #[test]
    fn rank_two_candidates() {
        let o = score_oracle();
        // Scores -1 and 0 at prompt 0: second candidate is best.
        let cands = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        let r = rank_candidates(&cands, 0, &[o]).unwrap();
        assert_eq!(r.ranks[0], vec![2, 1]);
        assert_eq!(r.best, 1);
        assert_eq!(r.worst, 0);
        assert!(rank_candidates(&cands[..1], 0, &[score_oracle()]).is_err());
    }

    #[test]
    fn average_rank_hand_case() {
        // Three oracles over two candidates with ranks (1,2), (2,1), (1,2):
        // averages (4/3, 5/3), best = 0.
        // Oracle 1 and 3 prefer the origin; oracle 2 prefers (2, 0).
        let o1 = Oracle::Score(ScoreOracle { targets: vec![vec![0.0, 0.0]], kappa: 1.0 });
        let o2 = Oracle::Score(ScoreOracle { targets: vec![vec![2.0, 0.0]], kappa: 1.0 });
        let o3 = Oracle::Score(ScoreOracle { targets: vec![vec![0.0, 0.0]], kappa: 1.0 });
        let cands = vec![vec![0.0, 0.0], vec![2.0, 0.0]];
        let r = rank_candidates(&cands, 0, &[o1, o2, o3]).unwrap();
        assert!((r.avg_ranks[0] - 4.0 / 3.0).abs() < 1e-15);
        assert!((r.avg_ranks[1] - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.best, 0);
        assert_eq!(r.worst, 1);
    }

    #[test]
    fn rank_copeland_on_cycle() {
        // One candidate per sector: a perfect cycle, all Copeland counts 0,
        // ranks all tie and resolve by index.
        let cands = vec![sector_point(0), sector_point(1), sector_point(2)];
        let r = rank_candidates(&cands, 0, &[rps_oracle()]).unwrap();
        assert_eq!(r.ranks[0], vec![1, 2, 3]);
        assert_eq!(r.best, 0);
        assert_eq!(r.worst, 2);
    }

    #[test]
    fn rank_permutation_equivariance() {
        let o = score_oracle();
        let mut rng = StreamRng::new(2).derive("cands");
        let cands: Vec<Vec<f64>> = (0..5).map(|_| rng.normal_vec(2)).collect();
        let r = rank_candidates(&cands, 1, &[o.clone()]).unwrap();
        // Rotate the candidate list by 2.
        let perm: Vec<usize> = (0..5).map(|i| (i + 2) % 5).collect();
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| cands[i].clone()).collect();
        let rp = rank_candidates(&permuted, 1, &[o]).unwrap();
        assert_eq!(perm[rp.best], r.best);
        assert_eq!(perm[rp.worst], r.worst);
    }
}
