//! Exact engine for the KL-regularized two-player preference game on a
//! discrete action set: game value, exponential-weights (OMD/Hedge) update,
//! best responses, duality gap, Nash solving, and a Bradley-Terry
//! representability test.

use crate::Error;

/// Pairwise win probabilities P[i][j] = P(i beats j), validated to satisfy
/// the complement law and P[i][i] = 1/2.
#[derive(Clone, Debug)]
pub struct PreferenceMatrix {
    pub n: usize,
    p: Vec<f64>, // row-major n x n
}

impl PreferenceMatrix {
    pub fn new(n: usize, p: Vec<f64>) -> Result<Self, Error> {
        if n < 2 {
            return Err(Error::Matrix(format!("need at least 2 actions, got {n}")));
        }
        if p.len() != n * n {
            return Err(Error::Matrix(format!("expected {} entries, got {}", n * n, p.len())));
        }
        for (idx, v) in p.iter().enumerate() {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::Matrix(format!(
                    "entry out of [0,1] at ({},{}): {v}",
                    idx / n,
                    idx % n
                )));
            }
        }
        for i in 0..n {
            for j in i..n {
                let sum = p[i * n + j] + p[j * n + i];
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Matrix(format!("complement violation at ({i},{j})")));
                }
            }
        }
        Ok(PreferenceMatrix { n, p })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }

    /// Rock-paper-scissors: action i strictly beats action (i+1) mod 3.
    pub fn rock_paper_scissors() -> Self {
        PreferenceMatrix::new(3, vec![0.5, 1.0, 0.0, 0.0, 0.5, 1.0, 1.0, 0.0, 0.5]).unwrap()
    }

    /// Matrix induced by a Bradley-Terry score vector: sigmoid(r_i - r_j).
    pub fn from_scores(scores: &[f64]) -> Self {
        let n = scores.len();
        let mut p = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                p[i * n + j] = crate::losses::sigmoid(scores[i] - scores[j]);
            }
        }
        PreferenceMatrix::new(n, p).unwrap()
    }

    /// Parse the plain-text game format: first line N, then N rows of N
    /// reals. Errors carry the offending location.
    pub fn parse(text: &str) -> Result<Self, Error> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let n: usize = lines
            .next()
            .ok_or_else(|| Error::Matrix("empty input".into()))?
            .trim()
            .parse()
            .map_err(|_| Error::Matrix("first line must be the action count".into()))?;
        let mut p = Vec::with_capacity(n * n);
        for i in 0..n {
            let line = lines
                .next()
                .ok_or_else(|| Error::Matrix(format!("missing row {i}")))?;
            let row: Result<Vec<f64>, _> =
                line.split_whitespace().map(str::parse::<f64>).collect();
            let row = row.map_err(|e| Error::Matrix(format!("row {i}: {e}")))?;
            if row.len() != n {
                return Err(Error::Matrix(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            p.extend(row);
        }
        PreferenceMatrix::new(n, p)
    }

    /// Matrix-vector product (P q)_i = sum_j P[i][j] q[j]: the win
    /// probability of pure action i against mixed policy q.
    pub fn matvec(&self, q: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * q[j]).sum())
            .collect()
    }

    /// Transposed product (P^T p)_j: the win probability of policy p
    /// against pure action j.
    pub fn matvec_t(&self, p: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|j| (0..self.n).map(|i| self.get(i, j) * p[i]).sum())
            .collect()
    }
}

/// A probability vector on the discrete action set.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularPolicy {
    pub probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(probs: Vec<f64>) -> Result<Self, Error> {
        if probs.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::Policy("negative or non-finite entry".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Policy(format!("entries sum to {sum}, not 1")));
        }
        Ok(TabularPolicy { probs })
    }

    pub fn uniform(n: usize) -> Self {
        TabularPolicy { probs: vec![1.0 / n as f64; n] }
    }

    /// Point mass on one action.
    pub fn delta(i: usize, n: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[i] = 1.0;
        TabularPolicy { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Total variation distance.
    pub fn tv_distance(&self, other: &TabularPolicy) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Regularization strengths and the anchor policy of the game.
#[derive(Clone, Debug)]
pub struct GameParams {
    pub tau: f64,
    pub eta: f64,
    pub p_ref: TabularPolicy,
}

impl GameParams {
    pub fn new(tau: f64, eta: f64, p_ref: TabularPolicy) -> Result<Self, Error> {
        if !(tau > 0.0 && eta > 0.0 && tau <= eta) {
            return Err(Error::Config(format!(
                "need 0 < tau <= eta, got tau={tau}, eta={eta}"
            )));
        }
        Ok(GameParams { tau, eta, p_ref })
    }

    fn check_support(&self, p: &TabularPolicy) -> Result<(), Error> {
        for (i, (&pi, &ri)) in p.probs.iter().zip(&self.p_ref.probs).enumerate() {
            if pi > 0.0 && ri == 0.0 {
                return Err(Error::Policy(format!(
                    "support violation: mass at action {i} where the reference has none"
                )));
            }
        }
        Ok(())
    }
}

/// Expected win probability p^T P q.
pub fn win_prob(p: &TabularPolicy, q: &TabularPolicy, mat: &PreferenceMatrix) -> Result<f64, Error> {
    if p.len() != mat.n || q.len() != mat.n {
        return Err(Error::DimMismatch { expected: mat.n, got: p.len().min(q.len()) });
    }
    let pq = mat.matvec(&q.probs);
    Ok(p.probs.iter().zip(&pq).map(|(a, b)| a * b).sum())
}

/// KL(p || q) with the 0 log 0 = 0 convention.
pub fn kl_divergence(p: &TabularPolicy, q: &TabularPolicy) -> f64 {
    p.probs
        .iter()
        .zip(&q.probs)
        .map(|(&a, &b)| if a > 0.0 { a * (a / b).ln() } else { 0.0 })
        .sum()
}

/// Regularized game value
/// J(p1, p2) = p1^T P p2 - tau KL(p1 || ref) + tau KL(p2 || ref).
pub fn game_value(
    p1: &TabularPolicy,
    p2: &TabularPolicy,
    mat: &PreferenceMatrix,
    params: &GameParams,
) -> Result<f64, Error> {
    params.check_support(p1)?;
    params.check_support(p2)?;
    Ok(win_prob(p1, p2, mat)?
        - params.tau * kl_divergence(p1, &params.p_ref)
        + params.tau * kl_divergence(p2, &params.p_ref))
}

/// Normalize exp(logits) over the support, in log space with
/// max-subtraction. Entries with logit -inf get zero mass.
fn exp_weights(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ws: Vec<f64> = logits
        .iter()
        .map(|&l| if l == f64::NEG_INFINITY { 0.0 } else { (l - max).exp() })
        .collect();
    let z: f64 = ws.iter().sum();
    ws.into_iter().map(|w| w / z).collect()
}

/// One exponential-weights step of the regularized self-play dynamics:
/// p_{s+1}(i) proportional to
/// exp((P p_s)(i) / eta) * ref(i)^(tau/eta) * p_s(i)^(1 - tau/eta).
pub fn omd_update(
    p_s: &TabularPolicy,
    mat: &PreferenceMatrix,
    params: &GameParams,
) -> Result<TabularPolicy, Error> {
    params.check_support(p_s)?;
    let gamma = params.tau / params.eta;
    let wins = mat.matvec(&p_s.probs);
    let logits: Vec<f64> = (0..mat.n)
        .map(|i| {
            let r = params.p_ref.probs[i];
            let q = p_s.probs[i];
            if r == 0.0 {
                return f64::NEG_INFINITY;
            }
            let mut l = wins[i] / params.eta + gamma * r.ln();
            if gamma < 1.0 {
                if q == 0.0 {
                    return f64::NEG_INFINITY;
                }
                l += (1.0 - gamma) * q.ln();
            }
            l
        })
        .collect();
    TabularPolicy::new(exp_weights(&logits))
}

/// Closed-form maximizer of win_prob(., p_opp) - tau KL(. || ref):
/// proportional to ref(i) * exp((P p_opp)(i) / tau).
pub fn best_response(
    p_opp: &TabularPolicy,
    mat: &PreferenceMatrix,
    params: &GameParams,
) -> Result<TabularPolicy, Error> {
    params.check_support(p_opp)?;
    let wins = mat.matvec(&p_opp.probs);
    best_response_to_payoff(&wins, params)
}

fn best_response_to_payoff(payoff: &[f64], params: &GameParams) -> Result<TabularPolicy, Error> {
    let logits: Vec<f64> = payoff
        .iter()
        .zip(&params.p_ref.probs)
        .map(|(&w, &r)| if r == 0.0 { f64::NEG_INFINITY } else { w / params.tau + r.ln() })
        .collect();
    TabularPolicy::new(exp_weights(&logits))
}

/// Exploitability certificate:
/// max_{p1} J(p1, p) - min_{p2} J(p, p2), both extrema in closed form.
/// The min-player's optimum is the best response under the antisymmetric
/// transform 1 - P^T. Clipped to 0 when within 1e-10 below.
pub fn duality_gap(
    p: &TabularPolicy,
    mat: &PreferenceMatrix,
    params: &GameParams,
) -> Result<f64, Error> {
    params.check_support(p)?;
    let br_max = best_response(p, mat, params)?;
    let losses: Vec<f64> = mat.matvec_t(&p.probs).iter().map(|w| 1.0 - w).collect();
    let br_min = best_response_to_payoff(&losses, params)?;
    let gap = game_value(&br_max, p, mat, params)? - game_value(p, &br_min, mat, params)?;
    if gap < -1e-10 {
        return Err(Error::Policy(format!("negative duality gap {gap}")));
    }
    Ok(gap.max(0.0))
}

#[derive(Clone, Debug)]
pub struct NashSolution {
    pub policy: TabularPolicy,
    pub gap_history: Vec<f64>,
    pub converged: bool,
}

/// Iterate the exponential-weights update from the reference policy until
/// the duality gap drops below `tol`. Non-convergence is reported through
/// `converged`, not as an error.
pub fn solve_nash(
    mat: &PreferenceMatrix,
    params: &GameParams,
    max_iters: usize,
    tol: f64,
) -> Result<NashSolution, Error> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tol must be > 0, got {tol}")));
    }
    let mut p = params.p_ref.clone();
    let mut gap_history = Vec::new();
    let gap0 = duality_gap(&p, mat, params)?;
    gap_history.push(gap0);
    if gap0 <= tol {
        return Ok(NashSolution { policy: p, gap_history, converged: true });
    }
    for _ in 0..max_iters {
        p = omd_update(&p, mat, params)?;
        let gap = duality_gap(&p, mat, params)?;
        gap_history.push(gap);
        if gap <= tol {
            return Ok(NashSolution { policy: p, gap_history, converged: true });
        }
    }
    Ok(NashSolution { policy: p, gap_history, converged: false })
}

/// Least-squares fit of logit P[i][j] by an additive score difference
/// r_i - r_j. Returns whether the max absolute logit residual is within
/// `tol`, together with the residual; cyclic preference structures fail.
pub fn bt_fit_test(mat: &PreferenceMatrix, tol: f64) -> (bool, f64) {
    let n = mat.n;
    let logit = |v: f64| {
        let c = v.clamp(1e-6, 1.0 - 1e-6);
        (c / (1.0 - c)).ln()
    };
    // With antisymmetric logits, the least-squares scores (sum-zero gauge)
    // are the row means.
    let scores: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| logit(mat.get(i, j))).sum::<f64>() / n as f64)
        .collect();
    let mut residual: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let err = (logit(mat.get(i, j)) - (scores[i] - scores[j])).abs();
            residual = residual.max(err);
        }
    }
    (residual <= tol, residual)
}
