//! Analytical packet loss model: success probability against the mean flow of
//! transmissions, non-collision probability of a repetition with an active UE,
//! the loss recursion over transmission attempts and active-UE counts, its
//! average over receiver distance, and the capacity search built on top.

use serde::Serialize;

use crate::link::{sinr_no_interference, ExclusionProfile};
use crate::params::{ConfigError, Scenario, ScenarioConfig};
use crate::quadrature::GaussLegendre;

/// Nodes per quadrature panel.
pub const QUADRATURE_NODES: usize = 64;
/// Panels of the coarse rule; the refined rule uses twice as many.
pub const QUADRATURE_PANELS: usize = 4;

/// Per-distance inputs to the loss recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkTerms {
    /// Probability that an attempt survives the mean flow of transmissions.
    pub success: f64,
    /// Probability that a repetition does not collide with an active UE
    /// that already collided with the tagged packet.
    pub noncollision: f64,
    /// SINR without interference is already at or below the threshold.
    pub noise_limited: bool,
}

/// `sum_{m>=1} P_{M,m} rho_m` and whether an overlap with nonzero
/// probability has an infinite radius.
fn weighted_radius(sc: &Scenario, profile: &ExclusionProfile) -> (f64, bool) {
    let overlap = sc.overlap();
    let mut sum = 0.0;
    let mut infinite = false;
    for m in 1..=overlap.width() as usize {
        let pm = overlap.prob(m);
        if pm == 0.0 {
            continue;
        }
        let rho = profile.get(m);
        if rho.is_infinite() {
            infinite = true;
        } else {
            sum += pm * rho.meters();
        }
    }
    (sum, infinite)
}

/// `P_s(r) = exp(-2 phi p sum_m P_{M,m} rho_{M,m}(r))`, zero when the link is
/// noise-limited or some possible overlap can never be survived.
pub fn success_prob(r: f64, sc: &Scenario) -> f64 {
    let cfg = sc.config();
    if sinr_no_interference(r, cfg) <= cfg.sinr_threshold_t {
        return 0.0;
    }
    let profile = ExclusionProfile::new(r, cfg);
    success_from_profile(sc, &profile)
}

fn success_from_profile(sc: &Scenario, profile: &ExclusionProfile) -> f64 {
    let (sum, infinite) = weighted_radius(sc, profile);
    if infinite {
        return 0.0;
    }
    (-2.0 * sc.config().phi * sc.p() * sum).exp()
}

/// `P_nc(r) = 1 - sum_m sum_l P_m P_l min(rho_m, rho_l) / sum_m P_m rho_m`.
///
/// A zero denominator gives 1. Infinite radii are taken in the limit of a
/// large common radius `L`, where the ratio tends to the probability mass of
/// the infinite overlaps.
pub fn repetition_noncollision_prob(r: f64, sc: &Scenario) -> f64 {
    let profile = ExclusionProfile::new(r, sc.config());
    noncollision_from_profile(sc, &profile)
}

fn noncollision_from_profile(sc: &Scenario, profile: &ExclusionProfile) -> f64 {
    let overlap = sc.overlap();
    let width = overlap.width() as usize;
    let infinite_mass: f64 = (1..=width)
        .filter(|&m| profile.get(m).is_infinite())
        .map(|m| overlap.prob(m))
        .sum();
    if infinite_mass > 0.0 {
        return (1.0 - infinite_mass).clamp(0.0, 1.0);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for m in 1..=width {
        let (pm, rm) = (overlap.prob(m), profile.get(m).meters());
        den += pm * rm;
        for l in 1..=width {
            num += pm * overlap.prob(l) * rm.min(profile.get(l).meters());
        }
    }
    if den <= 0.0 {
        return 1.0;
    }
    (1.0 - num / den).clamp(0.0, 1.0)
}

pub fn link_terms(r: f64, sc: &Scenario) -> LinkTerms {
    let cfg = sc.config();
    let profile = ExclusionProfile::new(r, cfg);
    let noise_limited = sinr_no_interference(r, cfg) <= cfg.sinr_threshold_t;
    LinkTerms {
        success: if noise_limited {
            0.0
        } else {
            success_from_profile(sc, &profile)
        },
        noncollision: noncollision_from_profile(sc, &profile),
        noise_limited,
    }
}

/// Scalars that drive one evaluation of the loss recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecursionInputs {
    pub tx_prob: f64,
    pub rep_prob: f64,
    pub repetitions: u32,
    pub truncation: u32,
    pub success: f64,
    pub noncollision: f64,
}

impl RecursionInputs {
    pub fn new(sc: &Scenario, terms: LinkTerms) -> Self {
        let d = sc.derived();
        RecursionInputs {
            tx_prob: d.tx_prob_p,
            rep_prob: d.rep_prob_pr,
            repetitions: sc.config().repetitions_nu,
            truncation: d.truncation_k,
            success: terms.success,
            noncollision: terms.noncollision,
        }
    }
}

/// `V[t][c]`: probability of not delivering the packet within `t` attempts
/// with `c` active UEs around. Row `t` holds the `c` values reachable from
/// `V[nu+1][0]`, i.e. `c <= (nu + 1 - t) K`; row 0 is all ones.
#[derive(Debug, Clone, PartialEq)]
pub struct RecursionTable {
    rows: Vec<Vec<f64>>,
    pub inputs: RecursionInputs,
    clamped: bool,
}

impl RecursionTable {
    pub fn value(&self, t: usize, c: usize) -> Option<f64> {
        self.rows.get(t)?.get(c).copied()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.rows[t]
    }

    /// `V[nu+1][0]`, the loss probability at this distance.
    pub fn loss(&self) -> f64 {
        self.rows[self.rows.len() - 1][0]
    }

    /// Largest active-UE count stored for `t >= 1`, `nu K`.
    pub fn c_max(&self) -> usize {
        (self.inputs.repetitions * self.inputs.truncation) as usize
    }

    /// Some intermediate value left [0, 1] and was clamped.
    pub fn clamped(&self) -> bool {
        self.clamped
    }
}

/// Pascal triangle up to `n` in floating point.
fn binomials(n: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let mut row = vec![1.0; i + 1];
        for k in 1..i {
            row[k] = rows[i - 1][k - 1] + rows[i - 1][k];
        }
        rows.push(row);
    }
    rows
}

fn clamp_unit(x: f64, clamped: &mut bool) -> f64 {
    // round-off slack before calling it a clamp
    if !(-1e-12..=1.0 + 1e-12).contains(&x) {
        *clamped = true;
    }
    x.clamp(0.0, 1.0)
}

/// Evaluates the loss recursion
/// `V[t][c] = p V[t-1][c] + (1 - p) (U[t][c] + Y[t][c])`, `V[0][c] = 1`.
///
/// With `q = 1 / (nu + 1)` the chance that a transmitting active UE was on its
/// last attempt, the double binomial sums over `i` transmitting and `j`
/// retiring active UEs collapse to closed forms in `j`:
///
/// * `sum_i G(c,i;Pr) G(i,j;q) = G(c,j; q Pr)`
/// * `sum_i G(c,i;Pr) Pnc^i G(i,j;q) = C(c,j) (q Pr Pnc)^j (1 - Pr + Pr Pnc (1-q))^(c-j)`
///
/// so `U[t][c] = (1-Ps) sum_j G(c,j;qPr) sum_{k=1..K} p^(k-1) V[t-1][c+k-j]` and
/// `Y[t][c] = Ps sum_j (G(c,j;qPr) - C(c,j)(q Pr Pnc)^j (...)^(c-j)) V[t-1][c-j]`.
pub fn loss_recursion(inputs: RecursionInputs) -> RecursionTable {
    let RecursionInputs {
        tx_prob: p,
        rep_prob: pr,
        repetitions: nu,
        truncation: k_terms,
        success: ps,
        noncollision: pnc,
    } = inputs;
    let nu = nu as usize;
    let k_terms = k_terms.max(1) as usize;
    let q = 1.0 / (nu as f64 + 1.0);
    let depth = nu + 1;
    let widest = depth * k_terms;
    let binom = binomials(widest);

    let retire = q * pr;
    let stay_silent = 1.0 - pr + pr * pnc * (1.0 - q);
    let retire_clean = q * pr * pnc;
    // weights indexed [c][j], c <= nu K
    let c_top = nu * k_terms;
    let mut u_weights = Vec::with_capacity(c_top + 1);
    let mut y_weights = Vec::with_capacity(c_top + 1);
    for c in 0..=c_top {
        let mut uw = Vec::with_capacity(c + 1);
        let mut yw = Vec::with_capacity(c + 1);
        for j in 0..=c {
            let n = (c - j) as i32;
            let all = binom[c][j] * retire.powi(j as i32) * (1.0 - retire).powi(n);
            let clean = binom[c][j] * retire_clean.powi(j as i32) * stay_silent.powi(n);
            uw.push(all);
            yw.push((all - clean).max(0.0));
        }
        u_weights.push(uw);
        y_weights.push(yw);
    }
    let geometric: Vec<f64> = (0..k_terms).map(|k| p.powi(k as i32)).collect();

    let mut clamped = false;
    let mut rows = Vec::with_capacity(depth + 1);
    rows.push(vec![1.0; widest + 1]);
    for t in 1..=depth {
        let prev: &Vec<f64> = &rows[t - 1];
        let width = (depth - t) * k_terms;
        // tail[c'] = sum_{k=1..K} p^(k-1) V[t-1][c'+k]
        let tail: Vec<f64> = (0..=width)
            .map(|c| {
                geometric
                    .iter()
                    .enumerate()
                    .map(|(k, g)| g * prev[c + k + 1])
                    .sum()
            })
            .collect();
        let mut row = Vec::with_capacity(width + 1);
        for c in 0..=width {
            let mut u = 0.0;
            let mut y = 0.0;
            for j in 0..=c {
                u += u_weights[c][j] * tail[c - j];
                y += y_weights[c][j] * prev[c - j];
            }
            let u = clamp_unit((1.0 - ps) * u, &mut clamped);
            let y = clamp_unit(ps * y, &mut clamped);
            let v = p * prev[c] + (1.0 - p) * (u + y);
            row.push(clamp_unit(v, &mut clamped));
        }
        rows.push(row);
    }
    RecursionTable {
        rows,
        inputs,
        clamped,
    }
}

/// Loss probability at TX-RX distance `r`, with the clamp flag.
pub fn loss_at_distance(r: f64, sc: &Scenario) -> (f64, bool) {
    loss_at_distance_truncated(r, sc, sc.derived().truncation_k)
}

fn loss_at_distance_truncated(r: f64, sc: &Scenario, truncation: u32) -> (f64, bool) {
    let terms = link_terms(r, sc);
    let table = loss_recursion(RecursionInputs {
        truncation,
        ..RecursionInputs::new(sc, terms)
    });
    (table.loss(), table.clamped() && !terms.noise_limited)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlrCurvePoint {
    pub lambda_rate: f64,
    pub plr: f64,
    /// Difference between the refined and the coarse quadrature.
    pub error_estimate: f64,
    /// Some in-coverage node needed clamping, i.e. the low-load assumption
    /// behind the model is strained.
    pub validity_warning: bool,
}

/// Averages `loss(r)` over `r` uniform on `(0, R]` with the coarse and the
/// refined composite rules. Returns `(refined, |refined - coarse|)`.
pub fn average_over_range<F>(range_r: f64, loss: F) -> (f64, f64)
where
    F: Fn(f64) -> f64 + Sync,
{
    let rule = GaussLegendre::new(QUADRATURE_NODES);
    let coarse = rule.integrate(0.0, range_r, QUADRATURE_PANELS, &loss) / range_r;
    let fine = rule.integrate(0.0, range_r, 2 * QUADRATURE_PANELS, &loss) / range_r;
    (fine, (fine - coarse).abs())
}

/// Packet loss rate averaged over receivers uniformly placed within range.
pub fn plr(sc: &Scenario) -> PlrCurvePoint {
    plr_truncated(sc, sc.derived().truncation_k)
}

/// [`plr`] with the newly-active-UE series cut at `truncation` terms instead
/// of the derived `K`.
pub fn plr_truncated(sc: &Scenario, truncation: u32) -> PlrCurvePoint {
    let warn = std::sync::atomic::AtomicBool::new(false);
    let (plr, error_estimate) = average_over_range(sc.config().range_r, |r| {
        let (v, w) = loss_at_distance_truncated(r, sc, truncation);
        if w {
            warn.store(true, std::sync::atomic::Ordering::Relaxed);
        }
        v
    });
    PlrCurvePoint {
        lambda_rate: sc.config().lambda_rate,
        plr,
        error_estimate,
        validity_warning: warn.into_inner(),
    }
}

/// PLR for `cfg` with the generation rate replaced by `lambda_rate`.
pub fn plr_at(cfg: &ScenarioConfig, lambda_rate: f64) -> Result<PlrCurvePoint, ConfigError> {
    Ok(plr(&Scenario::new(cfg.with_lambda(lambda_rate))?))
}

/// Smallest rate tried by the capacity search, 1/s.
pub const CAPACITY_LAMBDA_MIN: f64 = 1e-4;
/// Largest rate tried by the capacity search, 1/s.
pub const CAPACITY_LAMBDA_MAX: f64 = 1e6;
const CAPACITY_REL_TOL: f64 = 1e-3;
const CAPACITY_MAX_ITER: usize = 60;
const MONOTONE_SAMPLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Capacity {
    pub lambda_rate: f64,
    /// Every rate up to [`CAPACITY_LAMBDA_MAX`] met the target.
    pub above_search_limit: bool,
    /// PLR decreased somewhere on the sampled grid.
    pub nonmonotone: bool,
    pub validity_warning: bool,
}

/// Largest generation rate whose PLR stays at or below the configured target,
/// found by bisection on `log lambda`.
pub fn capacity(cfg: &ScenarioConfig) -> Result<Capacity, ConfigError> {
    // invariants other than the p < 1 one are load independent
    Scenario::new(cfg.with_lambda(CAPACITY_LAMBDA_MIN))?;
    let target = cfg.plr_target;
    let eval = |lambda: f64| -> Result<Option<f64>, ConfigError> {
        match Scenario::new(cfg.with_lambda(lambda)) {
            Ok(sc) => Ok(Some(plr(&sc).plr)),
            Err(ConfigError::TrafficTooIntense(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let feasible = |v: Option<f64>| v.is_some_and(|x| x <= target);

    let mut lo = CAPACITY_LAMBDA_MIN;
    if !feasible(eval(lo)?) {
        return Ok(Capacity {
            lambda_rate: 0.0,
            above_search_limit: false,
            nonmonotone: false,
            validity_warning: false,
        });
    }
    // describes the reported rate, not the infeasible probes above it
    let warning_at = |lambda: f64| -> Result<bool, ConfigError> {
        Ok(plr(&Scenario::new(cfg.with_lambda(lambda))?).validity_warning)
    };
    let mut hi = lo * 10.0;
    loop {
        if !feasible(eval(hi)?) {
            break;
        }
        lo = hi;
        if hi >= CAPACITY_LAMBDA_MAX {
            return Ok(Capacity {
                lambda_rate: hi,
                above_search_limit: true,
                nonmonotone: false,
                validity_warning: warning_at(hi)?,
            });
        }
        hi = (hi * 10.0).min(CAPACITY_LAMBDA_MAX);
    }
    for _ in 0..CAPACITY_MAX_ITER {
        if hi / lo <= 1.0 + CAPACITY_REL_TOL {
            break;
        }
        let mid = (lo * hi).sqrt();
        if feasible(eval(mid)?) {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let mut nonmonotone = false;
    let mut last = f64::NEG_INFINITY;
    let span = (hi / CAPACITY_LAMBDA_MIN).ln();
    for i in 0..MONOTONE_SAMPLES {
        let lambda = CAPACITY_LAMBDA_MIN * (span * i as f64 / (MONOTONE_SAMPLES - 1) as f64).exp();
        let v = eval(lambda)?.unwrap_or(1.0);
        if v < last * (1.0 - 1e-9) {
            nonmonotone = true;
        }
        last = v;
    }
    Ok(Capacity {
        lambda_rate: lo,
        above_search_limit: false,
        nonmonotone,
        validity_warning: warning_at(lo)?,
    })
}
