//! Follower control laws.
//!
//! Every law is written in its local, per-agent form: follower `i` only
//! uses relative positions and velocities of its neighbors, the projection
//! matrices of its desired bearings and, for the acceleration-feedback
//! family, its neighbors' accelerations.
//!
//! With clamp saturation the sat-pair inequality only holds non-strictly
//! (clamp is not strictly monotone), so tests assert `<= 0`, never `< 0`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, ReasonCode, Result};
use crate::formation::{orthogonal_projection, BearingSpec, FormationGraph, FormationState, RANK_TOL};
use crate::linalg::{self, block};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControlLaw {
    #[serde(rename = "PD")]
    Pd,
    #[serde(rename = "ACCEL")]
    Accel,
    #[serde(rename = "PD_INTEGRAL")]
    PdIntegral,
    #[serde(rename = "ACCEL_INTEGRAL")]
    AccelIntegral,
    #[serde(rename = "PD_SAT")]
    PdSat,
    #[serde(rename = "ACCEL_SAT")]
    AccelSat,
}

impl ControlLaw {
    pub const ALL: [ControlLaw; 6] = [
        ControlLaw::Pd,
        ControlLaw::Accel,
        ControlLaw::PdIntegral,
        ControlLaw::AccelIntegral,
        ControlLaw::PdSat,
        ControlLaw::AccelSat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControlLaw::Pd => "PD",
            ControlLaw::Accel => "ACCEL",
            ControlLaw::PdIntegral => "PD_INTEGRAL",
            ControlLaw::AccelIntegral => "ACCEL_INTEGRAL",
            ControlLaw::PdSat => "PD_SAT",
            ControlLaw::AccelSat => "ACCEL_SAT",
        }
    }

    pub fn is_integral(self) -> bool {
        matches!(self, ControlLaw::PdIntegral | ControlLaw::AccelIntegral)
    }

    /// Laws that feed back neighbor accelerations through `K_i^{-1}`.
    pub fn uses_acceleration(self) -> bool {
        matches!(
            self,
            ControlLaw::Accel | ControlLaw::AccelIntegral | ControlLaw::AccelSat
        )
    }

    pub fn is_saturated(self) -> bool {
        matches!(self, ControlLaw::PdSat | ControlLaw::AccelSat)
    }
}

impl fmt::Display for ControlLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControlLaw {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        ControlLaw::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown control law {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SatKind {
    /// `sign(x) min(|x|, beta)`
    #[default]
    Clamp,
    /// `beta tanh(x)`
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub law: ControlLaw,
    pub k_p: f64,
    pub k_v: f64,
    pub k_i: f64,
    pub beta: Option<f64>,
    pub sat_kind: SatKind,
    /// Constant follower input disturbance, stacked over followers.
    pub disturbance: Option<DVector<f64>>,
}

impl ControllerConfig {
    pub fn new(law: ControlLaw, k_p: f64, k_v: f64) -> Self {
        Self {
            law,
            k_p,
            k_v,
            k_i: 0.0,
            beta: None,
            sat_kind: SatKind::Clamp,
            disturbance: None,
        }
    }

    pub fn with_integral(mut self, k_i: f64) -> Self {
        self.k_i = k_i;
        self
    }

    pub fn with_saturation(mut self, beta: f64, kind: SatKind) -> Self {
        self.beta = Some(beta);
        self.sat_kind = kind;
        self
    }

    pub fn with_disturbance(mut self, w: DVector<f64>) -> Self {
        self.disturbance = Some(w);
        self
    }

    pub fn beta(&self) -> f64 {
        self.beta.unwrap_or(f64::INFINITY)
    }

    /// Gain requirements of the selected law.
    pub fn validate(&self, n_followers: usize, d: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::validation(ReasonCode::BadGain, msg));
        if !(self.k_p > 0.0 && self.k_p.is_finite()) {
            return bad(format!("k_p must be positive, got {}", self.k_p));
        }
        if !(self.k_v > 0.0 && self.k_v.is_finite()) {
            return bad(format!("k_v must be positive, got {}", self.k_v));
        }
        if self.law.is_integral() {
            if !(self.k_i > 0.0 && self.k_i.is_finite()) {
                return bad(format!("{} requires k_I > 0, got {}", self.law, self.k_i));
            }
        } else if self.k_i != 0.0 {
            return bad(format!("k_I is only used by integral laws, got {} for {}", self.k_i, self.law));
        }
        match (self.law.is_saturated(), self.beta) {
            (true, Some(b)) if b > 0.0 && b.is_finite() => {}
            (true, b) => return bad(format!("{} requires beta > 0, got {b:?}", self.law)),
            (false, Some(_)) => return bad(format!("beta is only used by saturated laws, not {}", self.law)),
            (false, None) => {}
        }
        if let Some(w) = &self.disturbance {
            if w.len() != n_followers * d {
                return Err(Error::validation(
                    ReasonCode::DimensionMismatch,
                    format!("disturbance has {} entries, expected {}", w.len(), n_followers * d),
                ));
            }
        }
        Ok(())
    }
}

/// Integral states of the integral laws, both stacked over followers.
///
/// `eta` integrates the tracking error `delta_p`; `edge_integral` integrates
/// each follower's local edge sum `sum_j P_ij (p_i - p_j)`. Along any run the
/// two satisfy `edge_integral = L_ff eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub eta: Option<DVector<f64>>,
    pub edge_integral: Option<DVector<f64>>,
}

impl ControllerState {
    pub fn new(cfg: &ControllerConfig, n_followers: usize, d: usize) -> Self {
        if cfg.law.is_integral() {
            Self {
                eta: Some(DVector::zeros(n_followers * d)),
                edge_integral: Some(DVector::zeros(n_followers * d)),
            }
        } else {
            Self::empty()
        }
    }

    pub fn empty() -> Self {
        Self {
            eta: None,
            edge_integral: None,
        }
    }
}

pub fn sat_scalar(x: f64, beta: f64, kind: SatKind) -> f64 {
    match kind {
        SatKind::Clamp => x.clamp(-beta, beta),
        SatKind::Tanh => beta * x.tanh(),
    }
}

/// Componentwise saturation.
pub fn sat(x: &DVector<f64>, beta: f64, kind: SatKind) -> DVector<f64> {
    x.map(|xi| sat_scalar(xi, beta, kind))
}

/// `Phi(x) = int_0^x sat(tau) dtau`.
pub fn phi_scalar(x: f64, beta: f64, kind: SatKind) -> f64 {
    match kind {
        SatKind::Clamp => {
            let a = x.abs();
            if a <= beta {
                0.5 * a * a
            } else {
                beta * a - 0.5 * beta * beta
            }
        }
        // beta log(cosh x), written to avoid overflow for large |x|
        SatKind::Tanh => {
            let a = x.abs();
            beta * (a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2)
        }
    }
}

/// `1^T Phi(x)`.
pub fn phi_sum(x: &DVector<f64>, beta: f64, kind: SatKind) -> f64 {
    x.iter().map(|&xi| phi_scalar(xi, beta, kind)).sum()
}

/// Per-follower neighbor lists with the projection matrix of each desired bearing.
#[derive(Debug, Clone)]
pub struct LocalFeedback {
    d: usize,
    n_leaders: usize,
    neighbors: Vec<Vec<(usize, DMatrix<f64>)>>,
}

impl LocalFeedback {
    pub fn new(graph: &FormationGraph, spec: &BearingSpec) -> Result<Self> {
        let mut neighbors = Vec::with_capacity(graph.n());
        for i in 0..graph.n() {
            let mut list = Vec::new();
            for &j in graph.neighbors(i) {
                let g = spec.get(i, j).ok_or(Error::MissingBearing(i, j))?;
                list.push((j, orthogonal_projection(g)?));
            }
            neighbors.push(list);
        }
        Ok(Self {
            d: graph.d(),
            n_leaders: graph.n_leaders(),
            neighbors,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn n_leaders(&self) -> usize {
        self.n_leaders
    }

    pub fn n_followers(&self) -> usize {
        self.n() - self.n_leaders
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, DMatrix<f64>)] {
        &self.neighbors[i]
    }

    fn check_follower(&self, i: usize) -> Result<()> {
        if i < self.n_leaders || i >= self.n() {
            return Err(Error::InvalidGraph(format!("agent {i} is not a follower")));
        }
        Ok(())
    }

    /// `K_i = sum_j P_ij`.
    pub fn k_matrix(&self, i: usize) -> DMatrix<f64> {
        let mut k = DMatrix::zeros(self.d, self.d);
        for (_, p) in &self.neighbors[i] {
            k += p;
        }
        k
    }

    /// Solves `K_i x = rhs`, rejecting collinear desired bearings.
    pub fn solve_k(&self, i: usize, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let k = self.k_matrix(i);
        let ev = linalg::symmetric_eigenvalues(&k);
        let max = ev.last().copied().unwrap_or(0.0);
        if ev.first().is_none_or(|&min| min <= RANK_TOL * max.max(f64::MIN_POSITIVE)) {
            return Err(Error::SingularKi { follower: i });
        }
        linalg::solve_spd(&k, rhs).ok_or(Error::SingularKi { follower: i })
    }

    /// `sum_j P_ij (x_i - x_j)` for a stacked vector `x`.
    pub fn edge_sum(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        let d = self.d;
        let xi = block(x, i, d);
        let mut acc = DVector::zeros(d);
        for (j, p) in &self.neighbors[i] {
            acc += p * (xi - block(x, *j, d));
        }
        acc
    }

    /// `sum_j P_ij x_j`.
    pub fn neighbor_sum(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        let mut acc = DVector::zeros(self.d);
        for (j, p) in &self.neighbors[i] {
            acc += p * block(x, *j, self.d);
        }
        acc
    }

    /// `sum_j P_ij [k_p (p_i - p_j) + k_v (v_i - v_j)]`.
    pub fn pd_sum(&self, i: usize, state: &FormationState, k_p: f64, k_v: f64) -> DVector<f64> {
        self.edge_sum(i, &state.positions) * k_p + self.edge_sum(i, &state.velocities) * k_v
    }

    fn follower_block(&self, i: usize, stacked: &DVector<f64>) -> DVector<f64> {
        block(stacked, i - self.n_leaders, self.d).into_owned()
    }
}

fn edge_integral(i: usize, fb: &LocalFeedback, ctrl: &ControllerState) -> Result<DVector<f64>> {
    ctrl.edge_integral
        .as_ref()
        .map(|xi| fb.follower_block(i, xi))
        .ok_or_else(|| Error::validation(ReasonCode::BadGain, "integral law without integral state"))
}

/// `u_i = -sum_j P_ij [k_p (p_i - p_j) + k_v (v_i - v_j)]`.
pub fn control_pd(
    i: usize,
    state: &FormationState,
    fb: &LocalFeedback,
    cfg: &ControllerConfig,
) -> Result<DVector<f64>> {
    fb.check_follower(i)?;
    Ok(-fb.pd_sum(i, state, cfg.k_p, cfg.k_v))
}

/// `u_i = -K_i^{-1} sum_j P_ij [k_p (p_i - p_j) + k_v (v_i - v_j) - a_j]`
/// where `a` stacks the accelerations of all agents.
pub fn control_accel(
    i: usize,
    state: &FormationState,
    fb: &LocalFeedback,
    cfg: &ControllerConfig,
    neighbor_accels: &DVector<f64>,
) -> Result<DVector<f64>> {
    fb.check_follower(i)?;
    let rhs = fb.neighbor_sum(i, neighbor_accels) - fb.pd_sum(i, state, cfg.k_p, cfg.k_v);
    fb.solve_k(i, &rhs)
}

/// PD law plus `-k_I int sum_j P_ij (p_i - p_j)`.
pub fn control_pd_integral(
    i: usize,
    state: &FormationState,
    ctrl: &ControllerState,
    fb: &LocalFeedback,
    cfg: &ControllerConfig,
) -> Result<DVector<f64>> {
    Ok(control_pd(i, state, fb, cfg)? - edge_integral(i, fb, ctrl)? * cfg.k_i)
}

pub fn control_accel_integral(
    i: usize,
    state: &FormationState,
    ctrl: &ControllerState,
    fb: &LocalFeedback,
    cfg: &ControllerConfig,
    neighbor_accels: &DVector<f64>,
) -> Result<DVector<f64>> {
    fb.check_follower(i)?;
    let rhs = fb.neighbor_sum(i, neighbor_accels)
        - fb.pd_sum(i, state, cfg.k_p, cfg.k_v)
        - edge_integral(i, fb, ctrl)? * cfg.k_i;
    fb.solve_k(i, &rhs)
}

/// `u_i = sat(-sum_j P_ij [k_p (p_i - p_j) + k_v (v_i - v_j)])`.
pub fn control_pd_sat(
    i: usize,
    state: &FormationState,
    fb: &LocalFeedback,
    cfg: &ControllerConfig,
) -> Result<DVector<f64>> {
    Ok(sat(&control_pd(i, state, fb, cfg)?, cfg.beta(), cfg.sat_kind))
}

/// `u_i = K_i^{-1} sat(-sum_j P_ij [...]) + K_i^{-1} sum_j P_ij a_j`.
pub fn control_accel_sat(
    i: usize,
    state: &FormationState,
    fb: &LocalFeedback,
    cfg: &ControllerConfig,
    neighbor_accels: &DVector<f64>,
) -> Result<DVector<f64>> {
    fb.check_follower(i)?;
    let star = sat(&-fb.pd_sum(i, state, cfg.k_p, cfg.k_v), cfg.beta(), cfg.sat_kind);
    fb.solve_k(i, &(star + fb.neighbor_sum(i, neighbor_accels)))
}

/// Dispatches to the configured law for follower `i`.
pub fn control(
    i: usize,
    state: &FormationState,
    ctrl: &ControllerState,
    fb: &LocalFeedback,
    cfg: &ControllerConfig,
    neighbor_accels: &DVector<f64>,
) -> Result<DVector<f64>> {
    match cfg.law {
        ControlLaw::Pd => control_pd(i, state, fb, cfg),
        ControlLaw::Accel => control_accel(i, state, fb, cfg, neighbor_accels),
        ControlLaw::PdIntegral => control_pd_integral(i, state, ctrl, fb, cfg),
        ControlLaw::AccelIntegral => control_accel_integral(i, state, ctrl, fb, cfg, neighbor_accels),
        ControlLaw::PdSat => control_pd_sat(i, state, fb, cfg),
        ControlLaw::AccelSat => control_accel_sat(i, state, fb, cfg, neighbor_accels),
    }
}

/// Lyapunov function of the saturated PD law:
/// `1^T Phi(-k_p L δp - k_v L δv) + 1^T Phi(-k_p L δp) + k_p δv^T L δv`.
pub fn saturated_pd_lyapunov(
    l_ff: &DMatrix<f64>,
    cfg: &ControllerConfig,
    delta_p: &DVector<f64>,
    delta_v: &DVector<f64>,
) -> f64 {
    let lp = l_ff * delta_p;
    let lv = l_ff * delta_v;
    let (beta, kind) = (cfg.beta(), cfg.sat_kind);
    phi_sum(&(-&lp * cfg.k_p - &lv * cfg.k_v), beta, kind)
        + phi_sum(&(-&lp * cfg.k_p), beta, kind)
        + cfg.k_p * delta_v.dot(&lv)
}

/// Lyapunov function of the saturated acceleration law in `ε = L δp`:
/// `1^T Phi(-k_p ε - k_v ε') + 1^T Phi(-k_p ε) + k_p ε'^T ε'`.
pub fn saturated_accel_lyapunov(
    l_ff: &DMatrix<f64>,
    cfg: &ControllerConfig,
    delta_p: &DVector<f64>,
    delta_v: &DVector<f64>,
) -> f64 {
    let eps = l_ff * delta_p;
    let eps_dot = l_ff * delta_v;
    let (beta, kind) = (cfg.beta(), cfg.sat_kind);
    phi_sum(&(-&eps * cfg.k_p - &eps_dot * cfg.k_v), beta, kind)
        + phi_sum(&(-&eps * cfg.k_p), beta, kind)
        + cfg.k_p * eps_dot.norm_squared()
}
