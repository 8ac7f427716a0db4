//! Closed-loop leader-follower simulation.
//!
//! The integrated state is `[p* | p_f | v_f | eta | xi]`: the full target
//! formation (whose leader block *is* the leaders' trajectory), the
//! follower positions and velocities, and for integral laws the two
//! integral states. Leaders are kinematic: their velocity comes from the
//! maneuver profile, never from a controller.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::controllers::{self, ControlLaw, ControllerConfig, ControllerState, LocalFeedback};
use crate::error::{Error, ReasonCode, Result};
use crate::formation::{
    self, bearings_of, check_uniqueness, BearingLaplacian, BearingSpec, FormationGraph, FormationState,
    UniquenessReport,
};
use crate::integrator::{rk4_step, TimeGrid};
use crate::linalg::{self, block};
use crate::maneuver::{self, ManeuverProfile, TargetDynamics, TargetTrajectory};

/// Norm above which a run is declared numerically divergent.
pub const BLOWUP_NORM: f64 = 1e12;
/// Error level used for convergence flags and time-to-threshold.
pub const CONVERGENCE_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub graph: FormationGraph,
    /// Configuration that generates the desired bearings and the initial target.
    pub reference: DVector<f64>,
    pub initial: FormationState,
    pub profile: ManeuverProfile,
    pub controller: ControllerConfig,
    pub horizon: f64,
    pub step: f64,
    pub seed: u64,
}

/// Everything derived from a validated scenario.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub scenario: Scenario,
    pub spec: BearingSpec,
    pub laplacian: BearingLaplacian,
    pub feedback: LocalFeedback,
    pub grid: TimeGrid,
    pub uniqueness: UniquenessReport,
    ff_factor: Cholesky<f64, Dyn>,
}

impl Scenario {
    pub fn prepare(&self) -> Result<PreparedScenario> {
        let g = &self.graph;
        let d = g.d();
        if g.n_followers() == 0 {
            return Err(Error::validation(ReasonCode::NoFollowers, "scenario has no followers"));
        }
        let dn = g.n() * d;
        if self.reference.len() != dn {
            return Err(Error::validation(
                ReasonCode::DimensionMismatch,
                format!("reference has {} entries, expected {dn}", self.reference.len()),
            ));
        }
        self.initial.check_shape(g).map_err(|e| Error::validation(ReasonCode::DimensionMismatch, e.to_string()))?;
        if self.profile.dim() != d {
            return Err(Error::validation(
                ReasonCode::BadProfile,
                format!("profile dimension {} differs from formation dimension {d}", self.profile.dim()),
            ));
        }
        let grid = TimeGrid::new(self.horizon, self.step)?;
        let end = self.profile.t_end();
        if grid.horizon() > end + 1e-9 * end.max(1.0) {
            return Err(Error::validation(
                ReasonCode::BadProfile,
                format!("profile ends at {end} before the horizon {}", grid.horizon()),
            ));
        }
        let spec = bearings_of(&self.reference, g)?;
        let laplacian = BearingLaplacian::build(g, &spec)?;
        let uniqueness = check_uniqueness(&laplacian);
        if !uniqueness.unique {
            return Err(Error::validation(
                ReasonCode::NonUniqueTarget,
                format!("L_ff is singular (sigma_min = {:e})", uniqueness.sigma_min),
            ));
        }
        self.controller.validate(g.n_followers(), d)?;
        let feedback = LocalFeedback::new(g, &spec)?;
        if self.controller.law.uses_acceleration() {
            for i in g.n_leaders()..g.n() {
                feedback.solve_k(i, &DVector::zeros(d)).map_err(|e| {
                    Error::validation(ReasonCode::SingularKi, e.to_string())
                })?;
            }
        }
        let nl = g.n_leaders() * d;
        let leader_gap = (self.initial.positions.rows(0, nl) - self.reference.rows(0, nl)).norm();
        if leader_gap > 1e-12 * self.reference.norm().max(1.0) {
            return Err(Error::validation(
                ReasonCode::LeaderMismatch,
                format!("initial leader positions differ from the reference by {leader_gap:e}"),
            ));
        }
        let ff_factor = laplacian.ff.clone().cholesky().ok_or_else(|| {
            Error::validation(ReasonCode::NonUniqueTarget, "L_ff is not positive definite")
        })?;
        Ok(PreparedScenario {
            scenario: self.clone(),
            spec,
            laplacian,
            feedback,
            grid,
            uniqueness,
            ff_factor,
        })
    }
}

/// Follower positions drawn uniformly from `[-radius, radius]^d` around the
/// reference; follower velocities start at the target velocity plus an
/// optional uniform offset.
pub fn perturbed_initial(
    graph: &FormationGraph,
    reference: &DVector<f64>,
    target_velocity: &DVector<f64>,
    radius: f64,
    velocity_radius: f64,
    seed: u64,
) -> FormationState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nl = graph.n_leaders() * graph.d();
    let mut positions = reference.clone();
    let mut velocities = target_velocity.clone();
    for k in nl..positions.len() {
        if radius > 0.0 {
            positions[k] += rng.random_range(-radius..=radius);
        }
    }
    for k in nl..velocities.len() {
        if velocity_radius > 0.0 {
            velocities[k] += rng.random_range(-velocity_radius..=velocity_radius);
        }
    }
    FormationState::new(positions, velocities, 0.0)
}

/// Layout of the integrated state vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    dn: usize,
    dnf: usize,
    nl: usize,
    integral: bool,
}

impl Layout {
    fn len(&self) -> usize {
        self.dn + self.dnf * if self.integral { 4 } else { 2 }
    }
    fn target(&self, y: &DVector<f64>) -> DVector<f64> {
        y.rows(0, self.dn).into_owned()
    }
    fn pf(&self, y: &DVector<f64>) -> DVector<f64> {
        y.rows(self.dn, self.dnf).into_owned()
    }
    fn vf(&self, y: &DVector<f64>) -> DVector<f64> {
        y.rows(self.dn + self.dnf, self.dnf).into_owned()
    }
    fn eta(&self, y: &DVector<f64>) -> Option<DVector<f64>> {
        self.integral.then(|| y.rows(self.dn + 2 * self.dnf, self.dnf).into_owned())
    }
    fn xi(&self, y: &DVector<f64>) -> Option<DVector<f64>> {
        self.integral.then(|| y.rows(self.dn + 3 * self.dnf, self.dnf).into_owned())
    }
}

/// Everything evaluated at one `(t, y)`.
struct Evaluation {
    state: FormationState,
    ctrl: ControllerState,
    target_velocity: DVector<f64>,
    leader_accel: DVector<f64>,
    control: DVector<f64>,
    derivative: DVector<f64>,
}

impl PreparedScenario {
    pub fn graph(&self) -> &FormationGraph {
        &self.scenario.graph
    }

    pub fn controller(&self) -> &ControllerConfig {
        &self.scenario.controller
    }

    fn layout(&self) -> Layout {
        let g = self.graph();
        let d = g.d();
        Layout {
            dn: g.n() * d,
            dnf: g.n_followers() * d,
            nl: g.n_leaders() * d,
            integral: self.controller().law.is_integral(),
        }
    }

    /// Initial target formation: the reference configuration.
    pub fn initial_target(&self) -> DVector<f64> {
        self.scenario.reference.clone()
    }

    /// Velocity of every target agent at `t = 0`.
    pub fn initial_target_velocity(&self) -> Result<DVector<f64>> {
        TargetDynamics::new(&self.scenario.profile, self.graph().d()).velocity(0.0, 0.0, &self.scenario.reference)
    }

    /// Target formation over the scenario grid.
    pub fn target_trajectory(&self) -> Result<TargetTrajectory> {
        maneuver::propagate_target(
            &self.scenario.profile,
            self.graph(),
            &self.spec,
            &self.initial_target(),
            &self.grid,
        )
    }

    /// Tracking errors of the initial state.
    pub fn initial_errors(&self) -> Result<(DVector<f64>, DVector<f64>)> {
        let lay = self.layout();
        let v_star = self.initial_target_velocity()?;
        let init = &self.scenario.initial;
        let dp = init.positions.rows(lay.nl, lay.dnf) - self.scenario.reference.rows(lay.nl, lay.dnf);
        let dv = init.velocities.rows(lay.nl, lay.dnf) - v_star.rows(lay.nl, lay.dnf);
        Ok((dp, dv))
    }

    fn initial_vector(&self) -> DVector<f64> {
        let lay = self.layout();
        let mut y = DVector::zeros(lay.len());
        y.rows_mut(0, lay.dn).copy_from(&self.scenario.reference);
        y.rows_mut(lay.dn, lay.dnf).copy_from(&self.scenario.initial.positions.rows(lay.nl, lay.dnf));
        y.rows_mut(lay.dn + lay.dnf, lay.dnf)
            .copy_from(&self.scenario.initial.velocities.rows(lay.nl, lay.dnf));
        y
    }

    /// Leader accelerations of the target formation at `state`, with the
    /// followers' target positions pinned by the leaders.
    pub fn leader_accelerations(&self, state: &FormationState) -> Result<DVector<f64>> {
        let lay = self.layout();
        let d = self.graph().d();
        let pl = state.positions.rows(0, lay.nl).into_owned();
        let vl = state.velocities.rows(0, lay.nl).into_owned();
        let (pf, _) = formation::target_followers(&self.laplacian, &pl, &DVector::zeros(lay.nl))?;
        let mut target = DVector::zeros(lay.dn);
        target.rows_mut(0, lay.nl).copy_from(&pl);
        target.rows_mut(lay.nl, lay.dnf).copy_from(&pf);
        let c = maneuver::centroid(&target, d);
        let mut out = DVector::zeros(lay.nl);
        for i in 0..self.graph().n_leaders() {
            let a = maneuver::leader_acceleration(
                state.time,
                &self.scenario.profile,
                &block(&pl, i, d).into_owned(),
                &c,
                &block(&vl, i, d).into_owned(),
            )?;
            out.rows_mut(i * d, d).copy_from(&a.value);
        }
        Ok(out)
    }

    fn solve_ff(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.ff_factor.solve(rhs)
    }

    fn evaluate(&self, t: f64, anchor: f64, y: &DVector<f64>) -> Result<Evaluation> {
        let lay = self.layout();
        let g = self.graph();
        let d = g.d();
        let cfg = self.controller();
        let dynamics = TargetDynamics::new(&self.scenario.profile, d);
        let sample = self.scenario.profile.sample(t, anchor)?;
        let target = lay.target(y);
        let target_velocity = dynamics.velocity_from(&sample, &target);
        let target_accel = dynamics.acceleration_from(&sample, &target, &target_velocity);
        let pf = lay.pf(y);
        let vf = lay.vf(y);

        let mut positions = DVector::zeros(lay.dn);
        positions.rows_mut(0, lay.nl).copy_from(&target.rows(0, lay.nl));
        positions.rows_mut(lay.nl, lay.dnf).copy_from(&pf);
        let mut velocities = DVector::zeros(lay.dn);
        velocities.rows_mut(0, lay.nl).copy_from(&target_velocity.rows(0, lay.nl));
        velocities.rows_mut(lay.nl, lay.dnf).copy_from(&vf);
        let state = FormationState::new(positions, velocities, t);
        let ctrl = ControllerState {
            eta: lay.eta(y),
            edge_integral: lay.xi(y),
        };
        let leader_accel = target_accel.rows(0, lay.nl).into_owned();

        let control = if cfg.law.uses_acceleration() {
            self.follower_accel_solve_with(&state, &ctrl, &leader_accel)?
        } else {
            let mut u = DVector::zeros(lay.dnf);
            let unused = DVector::zeros(0);
            for i in g.n_leaders()..g.n() {
                let ui = controllers::control(i, &state, &ctrl, &self.feedback, cfg, &unused)?;
                u.rows_mut((i - g.n_leaders()) * d, d).copy_from(&ui);
            }
            u
        };

        let mut dy = DVector::zeros(lay.len());
        dy.rows_mut(0, lay.dn).copy_from(&target_velocity);
        dy.rows_mut(lay.dn, lay.dnf).copy_from(&vf);
        let mut accel = control.clone();
        if let Some(w) = &cfg.disturbance {
            accel += w;
        }
        dy.rows_mut(lay.dn + lay.dnf, lay.dnf).copy_from(&accel);
        if lay.integral {
            let delta_p = &pf - target.rows(lay.nl, lay.dnf);
            dy.rows_mut(lay.dn + 2 * lay.dnf, lay.dnf).copy_from(&delta_p);
            for i in g.n_leaders()..g.n() {
                let s = self.feedback.edge_sum(i, &state.positions);
                dy.rows_mut(lay.dn + 3 * lay.dnf + (i - g.n_leaders()) * d, d).copy_from(&s);
            }
        }
        Ok(Evaluation {
            state,
            ctrl,
            target_velocity,
            leader_accel,
            control,
            derivative: dy,
        })
    }

    /// Follower control accelerations of the acceleration-feedback laws,
    /// resolved for all followers at once from
    /// `L_ff u_f + L_fl a_l = rhs`, which is every follower's local law
    /// `K_i u_i - sum_j P_ij u_j = ...` written together.
    pub fn follower_accel_solve_with(
        &self,
        state: &FormationState,
        ctrl: &ControllerState,
        leader_accel: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let lay = self.layout();
        let cfg = self.controller();
        let l = &self.laplacian;
        let pl = state.positions.rows(0, lay.nl);
        let pf = state.positions.rows(lay.nl, lay.dnf);
        let vl = state.velocities.rows(0, lay.nl);
        let vf = state.velocities.rows(lay.nl, lay.dnf);
        let e_p = &l.ff * pf + &l.fl * pl;
        let e_v = &l.ff * vf + &l.fl * vl;
        let feedforward = &l.fl * leader_accel;
        let rhs = match cfg.law {
            ControlLaw::Accel => -&e_p * cfg.k_p - &e_v * cfg.k_v - feedforward,
            ControlLaw::AccelIntegral => {
                let xi = ctrl
                    .edge_integral
                    .as_ref()
                    .ok_or_else(|| Error::validation(ReasonCode::BadGain, "missing integral state"))?;
                -&e_p * cfg.k_p - &e_v * cfg.k_v - xi * cfg.k_i - feedforward
            }
            ControlLaw::AccelSat => {
                controllers::sat(&(-&e_p * cfg.k_p - &e_v * cfg.k_v), cfg.beta(), cfg.sat_kind) - feedforward
            }
            law => return Err(Error::UnsupportedLaw(law)),
        };
        Ok(self.solve_ff(&rhs))
    }

    /// [`follower_accel_solve_with`](Self::follower_accel_solve_with) with the
    /// leader accelerations taken from the maneuver profile at `state.time`.
    pub fn follower_accel_solve(&self, state: &FormationState, ctrl: &ControllerState) -> Result<DVector<f64>> {
        let a = self.leader_accelerations(state)?;
        self.follower_accel_solve_with(state, ctrl, &a)
    }

    /// Upper bound `||L_ff^-1||_inf beta + ||L_ff^-1 L_fl||_inf ||a_l||_inf`
    /// on the follower accelerations of the saturated acceleration law.
    pub fn accel_sat_bound(&self, leader_accel_inf: f64) -> f64 {
        let inv = self
            .ff_factor
            .inverse();
        let gain = &inv * &self.laplacian.fl;
        linalg::inf_norm(&inv) * self.controller().beta() + linalg::inf_norm(&gain) * leader_accel_inf
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortInfo {
    pub time: f64,
    pub reason: String,
}

/// Time series of one run, every series on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub name: String,
    pub law: ControlLaw,
    pub n: usize,
    pub d: usize,
    pub n_leaders: usize,
    pub step: f64,
    pub times: Vec<f64>,
    pub states: Vec<FormationState>,
    pub delta_p: Vec<DVector<f64>>,
    pub delta_v: Vec<DVector<f64>>,
    pub total_bearing_error: Vec<f64>,
    pub min_pairwise_distance: Vec<f64>,
    pub lyapunov_v: Option<Vec<f64>>,
    /// `||u_i||_inf` per follower.
    pub control_norms: Vec<Vec<f64>>,
    /// `||u_f||_inf`, the controller's part of the follower accelerations.
    pub follower_accel_inf: Vec<f64>,
    pub leader_accel_inf: Vec<f64>,
    pub aborted: Option<AbortInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub steps: usize,
    pub final_time: f64,
    pub final_delta_p: f64,
    pub final_delta_v: f64,
    pub final_bearing_error: f64,
    pub min_distance: f64,
    pub max_control_inf: f64,
    pub converged: bool,
    pub time_to_threshold: Option<f64>,
    pub aborted: bool,
}

impl SimResult {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn delta_p_norms(&self) -> Vec<f64> {
        self.delta_p.iter().map(|x| x.norm()).collect()
    }

    pub fn delta_v_norms(&self) -> Vec<f64> {
        self.delta_v.iter().map(|x| x.norm()).collect()
    }

    pub fn max_control_inf(&self) -> Vec<f64> {
        self.control_norms
            .iter()
            .map(|row| row.iter().copied().fold(0.0, f64::max))
            .collect()
    }

    pub fn summary(&self) -> Summary {
        let dp = self.delta_p_norms();
        let dv = self.delta_v_norms();
        let last = self.len().saturating_sub(1);
        let within: Vec<bool> = dp
            .iter()
            .zip(&dv)
            .map(|(a, b)| *a < CONVERGENCE_THRESHOLD && *b < CONVERGENCE_THRESHOLD)
            .collect();
        let time_to_threshold = match within.iter().rposition(|ok| !ok) {
            None if !within.is_empty() => Some(self.times[0]),
            Some(k) if k + 1 < within.len() => Some(self.times[k + 1]),
            _ => None,
        };
        let final_delta_p = dp.get(last).copied().unwrap_or(f64::NAN);
        let final_delta_v = dv.get(last).copied().unwrap_or(f64::NAN);
        Summary {
            steps: last,
            final_time: self.times.get(last).copied().unwrap_or(0.0),
            final_delta_p,
            final_delta_v,
            final_bearing_error: self.total_bearing_error.get(last).copied().unwrap_or(f64::NAN),
            min_distance: self.min_pairwise_distance.iter().copied().fold(f64::INFINITY, f64::min),
            max_control_inf: self.max_control_inf().into_iter().fold(0.0, f64::max),
            converged: self.aborted.is_none()
                && final_delta_p < CONVERGENCE_THRESHOLD
                && final_delta_v < CONVERGENCE_THRESHOLD,
            time_to_threshold,
            aborted: self.aborted.is_some(),
        }
    }

    /// CSV header: `t`, positions `p{i}_{k}`, velocities `v{i}_{k}`, then metrics.
    pub fn csv_header(n: usize, d: usize) -> String {
        let mut cols = vec!["t".to_string()];
        for prefix in ["p", "v"] {
            for i in 0..n {
                for k in 0..d {
                    cols.push(format!("{prefix}{i}_{k}"));
                }
            }
        }
        cols.extend(
            ["delta_p_norm", "delta_v_norm", "bearing_error", "min_distance", "max_u_inf"]
                .iter()
                .map(|s| s.to_string()),
        );
        cols.join(",")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::csv_header(self.n, self.d))?;
        let dp = self.delta_p_norms();
        let dv = self.delta_v_norms();
        let umax = self.max_control_inf();
        for k in 0..self.len() {
            let s = &self.states[k];
            let mut row = String::with_capacity(32 * (2 * self.n * self.d + 6));
            row.push_str(&self.times[k].to_string());
            for x in s.positions.iter().chain(s.velocities.iter()) {
                row.push(',');
                row.push_str(&x.to_string());
            }
            for x in [dp[k], dv[k], self.total_bearing_error[k], self.min_pairwise_distance[k], umax[k]] {
                row.push(',');
                row.push_str(&x.to_string());
            }
            writeln!(out, "{row}")?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> ResultJson {
        let to_vec = |x: &DVector<f64>| x.as_slice().to_vec();
        ResultJson {
            name: self.name.clone(),
            law: self.law,
            n: self.n,
            d: self.d,
            n_leaders: self.n_leaders,
            step: self.step,
            times: self.times.clone(),
            positions: self.states.iter().map(|s| to_vec(&s.positions)).collect(),
            velocities: self.states.iter().map(|s| to_vec(&s.velocities)).collect(),
            delta_p: self.delta_p.iter().map(to_vec).collect(),
            delta_v: self.delta_v.iter().map(to_vec).collect(),
            total_bearing_error: self.total_bearing_error.clone(),
            min_pairwise_distance: self.min_pairwise_distance.clone(),
            lyapunov_v: self.lyapunov_v.clone(),
            control_norms: self.control_norms.clone(),
            follower_accel_inf: self.follower_accel_inf.clone(),
            leader_accel_inf: self.leader_accel_inf.clone(),
            aborted: self.aborted.clone(),
            summary: self.summary(),
        }
    }
}

/// JSON form of a [`SimResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultJson {
    pub name: String,
    pub law: ControlLaw,
    pub n: usize,
    pub d: usize,
    pub n_leaders: usize,
    pub step: f64,
    pub times: Vec<f64>,
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    pub delta_p: Vec<Vec<f64>>,
    pub delta_v: Vec<Vec<f64>>,
    pub total_bearing_error: Vec<f64>,
    pub min_pairwise_distance: Vec<f64>,
    pub lyapunov_v: Option<Vec<f64>>,
    pub control_norms: Vec<Vec<f64>>,
    pub follower_accel_inf: Vec<f64>,
    pub leader_accel_inf: Vec<f64>,
    pub aborted: Option<AbortInfo>,
    pub summary: Summary,
}

impl ResultJson {
    pub fn into_result(self) -> SimResult {
        let dv = |x: Vec<f64>| DVector::from_vec(x);
        let states = self
            .positions
            .into_iter()
            .zip(self.velocities)
            .zip(&self.times)
            .map(|((p, v), &t)| FormationState::new(dv(p), dv(v), t))
            .collect();
        SimResult {
            name: self.name,
            law: self.law,
            n: self.n,
            d: self.d,
            n_leaders: self.n_leaders,
            step: self.step,
            times: self.times,
            states,
            delta_p: self.delta_p.into_iter().map(dv).collect(),
            delta_v: self.delta_v.into_iter().map(dv).collect(),
            total_bearing_error: self.total_bearing_error,
            min_pairwise_distance: self.min_pairwise_distance,
            lyapunov_v: self.lyapunov_v,
            control_norms: self.control_norms,
            follower_accel_inf: self.follower_accel_inf,
            leader_accel_inf: self.leader_accel_inf,
            aborted: self.aborted,
        }
    }
}

struct Recorder<'a> {
    prepared: &'a PreparedScenario,
    result: SimResult,
}

impl<'a> Recorder<'a> {
    fn new(prepared: &'a PreparedScenario) -> Self {
        let g = prepared.graph();
        let law = prepared.controller().law;
        Self {
            prepared,
            result: SimResult {
                name: prepared.scenario.name.clone(),
                law,
                n: g.n(),
                d: g.d(),
                n_leaders: g.n_leaders(),
                step: prepared.grid.step,
                times: Vec::new(),
                states: Vec::new(),
                delta_p: Vec::new(),
                delta_v: Vec::new(),
                total_bearing_error: Vec::new(),
                min_pairwise_distance: Vec::new(),
                lyapunov_v: analysis::has_lyapunov(law).then(Vec::new),
                control_norms: Vec::new(),
                follower_accel_inf: Vec::new(),
                leader_accel_inf: Vec::new(),
                aborted: None,
            },
        }
    }

    fn record(&mut self, y: &DVector<f64>, ev: &Evaluation) -> Result<()> {
        let p = self.prepared;
        let g = p.graph();
        let lay = p.layout();
        let d = g.d();
        let target = lay.target(y);
        let delta_p = lay.pf(y) - target.rows(lay.nl, lay.dnf);
        let delta_v = lay.vf(y) - ev.target_velocity.rows(lay.nl, lay.dnf);
        let bearing_error = formation::total_bearing_error(&ev.state.positions, g, &p.spec)?;
        let r = &mut self.result;
        if let Some(series) = r.lyapunov_v.as_mut() {
            let cfg = p.controller();
            series.push(analysis::lyapunov_value(cfg.law, &p.laplacian, cfg, &delta_p, &delta_v)?);
        }
        r.times.push(ev.state.time);
        r.min_pairwise_distance.push(formation::min_pairwise_distance(&ev.state.positions, d));
        r.total_bearing_error.push(bearing_error);
        r.control_norms.push(
            (0..g.n_followers())
                .map(|i| linalg::vec_inf_norm(&block(&ev.control, i, d).into_owned()))
                .collect(),
        );
        r.follower_accel_inf.push(linalg::vec_inf_norm(&ev.control));
        r.leader_accel_inf.push(linalg::vec_inf_norm(&ev.leader_accel));
        r.delta_p.push(delta_p);
        r.delta_v.push(delta_v);
        r.states.push(ev.state.clone());
        let _ = &ev.ctrl;
        Ok(())
    }
}

/// Integrates a prepared scenario over its grid.
///
/// Runtime failures (coincident neighbors, divergence) end the run early
/// and are reported through [`SimResult::aborted`] with the partial series.
pub fn run_prepared(prepared: &PreparedScenario) -> SimResult {
    let grid = prepared.grid;
    let mut recorder = Recorder::new(prepared);
    let mut y = prepared.initial_vector();
    let abort = |rec: &mut Recorder, t: f64, e: Error| {
        rec.result.aborted = Some(AbortInfo {
            time: t,
            reason: e.to_string(),
        });
    };
    for k in 0..=grid.steps {
        let t = grid.time(k);
        let ev = match prepared.evaluate(t, t, &y).and_then(|ev| recorder.record(&y, &ev).map(|_| ev)) {
            Ok(ev) => ev,
            Err(e) => {
                abort(&mut recorder, t, e);
                break;
            }
        };
        if k == grid.steps {
            break;
        }
        let mut f = |s: f64, state: &DVector<f64>| {
            if s == t {
                return Ok(ev.derivative.clone());
            }
            prepared.evaluate(s, t, state).map(|e| e.derivative)
        };
        match rk4_step(&mut f, t, &y, grid.step) {
            Ok(next) if next.iter().all(|x| x.is_finite()) && next.norm() <= BLOWUP_NORM => y = next,
            Ok(_) => {
                abort(&mut recorder, grid.time(k + 1), Error::NumericalBlowup { t: grid.time(k + 1) });
                break;
            }
            Err(e) => {
                abort(&mut recorder, t, e);
                break;
            }
        }
    }
    recorder.result
}

/// Validates and runs a scenario.
pub fn run(scenario: &Scenario) -> Result<SimResult> {
    Ok(run_prepared(&scenario.prepare()?))
}

/// Advances `(state, ctrl)` by one RK4 step from time `state.time`.
pub fn step(
    prepared: &PreparedScenario,
    target: &DVector<f64>,
    state: &FormationState,
    ctrl: &ControllerState,
) -> Result<(DVector<f64>, FormationState, ControllerState)> {
    let lay = prepared.layout();
    let t = state.time;
    if t + prepared.grid.step > prepared.grid.horizon() + 1e-9 * prepared.grid.horizon().max(1.0) {
        return Err(Error::TimeOutOfDomain(t + prepared.grid.step));
    }
    let mut y = DVector::zeros(lay.len());
    y.rows_mut(0, lay.dn).copy_from(target);
    y.rows_mut(lay.dn, lay.dnf).copy_from(&state.positions.rows(lay.nl, lay.dnf));
    y.rows_mut(lay.dn + lay.dnf, lay.dnf).copy_from(&state.velocities.rows(lay.nl, lay.dnf));
    if lay.integral {
        let eta = ctrl.eta.clone().unwrap_or_else(|| DVector::zeros(lay.dnf));
        let xi = ctrl.edge_integral.clone().unwrap_or_else(|| DVector::zeros(lay.dnf));
        y.rows_mut(lay.dn + 2 * lay.dnf, lay.dnf).copy_from(&eta);
        y.rows_mut(lay.dn + 3 * lay.dnf, lay.dnf).copy_from(&xi);
    }
    let mut f = |s: f64, yy: &DVector<f64>| prepared.evaluate(s, t, yy).map(|e| e.derivative);
    let next = rk4_step(&mut f, t, &y, prepared.grid.step)?;
    if next.norm() > BLOWUP_NORM {
        return Err(Error::NumericalBlowup { t: t + prepared.grid.step });
    }
    let ev = prepared.evaluate(t + prepared.grid.step, t + prepared.grid.step, &next)?;
    Ok((lay.target(&next), ev.state, ev.ctrl))
}

/// Observables of the current state against the target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub observables: maneuver::FormationObservables,
    pub delta_p_norm: f64,
    pub delta_v_norm: f64,
    pub min_pairwise_distance: f64,
}

pub fn metrics(
    state: &FormationState,
    target_state: &FormationState,
    graph: &FormationGraph,
    spec: &BearingSpec,
) -> Result<StepMetrics> {
    let nl = graph.n_leaders() * graph.d();
    let nf = graph.n_followers() * graph.d();
    Ok(StepMetrics {
        observables: maneuver::observables(&state.positions, graph, spec)?,
        delta_p_norm: (state.positions.rows(nl, nf) - target_state.positions.rows(nl, nf)).norm(),
        delta_v_norm: (state.velocities.rows(nl, nf) - target_state.velocities.rows(nl, nf)).norm(),
        min_pairwise_distance: formation::min_pairwise_distance(&state.positions, graph.d()),
    })
}

/// Dense `L_ff^{-1}`, for diagnostics.
pub fn follower_block_inverse(prepared: &PreparedScenario) -> DMatrix<f64> {
    prepared.ff_factor.inverse()
}
