//! Leader motion for translational and scaling maneuvers.
//!
//! A [`ManeuverProfile`] carries the common translational velocity `v_c(t)`
//! and the scale rate `alpha(t)`. Leaders move with
//! `v_i = v_c + alpha (p_i - c(p*))`, which keeps every bearing of the target
//! formation constant while its centroid moves with `v_c` and its scale
//! grows like `exp(int alpha)`.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::formation::{self, BearingLaplacian, BearingSpec, FormationGraph};
use crate::integrator::{rk4_step, TimeGrid};
use crate::linalg::{block, repeat};

/// Closed-form shape of one segment, evaluated in local time `tau = t - t_start`.
#[derive(Debug, Clone, PartialEq)]
pub enum SegmentKind {
    Constant { value: Vec<f64> },
    /// `c0 + c1 tau + c2 tau^2 + c3 tau^3`; each coefficient is a vector.
    Polynomial { coefficients: Vec<Vec<f64>> },
    /// `offset + amplitude * sin(frequency * tau + phase)`.
    Sinusoid {
        offset: Vec<f64>,
        amplitude: Vec<f64>,
        frequency: f64,
        phase: f64,
    },
    /// `numerator / (1 + rate * tau)`. Realizes constant leader velocities
    /// under a linearly growing scale.
    Rational { numerator: Vec<f64>, rate: f64 },
}

impl SegmentKind {
    fn dim(&self) -> Option<usize> {
        match self {
            SegmentKind::Constant { value } => Some(value.len()),
            SegmentKind::Polynomial { coefficients } => {
                let dim = coefficients.first()?.len();
                coefficients.iter().all(|c| c.len() == dim).then_some(dim)
            }
            SegmentKind::Sinusoid {
                offset, amplitude, ..
            } => (offset.len() == amplitude.len()).then_some(offset.len()),
            SegmentKind::Rational { numerator, .. } => Some(numerator.len()),
        }
    }

    fn value(&self, tau: f64) -> DVector<f64> {
        match self {
            SegmentKind::Constant { value } => DVector::from_column_slice(value),
            SegmentKind::Polynomial { coefficients } => {
                let dim = coefficients[0].len();
                // Horner
                let mut acc = DVector::zeros(dim);
                for c in coefficients.iter().rev() {
                    acc = acc * tau + DVector::from_column_slice(c);
                }
                acc
            }
            SegmentKind::Sinusoid {
                offset,
                amplitude,
                frequency,
                phase,
            } => {
                let s = (frequency * tau + phase).sin();
                DVector::from_iterator(offset.len(), offset.iter().zip(amplitude).map(|(o, a)| o + a * s))
            }
            SegmentKind::Rational { numerator, rate } => {
                DVector::from_column_slice(numerator) / (1.0 + rate * tau)
            }
        }
    }

    fn derivative(&self, tau: f64) -> DVector<f64> {
        match self {
            SegmentKind::Constant { value } => DVector::zeros(value.len()),
            SegmentKind::Polynomial { coefficients } => {
                let dim = coefficients[0].len();
                let mut acc = DVector::zeros(dim);
                for (k, c) in coefficients.iter().enumerate().skip(1).rev() {
                    acc = acc * tau + DVector::from_column_slice(c) * k as f64;
                }
                acc
            }
            SegmentKind::Sinusoid {
                amplitude,
                frequency,
                phase,
                ..
            } => {
                let c = frequency * (frequency * tau + phase).cos();
                DVector::from_iterator(amplitude.len(), amplitude.iter().map(|a| a * c))
            }
            SegmentKind::Rational { numerator, rate } => {
                let den = 1.0 + rate * tau;
                DVector::from_column_slice(numerator) * (-rate / (den * den))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub kind: SegmentKind,
}

/// Piecewise closed-form signal covering `[0, t_end]` without gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    dim: usize,
    segments: Vec<Segment>,
}

/// A derivative value and whether it was taken at a segment boundary,
/// in which case it is the right-hand derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivative {
    pub value: DVector<f64>,
    pub at_boundary: bool,
}

impl Signal {
    pub fn new(dim: usize, segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidProfile("no segments".into()));
        }
        if segments[0].t_start != 0.0 {
            return Err(Error::InvalidProfile("first segment must start at t = 0".into()));
        }
        for (k, seg) in segments.iter().enumerate() {
            if !(seg.t_end > seg.t_start) || !seg.t_end.is_finite() {
                return Err(Error::InvalidProfile(format!("segment {k} has an empty time range")));
            }
            if seg.kind.dim() != Some(dim) {
                return Err(Error::InvalidProfile(format!(
                    "segment {k} does not have dimension {dim}"
                )));
            }
            if let Some(next) = segments.get(k + 1) {
                if next.t_start != seg.t_end {
                    return Err(Error::InvalidProfile(format!(
                        "gap or overlap between segments {k} and {}",
                        k + 1
                    )));
                }
            }
            match &seg.kind {
                SegmentKind::Polynomial { coefficients } if coefficients.len() > 4 => {
                    return Err(Error::InvalidProfile(format!(
                        "segment {k}: polynomial degree exceeds 3"
                    )));
                }
                SegmentKind::Rational { rate, .. }
                    if 1.0 + rate * (seg.t_end - seg.t_start) <= 0.0 =>
                {
                    return Err(Error::InvalidProfile(format!(
                        "segment {k}: rational denominator vanishes inside the segment"
                    )));
                }
                SegmentKind::Sinusoid { frequency, phase, .. }
                    if !frequency.is_finite() || !phase.is_finite() =>
                {
                    return Err(Error::InvalidProfile(format!("segment {k}: non-finite sinusoid")));
                }
                _ => {}
            }
        }
        Ok(Self { dim, segments })
    }

    pub fn constant(value: Vec<f64>, t_end: f64) -> Result<Self> {
        let dim = value.len();
        Self::new(
            dim,
            vec![Segment {
                t_start: 0.0,
                t_end,
                kind: SegmentKind::Constant { value },
            }],
        )
    }

    /// Single segment of the given kind over `[0, t_end]`.
    pub fn single(kind: SegmentKind, t_end: f64) -> Result<Self> {
        let dim = kind.dim().ok_or_else(|| Error::InvalidProfile("inconsistent dimensions".into()))?;
        Self::new(
            dim,
            vec![Segment {
                t_start: 0.0,
                t_end,
                kind,
            }],
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn t_end(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t_end)
    }

    /// Index of the segment governing `t`; boundaries belong to the segment they start.
    pub fn segment_index(&self, t: f64) -> Result<usize> {
        let end = self.t_end();
        if !(t >= 0.0) || t > end + 1e-9 * end.max(1.0) {
            return Err(Error::TimeOutOfDomain(t));
        }
        let idx = self.segments.partition_point(|s| s.t_start <= t);
        Ok(idx.saturating_sub(1))
    }

    fn is_interior_boundary(&self, t: f64) -> bool {
        self.segments
            .iter()
            .skip(1)
            .any(|s| (s.t_start - t).abs() <= 1e-12 * s.t_start.abs().max(1.0))
    }

    pub fn value(&self, t: f64) -> Result<DVector<f64>> {
        self.value_anchored(t, t)
    }

    /// Evaluates the segment selected at `anchor` at time `t`. Integrators
    /// anchor at the step start so a step never straddles two formulas.
    pub fn value_anchored(&self, t: f64, anchor: f64) -> Result<DVector<f64>> {
        let seg = &self.segments[self.segment_index(anchor)?];
        Ok(seg.kind.value(t - seg.t_start))
    }

    pub fn derivative(&self, t: f64) -> Result<Derivative> {
        let seg = &self.segments[self.segment_index(t)?];
        Ok(Derivative {
            value: seg.kind.derivative(t - seg.t_start),
            at_boundary: self.is_interior_boundary(t),
        })
    }

    pub fn derivative_anchored(&self, t: f64, anchor: f64) -> Result<DVector<f64>> {
        let seg = &self.segments[self.segment_index(anchor)?];
        Ok(seg.kind.derivative(t - seg.t_start))
    }
}

/// Desired translational velocity `v_c(t)` and scale rate `alpha(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ManeuverProfile {
    velocity: Signal,
    scale_rate: Signal,
}

impl ManeuverProfile {
    pub fn new(velocity: Signal, scale_rate: Signal) -> Result<Self> {
        if scale_rate.dim() != 1 {
            return Err(Error::InvalidProfile("scale rate must be scalar".into()));
        }
        Ok(Self {
            velocity,
            scale_rate,
        })
    }

    /// Constant `v_c` and `alpha` over `[0, t_end]`.
    pub fn constant(v_c: Vec<f64>, alpha: f64, t_end: f64) -> Result<Self> {
        Self::new(Signal::constant(v_c, t_end)?, Signal::constant(vec![alpha], t_end)?)
    }

    pub fn dim(&self) -> usize {
        self.velocity.dim()
    }

    pub fn velocity_signal(&self) -> &Signal {
        &self.velocity
    }

    pub fn scale_rate_signal(&self) -> &Signal {
        &self.scale_rate
    }

    /// End of the common domain of both signals.
    pub fn t_end(&self) -> f64 {
        self.velocity.t_end().min(self.scale_rate.t_end())
    }

    pub fn v_c(&self, t: f64) -> Result<DVector<f64>> {
        self.velocity.value(t)
    }

    pub fn alpha(&self, t: f64) -> Result<f64> {
        Ok(self.scale_rate.value(t)?[0])
    }

    fn check_domain(&self, t: f64) -> Result<()> {
        let end = self.t_end();
        if !(t >= 0.0) || t > end + 1e-9 * end.max(1.0) {
            return Err(Error::TimeOutOfDomain(t));
        }
        Ok(())
    }

    /// `(v_c, alpha, dv_c/dt, dalpha/dt)` with segments chosen at `anchor`.
    pub(crate) fn sample(&self, t: f64, anchor: f64) -> Result<ProfileSample> {
        self.check_domain(anchor)?;
        Ok(ProfileSample {
            v_c: self.velocity.value_anchored(t, anchor)?,
            alpha: self.scale_rate.value_anchored(t, anchor)?[0],
            dv_c: self.velocity.derivative_anchored(t, anchor)?,
            dalpha: self.scale_rate.derivative_anchored(t, anchor)?[0],
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ProfileSample {
    pub v_c: DVector<f64>,
    pub alpha: f64,
    pub dv_c: DVector<f64>,
    pub dalpha: f64,
}

/// Mean of the agent blocks of a stacked position vector.
pub fn centroid(positions: &DVector<f64>, d: usize) -> DVector<f64> {
    let n = positions.len() / d;
    let mut c = DVector::zeros(d);
    for i in 0..n {
        c += block(positions, i, d);
    }
    c / n as f64
}

/// Root-mean-square distance of the agents to their centroid.
pub fn scale(positions: &DVector<f64>, d: usize) -> f64 {
    let n = positions.len() / d;
    let c = centroid(positions, d);
    let sum: f64 = (0..n).map(|i| (block(positions, i, d) - &c).norm_squared()).sum();
    (sum / n as f64).sqrt()
}

/// `v_c(t) + alpha(t) (p_i - c)`.
pub fn leader_velocity(
    t: f64,
    profile: &ManeuverProfile,
    leader_position: &DVector<f64>,
    target_centroid: &DVector<f64>,
) -> Result<DVector<f64>> {
    profile.check_domain(t)?;
    Ok(profile.v_c(t)? + (leader_position - target_centroid) * profile.alpha(t)?)
}

/// Time derivative of [`leader_velocity`] along the leader's own motion:
/// `dv_c/dt + dalpha/dt (p_i - c) + alpha (v_i - v_c)`.
pub fn leader_acceleration(
    t: f64,
    profile: &ManeuverProfile,
    leader_position: &DVector<f64>,
    target_centroid: &DVector<f64>,
    leader_velocity: &DVector<f64>,
) -> Result<Derivative> {
    profile.check_domain(t)?;
    let dv = profile.velocity.derivative(t)?;
    let da = profile.scale_rate.derivative(t)?;
    let v_c = profile.v_c(t)?;
    let alpha = profile.alpha(t)?;
    Ok(Derivative {
        value: dv.value + (leader_position - target_centroid) * da.value[0] + (leader_velocity - v_c) * alpha,
        at_boundary: dv.at_boundary || da.at_boundary,
    })
}

/// Centroid, scale and total bearing error of a configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FormationObservables {
    pub centroid: Vec<f64>,
    pub scale: f64,
    pub total_bearing_error: f64,
}

pub fn observables(
    positions: &DVector<f64>,
    graph: &FormationGraph,
    spec: &BearingSpec,
) -> Result<FormationObservables> {
    let d = graph.d();
    Ok(FormationObservables {
        centroid: centroid(positions, d).as_slice().to_vec(),
        scale: scale(positions, d),
        total_bearing_error: formation::total_bearing_error(positions, graph, spec)?,
    })
}

/// Right-hand side of the target dynamics `p*' = 1 ⊗ v_c + alpha (p* - 1 ⊗ c(p*))`.
#[derive(Debug, Clone)]
pub struct TargetDynamics<'a> {
    profile: &'a ManeuverProfile,
    d: usize,
}

impl<'a> TargetDynamics<'a> {
    pub fn new(profile: &'a ManeuverProfile, d: usize) -> Self {
        Self { profile, d }
    }

    /// Velocity of every target agent at `(t, p)`, profile segments chosen at `anchor`.
    pub fn velocity(&self, t: f64, anchor: f64, target: &DVector<f64>) -> Result<DVector<f64>> {
        let s = self.profile.sample(t, anchor)?;
        Ok(self.velocity_from(&s, target))
    }

    pub(crate) fn velocity_from(&self, s: &ProfileSample, target: &DVector<f64>) -> DVector<f64> {
        let n = target.len() / self.d;
        let c = centroid(target, self.d);
        repeat(&s.v_c, n) + (target - repeat(&c, n)) * s.alpha
    }

    /// Acceleration of every target agent given its velocity.
    pub(crate) fn acceleration_from(
        &self,
        s: &ProfileSample,
        target: &DVector<f64>,
        velocity: &DVector<f64>,
    ) -> DVector<f64> {
        let n = target.len() / self.d;
        let c = centroid(target, self.d);
        repeat(&s.dv_c, n) + (target - repeat(&c, n)) * s.dalpha + (velocity - repeat(&s.v_c, n)) * s.alpha
    }
}

/// Target formation sampled on a time grid.
#[derive(Debug, Clone)]
pub struct TargetTrajectory {
    pub grid: TimeGrid,
    pub d: usize,
    pub positions: Vec<DVector<f64>>,
}

impl TargetTrajectory {
    /// Minimum pairwise distance over all agents and all grid times.
    pub fn min_pairwise_distance(&self) -> f64 {
        self.positions
            .iter()
            .map(|p| formation::min_pairwise_distance(p, self.d))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Integrates the full target formation from `initial` over `grid`.
pub fn propagate_target(
    profile: &ManeuverProfile,
    graph: &FormationGraph,
    spec: &BearingSpec,
    initial: &DVector<f64>,
    grid: &TimeGrid,
) -> Result<TargetTrajectory> {
    let d = graph.d();
    if profile.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: profile.dim(),
        });
    }
    let laplacian = BearingLaplacian::build(graph, spec)?;
    check_reference(&laplacian, initial)?;
    if grid.horizon() > profile.t_end() + 1e-9 * profile.t_end().max(1.0) {
        return Err(Error::TimeOutOfDomain(grid.horizon()));
    }
    let dynamics = TargetDynamics::new(profile, d);
    let mut positions = Vec::with_capacity(grid.steps + 1);
    let mut p = initial.clone();
    positions.push(p.clone());
    for k in 0..grid.steps {
        let anchor = grid.time(k);
        let mut f = |t: f64, y: &DVector<f64>| dynamics.velocity(t, anchor, y);
        p = rk4_step(&mut f, anchor, &p, grid.step)?;
        positions.push(p.clone());
    }
    Ok(TargetTrajectory {
        grid: *grid,
        d,
        positions,
    })
}

/// Rejects configurations that do not satisfy their own bearing constraints.
pub fn check_reference(laplacian: &BearingLaplacian, positions: &DVector<f64>) -> Result<()> {
    let residual = (&laplacian.full * positions).norm();
    let scale = (laplacian.full.norm() * positions.norm()).max(1.0);
    if residual > 1e-8 * scale {
        return Err(Error::InconsistentReference { residual });
    }
    Ok(())
}
