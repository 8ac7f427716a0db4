//! JSON scenario files.
//!
//! Agents may be referred to by index or, when `graph.labels` is given, by
//! label. Internally leaders are renumbered first, in the order listed in
//! `graph.leaders`, followed by the remaining agents in file order; CSV and
//! JSON results use that internal order.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::controllers::{ControlLaw, ControllerConfig, SatKind};
use crate::error::{Error, ReasonCode, Result};
use crate::formation::{FormationGraph, FormationState};
use crate::maneuver::{ManeuverProfile, Segment, SegmentKind, Signal, TargetDynamics};
use crate::simulator::{self, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: Option<String>,
    pub graph: GraphSection,
    pub reference_configuration: Vec<Vec<f64>>,
    #[serde(default)]
    pub initial: InitialSection,
    pub profile: ProfileSection,
    pub controller: ControllerSection,
    pub run: RunSection,
    #[serde(default)]
    pub analysis: Option<AnalysisSection>,
    #[serde(default)]
    pub outputs: Option<OutputsSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AgentRef {
    Index(usize),
    Label(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub n: usize,
    pub d: usize,
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    pub leaders: Vec<AgentRef>,
    /// Undirected edges; both directions are added.
    pub edges: Vec<(AgentRef, AgentRef)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    /// All agents, file order. Defaults to the reference plus a perturbation.
    #[serde(default)]
    pub positions: Option<Vec<Vec<f64>>>,
    /// All agents, file order. Defaults to the target velocity plus a perturbation.
    #[serde(default)]
    pub velocities: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub perturbation_radius: f64,
    #[serde(default)]
    pub velocity_perturbation_radius: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    pub velocity: Vec<SegmentSection>,
    pub scale_rate: Vec<SegmentSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKindName {
    Constant,
    Polynomial,
    Sinusoid,
    Rational,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSection {
    pub t_start: f64,
    pub t_end: f64,
    pub kind: SegmentKindName,
    pub parameters: SegmentParameters,
}

/// Scalar signals (the scale rate) accept plain numbers in place of
/// one-element arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Vector {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Vector {
    fn into_vec(self) -> Vec<f64> {
        match self {
            Vector::Scalar(x) => vec![x],
            Vector::Vector(v) => v,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentParameters {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Vector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<Vector>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<Vector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<Vector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numerator: Option<Vector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DisturbanceSection {
    /// Same input disturbance on every follower.
    Uniform(Vec<f64>),
    /// One vector per follower, in file order.
    PerFollower(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub law: ControlLaw,
    pub k_p: f64,
    pub k_v: f64,
    #[serde(default, rename = "k_I")]
    pub k_i: f64,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub sat_kind: SatKind,
    #[serde(default)]
    pub disturbance: Option<DisturbanceSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default = "default_step")]
    pub h: f64,
}

fn default_step() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsSection {
    #[serde(default)]
    pub csv_path: Option<PathBuf>,
    #[serde(default)]
    pub json_path: Option<PathBuf>,
}

/// Failure to read or decode a scenario file.
#[derive(Debug, thiserror::Error)]
pub enum InputError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("{0}")]
    Schema(String),
    #[error("bad override {0:?}: {1}")]
    Override(String, String),
}

impl From<serde_json::Error> for InputError {
    fn from(e: serde_json::Error) -> Self {
        if e.line() > 0 {
            InputError::Syntax {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            }
        } else {
            InputError::Schema(e.to_string())
        }
    }
}

/// Raw JSON document with `key=value` overrides applied.
#[derive(Debug, Clone)]
pub struct ScenarioDocument {
    pub source: Option<PathBuf>,
    pub value: Value,
}

impl ScenarioDocument {
    pub fn from_str(text: &str) -> std::result::Result<Self, InputError> {
        Ok(Self {
            source: None,
            value: serde_json::from_str(text)?,
        })
    }

    pub fn load(path: &Path) -> std::result::Result<Self, InputError> {
        let text = std::fs::read_to_string(path).map_err(|source| InputError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut doc = Self::from_str(&text)?;
        doc.source = Some(path.to_path_buf());
        // schema errors are reported with positions from the original text
        serde_json::from_str::<ScenarioFile>(&text)?;
        Ok(doc)
    }

    /// Sets the value at a dotted path such as `controller.k_I`. The value is
    /// parsed as JSON when possible and kept as a string otherwise.
    pub fn set(&mut self, key: &str, raw: &str) -> std::result::Result<(), InputError> {
        let bad = |m: &str| InputError::Override(key.to_string(), m.to_string());
        let new = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut cur = &mut self.value;
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(bad("empty path component"));
        }
        for (k, part) in parts.iter().enumerate() {
            let last = k + 1 == parts.len();
            cur = match cur {
                Value::Object(map) => {
                    if last {
                        map.insert(part.to_string(), new);
                        return Ok(());
                    }
                    map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
                }
                Value::Array(items) => {
                    let idx: usize = part.parse().map_err(|_| bad("array index expected"))?;
                    let slot = items.get_mut(idx).ok_or_else(|| bad("array index out of range"))?;
                    if last {
                        *slot = new;
                        return Ok(());
                    }
                    slot
                }
                _ => return Err(bad("path goes through a scalar")),
            };
        }
        unreachable!("loop returns on the last component")
    }

    /// Applies `key=value` strings.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> std::result::Result<(), InputError> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| InputError::Override(o.to_string(), "expected key=value".into()))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn parse(&self) -> std::result::Result<ScenarioFile, InputError> {
        // re-serialize so schema errors carry line/column of the effective document
        let text = serde_json::to_string_pretty(&self.value).expect("Value always serializes");
        Ok(serde_json::from_str(&text)?)
    }

    pub fn default_name(&self) -> String {
        self.source
            .as_ref()
            .and_then(|p| p.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into())
    }
}

fn invalid_graph(msg: impl Into<String>) -> Error {
    Error::validation(ReasonCode::InvalidGraph, msg)
}

fn dim_mismatch(msg: impl Into<String>) -> Error {
    Error::validation(ReasonCode::DimensionMismatch, msg)
}

impl ScenarioFile {
    fn resolve(&self, r: &AgentRef) -> Result<usize> {
        let n = self.graph.n;
        match r {
            AgentRef::Index(i) if *i < n => Ok(*i),
            AgentRef::Index(i) => Err(invalid_graph(format!("agent index {i} out of range (n = {n})"))),
            AgentRef::Label(s) => self
                .graph
                .labels
                .as_ref()
                .and_then(|l| l.iter().position(|x| x == s))
                .ok_or_else(|| invalid_graph(format!("unknown agent label {s:?}"))),
        }
    }

    /// File index of each internal agent (leaders first).
    pub fn agent_order(&self) -> Result<Vec<usize>> {
        let n = self.graph.n;
        if let Some(labels) = &self.graph.labels {
            if labels.len() != n {
                return Err(invalid_graph(format!("{} labels for {n} agents", labels.len())));
            }
            let mut sorted = labels.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != n {
                return Err(invalid_graph("agent labels are not unique"));
            }
        }
        let mut order = Vec::with_capacity(n);
        for r in &self.graph.leaders {
            let i = self.resolve(r)?;
            if order.contains(&i) {
                return Err(invalid_graph(format!("leader {i} listed twice")));
            }
            order.push(i);
        }
        order.extend((0..n).filter(|i| !self.graph.leaders.iter().any(|r| self.resolve(r).ok() == Some(*i))));
        Ok(order)
    }

    fn stack_rows(&self, rows: &[Vec<f64>], order: &[usize], what: &str) -> Result<DVector<f64>> {
        let (n, d) = (self.graph.n, self.graph.d);
        if rows.len() != n {
            return Err(dim_mismatch(format!("{what} has {} rows, expected {n}", rows.len())));
        }
        let mut out = Vec::with_capacity(n * d);
        for &i in order {
            if rows[i].len() != d {
                return Err(dim_mismatch(format!("{what} row {i} has {} entries, expected {d}", rows[i].len())));
            }
            out.extend_from_slice(&rows[i]);
        }
        Ok(DVector::from_vec(out))
    }

    pub fn graph(&self) -> Result<FormationGraph> {
        let order = self.agent_order()?;
        let mut internal = vec![0; self.graph.n];
        for (k, &i) in order.iter().enumerate() {
            internal[i] = k;
        }
        let pairs = self
            .graph
            .edges
            .iter()
            .map(|(a, b)| Ok((internal[self.resolve(a)?], internal[self.resolve(b)?])))
            .collect::<Result<Vec<_>>>()?;
        FormationGraph::from_undirected(self.graph.n, self.graph.d, self.graph.leaders.len(), &pairs)
            .map_err(|e| invalid_graph(e.to_string()))
    }

    pub fn profile(&self) -> Result<ManeuverProfile> {
        let build = |segs: &[SegmentSection], dim: usize, what: &str| -> Result<Signal> {
            let segments = segs
                .iter()
                .enumerate()
                .map(|(k, s)| segment(s, dim).map_err(|m| Error::InvalidProfile(format!("{what}[{k}]: {m}"))))
                .collect::<Result<Vec<_>>>()?;
            Signal::new(dim, segments)
        };
        let velocity = build(&self.profile.velocity, self.graph.d, "velocity")?;
        let scale_rate = build(&self.profile.scale_rate, 1, "scale_rate")?;
        ManeuverProfile::new(velocity, scale_rate)
    }

    pub fn controller(&self) -> Result<ControllerConfig> {
        let c = &self.controller;
        let d = self.graph.d;
        let n_leaders = self.graph.leaders.len();
        let n_f = self.graph.n.saturating_sub(n_leaders);
        let disturbance = match &c.disturbance {
            None => None,
            Some(DisturbanceSection::Uniform(w)) => {
                if w.len() != d {
                    return Err(dim_mismatch(format!("disturbance has {} entries, expected {d}", w.len())));
                }
                Some(DVector::from_iterator(n_f * d, w.iter().copied().cycle().take(n_f * d)))
            }
            Some(DisturbanceSection::PerFollower(rows)) => {
                if rows.len() != n_f || rows.iter().any(|r| r.len() != d) {
                    return Err(dim_mismatch(format!("disturbance must list {n_f} vectors of length {d}")));
                }
                // followers keep their relative file order internally
                Some(DVector::from_iterator(n_f * d, rows.iter().flatten().copied()))
            }
        };
        Ok(ControllerConfig {
            law: c.law,
            k_p: c.k_p,
            k_v: c.k_v,
            k_i: c.k_i,
            beta: c.beta,
            sat_kind: c.sat_kind,
            disturbance,
        })
    }

    /// Builds the simulation scenario, drawing seeded perturbations where
    /// initial positions or velocities are not given explicitly.
    pub fn to_scenario(&self, name: &str) -> Result<Scenario> {
        let order = self.agent_order()?;
        let graph = self.graph()?;
        let reference = self.stack_rows(&self.reference_configuration, &order, "reference_configuration")?;
        let profile = self.profile()?;
        if profile.dim() != graph.d() {
            return Err(dim_mismatch("profile dimension differs from graph dimension"));
        }
        let target_velocity = TargetDynamics::new(&profile, graph.d()).velocity(0.0, 0.0, &reference)?;
        let init = &self.initial;
        if !(init.perturbation_radius >= 0.0 && init.velocity_perturbation_radius >= 0.0) {
            return Err(Error::validation(ReasonCode::BadGain, "perturbation radii must be non-negative"));
        }
        let drawn = simulator::perturbed_initial(
            &graph,
            &reference,
            &target_velocity,
            init.perturbation_radius,
            init.velocity_perturbation_radius,
            init.seed,
        );
        let positions = match &init.positions {
            Some(rows) => self.stack_rows(rows, &order, "initial.positions")?,
            None => drawn.positions,
        };
        let velocities = match &init.velocities {
            Some(rows) => self.stack_rows(rows, &order, "initial.velocities")?,
            None => drawn.velocities,
        };
        Ok(Scenario {
            name: self.name.clone().unwrap_or_else(|| name.to_string()),
            graph,
            reference,
            initial: FormationState::new(positions, velocities, 0.0),
            profile,
            controller: self.controller()?,
            horizon: self.run.horizon,
            step: self.run.h,
            seed: init.seed,
        })
    }

    pub fn gamma(&self) -> Option<f64> {
        self.analysis.as_ref().and_then(|a| a.gamma)
    }
}

fn segment(s: &SegmentSection, dim: usize) -> std::result::Result<Segment, String> {
    let p = s.parameters.clone();
    let need = |v: Option<Vector>, name: &str| -> std::result::Result<Vec<f64>, String> {
        let v = v.ok_or_else(|| format!("missing parameter {name:?}"))?.into_vec();
        if v.len() != dim {
            return Err(format!("parameter {name:?} has {} entries, expected {dim}", v.len()));
        }
        Ok(v)
    };
    let unused = |names: &[(&str, bool)]| -> std::result::Result<(), String> {
        match names.iter().find(|(_, present)| *present) {
            Some((n, _)) => Err(format!("parameter {n:?} does not apply to {:?} segments", s.kind)),
            None => Ok(()),
        }
    };
    let kind = match s.kind {
        SegmentKindName::Constant => {
            unused(&[
                ("coefficients", p.coefficients.is_some()),
                ("offset", p.offset.is_some()),
                ("amplitude", p.amplitude.is_some()),
                ("frequency", p.frequency.is_some()),
                ("phase", p.phase.is_some()),
                ("numerator", p.numerator.is_some()),
                ("rate", p.rate.is_some()),
            ])?;
            SegmentKind::Constant {
                value: need(p.value, "value")?,
            }
        }
        SegmentKindName::Polynomial => {
            unused(&[
                ("value", p.value.is_some()),
                ("offset", p.offset.is_some()),
                ("amplitude", p.amplitude.is_some()),
                ("frequency", p.frequency.is_some()),
                ("phase", p.phase.is_some()),
                ("numerator", p.numerator.is_some()),
                ("rate", p.rate.is_some()),
            ])?;
            let coefficients = p
                .coefficients
                .ok_or("missing parameter \"coefficients\"")?
                .into_iter()
                .map(|c| need(Some(c), "coefficients"))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            SegmentKind::Polynomial { coefficients }
        }
        SegmentKindName::Sinusoid => {
            unused(&[
                ("value", p.value.is_some()),
                ("coefficients", p.coefficients.is_some()),
                ("numerator", p.numerator.is_some()),
                ("rate", p.rate.is_some()),
            ])?;
            SegmentKind::Sinusoid {
                offset: match p.offset {
                    Some(o) => need(Some(o), "offset")?,
                    None => vec![0.0; dim],
                },
                amplitude: need(p.amplitude, "amplitude")?,
                frequency: p.frequency.ok_or("missing parameter \"frequency\"")?,
                phase: p.phase.unwrap_or(0.0),
            }
        }
        SegmentKindName::Rational => {
            unused(&[
                ("value", p.value.is_some()),
                ("coefficients", p.coefficients.is_some()),
                ("offset", p.offset.is_some()),
                ("amplitude", p.amplitude.is_some()),
                ("frequency", p.frequency.is_some()),
                ("phase", p.phase.is_some()),
            ])?;
            SegmentKind::Rational {
                numerator: need(p.numerator, "numerator")?,
                rate: p.rate.ok_or("missing parameter \"rate\"")?,
            }
        }
    };
    Ok(Segment {
        t_start: s.t_start,
        t_end: s.t_end,
        kind,
    })
}
