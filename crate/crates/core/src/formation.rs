//! Formation topology, bearings, the bearing Laplacian and rigidity tests.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, block};

/// Agents closer than this (absolute, position units) are coincident.
pub const COINCIDENT_TOL: f64 = 1e-9;
/// Relative singular-value threshold for rank and nonsingularity decisions.
pub const RANK_TOL: f64 = 1e-8;

/// Interaction topology. Leaders occupy indices `0..n_leaders`.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationGraph {
    n: usize,
    d: usize,
    n_leaders: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl FormationGraph {
    /// Builds a graph from directed edges `(i, j)`, meaning `i` senses `j`.
    pub fn new(n: usize, d: usize, n_leaders: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGraph(format!("need at least 2 agents, got {n}")));
        }
        if d < 2 {
            return Err(Error::InvalidGraph(format!("need dimension >= 2, got {d}")));
        }
        if n_leaders < 2 || n_leaders > n {
            return Err(Error::InvalidGraph(format!(
                "need 2 <= n_leaders <= n, got {n_leaders} leaders for {n} agents"
            )));
        }
        let mut seen = BTreeSet::new();
        for &(i, j) in &edges {
            if i >= n || j >= n {
                return Err(Error::InvalidGraph(format!("edge ({i}, {j}) out of range")));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop at {i}")));
            }
            if !seen.insert((i, j)) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({i}, {j})")));
            }
        }
        for &(i, j) in &edges {
            if i >= n_leaders && j >= n_leaders && !seen.contains(&(j, i)) {
                return Err(Error::InvalidGraph(format!(
                    "follower edge ({i}, {j}) has no reverse edge"
                )));
            }
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in &edges {
            neighbors[i].push(j);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        Ok(Self {
            n,
            d,
            n_leaders,
            edges,
            neighbors,
        })
    }

    /// Every undirected pair becomes two directed edges.
    pub fn from_undirected(
        n: usize,
        d: usize,
        n_leaders: usize,
        pairs: &[(usize, usize)],
    ) -> Result<Self> {
        let mut set = BTreeSet::new();
        for &(i, j) in pairs {
            if !set.insert((i, j)) || !set.insert((j, i)) {
                return Err(Error::InvalidGraph(format!("duplicate edge {{{i}, {j}}}")));
            }
        }
        Self::new(n, d, n_leaders, set.into_iter().collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_leaders(&self) -> usize {
        self.n_leaders
    }

    pub fn n_followers(&self) -> usize {
        self.n - self.n_leaders
    }

    pub fn is_leader(&self, i: usize) -> bool {
        i < self.n_leaders
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Each edge once, oriented lower index to higher index, sorted.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let set: BTreeSet<(usize, usize)> =
            self.edges.iter().map(|&(i, j)| (i.min(j), i.max(j))).collect();
        set.into_iter().collect()
    }
}

/// Stacked positions and velocities at a point in time.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationState {
    pub positions: DVector<f64>,
    pub velocities: DVector<f64>,
    pub time: f64,
}

impl FormationState {
    pub fn new(positions: DVector<f64>, velocities: DVector<f64>, time: f64) -> Self {
        Self {
            positions,
            velocities,
            time,
        }
    }

    pub fn at_rest(positions: DVector<f64>) -> Self {
        let velocities = DVector::zeros(positions.len());
        Self::new(positions, velocities, 0.0)
    }

    pub fn check_shape(&self, graph: &FormationGraph) -> Result<()> {
        let expected = graph.n() * graph.d();
        for len in [self.positions.len(), self.velocities.len()] {
            if len != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    actual: len,
                });
            }
        }
        Ok(())
    }
}

/// Desired unit bearing for every directed edge.
#[derive(Debug, Clone, PartialEq)]
pub struct BearingSpec {
    d: usize,
    bearings: BTreeMap<(usize, usize), DVector<f64>>,
}

impl BearingSpec {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&DVector<f64>> {
        self.bearings.get(&(i, j))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &DVector<f64>)> {
        self.bearings.iter()
    }

    pub fn len(&self) -> usize {
        self.bearings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bearings.is_empty()
    }
}

/// `P_g = I - g g^T` for the normalized direction of `g`.
pub fn orthogonal_projection(g: &DVector<f64>) -> Result<DMatrix<f64>> {
    let norm = g.norm();
    if norm < 1e-12 {
        return Err(Error::ZeroVector);
    }
    let u = g / norm;
    Ok(DMatrix::identity(g.len(), g.len()) - &u * u.transpose())
}

/// Bearings of `positions` along every edge of `graph`.
///
/// Each undirected pair is evaluated once; the reverse edge receives the
/// exact negation.
pub fn bearings_of(positions: &DVector<f64>, graph: &FormationGraph) -> Result<BearingSpec> {
    let d = graph.d();
    let expected = graph.n() * d;
    if positions.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: positions.len(),
        });
    }
    let directed: BTreeSet<(usize, usize)> = graph.edges().iter().copied().collect();
    let mut bearings = BTreeMap::new();
    for (i, j) in graph.undirected_edges() {
        let e = block(positions, j, d) - block(positions, i, d);
        let norm = e.norm();
        if norm < COINCIDENT_TOL {
            return Err(Error::CoincidentAgents(i, j));
        }
        let g = e / norm;
        if directed.contains(&(j, i)) {
            bearings.insert((j, i), -&g);
        }
        if directed.contains(&(i, j)) {
            bearings.insert((i, j), g);
        }
    }
    Ok(BearingSpec { d, bearings })
}

/// Dense bearing Laplacian with its leader/follower partition.
#[derive(Debug, Clone, PartialEq)]
pub struct BearingLaplacian {
    d: usize,
    n_leaders: usize,
    pub full: DMatrix<f64>,
    pub ll: DMatrix<f64>,
    pub lf: DMatrix<f64>,
    pub fl: DMatrix<f64>,
    pub ff: DMatrix<f64>,
}

impl BearingLaplacian {
    pub fn build(graph: &FormationGraph, spec: &BearingSpec) -> Result<Self> {
        let d = graph.d();
        let n = graph.n();
        if spec.d() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: spec.d(),
            });
        }
        let mut full = DMatrix::zeros(n * d, n * d);
        for &(i, j) in graph.edges() {
            let g = spec.get(i, j).ok_or(Error::MissingBearing(i, j))?;
            let p = orthogonal_projection(g)?;
            let mut diag = full.view_mut((i * d, i * d), (d, d));
            diag += &p;
            let mut off = full.view_mut((i * d, j * d), (d, d));
            off -= &p;
        }
        let nl = graph.n_leaders() * d;
        let nf = n * d - nl;
        Ok(Self {
            d,
            n_leaders: graph.n_leaders(),
            ll: full.view((0, 0), (nl, nl)).into_owned(),
            lf: full.view((0, nl), (nl, nf)).into_owned(),
            fl: full.view((nl, 0), (nf, nl)).into_owned(),
            ff: full.view((nl, nl), (nf, nf)).into_owned(),
            full,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_leaders(&self) -> usize {
        self.n_leaders
    }

    pub fn n_followers(&self) -> usize {
        self.ff.nrows() / self.d
    }

    /// Eigenvalues of `L_ff`, ascending.
    pub fn follower_eigenvalues(&self) -> Vec<f64> {
        linalg::symmetric_eigenvalues(&self.ff)
    }

    pub fn lambda_min(&self) -> f64 {
        self.follower_eigenvalues().first().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub unique: bool,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

/// Target uniqueness: `L_ff` nonsingular up to `RANK_TOL * ||L_ff||_2`.
pub fn check_uniqueness(laplacian: &BearingLaplacian) -> UniquenessReport {
    let s = linalg::singular_values(&laplacian.ff);
    let sigma_max = s.first().copied().unwrap_or(0.0);
    let sigma_min = s.last().copied().unwrap_or(0.0);
    UniquenessReport {
        unique: !s.is_empty() && sigma_min > RANK_TOL * sigma_max,
        sigma_min,
        sigma_max,
    }
}

/// Follower positions and velocities pinned by the leaders:
/// `L_ff p_f* = -L_fl p_l` and `L_ff v_f* = -L_fl v_l`.
pub fn target_followers(
    laplacian: &BearingLaplacian,
    leader_positions: &DVector<f64>,
    leader_velocities: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let report = check_uniqueness(laplacian);
    if !report.unique {
        return Err(Error::SingularFollowerBlock {
            sigma_min: report.sigma_min,
        });
    }
    let nl = laplacian.fl.ncols();
    for v in [leader_positions, leader_velocities] {
        if v.len() != nl {
            return Err(Error::DimensionMismatch {
                expected: nl,
                actual: v.len(),
            });
        }
    }
    let solve = |rhs: DVector<f64>| {
        linalg::solve_spd(&laplacian.ff, &rhs).ok_or(Error::SingularFollowerBlock {
            sigma_min: report.sigma_min,
        })
    };
    let p = solve(-(&laplacian.fl * leader_positions))?;
    let v = solve(-(&laplacian.fl * leader_velocities))?;
    Ok((p, v))
}

/// Jacobian of the stacked bearing function, one `d`-row block per
/// undirected edge oriented lower to higher index.
pub fn bearing_rigidity_matrix(
    positions: &DVector<f64>,
    graph: &FormationGraph,
) -> Result<DMatrix<f64>> {
    let d = graph.d();
    let n = graph.n();
    if positions.len() != n * d {
        return Err(Error::DimensionMismatch {
            expected: n * d,
            actual: positions.len(),
        });
    }
    let edges = graph.undirected_edges();
    let mut r = DMatrix::zeros(edges.len() * d, n * d);
    for (k, &(i, j)) in edges.iter().enumerate() {
        let e = block(positions, j, d) - block(positions, i, d);
        let len = e.norm();
        if len < COINCIDENT_TOL {
            return Err(Error::CoincidentAgents(i, j));
        }
        let p = orthogonal_projection(&e)? / len;
        r.view_mut((k * d, j * d), (d, d)).copy_from(&p);
        r.view_mut((k * d, i * d), (d, d)).copy_from(&(-&p));
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RigidityReport {
    pub rank: usize,
    pub is_infinitesimally_bearing_rigid: bool,
    pub null_space_dim: usize,
    pub trivial_motion_dim: usize,
}

pub fn rigidity_report(positions: &DVector<f64>, graph: &FormationGraph) -> Result<RigidityReport> {
    let r = bearing_rigidity_matrix(positions, graph)?;
    let rank = linalg::rank(&r, RANK_TOL);
    let dn = graph.n() * graph.d();
    let trivial = graph.d() + 1;
    Ok(RigidityReport {
        rank,
        is_infinitesimally_bearing_rigid: rank + trivial == dn,
        null_space_dim: dn - rank,
        trivial_motion_dim: trivial,
    })
}

/// Total bearing error `sum ||g_ij - g*_ij||` over directed edges.
pub fn total_bearing_error(
    positions: &DVector<f64>,
    graph: &FormationGraph,
    spec: &BearingSpec,
) -> Result<f64> {
    let current = bearings_of(positions, graph)?;
    let mut total = 0.0;
    for (&(i, j), g) in current.iter() {
        let target = spec.get(i, j).ok_or(Error::MissingBearing(i, j))?;
        total += (g - target).norm();
    }
    Ok(total)
}

/// Smallest distance over all agent pairs.
pub fn min_pairwise_distance(positions: &DVector<f64>, d: usize) -> f64 {
    let n = positions.len() / d;
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            best = best.min((block(positions, i, d) - block(positions, j, d)).norm());
        }
    }
    best
}

/// Stacks rows of coordinates into one vector.
pub fn stack(points: &[&[f64]]) -> DVector<f64> {
    DVector::from_iterator(
        points.iter().map(|p| p.len()).sum(),
        points.iter().flat_map(|p| p.iter().copied()),
    )
}

/// Example geometries used throughout tests, docs and bundled scenarios.
pub mod examples {
    use super::*;

    /// Side-4 square with leaders 0, 1 and the diagonal between 1 and 3.
    pub fn square() -> (FormationGraph, DVector<f64>) {
        let g = FormationGraph::from_undirected(4, 2, 2, &[(0, 1), (1, 2), (2, 3), (3, 0), (1, 3)])
            .expect("valid square");
        let p = stack(&[&[0.0, 0.0], &[0.0, -4.0], &[-4.0, -4.0], &[-4.0, 0.0]]);
        (g, p)
    }

    /// 3-by-4 rectangle, plain 4-cycle: followers can slide horizontally.
    pub fn rectangle() -> (FormationGraph, DVector<f64>) {
        let g = FormationGraph::from_undirected(4, 2, 2, &[(0, 1), (1, 2), (2, 3), (3, 0)])
            .expect("valid rectangle");
        let p = stack(&[&[0.0, 0.0], &[0.0, -4.0], &[-3.0, -4.0], &[-3.0, 0.0]]);
        (g, p)
    }

    /// Unit cube (scaled by `side`) with its twelve edges and one body diagonal.
    pub fn cube(side: f64) -> (FormationGraph, DVector<f64>) {
        let pairs = [
            (0, 1),
            (1, 2),
            (2, 3),
            (3, 0),
            (0, 4),
            (4, 5),
            (5, 1),
            (5, 6),
            (6, 2),
            (4, 7),
            (6, 7),
            (3, 7),
            (0, 6),
        ];
        let g = FormationGraph::from_undirected(8, 3, 2, &pairs).expect("valid cube");
        let corners: [[f64; 3]; 8] = [
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 1.0],
            [1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0],
            [0.0, 1.0, 1.0],
            [1.0, 1.0, 1.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
        ];
        let p = DVector::from_iterator(24, corners.iter().flatten().map(|x| x * side));
        (g, p)
    }
}
