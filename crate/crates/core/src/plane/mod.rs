//! Resistive model of the shared low-voltage power plane.
//!
//! The plane is a graph of nodes joined by resistive segments. Regulators
//! attach to nodes as Thevenin sources, load regions draw constant currents
//! spread evenly over their nodes. [`build_plane`] produces the usual
//! rectangular mesh; [`PlaneModel::new`] accepts any connected graph.

mod nodal;
pub(crate) mod solver;

use std::collections::VecDeque;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use nodal::{effective_resistance, solve_nodal, NodalSolution, NodalSolver, ProximityTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlaneError {
    #[error("invalid plane configuration: {0}")]
    InvalidConfig(String),
    #[error("node {node} hosts more than one regulator")]
    DuplicateVrNode { node: usize },
    #[error("segment {a}-{b} has non-positive resistance {r}")]
    NonPositiveResistance { a: usize, b: usize, r: f64 },
    #[error("plane is disconnected: {unreachable} node(s) unreachable from node 0")]
    Disconnected { unreachable: usize },
    #[error("no active regulator to source the plane")]
    NoActiveSource,
    #[error("singular conductance system: {0}")]
    Singular(String),
    #[error("iterative solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
}

pub type Result<T> = std::result::Result<T, PlaneError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: usize,
    pub b: usize,
    /// Ohms.
    pub r: f64,
}

/// A load region: its demand is split evenly across `nodes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadRegion {
    pub id: String,
    pub nodes: Vec<usize>,
    /// Relative share of total power used by synthetic workloads.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneModel {
    coords: Vec<(f64, f64)>,
    segments: Vec<Segment>,
    vr_nodes: Vec<usize>,
    regions: Vec<LoadRegion>,
}

impl PlaneModel {
    /// Validates and assembles an arbitrary plane graph. The regulator id is
    /// its position in `vr_nodes`.
    pub fn new(
        coords: Vec<(f64, f64)>,
        segments: Vec<Segment>,
        vr_nodes: Vec<usize>,
        regions: Vec<LoadRegion>,
    ) -> Result<Self> {
        let n = coords.len();
        if n == 0 {
            return Err(PlaneError::InvalidConfig("plane has no nodes".into()));
        }
        for s in &segments {
            if s.a >= n || s.b >= n || s.a == s.b {
                return Err(PlaneError::InvalidConfig(format!(
                    "segment {}-{} does not join two distinct nodes of {n}",
                    s.a, s.b
                )));
            }
            if !(s.r > 0.0) || !s.r.is_finite() {
                return Err(PlaneError::NonPositiveResistance {
                    a: s.a,
                    b: s.b,
                    r: s.r,
                });
            }
        }
        let mut seen = vec![false; n];
        for &v in &vr_nodes {
            if v >= n {
                return Err(PlaneError::InvalidConfig(format!(
                    "regulator node {v} out of range (plane has {n} nodes)"
                )));
            }
            if seen[v] {
                return Err(PlaneError::DuplicateVrNode { node: v });
            }
            seen[v] = true;
        }
        for (k, r) in regions.iter().enumerate() {
            if r.nodes.is_empty() {
                return Err(PlaneError::InvalidConfig(format!(
                    "region '{}' has no nodes",
                    r.id
                )));
            }
            if let Some(&bad) = r.nodes.iter().find(|&&v| v >= n) {
                return Err(PlaneError::InvalidConfig(format!(
                    "region '{}' references node {bad} out of range",
                    r.id
                )));
            }
            if !(r.weight >= 0.0) {
                return Err(PlaneError::InvalidConfig(format!(
                    "region '{}' has negative weight",
                    r.id
                )));
            }
            if regions[..k].iter().any(|o| o.id == r.id) {
                return Err(PlaneError::InvalidConfig(format!(
                    "duplicate region id '{}'",
                    r.id
                )));
            }
        }
        let unreachable = count_unreachable(n, &segments);
        if unreachable > 0 {
            return Err(PlaneError::Disconnected { unreachable });
        }
        Ok(PlaneModel {
            coords,
            segments,
            vr_nodes,
            regions,
        })
    }

    pub fn node_count(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Node of each regulator, indexed by regulator id.
    pub fn vr_nodes(&self) -> &[usize] {
        &self.vr_nodes
    }

    pub fn vr_count(&self) -> usize {
        self.vr_nodes.len()
    }

    pub fn regions(&self) -> &[LoadRegion] {
        &self.regions
    }

    pub fn region_index(&self, id: &str) -> Option<usize> {
        self.regions.iter().position(|r| r.id == id)
    }

    /// Flattened `(region index, node)` pairs.
    pub fn load_nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.regions
            .iter()
            .enumerate()
            .flat_map(|(k, r)| r.nodes.iter().map(move |&v| (k, v)))
    }

    /// Region weights normalised to sum to one.
    pub fn demand_shares(&self) -> Vec<f64> {
        let total: f64 = self.regions.iter().map(|r| r.weight).sum();
        if total > 0.0 {
            self.regions.iter().map(|r| r.weight / total).collect()
        } else {
            vec![1.0 / self.regions.len() as f64; self.regions.len()]
        }
    }

    /// Spreads per-region currents over nodes.
    pub fn node_currents(&self, region_currents: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.node_count()];
        for (r, &i) in self.regions.iter().zip(region_currents) {
            let share = i / r.nodes.len() as f64;
            for &v in &r.nodes {
                out[v] += share;
            }
        }
        out
    }
}

fn count_unreachable(n: usize, segments: &[Segment]) -> usize {
    let mut adj = vec![Vec::new(); n];
    for s in segments {
        adj[s.a].push(s.b);
        adj[s.b].push(s.a);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut reached = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                reached += 1;
                queue.push_back(v);
            }
        }
    }
    n - reached
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VrLayout {
    /// `cols x rows` regulators centred on a uniform sub-lattice of the mesh.
    Lattice { cols: usize, rows: usize },
    /// Explicit node indices; regulator ids follow list order.
    Nodes { nodes: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionConfig {
    pub id: String,
    /// Inclusive rectangle `[x0, x1, y0, y1]` in mesh coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rect: Option<[usize; 4]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nodes: Vec<usize>,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentOverride {
    pub a: usize,
    pub b: usize,
    pub r: f64,
}

/// Rectangular mesh description. Node `(x, y)` has index `y * nx + x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneConfig {
    pub nx: usize,
    pub ny: usize,
    /// Resistance of every mesh segment unless overridden (ohms).
    pub r_seg: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segment_overrides: Vec<SegmentOverride>,
    /// Segments cut out of the mesh (plane voids or splits).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub removed_segments: Vec<[usize; 2]>,
    pub vr_layout: VrLayout,
    pub regions: Vec<RegionConfig>,
}

impl PlaneConfig {
    /// 14 x 20 mesh at 0.5 mOhm per segment with 70 regulators on a 7 x 10
    /// lattice. Loads: a 12 x 12 compute die drawing about 84% of the power
    /// and six 3 x 3 memory stacks above and below it.
    pub fn reference() -> Self {
        let mut regions = vec![RegionConfig {
            id: "die".into(),
            rect: Some([1, 12, 4, 15]),
            nodes: Vec::new(),
            weight: 288.0,
        }];
        let mut k = 0;
        for y0 in [1, 16] {
            for x0 in [1, 5, 9] {
                regions.push(RegionConfig {
                    id: format!("hbm{k}"),
                    rect: Some([x0, x0 + 2, y0, y0 + 2]),
                    nodes: Vec::new(),
                    weight: 9.0,
                });
                k += 1;
            }
        }
        PlaneConfig {
            nx: 14,
            ny: 20,
            r_seg: 0.5e-3,
            segment_overrides: Vec::new(),
            removed_segments: Vec::new(),
            vr_layout: VrLayout::Lattice { cols: 7, rows: 10 },
            regions,
        }
    }

    pub fn node(&self, x: usize, y: usize) -> usize {
        y * self.nx + x
    }
}

pub fn build_plane(cfg: &PlaneConfig) -> Result<PlaneModel> {
    let (nx, ny) = (cfg.nx, cfg.ny);
    if nx == 0 || ny == 0 {
        return Err(PlaneError::InvalidConfig(format!(
            "mesh {nx} x {ny} has no nodes"
        )));
    }
    if !(cfg.r_seg > 0.0) {
        return Err(PlaneError::NonPositiveResistance {
            a: 0,
            b: 0,
            r: cfg.r_seg,
        });
    }
    let n = nx * ny;
    let coords = (0..n).map(|i| ((i % nx) as f64, (i / nx) as f64)).collect();

    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    let mut segments = Vec::with_capacity(2 * n);
    for y in 0..ny {
        for x in 0..nx {
            let i = cfg.node(x, y);
            if x + 1 < nx {
                segments.push(Segment {
                    a: i,
                    b: i + 1,
                    r: cfg.r_seg,
                });
            }
            if y + 1 < ny {
                segments.push(Segment {
                    a: i,
                    b: i + nx,
                    r: cfg.r_seg,
                });
            }
        }
    }
    for o in &cfg.segment_overrides {
        let seg = segments
            .iter_mut()
            .find(|s| key(s.a, s.b) == key(o.a, o.b))
            .ok_or_else(|| {
                PlaneError::InvalidConfig(format!(
                    "override for non-existent segment {}-{}",
                    o.a, o.b
                ))
            })?;
        seg.r = o.r;
    }
    for &[a, b] in &cfg.removed_segments {
        let before = segments.len();
        segments.retain(|s| key(s.a, s.b) != key(a, b));
        if segments.len() == before {
            return Err(PlaneError::InvalidConfig(format!(
                "cannot remove non-existent segment {a}-{b}"
            )));
        }
    }

    let vr_nodes = match &cfg.vr_layout {
        VrLayout::Lattice { cols, rows } => {
            if *cols == 0 || *rows == 0 || *cols > nx || *rows > ny {
                return Err(PlaneError::InvalidConfig(format!(
                    "{cols} x {rows} regulator lattice does not fit a {nx} x {ny} mesh"
                )));
            }
            let mut v = Vec::with_capacity(cols * rows);
            for j in 0..*rows {
                for i in 0..*cols {
                    let x = (2 * i + 1) * nx / (2 * cols);
                    let y = (2 * j + 1) * ny / (2 * rows);
                    v.push(cfg.node(x, y));
                }
            }
            v
        }
        VrLayout::Nodes { nodes } => nodes.clone(),
    };

    let mut regions = Vec::with_capacity(cfg.regions.len());
    for rc in &cfg.regions {
        let mut nodes = rc.nodes.clone();
        if let Some([x0, x1, y0, y1]) = rc.rect {
            if x0 > x1 || y0 > y1 || x1 >= nx || y1 >= ny {
                return Err(PlaneError::InvalidConfig(format!(
                    "region '{}' rectangle [{x0}, {x1}, {y0}, {y1}] outside {nx} x {ny} mesh",
                    rc.id
                )));
            }
            for y in y0..=y1 {
                for x in x0..=x1 {
                    nodes.push(cfg.node(x, y));
                }
            }
        }
        nodes.sort_unstable();
        nodes.dedup();
        regions.push(LoadRegion {
            id: rc.id.clone(),
            nodes,
            weight: rc.weight,
        });
    }

    PlaneModel::new(coords, segments, vr_nodes, regions)
}

/// Writes `node_index,x,y,voltage_v` rows.
pub fn write_node_voltages<W: Write>(
    mut w: W,
    model: &PlaneModel,
    solution: &NodalSolution,
) -> io::Result<()> {
    writeln!(w, "node_index,x,y,voltage_v")?;
    for (i, ((x, y), v)) in model
        .coords()
        .iter()
        .zip(&solution.node_voltages)
        .enumerate()
    {
        writeln!(w, "{i},{x},{y},{v}")?;
    }
    Ok(())
}
