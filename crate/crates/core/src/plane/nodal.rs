use crate::converter::ConverterParams;

use super::solver::LinearSystem;
use super::{PlaneError, PlaneModel, Result};

/// Steady-state solution of the plane for one activation pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalSolution {
    pub node_voltages: Vec<f64>,
    /// Output current of each regulator (A), zero when inactive.
    pub vr_currents: Vec<f64>,
    /// Current through each segment from `a` to `b` (A).
    pub branch_currents: Vec<f64>,
    /// Load current drawn at each node (A).
    pub load_currents: Vec<f64>,
    /// `sum(i^2 * r)` over segments (W).
    pub plane_loss: f64,
    /// Highest active-regulator node voltage minus lowest loaded node
    /// voltage (V): the drop across the plane itself, excluding regulator
    /// output impedance.
    pub worst_ir_drop: f64,
    /// Power entering the plane at regulator nodes (W).
    pub injected_power: f64,
    /// Power leaving the plane at load nodes (W).
    pub delivered_power: f64,
    /// Largest absolute KCL imbalance over all nodes (A).
    pub kcl_residual: f64,
}

impl NodalSolution {
    /// KCL residual relative to the largest injected or drawn current.
    pub fn kcl_residual_relative(&self) -> f64 {
        let scale = self
            .vr_currents
            .iter()
            .chain(&self.load_currents)
            .fold(0.0f64, |m, i| m.max(i.abs()));
        if scale == 0.0 {
            self.kcl_residual
        } else {
            self.kcl_residual / scale
        }
    }

    /// Sum of all regulator output currents.
    pub fn total_source_current(&self) -> f64 {
        self.vr_currents.iter().sum()
    }
}

/// Nodal solver bound to one plane and regulator model. Keeps the last
/// factorization, so repeated solves with an unchanged activation pattern
/// only pay for the triangular solves.
#[derive(Debug)]
pub struct NodalSolver<'m> {
    model: &'m PlaneModel,
    v_ref: f64,
    r_out: f64,
    edges: Vec<(usize, usize, f64)>,
    cached: Option<(Vec<bool>, LinearSystem)>,
}

impl<'m> NodalSolver<'m> {
    pub fn new(model: &'m PlaneModel, params: &ConverterParams) -> Self {
        NodalSolver {
            model,
            v_ref: params.v_out_ref,
            r_out: params.r_out,
            edges: model
                .segments()
                .iter()
                .map(|s| (s.a, s.b, 1.0 / s.r))
                .collect(),
            cached: None,
        }
    }

    pub fn model(&self) -> &'m PlaneModel {
        self.model
    }

    fn system(&mut self, active: &[bool]) -> Result<&LinearSystem> {
        let stale = match &self.cached {
            Some((key, _)) => key.as_slice() != active,
            None => true,
        };
        if stale {
            let n = self.model.node_count();
            let mut diag = vec![0.0; n];
            let mut fixed = vec![None; n];
            for (&node, _) in self
                .model
                .vr_nodes()
                .iter()
                .zip(active)
                .filter(|(_, &on)| on)
            {
                if self.r_out > 0.0 {
                    diag[node] += 1.0 / self.r_out;
                } else {
                    fixed[node] = Some(self.v_ref);
                }
            }
            let sys = LinearSystem::new(n, diag, self.edges.clone(), fixed)?;
            self.cached = Some((active.to_vec(), sys));
        }
        Ok(&self.cached.as_ref().expect("populated above").1)
    }

    /// Solves `G v = i` with active regulators as `v_ref` behind `r_out` and
    /// loads as ideal current sinks.
    pub fn solve(&mut self, active: &[bool], region_currents: &[f64]) -> Result<NodalSolution> {
        let model = self.model;
        if active.len() != model.vr_count() {
            return Err(PlaneError::InvalidConfig(format!(
                "activation vector has {} entries for {} regulators",
                active.len(),
                model.vr_count()
            )));
        }
        if region_currents.len() != model.regions().len() {
            return Err(PlaneError::InvalidConfig(format!(
                "{} region currents given for {} regions",
                region_currents.len(),
                model.regions().len()
            )));
        }
        if let Some(bad) = region_currents
            .iter()
            .find(|i| !(**i >= 0.0) || !i.is_finite())
        {
            return Err(PlaneError::InvalidConfig(format!(
                "load currents must be finite and non-negative, got {bad}"
            )));
        }
        if !active.iter().any(|&a| a) {
            return Err(PlaneError::NoActiveSource);
        }

        let (v_ref, r_out) = (self.v_ref, self.r_out);
        let load = model.node_currents(region_currents);
        let mut inj: Vec<f64> = load.iter().map(|i| -i).collect();
        if r_out > 0.0 {
            for (&node, _) in model.vr_nodes().iter().zip(active).filter(|(_, &on)| on) {
                inj[node] += v_ref / r_out;
            }
        }
        let v = self.system(active)?.solve(&inj)?;

        let segs = model.segments();
        let branch: Vec<f64> = segs.iter().map(|s| (v[s.a] - v[s.b]) / s.r).collect();
        // net current leaving each node through the plane
        let mut outflow = vec![0.0; v.len()];
        for (s, &i) in segs.iter().zip(&branch) {
            outflow[s.a] += i;
            outflow[s.b] -= i;
        }

        let mut vr_currents = vec![0.0; model.vr_count()];
        let mut source = vec![0.0; v.len()];
        for (k, (&node, &on)) in model.vr_nodes().iter().zip(active).enumerate() {
            if !on {
                continue;
            }
            let i = if r_out > 0.0 {
                (v_ref - v[node]) / r_out
            } else {
                outflow[node] + load[node]
            };
            vr_currents[k] = i;
            source[node] = i;
        }

        let kcl_residual = (0..v.len())
            .map(|n| (source[n] - load[n] - outflow[n]).abs())
            .fold(0.0, f64::max);
        let plane_loss = segs.iter().zip(&branch).map(|(s, i)| i * i * s.r).sum();
        let injected_power = (0..v.len()).map(|n| v[n] * source[n]).sum();
        let delivered_power = (0..v.len()).map(|n| v[n] * load[n]).sum();

        let v_src = model
            .vr_nodes()
            .iter()
            .zip(active)
            .filter(|(_, &on)| on)
            .map(|(&n, _)| v[n])
            .fold(f64::NEG_INFINITY, f64::max);
        let v_load = (0..v.len())
            .filter(|&n| load[n] > 0.0)
            .map(|n| v[n])
            .fold(f64::INFINITY, f64::min);
        let worst_ir_drop = if v_load.is_finite() {
            (v_src - v_load).max(0.0)
        } else {
            0.0
        };

        Ok(NodalSolution {
            node_voltages: v,
            vr_currents,
            branch_currents: branch,
            load_currents: load,
            plane_loss,
            worst_ir_drop,
            injected_power,
            delivered_power,
            kcl_residual,
        })
    }
}

/// One-shot nodal solve; see [`NodalSolver::solve`].
pub fn solve_nodal(
    model: &PlaneModel,
    active: &[bool],
    params: &ConverterParams,
    region_currents: &[f64],
) -> Result<NodalSolution> {
    NodalSolver::new(model, params).solve(active, region_currents)
}

fn grounded_system(model: &PlaneModel, ground: usize) -> Result<LinearSystem> {
    let n = model.node_count();
    let mut fixed = vec![None; n];
    fixed[ground] = Some(0.0);
    let edges = model
        .segments()
        .iter()
        .map(|s| (s.a, s.b, 1.0 / s.r))
        .collect();
    LinearSystem::new(n, vec![0.0; n], edges, fixed)
}

/// Two-point effective resistance between plane nodes (ohms).
pub fn effective_resistance(model: &PlaneModel, node_a: usize, node_b: usize) -> Result<f64> {
    let n = model.node_count();
    if node_a >= n || node_b >= n {
        return Err(PlaneError::InvalidConfig(format!(
            "nodes {node_a}, {node_b} out of range for {n}-node plane"
        )));
    }
    if node_a == node_b {
        return Ok(0.0);
    }
    let sys = grounded_system(model, node_a)?;
    let mut inj = vec![0.0; n];
    inj[node_b] = 1.0;
    Ok(sys.solve(&inj)?[node_b])
}

/// Effective resistance from every regulator to every loaded node, used as
/// the proximity metric when choosing which regulators to enable.
#[derive(Debug, Clone)]
pub struct ProximityTable {
    load_nodes: Vec<usize>,
    /// For each region, indices into `load_nodes`.
    region_members: Vec<Vec<usize>>,
    /// `r[vr][j]`: ohms from regulator `vr` to `load_nodes[j]`.
    r: Vec<Vec<f64>>,
}

impl ProximityTable {
    pub fn new(model: &PlaneModel) -> Result<Self> {
        let n = model.node_count();
        let mut load_nodes: Vec<usize> = model.load_nodes().map(|(_, v)| v).collect();
        load_nodes.sort_unstable();
        load_nodes.dedup();
        let region_members = model
            .regions()
            .iter()
            .map(|r| {
                r.nodes
                    .iter()
                    .map(|v| load_nodes.binary_search(v).expect("load node listed"))
                    .collect()
            })
            .collect();

        // Grounded inverse X: R(p, q) = X_pp + X_qq - 2 X_pq.
        let ground = 0;
        let sys = grounded_system(model, ground)?;
        let column = |p: usize| -> Result<Vec<f64>> {
            if p == ground {
                return Ok(vec![0.0; n]);
            }
            let mut e = vec![0.0; n];
            e[p] = 1.0;
            sys.solve(&e)
        };
        let mut load_diag = Vec::with_capacity(load_nodes.len());
        for &q in &load_nodes {
            load_diag.push(column(q)?[q]);
        }
        let mut r = Vec::with_capacity(model.vr_count());
        for &p in model.vr_nodes() {
            let col = column(p)?;
            r.push(
                load_nodes
                    .iter()
                    .zip(&load_diag)
                    .map(|(&q, &xqq)| {
                        if q == p {
                            0.0
                        } else {
                            (col[p] + xqq - 2.0 * col[q]).max(0.0)
                        }
                    })
                    .collect(),
            );
        }
        Ok(ProximityTable {
            load_nodes,
            region_members,
            r,
        })
    }

    pub fn load_nodes(&self) -> &[usize] {
        &self.load_nodes
    }

    pub fn resistance(&self, vr: usize, load_idx: usize) -> f64 {
        self.r[vr][load_idx]
    }

    pub fn row(&self, vr: usize) -> &[f64] {
        &self.r[vr]
    }

    pub fn vr_count(&self) -> usize {
        self.r.len()
    }

    /// Per-load-node demand for the given region currents.
    pub fn node_demand(&self, region_currents: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; self.load_nodes.len()];
        for (members, &i) in self.region_members.iter().zip(region_currents) {
            let share = i / members.len() as f64;
            for &j in members {
                d[j] += share;
            }
        }
        d
    }
}
