use crate::converter::ConverterParams;
use crate::plane::solver::LinearSystem;
use crate::plane::{NodalSolver, PlaneModel, ProximityTable};

use super::{ActivationState, PolicyConfig, PolicyError, Result};

/// Upper bound on improving swaps per refinement.
const MAX_SWAPS: usize = 200;

/// `(out, in, plane loss after the swap)`.
type Swap = (usize, usize, f64);

/// Chooses which regulators to enable for a given count and demand map.
///
/// A greedy facility-location pass over effective resistances gives the
/// seed; single swaps evaluated against the solved plane loss then polish
/// it. With a positive regulator output resistance a swap is a rank-2
/// change to the conductance matrix, so candidates are scored through the
/// Woodbury identity instead of refactoring.
#[derive(Debug, Clone)]
pub struct Selector<'m> {
    model: &'m PlaneModel,
    params: ConverterParams,
    table: ProximityTable,
}

impl<'m> Selector<'m> {
    pub fn new(model: &'m PlaneModel, params: &ConverterParams) -> Result<Self> {
        Ok(Selector {
            model,
            params: *params,
            table: ProximityTable::new(model)?,
        })
    }

    pub fn model(&self) -> &'m PlaneModel {
        self.model
    }

    pub fn table(&self) -> &ProximityTable {
        &self.table
    }

    fn check_inputs(&self, n: usize, region_currents: &[f64], prev: &[bool]) -> Result<()> {
        let m = self.model.vr_count();
        if n == 0 || n > m {
            return Err(PolicyError::Domain(format!(
                "cannot select {n} of {m} regulators"
            )));
        }
        if region_currents.len() != self.model.regions().len() {
            return Err(PolicyError::Domain(format!(
                "{} region currents for {} regions",
                region_currents.len(),
                self.model.regions().len()
            )));
        }
        if prev.len() != m {
            return Err(PolicyError::Domain(format!(
                "previous activation has {} entries for {m} regulators",
                prev.len()
            )));
        }
        Ok(())
    }

    /// Greedy pick of `n` regulators minimising
    /// `sum_j d_j * R(load_j, nearest enabled regulator)`.
    ///
    /// Ties go to the lowest id. With `band > 0` a previously enabled
    /// candidate wins whenever its objective is within `band` of the best.
    pub fn greedy_seed(
        &self,
        n: usize,
        region_currents: &[f64],
        prev: &[bool],
        band: f64,
    ) -> Result<Vec<bool>> {
        self.check_inputs(n, region_currents, prev)?;
        let m = self.model.vr_count();
        let demand = self.table.node_demand(region_currents);
        let mut nearest = vec![f64::INFINITY; demand.len()];
        let mut chosen = vec![false; m];

        for _ in 0..n {
            let mut scores = Vec::with_capacity(m);
            for k in 0..m {
                if chosen[k] {
                    continue;
                }
                let row = self.table.row(k);
                let s: f64 = demand
                    .iter()
                    .zip(&nearest)
                    .zip(row)
                    .filter(|((d, _), _)| **d > 0.0)
                    .map(|((d, best), r)| d * best.min(*r))
                    .sum();
                scores.push((k, s));
            }
            let (mut pick, best) =
                scores
                    .iter()
                    .copied()
                    .fold((usize::MAX, f64::INFINITY), |acc, (k, s)| {
                        if s < acc.1 {
                            (k, s)
                        } else {
                            acc
                        }
                    });
            if pick == usize::MAX {
                // every remaining score is infinite (no demand reachable yet)
                pick = scores[0].0;
            }
            if band > 0.0 && !prev[pick] {
                let limit = best * (1.0 + band);
                if let Some(&(k, _)) = scores
                    .iter()
                    .filter(|(k, s)| prev[*k] && *s <= limit)
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                {
                    pick = k;
                }
            }
            chosen[pick] = true;
            for (best, r) in nearest.iter_mut().zip(self.table.row(pick)) {
                *best = best.min(*r);
            }
        }
        Ok(chosen)
    }

    /// Improves `active` by single swaps while the solved plane loss drops.
    ///
    /// Swapping a previously enabled regulator out for one that was off must
    /// gain more than `band` of the current loss; other swaps only need a
    /// strict improvement.
    pub fn refine(
        &self,
        mut active: Vec<bool>,
        region_currents: &[f64],
        prev: &[bool],
        band: f64,
    ) -> Result<Vec<bool>> {
        let n = active.iter().filter(|&&a| a).count();
        self.check_inputs(n, region_currents, prev)?;
        if n == self.model.vr_count() || region_currents.iter().sum::<f64>() <= 0.0 {
            return Ok(active);
        }
        for _ in 0..MAX_SWAPS {
            let (cur, swaps) = self.swap_losses(&active, region_currents)?;
            let mut best: Option<(usize, usize, f64)> = None;
            for (k, o, loss) in swaps {
                let thr = if prev[k] && !prev[o] {
                    band * cur
                } else {
                    1e-12 * cur
                };
                let gain = cur - loss - thr;
                if gain > 0.0 && best.is_none_or(|(_, _, g)| gain > g) {
                    best = Some((k, o, gain));
                }
            }
            match best {
                Some((k, o, _)) => {
                    active[k] = false;
                    active[o] = true;
                }
                None => break,
            }
        }
        Ok(active)
    }

    /// Greedy seed followed by swap refinement.
    pub fn select(
        &self,
        n: usize,
        region_currents: &[f64],
        prev: &[bool],
        band: f64,
    ) -> Result<Vec<bool>> {
        let seed = self.greedy_seed(n, region_currents, prev, band)?;
        self.refine(seed, region_currents, prev, band)
    }

    /// Plane loss of `active` and of every single swap `(out, in)`.
    fn swap_losses(&self, active: &[bool], region_currents: &[f64]) -> Result<(f64, Vec<Swap>)> {
        let on: Vec<usize> = (0..active.len()).filter(|&k| active[k]).collect();
        let off: Vec<usize> = (0..active.len()).filter(|&k| !active[k]).collect();
        let mut out = Vec::with_capacity(on.len() * off.len());

        if !(self.params.r_out > 0.0) {
            let mut solver = NodalSolver::new(self.model, &self.params);
            let cur = solver.solve(active, region_currents)?.plane_loss;
            let mut trial = active.to_vec();
            for &k in &on {
                for &o in &off {
                    trial[k] = false;
                    trial[o] = true;
                    out.push((k, o, solver.solve(&trial, region_currents)?.plane_loss));
                    trial[k] = true;
                    trial[o] = false;
                }
            }
            return Ok((cur, out));
        }

        let model = self.model;
        let nodes = model.vr_nodes();
        let nn = model.node_count();
        let g = 1.0 / self.params.r_out;
        let v_ref = self.params.v_out_ref;
        let mut diag = vec![0.0; nn];
        for &k in &on {
            diag[nodes[k]] += g;
        }
        let edges = model
            .segments()
            .iter()
            .map(|s| (s.a, s.b, 1.0 / s.r))
            .collect();
        let sys = LinearSystem::new(nn, diag, edges, vec![None; nn])?;

        let mut rhs: Vec<f64> = model
            .node_currents(region_currents)
            .iter()
            .map(|i| -i)
            .collect();
        for &k in &on {
            rhs[nodes[k]] += g * v_ref;
        }
        let v = sys.solve(&rhs)?;
        let cur = self.plane_loss(&v);

        let mut cols: Vec<Option<Vec<f64>>> = vec![None; active.len()];
        for k in 0..active.len() {
            let mut e = vec![0.0; nn];
            e[nodes[k]] = 1.0;
            cols[k] = Some(sys.solve(&e)?);
        }
        let col = |k: usize| cols[k].as_ref().expect("filled above");

        let mut y = vec![0.0; nn];
        for &k in &on {
            let (pk, zk) = (nodes[k], col(k));
            for &o in &off {
                let (po, zo) = (nodes[o], col(o));
                // G' = G + U C U^T, U = [e_k, e_o], C = diag(-g, g)
                for i in 0..nn {
                    y[i] = v[i] + g * v_ref * (zo[i] - zk[i]);
                }
                let a11 = -1.0 / g + zk[pk];
                let a12 = zo[pk];
                let a21 = zk[po];
                let a22 = 1.0 / g + zo[po];
                let det = a11 * a22 - a12 * a21;
                if det.abs() < 1e-300 {
                    return Err(PolicyError::Domain(format!(
                        "degenerate swap {k} -> {o} in selector update"
                    )));
                }
                let (b1, b2) = (y[pk], y[po]);
                let w1 = (a22 * b1 - a12 * b2) / det;
                let w2 = (a11 * b2 - a21 * b1) / det;
                for i in 0..nn {
                    y[i] -= zk[i] * w1 + zo[i] * w2;
                }
                out.push((k, o, self.plane_loss(&y)));
            }
        }
        Ok((cur, out))
    }

    fn plane_loss(&self, v: &[f64]) -> f64 {
        self.model
            .segments()
            .iter()
            .map(|s| {
                let dv = v[s.a] - v[s.b];
                dv * dv / s.r
            })
            .sum()
    }
}

/// Returns the ids of the `n` regulators to enable, in ascending order.
pub fn select_active_vrs(
    n: usize,
    model: &PlaneModel,
    region_currents: &[f64],
    prev: &ActivationState,
    cfg: &PolicyConfig,
    params: &ConverterParams,
) -> Result<Vec<usize>> {
    let m = model.vr_count();
    if n > m {
        return Err(PolicyError::Domain(format!(
            "cannot select {n} of {m} regulators"
        )));
    }
    let prev_flags = if prev.enabled.len() == m {
        prev.projected()
    } else {
        vec![false; m]
    };
    let flags = Selector::new(model, params)?.select(
        n,
        region_currents,
        &prev_flags,
        cfg.hysteresis_band,
    )?;
    Ok((0..m).filter(|&k| flags[k]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plane::{
        build_plane, effective_resistance, solve_nodal, PlaneConfig, RegionConfig, VrLayout,
    };
    use crate::policy::PolicyKind;

    fn plane(nx: usize, ny: usize, vrs: Vec<usize>, loads: Vec<Vec<usize>>) -> PlaneModel {
        build_plane(&PlaneConfig {
            nx,
            ny,
            r_seg: 1e-3,
            segment_overrides: Vec::new(),
            removed_segments: Vec::new(),
            vr_layout: VrLayout::Nodes { nodes: vrs },
            regions: loads
                .into_iter()
                .enumerate()
                .map(|(k, nodes)| RegionConfig {
                    id: format!("R{k}"),
                    rect: None,
                    nodes,
                    weight: 1.0,
                })
                .collect(),
        })
        .unwrap()
    }

    fn cfg() -> PolicyConfig {
        PolicyConfig::reference(PolicyKind::Lapsa)
    }

    #[test]
    fn all_regulators_when_n_is_m() {
        let m = plane(3, 4, vec![0, 2, 5, 6, 9, 11], vec![vec![4], vec![7]]);
        let p = ConverterParams::reference();
        let ids = select_active_vrs(6, &m, &[3.0, 1.0], &ActivationState::all_off(6), &cfg(), &p)
            .unwrap();
        assert_eq!(ids, vec![0, 1, 2, 3, 4, 5]);
        assert!(
            select_active_vrs(7, &m, &[3.0, 1.0], &ActivationState::all_off(6), &cfg(), &p)
                .is_err()
        );
    }

    #[test]
    fn single_hotspot_picks_nearest() {
        let m = plane(5, 5, vec![0, 4, 20, 24, 7], vec![vec![18]]);
        let p = ConverterParams::reference();
        let ids =
            select_active_vrs(1, &m, &[10.0], &ActivationState::all_off(5), &cfg(), &p).unwrap();
        let best = (0..5)
            .min_by(|&a, &b| {
                let ra = effective_resistance(&m, m.vr_nodes()[a], 18).unwrap();
                let rb = effective_resistance(&m, m.vr_nodes()[b], 18).unwrap();
                ra.total_cmp(&rb)
            })
            .unwrap();
        assert_eq!(ids, vec![best]);
    }

    #[test]
    fn woodbury_scores_match_direct_solves() {
        let m = plane(4, 4, vec![0, 3, 5, 10, 12, 15], vec![vec![6, 9], vec![2]]);
        let p = ConverterParams::reference();
        let s = Selector::new(&m, &p).unwrap();
        let active = vec![true, false, true, false, false, true];
        let demand = [8.0, 3.0];
        let (cur, swaps) = s.swap_losses(&active, &demand).unwrap();
        let direct = solve_nodal(&m, &active, &p, &demand).unwrap().plane_loss;
        assert!((cur - direct).abs() <= 1e-12 * direct);
        assert_eq!(swaps.len(), 9);
        for (k, o, loss) in swaps {
            let mut t = active.clone();
            t[k] = false;
            t[o] = true;
            let want = solve_nodal(&m, &t, &p, &demand).unwrap().plane_loss;
            assert!(
                (loss - want).abs() <= 1e-9 * want,
                "{k}->{o}: {loss} vs {want}"
            );
        }
    }

    #[test]
    fn stickiness_keeps_previous_choice() {
        // two regulators equidistant from the load; the one already on stays
        let m = plane(3, 1, vec![0, 2], vec![vec![1]]);
        let p = ConverterParams::reference();
        let s = Selector::new(&m, &p).unwrap();
        assert_eq!(
            s.select(1, &[5.0], &[false, false], 0.05).unwrap(),
            vec![true, false]
        );
        assert_eq!(
            s.select(1, &[5.0], &[false, true], 0.05).unwrap(),
            vec![false, true]
        );
    }

    #[test]
    fn deterministic_and_exact_count() {
        let m = plane(
            6,
            5,
            vec![0, 5, 7, 10, 14, 19, 22, 24, 29],
            vec![vec![8, 9], vec![20], vec![27]],
        );
        let p = ConverterParams::reference();
        let s = Selector::new(&m, &p).unwrap();
        for n in 1..=9 {
            let a = s.select(n, &[4.0, 1.0, 2.5], &[false; 9], 0.05).unwrap();
            let b = s.select(n, &[4.0, 1.0, 2.5], &[false; 9], 0.05).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.iter().filter(|&&x| x).count(), n);
        }
    }

    #[test]
    fn ideal_sources_use_direct_path() {
        let m = plane(4, 3, vec![0, 3, 8, 11], vec![vec![5], vec![6]]);
        let p = ConverterParams {
            r_out: 0.0,
            ..ConverterParams::reference()
        };
        let s = Selector::new(&m, &p).unwrap();
        let sel = s.select(2, &[1.0, 1.0], &[false; 4], 0.0).unwrap();
        assert_eq!(sel.iter().filter(|&&x| x).count(), 2);
    }
}
