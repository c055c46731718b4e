//! Slow, independent reference computations used to cross-check the fast
//! paths: dense LU factorization for nodal voltages and exhaustive
//! subset search for regulator selection.

use nalgebra::{DMatrix, DVector};

use crate::converter::ConverterParams;
use crate::plane::{solve_nodal, PlaneModel, Result};

/// Node voltages from a dense conductance matrix with regulators as
/// Norton sources (`r_out > 0` required).
pub fn dense_node_voltages(
    model: &PlaneModel,
    active: &[bool],
    params: &ConverterParams,
    region_currents: &[f64],
) -> Option<Vec<f64>> {
    let n = model.node_count();
    let mut g = DMatrix::<f64>::zeros(n, n);
    for s in model.segments() {
        let c = 1.0 / s.r;
        g[(s.a, s.a)] += c;
        g[(s.b, s.b)] += c;
        g[(s.a, s.b)] -= c;
        g[(s.b, s.a)] -= c;
    }
    let mut rhs =
        DVector::from_iterator(n, model.node_currents(region_currents).iter().map(|i| -i));
    let go = 1.0 / params.r_out;
    for (&node, &on) in model.vr_nodes().iter().zip(active) {
        if on {
            g[(node, node)] += go;
            rhs[node] += go * params.v_out_ref;
        }
    }
    g.lu().solve(&rhs).map(|x| x.as_slice().to_vec())
}

/// Exhaustive minimum of solved plane loss over all `n`-subsets.
pub fn best_subset(
    model: &PlaneModel,
    params: &ConverterParams,
    n: usize,
    region_currents: &[f64],
) -> Result<(Vec<bool>, f64)> {
    let m = model.vr_count();
    let mut best = (Vec::new(), f64::INFINITY);
    for mask in 0u64..(1u64 << m) {
        if mask.count_ones() as usize != n {
            continue;
        }
        let active: Vec<bool> = (0..m).map(|k| mask >> k & 1 == 1).collect();
        let loss = solve_nodal(model, &active, params, region_currents)?.plane_loss;
        if loss < best.1 {
            best = (active, loss);
        }
    }
    Ok(best)
}

/// Activation count for an integer load in watts using integer ceiling.
pub fn n_active_integer(p_w: u64, p_opt_w: u64, m: u64, n_min: u64) -> u64 {
    if p_w >= p_opt_w {
        return m;
    }
    let n = (m * p_w).div_ceil(p_opt_w);
    n.max(n_min).min(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_ceiling() {
        assert_eq!(n_active_integer(50, 500, 70, 1), 7);
        assert_eq!(n_active_integer(0, 500, 70, 1), 1);
        assert_eq!(n_active_integer(25, 500, 70, 1), 4);
        assert_eq!(n_active_integer(1000, 500, 70, 1), 70);
    }
}
