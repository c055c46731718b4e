use dvpdsim_core::converter::ConverterParams;
use dvpdsim_core::plane::{
    build_plane, effective_resistance, solve_nodal, LoadRegion, PlaneConfig, PlaneModel,
    RegionConfig, Segment, VrLayout,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn dense_voltages(
    model: &PlaneModel,
    active: &[bool],
    p: &ConverterParams,
    cur: &[f64],
) -> Vec<f64> {
    let n = model.node_count();
    let mut g = DMatrix::<f64>::zeros(n, n);
    for s in model.segments() {
        let c = 1.0 / s.r;
        g[(s.a, s.a)] += c;
        g[(s.b, s.b)] += c;
        g[(s.a, s.b)] -= c;
        g[(s.b, s.a)] -= c;
    }
    let mut rhs = DVector::from_vec(model.node_currents(cur).iter().map(|i| -i).collect());
    for (&node, &on) in model.vr_nodes().iter().zip(active) {
        if on {
            g[(node, node)] += 1.0 / p.r_out;
            rhs[node] += p.v_out_ref / p.r_out;
        }
    }
    g.lu().solve(&rhs).unwrap().iter().copied().collect()
}

#[test]
fn three_by_three_matches_dense_lu() {
    let cfg = PlaneConfig {
        nx: 3,
        ny: 3,
        r_seg: 1e-3,
        segment_overrides: Vec::new(),
        removed_segments: Vec::new(),
        vr_layout: VrLayout::Nodes { nodes: vec![0, 8] },
        regions: vec![RegionConfig {
            id: "c".into(),
            rect: None,
            nodes: vec![4],
            weight: 1.0,
        }],
    };
    let m = build_plane(&cfg).unwrap();
    let p = ConverterParams::reference();
    let sol = solve_nodal(&m, &[true, true], &p, &[10.0]).unwrap();
    let want = dense_voltages(&m, &[true, true], &p, &[10.0]);
    for (a, b) in sol.node_voltages.iter().zip(&want) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
    assert!((sol.vr_currents[0] - 5.0).abs() < 1e-12);
}

#[derive(Debug, Clone)]
struct Mesh {
    nx: usize,
    ny: usize,
    r: Vec<f64>,
    vrs: Vec<usize>,
    loads: Vec<usize>,
    active: Vec<bool>,
    cur: Vec<f64>,
}

impl Mesh {
    fn segments(&self) -> Vec<Segment> {
        let mut segs = Vec::new();
        let mut k = 0;
        for y in 0..self.ny {
            for x in 0..self.nx {
                let v = y * self.nx + x;
                if x + 1 < self.nx {
                    segs.push(Segment {
                        a: v,
                        b: v + 1,
                        r: self.r[k % self.r.len()],
                    });
                    k += 1;
                }
                if y + 1 < self.ny {
                    segs.push(Segment {
                        a: v,
                        b: v + self.nx,
                        r: self.r[k % self.r.len()],
                    });
                    k += 1;
                }
            }
        }
        segs
    }

    fn model(&self) -> PlaneModel {
        self.model_with(self.segments(), |v| v)
    }

    fn model_with(&self, segs: Vec<Segment>, relabel: impl Fn(usize) -> usize) -> PlaneModel {
        let n = self.nx * self.ny;
        let mut coords = vec![(0.0, 0.0); n];
        for v in 0..n {
            coords[relabel(v)] = ((v % self.nx) as f64, (v / self.nx) as f64);
        }
        let segs = segs
            .into_iter()
            .map(|s| Segment {
                a: relabel(s.a),
                b: relabel(s.b),
                r: s.r,
            })
            .collect();
        let regions = self
            .loads
            .iter()
            .enumerate()
            .map(|(k, &v)| LoadRegion {
                id: format!("L{k}"),
                nodes: vec![relabel(v)],
                weight: 1.0,
            })
            .collect();
        PlaneModel::new(
            coords,
            segs,
            self.vrs.iter().map(|&v| relabel(v)).collect(),
            regions,
        )
        .unwrap()
    }
}

fn mesh() -> impl Strategy<Value = Mesh> {
    (2usize..7, 2usize..7).prop_flat_map(|(nx, ny)| {
        let n = nx * ny;
        (
            Just(nx),
            Just(ny),
            prop::collection::vec(0.1e-3..3e-3f64, 1..40),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
            1usize..=n.min(6),
            prop::collection::vec(0..n, 1..4),
            prop::collection::vec(0.0..20.0f64, 4),
            prop::collection::vec(any::<bool>(), 6),
        )
            .prop_map(|(nx, ny, r, nodes, n_vr, loads, cur, mut active)| {
                active.truncate(n_vr);
                active[0] = true;
                let cur = cur[..loads.len()].to_vec();
                Mesh {
                    nx,
                    ny,
                    r,
                    vrs: nodes[..n_vr].to_vec(),
                    loads,
                    active,
                    cur,
                }
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kcl_and_power_balance(m in mesh()) {
        let model = m.model();
        let p = ConverterParams::reference();
        let sol = solve_nodal(&model, &m.active, &p, &m.cur).unwrap();
        prop_assert!(sol.kcl_residual < 1e-9);
        let balance = sol.injected_power - sol.delivered_power - sol.plane_loss;
        prop_assert!(balance.abs() <= 1e-9 * sol.injected_power.abs().max(1e-3));
        let total: f64 = m.cur.iter().sum();
        prop_assert!((sol.total_source_current() - total).abs() <= 1e-9 * total.max(1.0));
    }

    #[test]
    fn matches_dense_lu(m in mesh()) {
        let model = m.model();
        let p = ConverterParams::reference();
        let sol = solve_nodal(&model, &m.active, &p, &m.cur).unwrap();
        let want = dense_voltages(&model, &m.active, &p, &m.cur);
        for (a, b) in sol.node_voltages.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn superposition(m in mesh(), scale in 0.1..3.0f64) {
        let model = m.model();
        let p = ConverterParams::reference();
        let a = solve_nodal(&model, &m.active, &p, &m.cur).unwrap();
        let other: Vec<f64> = m.cur.iter().rev().map(|i| i * scale).collect();
        let b = solve_nodal(&model, &m.active, &p, &other).unwrap();
        let sum: Vec<f64> = m.cur.iter().zip(&other).map(|(x, y)| x + y).collect();
        let c = solve_nodal(&model, &m.active, &p, &sum).unwrap();
        for k in 0..model.node_count() {
            let lhs = c.node_voltages[k] - p.v_out_ref;
            let rhs = (a.node_voltages[k] - p.v_out_ref) + (b.node_voltages[k] - p.v_out_ref);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn relabelling_nodes_changes_nothing(m in mesh(), seed in any::<u64>()) {
        let n = m.nx * m.ny;
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let p = ConverterParams::reference();
        let a = solve_nodal(&m.model(), &m.active, &p, &m.cur).unwrap();
        let b = solve_nodal(&m.model_with(m.segments(), |v| perm[v]), &m.active, &p, &m.cur).unwrap();
        prop_assert!((a.plane_loss - b.plane_loss).abs() <= 1e-9 * a.plane_loss.max(1e-12));
        for k in 0..m.vrs.len() {
            prop_assert!((a.vr_currents[k] - b.vr_currents[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn raising_a_resistance_never_lowers_effective_resistance(
        m in mesh(), which in any::<prop::sample::Index>(), factor in 1.0..10.0f64
    ) {
        let base = m.model();
        let n = base.node_count();
        let (a, b) = (m.vrs[0], m.loads[0]);
        prop_assume!(a != b && b < n);
        let r0 = effective_resistance(&base, a, b).unwrap();
        let mut segs = m.segments();
        let k = which.index(segs.len());
        segs[k].r *= factor;
        let r1 = effective_resistance(&m.model_with(segs, |v| v), a, b).unwrap();
        prop_assert!(r1 >= r0 * (1.0 - 1e-12));
    }
}
