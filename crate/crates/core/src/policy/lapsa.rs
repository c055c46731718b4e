use crate::converter::ConverterParams;
use crate::engine::LatencyBudget;
use crate::plane::PlaneModel;

use super::{n_active, ActivationState, PolicyConfig, Result, Selector};

/// Load-aware activation controller: one instance per simulation run.
///
/// Tracks the committed regulator count for hysteresis and remembers the
/// last selection so a steady demand pattern does not re-run the swap
/// search every control interval.
#[derive(Debug, Clone)]
pub struct LapsaController<'m> {
    cfg: PolicyConfig,
    selector: Selector<'m>,
    committed: Option<usize>,
    cache: Option<CacheEntry>,
}

#[derive(Debug, Clone)]
struct CacheEntry {
    n: usize,
    shares: Vec<f64>,
    prev: Vec<bool>,
    flags: Vec<bool>,
}

impl<'m> LapsaController<'m> {
    pub fn new(
        model: &'m PlaneModel,
        params: &ConverterParams,
        cfg: &PolicyConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(LapsaController {
            cfg: *cfg,
            selector: Selector::new(model, params)?,
            committed: None,
            cache: None,
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.cfg
    }

    /// Currently committed regulator count, if any decision has been made.
    pub fn committed(&self) -> Option<usize> {
        self.committed
    }

    /// Regulator count for `p_load` after applying the hysteresis band
    /// around the previously committed count.
    pub fn target_count(&self, p_load: f64) -> usize {
        let raw = n_active(p_load, &self.cfg);
        let Some(prev) = self.committed else {
            return raw;
        };
        let u = self.cfg.unit_power();
        let h = self.cfg.hysteresis_band * u;
        let up = raw > prev && p_load > prev as f64 * u + h;
        let down = raw < prev && p_load <= (prev as f64 - 1.0) * u - h;
        if up || down || h == 0.0 {
            raw
        } else {
            prev
        }
    }

    fn choose(&mut self, n: usize, region_currents: &[f64], prev: &[bool]) -> Result<Vec<bool>> {
        let m = self.selector.model().vr_count();
        if n >= m {
            return Ok(vec![true; m]);
        }
        let total: f64 = region_currents.iter().sum();
        let shares: Vec<f64> = if total > 0.0 {
            region_currents.iter().map(|i| i / total).collect()
        } else {
            vec![0.0; region_currents.len()]
        };
        if let Some(c) = &self.cache {
            if c.n == n && c.shares == shares && (c.prev == prev || c.flags == prev) {
                return Ok(c.flags.clone());
            }
        }
        let flags = self
            .selector
            .select(n, region_currents, prev, self.cfg.hysteresis_band)?;
        self.cache = Some(CacheEntry {
            n,
            shares,
            prev: prev.to_vec(),
            flags: flags.clone(),
        });
        Ok(flags)
    }

    /// Initial configuration, effective immediately.
    pub fn boot(&mut self, p_load: f64, region_currents: &[f64]) -> Result<ActivationState> {
        let m = self.selector.model().vr_count();
        let n = n_active(p_load, &self.cfg);
        self.committed = Some(n);
        let flags = self.choose(n, region_currents, &vec![false; m])?;
        Ok(ActivationState {
            enabled: flags,
            pending: Vec::new(),
        })
    }

    /// One supervisory decision on the load sampled at `now`. Flag changes
    /// land in `state.pending` at `now` plus the full latency budget.
    /// Returns the number of changes issued.
    pub fn step(
        &mut self,
        p_load: f64,
        region_currents: &[f64],
        state: &mut ActivationState,
        now: f64,
        latency: &LatencyBudget,
    ) -> Result<usize> {
        let n = self.target_count(p_load);
        self.committed = Some(n);
        let prev = state.projected();
        let target = self.choose(n, region_currents, &prev)?;
        Ok(state.schedule_towards(&target, now + latency.total()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plane::{build_plane, PlaneConfig};
    use crate::policy::PolicyKind;

    fn setup() -> (PlaneModel, ConverterParams, PolicyConfig) {
        (
            build_plane(&PlaneConfig::reference()).unwrap(),
            ConverterParams::reference(),
            PolicyConfig::reference(PolicyKind::Lapsa),
        )
    }

    fn currents(model: &PlaneModel, p: f64) -> Vec<f64> {
        model.demand_shares().iter().map(|s| s * p).collect()
    }

    #[test]
    fn cold_start_schedules_seven_enables() {
        let (model, params, cfg) = setup();
        let mut ctl = LapsaController::new(&model, &params, &cfg).unwrap();
        let mut state = ActivationState::all_off(70);
        let lat = LatencyBudget::default();
        let issued = ctl
            .step(50.0, &currents(&model, 50.0), &mut state, 2e-6, &lat)
            .unwrap();
        assert_eq!(issued, 7);
        assert_eq!(state.pending.len(), 7);
        for p in &state.pending {
            assert!(p.enable);
            assert!((p.apply_time - (2e-6 + 1.16e-6)).abs() < 1e-18);
        }
        assert_eq!(state.count_enabled(), 0);
    }

    #[test]
    fn oscillation_inside_band_is_ignored() {
        let (model, params, cfg) = setup();
        let mut ctl = LapsaController::new(&model, &params, &cfg).unwrap();
        let u = cfg.unit_power();
        let threshold = 7.0 * u;
        let mut state = ctl.boot(threshold, &currents(&model, threshold)).unwrap();
        assert_eq!(state.count_enabled(), 7);
        let lat = LatencyBudget::default();
        for k in 0..40 {
            let p = threshold + if k % 2 == 0 { 0.02 } else { -0.02 } * u;
            let issued = ctl
                .step(p, &currents(&model, p), &mut state, k as f64 * 1e-6, &lat)
                .unwrap();
            assert_eq!(issued, 0, "step {k}");
            assert_eq!(ctl.committed(), Some(7));
        }
    }

    #[test]
    fn zero_band_follows_raw_count() {
        let (model, params, cfg) = setup();
        let cfg = PolicyConfig {
            hysteresis_band: 0.0,
            ..cfg
        };
        let mut ctl = LapsaController::new(&model, &params, &cfg).unwrap();
        let u = cfg.unit_power();
        ctl.boot(7.0 * u, &currents(&model, 7.0 * u)).unwrap();
        assert_eq!(ctl.target_count(7.0 * u + 1e-9), 8);
        assert_eq!(ctl.target_count(6.0 * u), 6);
    }

    #[test]
    fn full_load_keeps_everything_on() {
        let (model, params, cfg) = setup();
        let mut ctl = LapsaController::new(&model, &params, &cfg).unwrap();
        let mut state = ctl.boot(800.0, &currents(&model, 800.0)).unwrap();
        assert_eq!(state.count_enabled(), 70);
        let lat = LatencyBudget::default();
        for k in 0..5 {
            let p = 500.0 + 100.0 * k as f64;
            ctl.step(p, &currents(&model, p), &mut state, k as f64 * 1e-6, &lat)
                .unwrap();
            assert!(state.pending.is_empty());
        }
    }

    #[test]
    fn never_below_n_min() {
        let (model, params, cfg) = setup();
        let cfg = PolicyConfig { n_min: 3, ..cfg };
        let mut ctl = LapsaController::new(&model, &params, &cfg).unwrap();
        let mut state = ctl.boot(0.0, &currents(&model, 0.0)).unwrap();
        assert_eq!(state.count_enabled(), 3);
        ctl.step(
            0.0,
            &currents(&model, 0.0),
            &mut state,
            0.0,
            &LatencyBudget::default(),
        )
        .unwrap();
        assert_eq!(state.projected().iter().filter(|&&e| e).count(), 3);
    }
}
