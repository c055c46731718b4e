//! Supervisory strategies: fixed-frequency PWM, CCM-bounded PFM and
//! load-aware activation (LAPSA), which scales the number of enabled
//! regulators with load and picks them by proximity to the demand.

mod lapsa;
mod select;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::converter::{min_ccm_frequency, ConverterParams};
use crate::plane::PlaneError;

pub use lapsa::LapsaController;
pub use select::{select_active_vrs, Selector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid policy configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Plane(#[from] PlaneError),
}

pub type Result<T> = std::result::Result<T, PolicyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Pwm,
    Pfm,
    Lapsa,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::Pwm, PolicyKind::Pfm, PolicyKind::Lapsa];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Pwm => "pwm",
            PolicyKind::Pfm => "pfm",
            PolicyKind::Lapsa => "lapsa",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pwm" => Ok(PolicyKind::Pwm),
            "pfm" => Ok(PolicyKind::Pfm),
            "lapsa" => Ok(PolicyKind::Lapsa),
            other => Err(PolicyError::InvalidConfig(format!(
                "unknown policy '{other}' (expected pwm, pfm or lapsa)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Load at which the all-active system peaks in efficiency (W).
    pub p_opt: f64,
    pub m_total: usize,
    pub pfm_efficiency_floor: f64,
    /// Load fraction below which PFM starts lowering the frequency.
    pub pfm_transition_load: f64,
    /// Hysteresis as a fraction of the per-regulator share `p_opt / m_total`.
    pub hysteresis_band: f64,
    /// Regulators kept alive at zero load.
    pub n_min: usize,
}

impl PolicyConfig {
    pub fn reference(kind: PolicyKind) -> Self {
        PolicyConfig {
            kind,
            p_opt: 500.0,
            m_total: 70,
            pfm_efficiency_floor: 0.84,
            pfm_transition_load: 0.20,
            hysteresis_band: 0.05,
            n_min: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PolicyError::InvalidConfig(m));
        if !(self.p_opt > 0.0) {
            return bad(format!("p_opt must be positive, got {}", self.p_opt));
        }
        if self.m_total == 0 {
            return bad("m_total must be at least 1".into());
        }
        if !(self.pfm_transition_load > 0.0 && self.pfm_transition_load < 1.0) {
            return bad(format!(
                "pfm transition load must lie in (0, 1), got {}",
                self.pfm_transition_load
            ));
        }
        if !(self.hysteresis_band >= 0.0) {
            return bad(format!(
                "hysteresis band must be >= 0, got {}",
                self.hysteresis_band
            ));
        }
        if self.n_min > self.m_total {
            return bad(format!(
                "n_min ({}) exceeds the regulator count ({})",
                self.n_min, self.m_total
            ));
        }
        Ok(())
    }

    /// Per-regulator power share at the activation threshold.
    pub fn unit_power(&self) -> f64 {
        self.p_opt / self.m_total as f64
    }
}

/// Number of regulators to enable at load `p_load`: all of them at or above
/// `p_opt`, otherwise `ceil(M * p / p_opt)`, never below `n_min`.
pub fn n_active(p_load: f64, cfg: &PolicyConfig) -> usize {
    let m = cfg.m_total;
    if p_load >= cfg.p_opt {
        return m;
    }
    if !(p_load > 0.0) {
        return cfg.n_min.min(m);
    }
    let x = m as f64 * p_load / cfg.p_opt;
    // Absorb rounding noise so exact multiples of the unit share do not
    // round up to the next count.
    let n = (x * (1.0 - 1e-12)).ceil() as usize;
    n.clamp(cfg.n_min.max(1), m)
}

/// Switching frequency under CCM-bounded PFM. Above the transition load the
/// regulator runs at `f_nom`; below it the frequency falls in proportion to
/// load. Either way it never drops below the CCM boundary for `i_out`.
pub fn pfm_frequency(
    load_fraction: f64,
    params: &ConverterParams,
    cfg: &PolicyConfig,
    i_out: f64,
) -> f64 {
    let f_nom = params.f_nom;
    if !(i_out > 0.0) {
        return f_nom;
    }
    let target = if load_fraction >= cfg.pfm_transition_load {
        f_nom
    } else {
        f_nom * load_fraction.max(0.0) / cfg.pfm_transition_load
    };
    match min_ccm_frequency(params, i_out) {
        Ok(floor) => target.max(floor),
        Err(_) => f_nom,
    }
}

/// A flag change waiting for the reconfiguration latency to elapse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingChange {
    pub vr: usize,
    pub enable: bool,
    pub apply_time: f64,
}

/// Enable flags plus changes already issued but not yet in effect.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActivationState {
    pub enabled: Vec<bool>,
    pub pending: Vec<PendingChange>,
}

impl ActivationState {
    pub fn all_on(m: usize) -> Self {
        ActivationState {
            enabled: vec![true; m],
            pending: Vec::new(),
        }
    }

    pub fn all_off(m: usize) -> Self {
        ActivationState {
            enabled: vec![false; m],
            pending: Vec::new(),
        }
    }

    pub fn count_enabled(&self) -> usize {
        self.enabled.iter().filter(|&&e| e).count()
    }

    /// Flags as they will be once every pending change has landed.
    pub fn projected(&self) -> Vec<bool> {
        let mut out = self.enabled.clone();
        for p in &self.pending {
            out[p.vr] = p.enable;
        }
        out
    }

    /// Schedules changes so the projected flags match `target`.
    pub fn schedule_towards(&mut self, target: &[bool], apply_time: f64) -> usize {
        let projected = self.projected();
        let mut issued = 0;
        for (vr, (&want, &will)) in target.iter().zip(&projected).enumerate() {
            if want != will {
                self.pending.push(PendingChange {
                    vr,
                    enable: want,
                    apply_time,
                });
                issued += 1;
            }
        }
        issued
    }

    /// Applies every pending change due at or before `t` (within `tol`) in
    /// apply-time order and returns them.
    pub fn apply_due(&mut self, t: f64, tol: f64) -> Vec<PendingChange> {
        self.pending
            .sort_by(|a, b| a.apply_time.total_cmp(&b.apply_time));
        let split = self.pending.partition_point(|p| p.apply_time <= t + tol);
        let due: Vec<PendingChange> = self.pending.drain(..split).collect();
        for p in &due {
            self.enabled[p.vr] = p.enable;
        }
        due
    }
}
