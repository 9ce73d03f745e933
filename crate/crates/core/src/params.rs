//! Numeric engine parameters.
//!
//! Every field has a default, so a scenario's `params` section only needs to
//! list the values it overrides.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineParams {
    /// Temporal discount rate applied to a means' delay.
    pub gamma: f64,
    /// Multiplier on loss-framed utility magnitudes.
    pub lambda_loss: f64,
    /// Base abandonment threshold.
    pub theta0: f64,
    /// Per-level attenuation of drop resistance.
    pub kappa: f64,
    pub sigma_max: f64,
    pub sigma_min: f64,
    /// Effective shield at or below which a switch is forced.
    pub sigma_crit: f64,
    pub delta_dep: f64,
    pub delta_rec: f64,
    /// Utility margin a competitor must clear for a voluntary switch.
    pub hysteresis: f64,
    pub k_affect: f64,
    /// Progress-criterion adaptation rate.
    pub eta: f64,
    pub beta_priority: f64,
    /// Expectancy learning rate.
    pub ema_alpha: f64,
    pub prune_k: usize,
    pub novelty_widen: f64,
    /// Velocity window, in ticks of history.
    pub window: usize,
    /// Base half-width of the neutral affect band.
    pub deadzone: f64,
    /// Per-tick multiplicative novelty decay.
    pub novelty_decay: f64,
    /// Intrinsic valence increment for a goal that progressed this tick.
    pub pulse: f64,
    /// Pulse attenuation per level walked toward the root.
    pub pulse_attenuation: f64,
    pub override_gain: f64,
    pub override_cap: f64,
    pub override_duration: u32,
    /// When set, switching to a means whose attributed goal has importance at
    /// or above this percentile (0..=1) of all goal importances grants an
    /// override with unit salience.
    pub override_importance_percentile: Option<f64>,
    /// Ticks an abandoned goal stays inactive.
    pub cooldown: u64,
}

impl Default for EngineParams {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            lambda_loss: 2.0,
            theta0: 0.1,
            kappa: 0.5,
            sigma_max: 1.0,
            sigma_min: 0.2,
            sigma_crit: 0.2,
            delta_dep: 0.05,
            delta_rec: 0.02,
            hysteresis: 0.1,
            k_affect: 2.0,
            eta: 0.05,
            beta_priority: 0.4,
            ema_alpha: 0.2,
            prune_k: 8,
            novelty_widen: 1.0,
            window: 8,
            deadzone: 0.05,
            novelty_decay: 0.9,
            pulse: 0.02,
            pulse_attenuation: 0.5,
            override_gain: 0.3,
            override_cap: 0.5,
            override_duration: 20,
            override_importance_percentile: None,
            cooldown: 100,
        }
    }
}

impl EngineParams {
    /// Range checks. Returns one message per violated constraint.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                out.push(msg.to_string());
            }
        };
        let finite = |x: f64| x.is_finite();

        check(finite(self.gamma) && self.gamma > 0.0, "gamma must be > 0");
        check(
            finite(self.lambda_loss) && self.lambda_loss >= 1.0,
            "lambda_loss must be >= 1",
        );
        check(finite(self.theta0) && self.theta0 > 0.0, "theta0 must be > 0");
        check(self.kappa > 0.0 && self.kappa <= 1.0, "kappa must be in (0, 1]");
        check(
            0.0 <= self.sigma_min
                && self.sigma_min <= self.sigma_crit
                && self.sigma_crit < self.sigma_max
                && self.sigma_max <= 1.0,
            "shield bounds must satisfy 0 <= sigma_min <= sigma_crit < sigma_max <= 1",
        );
        check(
            finite(self.delta_dep) && self.delta_dep > 0.0,
            "delta_dep must be > 0",
        );
        check(
            finite(self.delta_rec) && self.delta_rec > 0.0,
            "delta_rec must be > 0",
        );
        check(
            finite(self.hysteresis) && self.hysteresis >= 0.0,
            "hysteresis must be >= 0",
        );
        check(
            finite(self.k_affect) && self.k_affect > 0.0,
            "k_affect must be > 0",
        );
        check(self.eta > 0.0 && self.eta < 1.0, "eta must be in (0, 1)");
        check(
            finite(self.beta_priority) && self.beta_priority >= 0.0,
            "beta_priority must be >= 0",
        );
        check(
            self.ema_alpha > 0.0 && self.ema_alpha < 1.0,
            "ema_alpha must be in (0, 1)",
        );
        check(self.prune_k > 0, "prune_k must be positive");
        check(
            finite(self.novelty_widen) && self.novelty_widen >= 0.0,
            "novelty_widen must be >= 0",
        );
        check(self.window >= 2, "window must hold at least 2 samples");
        check(
            finite(self.deadzone) && self.deadzone >= 0.0,
            "deadzone must be >= 0",
        );
        check(
            (0.0..=1.0).contains(&self.novelty_decay),
            "novelty_decay must be in [0, 1]",
        );
        check(finite(self.pulse) && self.pulse >= 0.0, "pulse must be >= 0");
        check(
            (0.0..=1.0).contains(&self.pulse_attenuation),
            "pulse_attenuation must be in [0, 1]",
        );
        check(
            finite(self.override_gain) && self.override_gain >= 0.0,
            "override_gain must be >= 0",
        );
        check(
            finite(self.override_cap) && self.override_cap >= 0.0,
            "override_cap must be >= 0",
        );
        if let Some(p) = self.override_importance_percentile {
            check(
                (0.0..=1.0).contains(&p),
                "override_importance_percentile must be in [0, 1]",
            );
        }
        out
    }
}
