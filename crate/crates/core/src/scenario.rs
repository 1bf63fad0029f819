//! Problem setup shared by every solver.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};

/// Weight on the expected-shortfall term.
///
/// `Infinite` drops the withdrawal reward and maximises expected shortfall alone,
/// which pins withdrawals at the floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kappa {
    Finite(f64),
    Infinite,
}

impl Kappa {
    /// Multiplier on total withdrawals in the objective.
    pub fn reward_weight(self) -> f64 {
        match self {
            Kappa::Finite(_) => 1.0,
            Kappa::Infinite => 0.0,
        }
    }

    /// Multiplier on the expected-shortfall term in the objective.
    pub fn es_weight(self) -> f64 {
        match self {
            Kappa::Finite(k) => k,
            Kappa::Infinite => 1.0,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Kappa::Infinite)
    }

    /// Sort key placing `Infinite` after every finite value.
    pub fn as_f64(self) -> f64 {
        match self {
            Kappa::Finite(k) => k,
            Kappa::Infinite => f64::INFINITY,
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            Kappa::Finite(k) if !(k.is_finite() && k >= 0.0) => {
                Err(invalid(format!("kappa must be a non-negative finite number or inf, got {k}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Kappa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kappa::Finite(k) => write!(f, "{k}"),
            Kappa::Infinite => write!(f, "inf"),
        }
    }
}

impl FromStr for Kappa {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
            return Ok(Kappa::Infinite);
        }
        let k: f64 = t
            .parse()
            .map_err(|_| invalid(format!("cannot parse kappa from {s:?}")))?;
        if k.is_infinite() && k > 0.0 {
            return Ok(Kappa::Infinite);
        }
        let kappa = Kappa::Finite(k);
        kappa.validate()?;
        Ok(kappa)
    }
}

impl Serialize for Kappa {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Kappa::Finite(k) => s.serialize_f64(*k),
            Kappa::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Kappa {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(k) => Ok(Kappa::Finite(k)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Parse a comma-separated list such as `0.05,0.2,1,inf`.
pub fn parse_kappa_list(s: &str) -> Result<Vec<Kappa>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(str::parse)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub horizon_years: f64,
    /// Number of rebalancing intervals; withdrawals happen at `M + 1` instants.
    pub n_rebalances: usize,
    pub initial_wealth: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub kappa: Kappa,
    pub alpha: f64,
    /// Small stabilising weight on expected terminal wealth.
    pub epsilon: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            horizon_years: 30.0,
            n_rebalances: 30,
            initial_wealth: 1000.0,
            q_min: 35.0,
            q_max: 60.0,
            kappa: Kappa::Finite(1.0),
            alpha: 0.05,
            epsilon: 1e-6,
        }
    }
}

impl ScenarioConfig {
    pub fn dt(&self) -> f64 {
        self.horizon_years / self.n_rebalances as f64
    }

    /// Number of withdrawal events, `M + 1`.
    pub fn n_events(&self) -> usize {
        self.n_rebalances + 1
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt()
    }

    pub fn with_kappa(mut self, kappa: Kappa) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rebalances == 0 {
            return Err(invalid("n_rebalances must be at least 1"));
        }
        if !(self.horizon_years.is_finite() && self.horizon_years > 0.0) {
            return Err(invalid("horizon_years must be positive"));
        }
        if !(self.initial_wealth.is_finite() && self.initial_wealth > 0.0) {
            return Err(invalid("initial_wealth must be positive"));
        }
        if !(self.q_min.is_finite() && self.q_min >= 0.0 && self.q_max.is_finite()) {
            return Err(invalid("withdrawal bounds must be finite with q_min >= 0"));
        }
        if self.q_min > self.q_max {
            return Err(invalid(format!(
                "q_min ({}) exceeds q_max ({})",
                self.q_min, self.q_max
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(invalid(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(invalid("epsilon must be non-negative"));
        }
        self.kappa.validate()
    }

    /// Names of fields that differ between two scenarios.
    pub fn mismatched_fields(&self, other: &ScenarioConfig) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.horizon_years != other.horizon_years {
            out.push("horizon_years");
        }
        if self.n_rebalances != other.n_rebalances {
            out.push("n_rebalances");
        }
        if self.initial_wealth != other.initial_wealth {
            out.push("initial_wealth");
        }
        if self.q_min != other.q_min {
            out.push("q_min");
        }
        if self.q_max != other.q_max {
            out.push("q_max");
        }
        if self.kappa != other.kappa {
            out.push("kappa");
        }
        if self.alpha != other.alpha {
            out.push("alpha");
        }
        if self.epsilon != other.epsilon {
            out.push("epsilon");
        }
        out
    }

    /// Admissible withdrawal interval `[lo, hi]` at pre-withdrawal wealth `w`.
    pub fn withdrawal_bounds(&self, w: f64) -> (f64, f64) {
        if w >= self.q_max {
            (self.q_min, self.q_max)
        } else if w > self.q_min {
            (self.q_min, w)
        } else {
            (self.q_min, self.q_min)
        }
    }

    /// Terminal reward `kappa (W* + min(w - W*, 0) / alpha) + epsilon w`.
    pub fn terminal_value(&self, w: f64, w_star: f64) -> f64 {
        self.kappa.es_weight() * (w_star + (w - w_star).min(0.0) / self.alpha) + self.epsilon * w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_parsing() {
        assert_eq!("inf".parse::<Kappa>().unwrap(), Kappa::Infinite);
        assert_eq!("1.5".parse::<Kappa>().unwrap(), Kappa::Finite(1.5));
        assert!("-1".parse::<Kappa>().is_err());
        assert!("abc".parse::<Kappa>().is_err());
        let list = parse_kappa_list("0.05, 1,inf").unwrap();
        assert_eq!(list, vec![Kappa::Finite(0.05), Kappa::Finite(1.0), Kappa::Infinite]);
    }

    #[test]
    fn kappa_json_roundtrip() {
        for k in [Kappa::Finite(0.2), Kappa::Infinite] {
            let s = serde_json::to_string(&k).unwrap();
            assert_eq!(serde_json::from_str::<Kappa>(&s).unwrap(), k);
        }
    }

    #[test]
    fn base_case_defaults() {
        let s = ScenarioConfig::default();
        s.validate().unwrap();
        assert_eq!(s.dt(), 1.0);
        assert_eq!(s.n_events(), 31);
    }

    #[test]
    fn rejects_inverted_bounds() {
        let s = ScenarioConfig { q_min: 60.0, q_max: 35.0, ..Default::default() };
        assert!(matches!(s.validate(), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn withdrawal_bounds_regimes() {
        let s = ScenarioConfig::default();
        assert_eq!(s.withdrawal_bounds(100.0), (35.0, 60.0));
        assert_eq!(s.withdrawal_bounds(50.0), (35.0, 50.0));
        assert_eq!(s.withdrawal_bounds(10.0), (35.0, 35.0));
        assert_eq!(s.withdrawal_bounds(-5.0), (35.0, 35.0));
    }

    #[test]
    fn partial_json_uses_defaults() {
        let s: ScenarioConfig = serde_json::from_str(r#"{"kappa": "inf", "q_min": 30}"#).unwrap();
        assert_eq!(s.kappa, Kappa::Infinite);
        assert_eq!(s.q_min, 30.0);
        assert_eq!(s.q_max, 60.0);
    }
}
