use super::SimError;
#[allow(unused_imports)]
use num_traits::Float;

/// Growth rule for the deviation scale `b_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BRule {
    /// `b_n = n^γ`, `0 < γ < ½`.
    Power { gamma: f64 },
    /// `b_n = c ln n`, `c > 0`.
    Log { c: f64 },
}

impl BRule {
    pub fn validate(&self) -> Result<(), SimError> {
        match *self {
            BRule::Power { gamma } if gamma > 0.0 && gamma < 0.5 => Ok(()),
            BRule::Power { .. } => Err(SimError::Regime("power rule needs 0 < gamma < 1/2")),
            BRule::Log { c } if c > 0.0 && c.is_finite() => Ok(()),
            BRule::Log { .. } => Err(SimError::Regime("log rule needs c > 0")),
        }
    }

    pub fn b(&self, n: u64) -> f64 {
        let n = n as f64;
        match *self {
            BRule::Power { gamma } => n.powf(gamma),
            BRule::Log { c } => c * n.ln(),
        }
    }

    /// Whether `b_n³ n^{1/b_n² − 1/2} → 0` for this rule. For `n^γ` the value
    /// behaves like `n^{3γ−1/2}`; for `c ln n` the factor `n^{1/b_n²}` tends to 1.
    pub fn condition_holds(&self) -> bool {
        match *self {
            BRule::Power { gamma } => gamma < 1.0 / 6.0,
            BRule::Log { .. } => true,
        }
    }
}

/// Server count with its deviation scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRegime {
    pub n: u64,
    pub rule: BRule,
}

impl ScalingRegime {
    pub fn new(n: u64, rule: BRule) -> Result<Self, SimError> {
        if n == 0 {
            return Err(SimError::Regime("at least one server is required"));
        }
        rule.validate()?;
        if rule.b(n).is_nan() || rule.b(n) <= 0.0 {
            return Err(SimError::Regime("b_n must be positive"));
        }
        Ok(Self { n, rule })
    }

    pub fn b(&self) -> f64 {
        self.rule.b(self.n)
    }

    /// `b_n √n`, the scale of queue deviations.
    pub fn scale(&self) -> f64 {
        self.b() * (self.n as f64).sqrt()
    }

    /// `ρ_n = 1 − β b_n/√n`.
    pub fn rho(&self, beta: f64) -> f64 {
        1.0 - beta * self.b() / (self.n as f64).sqrt()
    }

    /// `λ_n = nμρ_n`.
    pub fn arrival_rate(&self, mu: f64, beta: f64) -> Result<f64, SimError> {
        let rho = self.rho(beta);
        if rho.is_nan() || rho <= 0.0 {
            return Err(SimError::Rho(rho));
        }
        Ok(self.n as f64 * mu * rho)
    }

    /// `b_n³ n^{1/b_n² − 1/2}`.
    pub fn condition_value(&self) -> f64 {
        let b = self.b();
        b.powi(3) * (self.n as f64).powf(1.0 / (b * b) - 0.5)
    }

    /// `Q_n(0) = round(n + q₀ b_n √n)`, clamped at zero.
    pub fn initial_count(&self, q0: f64) -> u64 {
        let v = (self.n as f64 + q0 * self.scale()).round();
        if v <= 0.0 {
            0
        } else {
            v as u64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules_and_condition() {
        let r = ScalingRegime::new(10_000, BRule::Power { gamma: 0.25 }).unwrap();
        assert!((r.b() - 10.0).abs() < 1e-12);
        assert!((r.rho(0.5) - 0.95).abs() < 1e-12);
        assert!((r.condition_value() - 1000.0 * 10_000f64.powf(0.01 - 0.5)).abs() < 1e-9);
        assert!(!BRule::Power { gamma: 0.25 }.condition_holds());
        assert!(BRule::Power { gamma: 0.1 }.condition_holds());
        assert!(BRule::Log { c: 1.0 }.condition_holds());
        assert!(ScalingRegime::new(100, BRule::Power { gamma: 0.5 }).is_err());
        assert!(ScalingRegime::new(1, BRule::Log { c: 1.0 }).is_err());
        assert!(r.arrival_rate(1.0, 20.0).is_err());
    }

    #[test]
    fn log_rule_condition_decreases_eventually() {
        let rule = BRule::Log { c: 1.0 };
        let v = |n: u64| ScalingRegime::new(n, rule).unwrap().condition_value();
        assert!(v(1 << 40) < v(1 << 30));
        assert!(v(1 << 50) < v(1 << 40));
    }

    #[test]
    fn initial_count_rounding() {
        let r = ScalingRegime::new(100, BRule::Power { gamma: 0.25 }).unwrap();
        // scale = √10·10
        assert_eq!(r.initial_count(0.0), 100);
        assert_eq!(r.initial_count(0.1), (100.0 + 0.1 * 31.622776601683793_f64).round() as u64);
        assert_eq!(r.initial_count(-10.0), 0);
    }
}
