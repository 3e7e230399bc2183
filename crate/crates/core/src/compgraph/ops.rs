use serde::{Deserialize, Serialize};

/// Comparison used by [`OpSpec::Threshold`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Fires when `x <= constant`.
    AtMost,
    /// Fires when `x > constant`.
    Above,
}

/// The closed set of primitive functions a non-input vertex may carry.
///
/// Constants only ever appear as parameters here; a graph never contains a
/// constant-valued vertex without incoming edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpSpec {
    /// `bias + Σ coefficients[k] * args[k]`.
    Affine {
        coefficients: Vec<f64>,
        bias: f64,
    },
    Tanh,
    Sigmoid,
    /// Sum of one or more arguments.
    Sum,
    /// Product of one or more arguments.
    Product,
    /// Indicator of `last_arg (<= | >) constant`. With two arguments the
    /// first one multiplies the indicator (an enabling activation).
    Threshold {
        constant: f64,
        direction: Direction,
    },
    /// `selectors` bit arguments (`>= 0.5` reads as 1) pick one of the
    /// `2^selectors` data arguments that follow them.
    Mux {
        selectors: u32,
    },
    Negate,
    /// Maximum of one or more arguments.
    Max,
}

/// Largest selector width accepted by [`OpSpec::Mux`].
pub const MAX_MUX_SELECTORS: u32 = 8;

impl OpSpec {
    pub fn affine(coefficients: Vec<f64>, bias: f64) -> Self {
        OpSpec::Affine { coefficients, bias }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OpSpec::Affine { .. } => "affine",
            OpSpec::Tanh => "tanh",
            OpSpec::Sigmoid => "sigmoid",
            OpSpec::Sum => "sum",
            OpSpec::Product => "product",
            OpSpec::Threshold { .. } => "threshold",
            OpSpec::Mux { .. } => "mux",
            OpSpec::Negate => "negate",
            OpSpec::Max => "max",
        }
    }

    /// Whether the opcode accepts `n` arguments.
    pub fn accepts_arity(&self, n: usize) -> bool {
        match self {
            OpSpec::Affine { coefficients, .. } => n == coefficients.len() && n > 0,
            OpSpec::Tanh | OpSpec::Sigmoid | OpSpec::Negate => n == 1,
            OpSpec::Sum | OpSpec::Product | OpSpec::Max => n >= 1,
            OpSpec::Threshold { .. } => n == 1 || n == 2,
            OpSpec::Mux { selectors } => {
                *selectors >= 1 && *selectors <= MAX_MUX_SELECTORS && n == *selectors as usize + (1usize << selectors)
            }
        }
    }

    /// Human-readable arity rule, used in error messages.
    pub fn arity_rule(&self) -> String {
        match self {
            OpSpec::Affine { coefficients, .. } => format!("exactly {}", coefficients.len()),
            OpSpec::Tanh | OpSpec::Sigmoid | OpSpec::Negate => "exactly 1".into(),
            OpSpec::Sum | OpSpec::Product | OpSpec::Max => "at least 1".into(),
            OpSpec::Threshold { .. } => "1 or 2".into(),
            OpSpec::Mux { selectors } => {
                if *selectors == 0 || *selectors > MAX_MUX_SELECTORS {
                    format!("selector width in 1..={MAX_MUX_SELECTORS}")
                } else {
                    format!("exactly {}", *selectors as usize + (1usize << selectors))
                }
            }
        }
    }

    /// Applies the primitive. Arity must already have been validated.
    pub fn apply(&self, args: &[f64]) -> f64 {
        match self {
            OpSpec::Affine { coefficients, bias } => {
                let mut acc = *bias;
                for (c, a) in coefficients.iter().zip(args) {
                    acc += c * a;
                }
                acc
            }
            OpSpec::Tanh => args[0].tanh(),
            OpSpec::Sigmoid => sigmoid(args[0]),
            OpSpec::Sum => args.iter().sum(),
            OpSpec::Product => args.iter().product(),
            OpSpec::Threshold { constant, direction } => {
                let x = args[args.len() - 1];
                let fired = match direction {
                    Direction::AtMost => x <= *constant,
                    Direction::Above => x > *constant,
                };
                let indicator = if fired { 1.0 } else { 0.0 };
                if args.len() == 2 {
                    args[0] * indicator
                } else {
                    indicator
                }
            }
            OpSpec::Mux { selectors } => {
                let k = *selectors as usize;
                let index = args[..k].iter().enumerate().fold(
                    0usize,
                    |acc, (bit, &s)| {
                        if s >= 0.5 {
                            acc | (1 << bit)
                        } else {
                            acc
                        }
                    },
                );
                args[k + index]
            }
            OpSpec::Negate => -args[0],
            OpSpec::Max => args.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Logistic function, split by sign so neither branch overflows.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arity_rules() {
        assert!(OpSpec::affine(vec![1.0, 2.0], 0.0).accepts_arity(2));
        assert!(!OpSpec::affine(vec![1.0, 2.0], 0.0).accepts_arity(1));
        assert!(!OpSpec::affine(vec![], 0.0).accepts_arity(0));
        assert!(OpSpec::Tanh.accepts_arity(1));
        assert!(!OpSpec::Tanh.accepts_arity(2));
        assert!(OpSpec::Sum.accepts_arity(5));
        assert!(!OpSpec::Max.accepts_arity(0));
        assert!(OpSpec::Mux { selectors: 2 }.accepts_arity(6));
        assert!(!OpSpec::Mux { selectors: 0 }.accepts_arity(1));
    }

    #[test]
    fn threshold_uses_inclusive_at_most() {
        let le = OpSpec::Threshold {
            constant: 0.5,
            direction: Direction::AtMost,
        };
        let gt = OpSpec::Threshold {
            constant: 0.5,
            direction: Direction::Above,
        };
        assert_eq!(le.apply(&[0.5]), 1.0);
        assert_eq!(gt.apply(&[0.5]), 0.0);
        assert_eq!(gt.apply(&[0.0, 0.9]), 0.0);
        assert_eq!(gt.apply(&[1.0, 0.9]), 1.0);
    }

    #[test]
    fn mux_selects_by_bits() {
        let op = OpSpec::Mux { selectors: 2 };
        // selectors (1, 0) -> index 1
        assert_eq!(op.apply(&[1.0, 0.0, 10.0, 11.0, 12.0, 13.0]), 11.0);
        assert_eq!(op.apply(&[0.0, 1.0, 10.0, 11.0, 12.0, 13.0]), 12.0);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }
}
