//! The one-shot prisoner's dilemma stage game.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A move in the dilemma game.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    #[serde(rename = "C")]
    Cooperate,
    #[serde(rename = "D")]
    Defect,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::Cooperate, Action::Defect];

    /// Index of this action in a dilemma head's output vector.
    pub fn index(self) -> usize {
        match self {
            Action::Cooperate => 0,
            Action::Defect => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Action::ALL.get(index).copied()
    }

    /// Scalar state encoding: Cooperate is 1.0, Defect is 0.0.
    pub fn encode(self) -> f64 {
        match self {
            Action::Cooperate => 1.0,
            Action::Defect => 0.0,
        }
    }

    /// Inverse of [`Action::encode`]; any value above one half decodes as Cooperate.
    pub fn decode(value: f64) -> Action {
        if value > 0.5 {
            Action::Cooperate
        } else {
            Action::Defect
        }
    }

    pub fn is_cooperate(self) -> bool {
        self == Action::Cooperate
    }

    pub fn label(self) -> &'static str {
        match self {
            Action::Cooperate => "C",
            Action::Defect => "D",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "C" | "Cooperate" => Ok(Action::Cooperate),
            "D" | "Defect" => Ok(Action::Defect),
            other => Err(Error::Config(format!("unknown action `{other}`"))),
        }
    }
}

/// Payoffs for each ordered action pair, as (row player, column player).
///
/// Serialized as four ordered pairs keyed `CC`, `CD`, `DC`, `DD`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffMatrix {
    #[serde(rename = "CC")]
    pub cc: (f64, f64),
    #[serde(rename = "CD")]
    pub cd: (f64, f64),
    #[serde(rename = "DC")]
    pub dc: (f64, f64),
    #[serde(rename = "DD")]
    pub dd: (f64, f64),
}

impl Default for PayoffMatrix {
    fn default() -> Self {
        PayoffMatrix {
            cc: (3.0, 3.0),
            cd: (0.0, 4.0),
            dc: (4.0, 0.0),
            dd: (1.0, 1.0),
        }
    }
}

impl PayoffMatrix {
    /// Builds and validates a matrix.
    pub fn new(cc: (f64, f64), cd: (f64, f64), dc: (f64, f64), dd: (f64, f64)) -> Result<Self> {
        let m = PayoffMatrix { cc, cd, dc, dd };
        m.validate()?;
        Ok(m)
    }

    /// Extrinsic rewards `(self, other)` when the focal player plays `a_self`.
    pub fn payoff(&self, a_self: Action, a_other: Action) -> (f64, f64) {
        match (a_self, a_other) {
            (Action::Cooperate, Action::Cooperate) => self.cc,
            (Action::Cooperate, Action::Defect) => self.cd,
            (Action::Defect, Action::Cooperate) => self.dc,
            (Action::Defect, Action::Defect) => self.dd,
        }
    }

    /// Checks symmetry, finiteness and non-negativity (the equality rewards divide by payoff sums).
    pub fn validate(&self) -> Result<()> {
        for a in Action::ALL {
            for b in Action::ALL {
                let (r, c) = self.payoff(a, b);
                if !r.is_finite() || !c.is_finite() {
                    return Err(Error::InvalidPayoffMatrix(format!("{a}{b} payoff is not finite")));
                }
                if r < 0.0 || c < 0.0 {
                    return Err(Error::InvalidPayoffMatrix(format!("{a}{b} payoff is negative")));
                }
                if self.payoff(b, a).1 != r {
                    return Err(Error::InvalidPayoffMatrix(format!(
                        "game is not symmetric: {a}{b} row payoff {r} differs from {b}{a} column payoff {}",
                        self.payoff(b, a).1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Free-function form of [`PayoffMatrix::payoff`].
pub fn payoff(a_self: Action, a_other: Action, m: &PayoffMatrix) -> (f64, f64) {
    m.payoff(a_self, a_other)
}

#[cfg(test)]
mod tests {
    use super::Action::{Cooperate as C, Defect as D};
    use super::*;

    #[test]
    fn default_matrix_values() {
        let m = PayoffMatrix::default();
        assert_eq!(payoff(C, C, &m), (3.0, 3.0));
        assert_eq!(payoff(C, D, &m), (0.0, 4.0));
        assert_eq!(payoff(D, C, &m), (4.0, 0.0));
        assert_eq!(payoff(D, D, &m), (1.0, 1.0));
        assert_eq!(payoff(D, C, &m).0, payoff(C, D, &m).1);
        m.validate().unwrap();
    }

    #[test]
    fn collective_payoff_identifies_outcome() {
        let m = PayoffMatrix::default();
        for a in Action::ALL {
            for b in Action::ALL {
                let (r, c) = m.payoff(a, b);
                let expected = match (a, b) {
                    (C, C) => 6.0,
                    (D, D) => 2.0,
                    _ => 4.0,
                };
                assert_eq!(r + c, expected);
            }
        }
    }

    #[test]
    fn dilemma_ordering() {
        let m = PayoffMatrix::default();
        let (t, r, p, s) = (m.dc.0, m.cc.0, m.dd.0, m.cd.0);
        assert!(t > r && r > p && p > s);
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(PayoffMatrix::new((3.0, 3.0), (0.0, 4.0), (5.0, 0.0), (1.0, 1.0)).is_err());
        assert!(PayoffMatrix::new((3.0, 3.0), (-1.0, 4.0), (4.0, -1.0), (1.0, 1.0)).is_err());
        assert!(PayoffMatrix::new((f64::NAN, 3.0), (0.0, 4.0), (4.0, 0.0), (1.0, 1.0)).is_err());
    }

    #[test]
    fn serde_keys() {
        let json = serde_json::to_string(&PayoffMatrix::default()).unwrap();
        assert_eq!(json, r#"{"CC":[3.0,3.0],"CD":[0.0,4.0],"DC":[4.0,0.0],"DD":[1.0,1.0]}"#);
        let bad = r#"{"CC":[3,3],"CD":[0,4],"DC":[4,0],"DD":[1,1],"XX":[0,0]}"#;
        assert!(serde_json::from_str::<PayoffMatrix>(bad).is_err());
    }

    #[test]
    fn action_round_trip() {
        for a in Action::ALL {
            assert_eq!(Action::decode(a.encode()), a);
            assert_eq!(Action::from_index(a.index()), Some(a));
            assert_eq!(a.label().parse::<Action>().unwrap(), a);
            let s = serde_json::to_string(&a).unwrap();
            assert_eq!(serde_json::from_str::<Action>(&s).unwrap(), a);
        }
        assert_eq!(Action::from_index(2), None);
    }
}
