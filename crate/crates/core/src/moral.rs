//! Intrinsic moral rewards and the choice of learning signal.
//!
//! Four pro-social types (Ut, De, V-Eq, V-Ki), their four anti-social
//! counterparts (aUt, mDe, V-In, V-Ag) and the Selfish baseline S, which
//! learns from the game payoff.
//!
//! Taxonomy, for documentation only: Ut/aUt are external consequentialist,
//! De/mDe follow an external norm, V-Eq/V-In are internal consequentialist
//! and V-Ki/V-Ag follow an internal norm.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Action, PayoffMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MoralType {
    /// Selfish.
    #[serde(rename = "S")]
    Selfish,
    /// Utilitarian.
    #[serde(rename = "Ut")]
    Utilitarian,
    /// Anti-utilitarian.
    #[serde(rename = "aUt")]
    AntiUtilitarian,
    /// Deontological.
    #[serde(rename = "De")]
    Deontological,
    /// Malicious deontological.
    #[serde(rename = "mDe")]
    MaliciousDeontological,
    /// Virtue-equality.
    #[serde(rename = "V-Eq")]
    VirtueEquality,
    /// Virtue-inequality.
    #[serde(rename = "V-In")]
    VirtueInequality,
    /// Virtue-kindness.
    #[serde(rename = "V-Ki")]
    VirtueKindness,
    /// Virtue-aggression.
    #[serde(rename = "V-Ag")]
    VirtueAggression,
}

impl MoralType {
    /// All nine types, in population-composition column order.
    pub const ALL: [MoralType; 9] = [
        MoralType::Selfish,
        MoralType::Utilitarian,
        MoralType::AntiUtilitarian,
        MoralType::Deontological,
        MoralType::MaliciousDeontological,
        MoralType::VirtueEquality,
        MoralType::VirtueInequality,
        MoralType::VirtueKindness,
        MoralType::VirtueAggression,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MoralType::Selfish => "S",
            MoralType::Utilitarian => "Ut",
            MoralType::AntiUtilitarian => "aUt",
            MoralType::Deontological => "De",
            MoralType::MaliciousDeontological => "mDe",
            MoralType::VirtueEquality => "V-Eq",
            MoralType::VirtueInequality => "V-In",
            MoralType::VirtueKindness => "V-Ki",
            MoralType::VirtueAggression => "V-Ag",
        }
    }

    /// Position in [`MoralType::ALL`].
    pub fn ordinal(self) -> usize {
        MoralType::ALL.iter().position(|&t| t == self).unwrap()
    }

    /// Norm-based types reward an action or condition, not payoffs; these use `xi`.
    pub fn is_norm_based(self) -> bool {
        matches!(
            self,
            MoralType::Deontological
                | MoralType::MaliciousDeontological
                | MoralType::VirtueKindness
                | MoralType::VirtueAggression
        )
    }
}

impl fmt::Display for MoralType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for MoralType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MoralType::ALL
            .into_iter()
            .find(|t| t.label() == s)
            .ok_or_else(|| Error::UnknownMoralType(s.to_string()))
    }
}

/// Norm reward magnitude shared by the four norm-based types.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicRewardParams {
    pub xi: f64,
}

impl Default for IntrinsicRewardParams {
    fn default() -> Self {
        IntrinsicRewardParams { xi: 5.0 }
    }
}

impl IntrinsicRewardParams {
    pub fn new(xi: f64) -> Result<Self> {
        if !(xi.is_finite() && xi > 0.0) {
            return Err(Error::Config(format!("xi must be positive, got {xi}")));
        }
        Ok(IntrinsicRewardParams { xi })
    }
}

/// Everything a reward function may look at for one game, from the focal player's side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GameContext {
    pub a_self: Action,
    pub a_opp: Action,
    /// The opponent's previous move, as observed by the focal player.
    pub a_opp_prev: Action,
    pub r_self_extr: f64,
    pub r_opp_extr: f64,
}

impl GameContext {
    /// Context for a game played under `matrix`.
    pub fn new(a_self: Action, a_opp: Action, a_opp_prev: Action, matrix: &PayoffMatrix) -> Self {
        let (r_self_extr, r_opp_extr) = matrix.payoff(a_self, a_opp);
        GameContext {
            a_self,
            a_opp,
            a_opp_prev,
            r_self_extr,
            r_opp_extr,
        }
    }

    fn defected_against_cooperator(&self) -> bool {
        self.a_self == Action::Defect && self.a_opp_prev == Action::Cooperate
    }

    /// `|r_self - r_opp| / (r_self + r_opp)`; zero when both payoffs are zero.
    fn inequality(&self) -> Result<f64> {
        let (r1, r2) = (self.r_self_extr, self.r_opp_extr);
        let sum = r1 + r2;
        if r1 == 0.0 && r2 == 0.0 {
            return Ok(0.0);
        }
        if sum <= 0.0 {
            return Err(Error::RewardDomain(r1, r2));
        }
        Ok((r1 - r2).abs() / sum)
    }
}

/// Intrinsic reward of type `t` for one game. For S this is the game payoff itself.
pub fn intrinsic_reward(t: MoralType, ctx: &GameContext, p: &IntrinsicRewardParams) -> Result<f64> {
    let xi = p.xi;
    let collective = ctx.r_self_extr + ctx.r_opp_extr;
    let r = match t {
        MoralType::Selfish => ctx.r_self_extr,
        MoralType::Utilitarian => collective,
        MoralType::AntiUtilitarian => -collective,
        MoralType::Deontological => {
            if ctx.defected_against_cooperator() {
                -xi
            } else {
                0.0
            }
        }
        MoralType::MaliciousDeontological => {
            if ctx.defected_against_cooperator() {
                xi
            } else {
                0.0
            }
        }
        MoralType::VirtueEquality => 1.0 - ctx.inequality()?,
        MoralType::VirtueInequality => ctx.inequality()?,
        MoralType::VirtueKindness => {
            if ctx.a_self == Action::Cooperate {
                xi
            } else {
                0.0
            }
        }
        MoralType::VirtueAggression => {
            if ctx.a_self == Action::Defect {
                xi
            } else {
                0.0
            }
        }
    };
    Ok(r)
}

/// The reward an agent of type `t` learns from: extrinsic for S, intrinsic otherwise.
pub fn learning_reward(t: MoralType, ctx: &GameContext, p: &IntrinsicRewardParams) -> Result<f64> {
    match t {
        MoralType::Selfish => Ok(ctx.r_self_extr),
        _ => intrinsic_reward(t, ctx, p),
    }
}
