//! Stage 0: representation networks.
//!
//! A representation network is an encoder `Phi` (dense or coupling flow),
//! outcome heads `h_a` on top of `Phi`, and, depending on the family, a
//! propensity head (CFR-ISW) or a sample-weight head (RCFR). Training minimizes
//! the weighted factual MSE plus an optional IPM balancing term.

mod network;
mod train;

use serde::{Deserialize, Serialize};

use crate::balance::BalancingSpec;
use crate::error::{Error, Result};

pub use network::{BatchTerms, Encoder, OutcomeHeads, RepresentationNetwork, CLIP_THRESHOLD};
pub use train::{train_representation, EpochRecord, Manifest, TrainedRepresentation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    TarNet,
    Bnn,
    Cfr,
    Rcfr,
    CfrIsw,
    Bwcfr,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::TarNet,
        Family::Bnn,
        Family::Cfr,
        Family::Rcfr,
        Family::CfrIsw,
        Family::Bwcfr,
    ];

    /// Display name; the flow variant swaps "Net" / "CFR" for the flow suffix.
    pub fn name(self, invertible: bool) -> &'static str {
        match (self, invertible) {
            (Family::TarNet, false) => "TARNet",
            (Family::TarNet, true) => "TARFlow",
            (Family::Bnn, false) => "BNN",
            (Family::Bnn, true) => "BNNFlow",
            (Family::Cfr, false) => "CFR",
            (Family::Cfr, true) => "CFRFlow",
            (Family::Rcfr, false) => "RCFR",
            (Family::Rcfr, true) => "RCFRFlow",
            (Family::CfrIsw, false) => "CFR-ISW",
            (Family::CfrIsw, true) => "CFRFlow-ISW",
            (Family::Bwcfr, false) => "BWCFR",
            (Family::Bwcfr, true) => "BWCFRFlow",
        }
    }

    /// Parses either the dense or the flow display name.
    pub fn parse(name: &str) -> Result<(Family, bool)> {
        let key = name.trim().to_ascii_lowercase().replace(['-', '_'], "");
        for f in Family::ALL {
            for inv in [false, true] {
                if f.name(inv).to_ascii_lowercase().replace('-', "") == key {
                    return Ok((f, inv));
                }
            }
        }
        Err(Error::InvalidConfig(format!("unknown representation family `{name}`")))
    }

    pub fn default_wiring(self) -> HeadWiring {
        match self {
            Family::Bnn => HeadWiring::Shared,
            _ => HeadWiring::PerArm,
        }
    }

    /// Whether the balancing term is part of the objective at all.
    pub fn balances(self) -> bool {
        self != Family::TarNet
    }
}

/// How the outcome heads consume the representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadWiring {
    /// Two heads `h_0`, `h_1`, each fed `phi`.
    PerArm,
    /// One head fed `[phi, a]`.
    Shared,
}

/// Inputs of the stage-2 target network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Selector {
    /// Raw covariates, target depth of one hidden layer.
    RawX,
    /// Raw covariates, target depth matching the representation network.
    RawXDeep,
    Phi,
    /// `(h_0(phi), h_1(phi))`.
    Heads,
}

impl Selector {
    pub const ALL: [Selector; 4] = [Selector::Heads, Selector::RawX, Selector::RawXDeep, Selector::Phi];

    pub fn name(self) -> &'static str {
        match self {
            Selector::RawX => "X",
            Selector::RawXDeep => "X*",
            Selector::Phi => "Phi",
            Selector::Heads => "Heads",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "x" | "rawx" => Ok(Selector::RawX),
            "x*" | "rawxdeep" | "xstar" => Ok(Selector::RawXDeep),
            "phi" => Ok(Selector::Phi),
            "heads" => Ok(Selector::Heads),
            other => Err(Error::InvalidConfig(format!("unknown selector `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepLearnerSpec {
    pub family: Family,
    /// Coupling-flow encoder instead of a dense one.
    pub invertible: bool,
    pub balancing: BalancingSpec,
    pub rep_dim: usize,
    /// Hidden width of the dense encoder, or of every coupling subnet.
    pub hidden_phi: usize,
    pub hidden_head: usize,
    /// Hidden width of the propensity head (CFR-ISW) and the weight head (RCFR).
    pub hidden_aux: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Overrides the family's default head wiring.
    pub head_wiring: Option<HeadWiring>,
    pub prop_learning_rate: f64,
    pub prop_weight_decay: f64,
    pub flow_blocks: usize,
    pub flow_depth: usize,
}

impl RepLearnerSpec {
    /// Defaults for the low-dimensional synthetic benchmark.
    pub fn synthetic(family: Family, invertible: bool, dim: usize) -> Self {
        let rep_dim = if invertible { dim } else { 2 };
        RepLearnerSpec {
            family,
            invertible,
            balancing: BalancingSpec::none(),
            rep_dim,
            hidden_phi: 4 * dim,
            hidden_head: 4 * rep_dim,
            hidden_aux: 4 * rep_dim,
            learning_rate: 0.005,
            weight_decay: 0.001,
            batch_size: 64,
            epochs: 200,
            head_wiring: None,
            prop_learning_rate: 0.005,
            prop_weight_decay: 0.001,
            flow_blocks: 4,
            flow_depth: 3,
        }
    }

    pub fn wiring(&self) -> HeadWiring {
        self.head_wiring.unwrap_or_else(|| self.family.default_wiring())
    }

    /// Balancing strength actually applied (TARNet ignores it).
    pub fn effective_alpha(&self) -> f64 {
        if self.family.balances() {
            self.balancing.alpha
        } else {
            0.0
        }
    }

    pub fn display_name(&self) -> &'static str {
        self.family.name(self.invertible)
    }

    pub fn validate(&self, input_dim: usize) -> Result<()> {
        self.balancing.validate()?;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.invertible && self.rep_dim != input_dim {
            return bad(format!(
                "an invertible representation needs rep_dim = {input_dim}, got {}",
                self.rep_dim
            ));
        }
        if self.rep_dim == 0 || self.hidden_phi == 0 || self.hidden_head == 0 || self.hidden_aux == 0 {
            return bad("network widths must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if self.invertible && (self.flow_blocks == 0 || self.flow_depth == 0) {
            return bad("a flow needs at least one block and one hidden layer".into());
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("prop_learning_rate", self.prop_learning_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("weight_decay", self.weight_decay),
            ("prop_weight_decay", self.prop_weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        Ok(())
    }
}
