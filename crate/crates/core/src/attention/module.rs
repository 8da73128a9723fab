use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{cr_backward, cr_forward, CrParams, FeatureMap, GradTape};
use crate::{Error, Result};

/// Which features query the hand-object intersection region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QueryMode {
    /// Object features query; the object decoder receives the enhanced map.
    #[serde(rename = "o+")]
    ObjectQuery,
    /// Hand features query; the hand decoder receives the enhanced map.
    #[serde(rename = "h+")]
    HandQuery,
    /// Two independently parameterised blocks enhance both maps.
    #[serde(rename = "h+o+")]
    BothQuery,
}

impl QueryMode {
    pub fn label(&self) -> &'static str {
        match self {
            QueryMode::ObjectQuery => "o+",
            QueryMode::HandQuery => "h+",
            QueryMode::BothQuery => "h+o+",
        }
    }

    pub fn enhances_hand(&self) -> bool {
        matches!(self, QueryMode::HandQuery | QueryMode::BothQuery)
    }

    pub fn enhances_object(&self) -> bool {
        matches!(self, QueryMode::ObjectQuery | QueryMode::BothQuery)
    }
}

impl std::str::FromStr for QueryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "o+" | "object" => Ok(QueryMode::ObjectQuery),
            "h+" | "hand" => Ok(QueryMode::HandQuery),
            "h+o+" | "both" => Ok(QueryMode::BothQuery),
            other => Err(Error::invalid(format!("unknown query mode {other:?} (expected o+, h+ or h+o+)"))),
        }
    }
}

/// The contextual-reasoning module: one block per enhanced stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextReasoning {
    mode: QueryMode,
    hand_block: Option<CrParams>,
    object_block: Option<CrParams>,
}

/// Feature maps handed to the two decoders. A stream that is not enhanced
/// is passed through unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct CrOutput {
    pub hand: FeatureMap,
    pub object: FeatureMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrTape {
    hand: Option<GradTape>,
    object: Option<GradTape>,
    hand_shape: (usize, usize, usize),
    object_shape: (usize, usize, usize),
    inter_shape: (usize, usize, usize),
}

impl CrTape {
    pub fn hand_block(&self) -> Option<&GradTape> {
        self.hand.as_ref()
    }

    pub fn object_block(&self) -> Option<&GradTape> {
        self.object.as_ref()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleGradients {
    pub hand_block: Option<CrParams>,
    pub object_block: Option<CrParams>,
    pub hand: FeatureMap,
    pub object: FeatureMap,
    pub inter: FeatureMap,
}

impl ContextReasoning {
    pub fn new(mode: QueryMode, hand_block: Option<CrParams>, object_block: Option<CrParams>) -> Result<Self> {
        if mode.enhances_hand() != hand_block.is_some() || mode.enhances_object() != object_block.is_some() {
            return Err(Error::invalid(format!("mode {} does not match the supplied blocks", mode.label())));
        }
        for b in hand_block.iter().chain(&object_block) {
            b.validate()?;
        }
        if let (Some(h), Some(o)) = (&hand_block, &object_block) {
            if h.channels() != o.channels() {
                return Err(Error::dims("hand and object blocks have different channel counts"));
            }
        }
        Ok(Self { mode, hand_block, object_block })
    }

    pub fn random<R: Rng + ?Sized>(mode: QueryMode, channels: usize, rng: &mut R) -> Self {
        let hand_block = mode.enhances_hand().then(|| CrParams::random(channels, rng));
        let object_block = mode.enhances_object().then(|| CrParams::random(channels, rng));
        Self { mode, hand_block, object_block }
    }

    pub fn mode(&self) -> QueryMode {
        self.mode
    }

    pub fn hand_block(&self) -> Option<&CrParams> {
        self.hand_block.as_ref()
    }

    pub fn object_block(&self) -> Option<&CrParams> {
        self.object_block.as_ref()
    }

    pub fn hand_block_mut(&mut self) -> Option<&mut CrParams> {
        self.hand_block.as_mut()
    }

    pub fn object_block_mut(&mut self) -> Option<&mut CrParams> {
        self.object_block.as_mut()
    }

    pub fn forward(&self, hand: &FeatureMap, object: &FeatureMap, inter: &FeatureMap) -> Result<(CrOutput, CrTape)> {
        let (hand_out, hand_tape) = match &self.hand_block {
            Some(p) => {
                let (o, t) = cr_forward(p, hand, inter)?;
                (o, Some(t))
            }
            None => (hand.clone(), None),
        };
        let (object_out, object_tape) = match &self.object_block {
            Some(p) => {
                let (o, t) = cr_forward(p, object, inter)?;
                (o, Some(t))
            }
            None => (object.clone(), None),
        };
        Ok((
            CrOutput { hand: hand_out, object: object_out },
            CrTape {
                hand: hand_tape,
                object: object_tape,
                hand_shape: hand.shape(),
                object_shape: object.shape(),
                inter_shape: inter.shape(),
            },
        ))
    }

    pub fn backward(&self, tape: &CrTape, upstream_hand: &FeatureMap, upstream_object: &FeatureMap) -> Result<ModuleGradients> {
        if upstream_hand.shape() != tape.hand_shape || upstream_object.shape() != tape.object_shape {
            return Err(Error::dims("upstream gradients do not match the module outputs"));
        }
        let (h, w, c) = tape.inter_shape;
        let mut inter = FeatureMap::zeros(h, w, c);
        let mut add_inter = |g: &FeatureMap| {
            for (a, b) in inter.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        };

        let (hand_block, hand) = match &tape.hand {
            Some(t) => {
                let g = cr_backward(t, upstream_hand)?;
                add_inter(&g.context);
                (Some(g.params), g.query)
            }
            None => (None, upstream_hand.clone()),
        };
        let (object_block, object) = match &tape.object {
            Some(t) => {
                let g = cr_backward(t, upstream_object)?;
                add_inter(&g.context);
                (Some(g.params), g.query)
            }
            None => (None, upstream_object.clone()),
        };
        Ok(ModuleGradients { hand_block, object_block, hand, object, inter })
    }
}
