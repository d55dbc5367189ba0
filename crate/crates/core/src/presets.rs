//! Bundled synthetic chains used by examples, tests and experiment configs.

use crate::chain::{AbsorbingChain, ChainDocument};
use crate::error::{GradError, Result};

const UCF2008_LIKE: &str = include_str!("../data/ucf2008-like.json");
const DURATION_DEMO: &str = include_str!("../data/duration-demo.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// One sub-state per level, six-year rate near 68.6 percent.
    Ucf2008Like,
    /// Three duration sub-states per level.
    DurationDemo,
}

impl Preset {
    pub const ALL: [Preset; 2] = [Preset::Ucf2008Like, Preset::DurationDemo];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Ucf2008Like => "ucf2008-like",
            Preset::DurationDemo => "duration-demo",
        }
    }

    pub fn from_name(name: &str) -> Result<Preset> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| GradError::InvalidConfig(format!("unknown preset {name:?}")))
    }

    pub fn json(self) -> &'static str {
        match self {
            Preset::Ucf2008Like => UCF2008_LIKE,
            Preset::DurationDemo => DURATION_DEMO,
        }
    }

    pub fn document(self) -> ChainDocument {
        ChainDocument::from_json(self.json()).expect("bundled preset parses")
    }

    pub fn chain(self) -> AbsorbingChain {
        self.document().to_chain().expect("bundled preset is a valid chain")
    }
}
