use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Hierarchy level of a segmentation output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Part,
    Entity,
    Relation,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Part, Level::Entity, Level::Relation];

    pub fn index(self) -> usize {
        match self {
            Level::Part => 0,
            Level::Entity => 1,
            Level::Relation => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::Part => "part",
            Level::Entity => "entity",
            Level::Relation => "relation",
        }
    }

    /// Finer than `other` in the part < entity < relation order.
    pub fn finer_than(self, other: Level) -> bool {
        self.index() < other.index()
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "part" => Ok(Level::Part),
            "entity" => Ok(Level::Entity),
            "relation" => Ok(Level::Relation),
            other => Err(format!("unknown level `{other}` (expected part, entity or relation)")),
        }
    }
}

/// Adjacent level pair linked by an association map. The coarse level indexes rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelPair {
    EntityPart,
    RelationEntity,
}

impl LevelPair {
    pub const ALL: [LevelPair; 2] = [LevelPair::EntityPart, LevelPair::RelationEntity];

    pub fn coarse(self) -> Level {
        match self {
            LevelPair::EntityPart => Level::Entity,
            LevelPair::RelationEntity => Level::Relation,
        }
    }

    pub fn fine(self) -> Level {
        match self {
            LevelPair::EntityPart => Level::Part,
            LevelPair::RelationEntity => Level::Entity,
        }
    }

    pub fn index(self) -> usize {
        match self {
            LevelPair::EntityPart => 0,
            LevelPair::RelationEntity => 1,
        }
    }

    pub fn contains(self, level: Level) -> bool {
        self.coarse() == level || self.fine() == level
    }
}

impl fmt::Display for LevelPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LevelPair::EntityPart => "entity-part",
            LevelPair::RelationEntity => "relation-entity",
        })
    }
}
