//! Tire compounds and the per-lap pit decision.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Dry-weather tire compound. The numeric code is the one used throughout the
/// optimizer (1 = soft, 2 = medium, 3 = hard).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Compound {
    #[serde(rename = "S")]
    Soft,
    #[serde(rename = "M")]
    Medium,
    #[serde(rename = "H")]
    Hard,
}

impl Compound {
    pub const ALL: [Compound; 3] = [Compound::Soft, Compound::Medium, Compound::Hard];

    pub fn code(self) -> u8 {
        match self {
            Compound::Soft => 1,
            Compound::Medium => 2,
            Compound::Hard => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Compound::Soft),
            2 => Some(Compound::Medium),
            3 => Some(Compound::Hard),
            _ => None,
        }
    }

    pub fn label(self) -> char {
        match self {
            Compound::Soft => 'S',
            Compound::Medium => 'M',
            Compound::Hard => 'H',
        }
    }

    pub fn from_label(label: char) -> Option<Self> {
        match label {
            'S' => Some(Compound::Soft),
            'M' => Some(Compound::Medium),
            'H' => Some(Compound::Hard),
            _ => None,
        }
    }

    /// Zero-based index, handy for per-compound arrays.
    pub fn index(self) -> usize {
        self.code() as usize - 1
    }
}

impl fmt::Display for Compound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

impl FromStr for Compound {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => {
                Compound::from_label(c.to_ascii_uppercase()).ok_or_else(|| format!("unknown compound {s:?}"))
            }
            _ => match s.trim().to_ascii_lowercase().as_str() {
                "soft" => Ok(Compound::Soft),
                "medium" => Ok(Compound::Medium),
                "hard" => Ok(Compound::Hard),
                _ => Err(format!("unknown compound {s:?}")),
            },
        }
    }
}

/// Pit decision for one lap: 0 stays out, 1..=3 pits for the compound with
/// that code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct PitAction(u8);

impl PitAction {
    pub const STAY: PitAction = PitAction(0);

    pub fn new(code: u8) -> Option<Self> {
        (code <= 3).then_some(PitAction(code))
    }

    pub fn pit_for(compound: Compound) -> Self {
        PitAction(compound.code())
    }

    pub fn code(self) -> u8 {
        self.0
    }

    pub fn is_stop(self) -> bool {
        self.0 > 0
    }

    pub fn target(self) -> Option<Compound> {
        Compound::from_code(self.0)
    }
}

impl TryFrom<u8> for PitAction {
    type Error = String;

    fn try_from(code: u8) -> Result<Self, Self::Error> {
        PitAction::new(code).ok_or_else(|| format!("pit action code {code} outside 0..=3"))
    }
}

impl From<PitAction> for u8 {
    fn from(p: PitAction) -> u8 {
        p.0
    }
}

impl From<Compound> for PitAction {
    fn from(c: Compound) -> Self {
        PitAction::pit_for(c)
    }
}
