use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ControlInput, EpisodeLog};
use crate::compound::Compound;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stop {
    pub lap: usize,
    pub compound: Compound,
}

/// Compound sequence of a race, rendered as `(M_0, M_18, S_39)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strategy {
    pub initial: Compound,
    /// Lap at which the strategy starts (0 for a full race).
    #[serde(default)]
    pub start_lap: usize,
    pub stops: Vec<Stop>,
}

impl Strategy {
    pub fn new(initial: Compound) -> Self {
        Strategy { initial, start_lap: 0, stops: Vec::new() }
    }

    /// Reads the stops out of an input sequence beginning at lap `start_lap`.
    pub fn from_inputs(initial: Compound, start_lap: usize, inputs: &[ControlInput]) -> Self {
        let stops = inputs
            .iter()
            .enumerate()
            .filter_map(|(i, inp)| inp.ps.target().map(|compound| Stop { lap: start_lap + i, compound }))
            .collect();
        Strategy { initial, start_lap, stops }
    }

    pub fn stop_laps(&self) -> Vec<usize> {
        self.stops.iter().map(|s| s.lap).collect()
    }

    /// True when some stop mounts a compound different from the one before it.
    pub fn changes_compound(&self) -> bool {
        let mut cur = self.initial;
        let mut changed = false;
        for s in &self.stops {
            changed |= s.compound != cur;
            cur = s.compound;
        }
        changed
    }

    pub fn compounds(&self) -> Vec<Compound> {
        std::iter::once(self.initial).chain(self.stops.iter().map(|s| s.compound)).collect()
    }
}

pub fn strategy_of(log: &EpisodeLog) -> Strategy {
    let initial = log.laps.first().map(|l| l.state.tc).unwrap_or(log.final_state.tc);
    Strategy::from_inputs(initial, log.start_lap, &log.inputs())
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}_{}", self.initial, self.start_lap)?;
        for s in &self.stops {
            write!(f, ", {}_{}", s.compound, s.lap)?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StrategyParseError {
    #[error("strategy must be wrapped in parentheses")]
    Delimiters,
    #[error("empty strategy")]
    Empty,
    #[error("bad entry {0:?}")]
    Entry(String),
    #[error("lap indices must be strictly increasing")]
    Order,
}

impl FromStr for Strategy {
    type Err = StrategyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let inner = s
            .trim()
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .ok_or(StrategyParseError::Delimiters)?;
        if inner.trim().is_empty() {
            return Err(StrategyParseError::Empty);
        }
        let mut entries = Vec::new();
        for part in inner.split(',') {
            let part = part.trim();
            let (label, lap) = part.split_once('_').ok_or_else(|| StrategyParseError::Entry(part.to_string()))?;
            let mut chars = label.chars();
            let compound = match (chars.next(), chars.next()) {
                (Some(c), None) => Compound::from_label(c),
                _ => None,
            }
            .ok_or_else(|| StrategyParseError::Entry(part.to_string()))?;
            let lap: usize = lap.parse().map_err(|_| StrategyParseError::Entry(part.to_string()))?;
            entries.push(Stop { lap, compound });
        }
        if entries.windows(2).any(|w| w[1].lap <= w[0].lap) {
            return Err(StrategyParseError::Order);
        }
        let first = entries.remove(0);
        Ok(Strategy { initial: first.compound, start_lap: first.lap, stops: entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compound::PitAction;
    use crate::config::RaceConfig;
    use crate::model::simulate_strategy;
    use proptest::prelude::{prop, prop_assert_eq, proptest};

    #[test]
    fn renders_stops() {
        let s = Strategy {
            initial: Compound::Medium,
            start_lap: 0,
            stops: vec![Stop { lap: 18, compound: Compound::Medium }, Stop { lap: 39, compound: Compound::Soft }],
        };
        assert_eq!(s.to_string(), "(M_0, M_18, S_39)");
        assert_eq!(Strategy::new(Compound::Medium).to_string(), "(M_0)");
        let go_long = Strategy {
            initial: Compound::Medium,
            start_lap: 0,
            stops: vec![Stop { lap: 18, compound: Compound::Medium }, Stop { lap: 24, compound: Compound::Hard }],
        };
        assert_eq!(go_long.to_string(), "(M_0, M_18, H_24)");
    }

    #[test]
    fn strategy_from_simulated_log() {
        let cfg = RaceConfig::default();
        let inputs: Vec<_> = (0..cfg.n_laps)
            .map(|k| {
                let ps = match k {
                    18 => PitAction::pit_for(Compound::Medium),
                    39 => PitAction::pit_for(Compound::Soft),
                    _ => PitAction::STAY,
                };
                ControlInput::nominal(&cfg, ps)
            })
            .collect();
        let log = simulate_strategy(&cfg, &inputs).unwrap();
        assert_eq!(strategy_of(&log).to_string(), "(M_0, M_18, S_39)");
    }

    #[test]
    fn parse_errors() {
        assert_eq!("M_0".parse::<Strategy>(), Err(StrategyParseError::Delimiters));
        assert_eq!("()".parse::<Strategy>(), Err(StrategyParseError::Empty));
        assert!(matches!("(X_0)".parse::<Strategy>(), Err(StrategyParseError::Entry(_))));
        assert_eq!("(M_0, S_5, H_5)".parse::<Strategy>(), Err(StrategyParseError::Order));
    }

    proptest! {
        #[test]
        fn display_parse_roundtrip(init in 1u8..=3, start in 0usize..5, raw in prop::collection::vec((1usize..6, 1u8..=3), 0..6)) {
            let mut lap = start;
            let stops = raw.iter().map(|&(gap, c)| { lap += gap; Stop { lap, compound: Compound::from_code(c).unwrap() } }).collect();
            let s = Strategy { initial: Compound::from_code(init).unwrap(), start_lap: start, stops };
            let back: Strategy = s.to_string().parse().unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
