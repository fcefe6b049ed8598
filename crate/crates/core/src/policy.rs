//! The control-policy abstraction shared by the scripted operator and the
//! imitation policy, plus a plain episode rollout helper.

use crate::error::Result;
use crate::gridnav::{self, Action, EnvConfig, EnvState, TerminalReason};
use crate::rng::EpisodeRng;

/// A deterministic map from episode state to action.
pub trait Policy {
    fn act(&self, state: &EnvState, config: &EnvConfig) -> Result<Action>;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn act(&self, state: &EnvState, config: &EnvConfig) -> Result<Action> {
        (**self).act(state, config)
    }
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: EnvState,
    pub action: Action,
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    pub final_state: EnvState,
    pub reason: TerminalReason,
}

impl Episode {
    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Run `policy` from `start` until the episode terminates.
pub fn rollout_from<P: Policy + ?Sized>(
    policy: &P,
    config: &EnvConfig,
    start: EnvState,
) -> Result<Episode> {
    let mut state = start;
    let mut transitions = Vec::new();
    loop {
        let reason = gridnav::terminal_reason(&state, config);
        if reason != TerminalReason::None {
            return Ok(Episode {
                transitions,
                final_state: state,
                reason,
            });
        }
        let action = policy.act(&state, config)?;
        let res = gridnav::step(&state, action, config)?;
        transitions.push(Transition {
            state,
            action,
            reward: res.reward,
        });
        state = res.next;
    }
}

/// Reset with `rng` and run one episode.
pub fn rollout<P: Policy + ?Sized>(
    policy: &P,
    config: &EnvConfig,
    rng: &mut EpisodeRng,
) -> Result<Episode> {
    let start = gridnav::reset(config, rng)?;
    rollout_from(policy, config, start)
}
