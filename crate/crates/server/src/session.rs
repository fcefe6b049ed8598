//! Authoritative session state. Everything here is synchronous and
//! tick-counted; the network layer only feeds it events in arrival order.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use opswitch_core::experiment::phase3_tag;
use opswitch_core::fleet::{argmax_choose, ChoiceMode, Fleet, FleetConfig, FleetTrace, TraceStep};
use opswitch_core::gridnav::{Action, EnvConfig, RobotState};
use opswitch_core::imitation::{Demo, DemoDataset, DemoTag, FeatureScales};
use opswitch_core::scorers::{ChoiceDataset, ChoiceRecord, Scorer};

use crate::protocol::{parse_inbound, ErrorCode, Inbound, Mode, RobotView, StateFrame};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("session has ended")]
    Ended,
    #[error("assisted mode needs a scorer")]
    NoScorer,
    #[error(transparent)]
    Core(#[from] opswitch_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type SessionResult<T> = Result<T, SessionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Demo1,
    Choice2,
    Fleet3,
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "demo1" | "1" => Ok(Phase::Demo1),
            "choice2" | "2" => Ok(Phase::Choice2),
            "fleet3" | "3" => Ok(Phase::Fleet3),
            other => Err(format!("unknown phase {other:?}")),
        }
    }
}

/// Everything needed besides the event log to rebuild a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionSetup {
    pub id: String,
    pub phase: Phase,
    pub n: usize,
    pub dwell: u64,
    pub seed: u64,
    /// The session ends by itself after this many ticks.
    pub horizon: u64,
    pub initial_mode: Mode,
    pub env: EnvConfig,
}

impl SessionSetup {
    pub fn fleet_config(&self) -> FleetConfig {
        FleetConfig {
            n: self.n,
            dwell_period: self.dwell,
            choice_mode: match self.initial_mode {
                Mode::Manual => ChoiceMode::Manual,
                Mode::Assisted => ChoiceMode::Argmax,
            },
            horizon: self.horizon,
            seed: self.seed,
        }
    }
}

/// One entry of the ordered event queue, as logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum LogEvent {
    Tick,
    Message { text: String },
}

#[derive(Debug)]
pub struct Session {
    setup: SessionSetup,
    fleet: Fleet,
    autonomy: DemoDataset,
    scorer: Option<Scorer>,
    mode: Mode,
    controlled: usize,
    tick: u64,
    pending: Option<Action>,
    ended: bool,
    events: Vec<LogEvent>,
    trace: FleetTrace,
    choices: ChoiceDataset,
    demos: Vec<Demo>,
}

impl Session {
    pub fn new(setup: SessionSetup, autonomy: DemoDataset, scorer: Option<Scorer>) -> SessionResult<Self> {
        setup.fleet_config().validate()?;
        setup.env.validate()?;
        if setup.initial_mode == Mode::Assisted && scorer.is_none() {
            return Err(SessionError::NoScorer);
        }
        if setup.n > 1 && autonomy.is_empty() {
            return Err(opswitch_core::Error::Usage("robots outside operator control need autonomy demonstrations".into()).into());
        }
        let fleet = Fleet::new(&setup.env, setup.n, setup.seed)?;
        let identity = scorer.as_ref().map_or_else(|| "none".to_string(), Scorer::identity);
        let trace = FleetTrace::new(&setup.env, &setup.fleet_config(), identity);
        Ok(Self {
            mode: setup.initial_mode,
            choices: ChoiceDataset::new(setup.n),
            setup,
            fleet,
            autonomy,
            scorer,
            controlled: 0,
            tick: 0,
            pending: None,
            ended: false,
            events: Vec::new(),
            trace,
            demos: Vec::new(),
        })
    }

    pub fn setup(&self) -> &SessionSetup {
        &self.setup
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn controlled(&self) -> usize {
        self.controlled
    }

    /// Number of ticks simulated so far.
    pub fn ticks(&self) -> u64 {
        self.tick
    }

    pub fn pending_action(&self) -> Option<Action> {
        self.pending
    }

    pub fn is_ended(&self) -> bool {
        self.ended
    }

    pub fn robots(&self) -> Vec<RobotState> {
        self.fleet.robots()
    }

    pub fn events(&self) -> &[LogEvent] {
        &self.events
    }

    pub fn trace(&self) -> &FleetTrace {
        &self.trace
    }

    pub fn choices(&self) -> &ChoiceDataset {
        &self.choices
    }

    pub fn demos(&self) -> SessionResult<DemoDataset> {
        Ok(DemoDataset::from_demos(self.demos.clone(), FeatureScales::default())?)
    }

    /// Log and apply one raw inbound frame.
    pub fn handle_text(&mut self, text: &str) -> Result<(), ErrorCode> {
        self.events.push(LogEvent::Message { text: text.to_string() });
        let msg = parse_inbound(text).map_err(|f| f.code())?;
        self.handle_message(msg)
    }

    pub fn handle_message(&mut self, msg: Inbound) -> Result<(), ErrorCode> {
        if self.ended {
            return Err(ErrorCode::SessionEnded);
        }
        match msg {
            Inbound::Input { action } => self.pending = Some(action),
            Inbound::Select { robot } => {
                if self.mode == Mode::Assisted {
                    return Err(ErrorCode::ManualSelectForbidden);
                }
                if robot >= self.setup.n {
                    return Err(ErrorCode::RobotOutOfRange);
                }
                self.controlled = robot;
            }
            Inbound::Mode { value } => {
                if value == Mode::Assisted && self.scorer.is_none() {
                    return Err(ErrorCode::NoScorer);
                }
                self.mode = value;
            }
            Inbound::End => self.ended = true,
        }
        Ok(())
    }

    fn demo_tag(&self) -> DemoTag {
        match (self.setup.phase, self.mode, &self.scorer) {
            (Phase::Fleet3, Mode::Assisted, Some(s)) => phase3_tag(s.kind()),
            (Phase::Fleet3, _, _) => DemoTag::Phase3Manual,
            _ => DemoTag::Phase1,
        }
    }

    /// Simulate one tick and return the frame to broadcast.
    pub fn tick(&mut self) -> SessionResult<StateFrame> {
        if self.ended {
            return Err(SessionError::Ended);
        }
        self.events.push(LogEvent::Tick);
        let t = self.tick;
        let states = self.fleet.robots();
        let decision = t % self.setup.dwell == 0;
        let mut scores = None;
        match (self.mode, &self.scorer) {
            (Mode::Assisted, Some(scorer)) if decision => {
                let s = scorer.score_many(&states)?;
                self.controlled = argmax_choose(&s);
                scores = Some(s);
            }
            (Mode::Manual, _) if decision && self.setup.n > 1 => {
                self.choices.push(ChoiceRecord {
                    timestep: t,
                    chosen: self.controlled,
                    states: states.clone(),
                })?;
            }
            _ => {}
        }
        let action = self.pending.take();
        if let Some(a) = action {
            self.demos.push(Demo {
                state: states[self.controlled],
                action: a,
                tag: self.demo_tag(),
            });
        }
        let robots = self.fleet.step(self.controlled, action, &self.autonomy)?;
        let views = self
            .fleet
            .robots()
            .iter()
            .zip(&robots)
            .map(|(s, r)| RobotView {
                x: s.x,
                y: s.y,
                heading: s.heading,
                health: s.health,
                just_reset: r.ended.is_some(),
            })
            .collect();
        self.trace.steps.push(TraceStep {
            t,
            controlled: self.controlled,
            decision,
            scores: scores.clone(),
            states,
            robots,
        });
        self.tick += 1;
        if self.tick >= self.setup.horizon {
            self.ended = true;
        }
        Ok(StateFrame {
            tick: t,
            controlled: self.controlled,
            robots: views,
            scores,
            map: None,
        })
    }

    /// Apply a logged event. Rejected messages are not errors here.
    pub fn apply(&mut self, event: &LogEvent) -> SessionResult<()> {
        match event {
            LogEvent::Tick => {
                self.tick()?;
            }
            LogEvent::Message { text } => {
                let _ = self.handle_text(text);
            }
        }
        Ok(())
    }

    /// Write every session log into `dir`.
    pub fn write_logs(&self, dir: &Path) -> SessionResult<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("session.json"), serde_json::to_string_pretty(&self.setup)?)?;
        self.autonomy.save_jsonl(&dir.join("autonomy.jsonl"))?;
        if let Some(s) = &self.scorer {
            s.save(&dir.join("scorer.json"))?;
        }
        let mut out = BufWriter::new(fs::File::create(dir.join("events.jsonl"))?);
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        self.trace.save(&dir.join("trace.jsonl.gz"))?;
        self.choices.save_jsonl(&dir.join("choices.jsonl"))?;
        self.demos()?.save_jsonl(&dir.join("demos.jsonl"))?;
        Ok(())
    }
}

/// Inputs of a logged session, as read back from its log directory.
#[derive(Debug, Clone)]
pub struct SessionLogs {
    pub setup: SessionSetup,
    pub autonomy: DemoDataset,
    pub scorer: Option<Scorer>,
    pub events: Vec<LogEvent>,
}

impl SessionLogs {
    pub fn load(dir: &Path) -> SessionResult<Self> {
        let setup = serde_json::from_str(&fs::read_to_string(dir.join("session.json"))?)?;
        let autonomy = DemoDataset::load_jsonl(&dir.join("autonomy.jsonl"), FeatureScales::default())?;
        let scorer_path = dir.join("scorer.json");
        let scorer = if scorer_path.exists() {
            Some(Scorer::load(&scorer_path)?)
        } else {
            None
        };
        let mut events = Vec::new();
        for line in BufReader::new(fs::File::open(dir.join("events.jsonl"))?).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                events.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self {
            setup,
            autonomy,
            scorer,
            events,
        })
    }

    /// Rebuild the session by feeding the logged events through a fresh one.
    pub fn replay(self) -> SessionResult<Session> {
        let mut session = Session::new(self.setup, self.autonomy, self.scorer)?;
        for e in &self.events {
            session.apply(e)?;
        }
        Ok(session)
    }
}
