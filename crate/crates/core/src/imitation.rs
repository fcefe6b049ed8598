//! Nearest-neighbor imitation policy over operator demonstrations.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridnav::{Action, EnvConfig, EnvState, RobotState};
use crate::policy::Policy;

/// Where a demonstration came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DemoTag {
    Phase1,
    #[serde(rename = "Phase3-GT")]
    Phase3Gt,
    #[serde(rename = "Phase3-Luce")]
    Phase3Luce,
    #[serde(rename = "Phase3-Base")]
    Phase3Base,
    #[serde(rename = "Phase3-Manual")]
    Phase3Manual,
}

impl fmt::Display for DemoTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DemoTag::Phase1 => "Phase1",
            DemoTag::Phase3Gt => "Phase3-GT",
            DemoTag::Phase3Luce => "Phase3-Luce",
            DemoTag::Phase3Base => "Phase3-Base",
            DemoTag::Phase3Manual => "Phase3-Manual",
        })
    }
}

impl FromStr for DemoTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::usage(format!("unknown demo tag {s:?}")))
    }
}

/// Per-feature distance weights for (x, y, heading, health). The heading
/// weight applies to both components of its (sin, cos) embedding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScales(pub [f64; 4]);

impl Default for FeatureScales {
    fn default() -> Self {
        FeatureScales([1.0, 1.0, 2.0, 0.05])
    }
}

impl FeatureScales {
    pub fn validate(&self) -> Result<()> {
        if self.0.iter().all(|&s| s > 0.0 && s.is_finite()) {
            Ok(())
        } else {
            Err(Error::usage("feature scales must be strictly positive"))
        }
    }

    pub fn embed(&self, s: &RobotState) -> [f64; 5] {
        let [kx, ky, kh, khp] = self.0;
        [
            kx * s.x,
            ky * s.y,
            kh * s.heading.sin(),
            kh * s.heading.cos(),
            khp * s.health,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Demo {
    pub state: RobotState,
    pub action: Action,
    pub tag: DemoTag,
}

/// Ordered demonstration pairs; order defines the tie-break index.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    demos: Vec<Demo>,
    scales: FeatureScales,
    features: Vec<[f64; 5]>,
}

impl Default for DemoDataset {
    fn default() -> Self {
        Self::new(FeatureScales::default()).expect("default scales are valid")
    }
}

impl DemoDataset {
    pub fn new(scales: FeatureScales) -> Result<Self> {
        scales.validate()?;
        Ok(Self {
            demos: Vec::new(),
            scales,
            features: Vec::new(),
        })
    }

    pub fn from_demos(demos: Vec<Demo>, scales: FeatureScales) -> Result<Self> {
        let mut d = Self::new(scales)?;
        d.extend(demos);
        Ok(d)
    }

    fn extend(&mut self, demos: impl IntoIterator<Item = Demo>) {
        for demo in demos {
            self.features.push(self.scales.embed(&demo.state));
            self.demos.push(demo);
        }
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn demos(&self) -> &[Demo] {
        &self.demos
    }

    pub fn scales(&self) -> FeatureScales {
        self.scales
    }

    /// Same pairs under different feature scales.
    pub fn with_scales(&self, scales: FeatureScales) -> Result<Self> {
        Self::from_demos(self.demos.clone(), scales)
    }

    /// A new dataset with `pairs` appended in order under `tag`.
    pub fn append(&self, pairs: &[(RobotState, Action)], tag: DemoTag) -> Self {
        let mut out = self.clone();
        out.extend(pairs.iter().map(|&(state, action)| Demo { state, action, tag }));
        out
    }

    /// Index of the stored pair closest to `query`; lowest index on ties.
    pub fn nearest_index(&self, query: &RobotState) -> Result<usize> {
        if self.demos.is_empty() {
            return Err(Error::usage("nearest-neighbor query on an empty demo dataset"));
        }
        let q = self.scales.embed(query);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, f) in self.features.iter().enumerate() {
            let d = sq_dist(&q, f);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        Ok(best)
    }

    pub fn nearest_action(&self, query: &RobotState) -> Result<Action> {
        Ok(self.demos[self.nearest_index(query)?].action)
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for d in &self.demos {
            let line = DemoLine {
                x: d.state.x,
                y: d.state.y,
                heading: d.state.heading,
                health: d.state.health,
                action: d.action,
                tag: d.tag,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load_jsonl(path: &Path, scales: FeatureScales) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut demos = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let d: DemoLine = serde_json::from_str(&line).map_err(|e| Error::Artifact {
                path: format!("{}:{}", path.display(), lineno + 1),
                reason: e.to_string(),
            })?;
            demos.push(Demo {
                state: RobotState {
                    x: d.x,
                    y: d.y,
                    heading: d.heading,
                    health: d.health,
                },
                action: d.action,
                tag: d.tag,
            });
        }
        Self::from_demos(demos, scales)
    }
}

fn sq_dist(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    let mut s = 0.0;
    for k in 0..5 {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

#[derive(Serialize, Deserialize)]
struct DemoLine {
    x: f64,
    y: f64,
    heading: f64,
    health: f64,
    action: Action,
    tag: DemoTag,
}

impl Policy for DemoDataset {
    fn act(&self, state: &EnvState, _config: &EnvConfig) -> Result<Action> {
        self.nearest_action(&state.robot)
    }
}
