use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encodings::{Task, TaskOrder};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    Disc,
    Gen,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Self::Disc => "disc",
            Self::Gen => "gen",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Setting {
    Single(Task),
    Joint,
    TwoStep(TaskOrder),
}

impl Setting {
    pub const ALL: [Setting; 5] = [
        Setting::Single(Task::Valence),
        Setting::Single(Task::Ec),
        Setting::Joint,
        Setting::TwoStep(TaskOrder::ValFirst),
        Setting::TwoStep(TaskOrder::EcFirst),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Single(Task::Valence) => "single-val",
            Self::Single(Task::Ec) => "single-ec",
            Self::Joint => "joint",
            Self::TwoStep(TaskOrder::ValFirst) => "two-step-val-ec",
            Self::TwoStep(TaskOrder::EcFirst) => "two-step-ec-val",
        }
    }

    /// Tasks whose metrics this setting produces.
    pub fn tasks(self) -> &'static [Task] {
        match self {
            Self::Single(Task::Valence) => &[Task::Valence],
            Self::Single(Task::Ec) => &[Task::Ec],
            _ => &[Task::Valence, Task::Ec],
        }
    }
}

/// One experimental cell: `{disc|gen}:{setting}[:oracle][:domain-adapt]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegimeConfig {
    pub family: Family,
    pub setting: Setting,
    /// Gold first-task labels at inference.
    pub oracle: bool,
    /// First-task-only fine-tuning before two-step training.
    pub domain_adapt: bool,
}

impl RegimeConfig {
    pub fn new(family: Family, setting: Setting) -> Self {
        Self { family, setting, oracle: false, domain_adapt: false }
    }

    pub fn oracle(mut self) -> Self {
        self.oracle = true;
        self
    }

    pub fn domain_adapted(mut self) -> Self {
        self.domain_adapt = true;
        self
    }

    pub fn order(&self) -> Option<TaskOrder> {
        match self.setting {
            Setting::TwoStep(o) => Some(o),
            _ => None,
        }
    }

    pub fn id(&self) -> String {
        self.to_string()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Regime { id: self.id(), message: m.to_string() });
        let two_step = self.order().is_some();
        if self.oracle && !two_step {
            return err("oracle applies only to two-step settings");
        }
        if self.domain_adapt {
            if self.family != Family::Gen {
                return err("domain adaptation is defined for the generative family only");
            }
            if !two_step {
                return err("domain adaptation applies only to two-step settings");
            }
            if self.oracle {
                return err("oracle and domain adaptation cannot be combined");
            }
        }
        Ok(())
    }

    /// Every regime of the results grid, in a fixed order.
    pub fn grid() -> Vec<RegimeConfig> {
        let mut out = Vec::new();
        for family in [Family::Disc, Family::Gen] {
            for setting in Setting::ALL {
                out.push(Self::new(family, setting));
            }
            for order in [TaskOrder::ValFirst, TaskOrder::EcFirst] {
                out.push(Self::new(family, Setting::TwoStep(order)).oracle());
            }
        }
        for order in [TaskOrder::ValFirst, TaskOrder::EcFirst] {
            out.push(Self::new(Family::Gen, Setting::TwoStep(order)).domain_adapted());
        }
        out
    }
}

impl fmt::Display for RegimeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.family.name(), self.setting.name())?;
        if self.oracle {
            f.write_str(":oracle")?;
        }
        if self.domain_adapt {
            f.write_str(":domain-adapt")?;
        }
        Ok(())
    }
}

impl FromStr for RegimeConfig {
    type Err = Error;

    fn from_str(id: &str) -> Result<Self> {
        let err = |m: String| Error::Regime { id: id.to_string(), message: m };
        let mut parts = id.split(':');
        let family = match parts.next() {
            Some("disc") => Family::Disc,
            Some("gen") => Family::Gen,
            other => return Err(err(format!("unknown model family {:?}", other.unwrap_or("")))),
        };
        let setting_name = parts.next().ok_or_else(|| err("missing setting".into()))?;
        let setting = Setting::ALL
            .into_iter()
            .find(|s| s.name() == setting_name)
            .ok_or_else(|| err(format!("unknown setting `{setting_name}`")))?;
        let mut regime = Self::new(family, setting);
        for flag in parts {
            match flag {
                "oracle" if !regime.oracle && !regime.domain_adapt => regime.oracle = true,
                "domain-adapt" if !regime.domain_adapt => regime.domain_adapt = true,
                other => return Err(err(format!("unexpected suffix `{other}`"))),
            }
        }
        regime.validate()?;
        Ok(regime)
    }
}
