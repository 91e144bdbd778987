//! Ablation presets B1..B7 and the architecture/loss toggles they imply.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::SodError;

/// Which map the first decoder predicts, if the model is cascaded at all.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cascade {
    /// One decoder predicting saliency directly.
    Direct,
    /// Detail map first, body map filled in second.
    DetailFirst,
    /// Body map first, detail map refined second.
    BodyFirst,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchToggles {
    pub cascade: Cascade,
    pub mdab: bool,
    pub mbab: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossFlags {
    pub ssim: bool,
    pub iou_f: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(try_from = "String")]
pub enum Preset {
    B1,
    B2,
    B3,
    B4,
    B5,
    B6,
    B7,
}

impl Preset {
    pub const ALL: [Preset; 7] = [Preset::B1, Preset::B2, Preset::B3, Preset::B4, Preset::B5, Preset::B6, Preset::B7];

    pub fn arch(self) -> ArchToggles {
        use Preset::*;
        let cascade = match self {
            B1 => Cascade::Direct,
            B2 => Cascade::BodyFirst,
            _ => Cascade::DetailFirst,
        };
        ArchToggles { cascade, mdab: matches!(self, B6 | B7), mbab: self == B7 }
    }

    pub fn losses(self) -> LossFlags {
        use Preset::*;
        LossFlags { ssim: matches!(self, B4 | B5 | B6 | B7), iou_f: matches!(self, B5 | B6 | B7) }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Preset::B1 => "Baseline",
            Preset::B2 => "B1 + Body Map -> Detail Map",
            Preset::B3 => "B1 + Detail Map -> Body Map",
            Preset::B4 => "B3 + SSIM on Detail Map",
            Preset::B5 => "B4 + IoU and F on Body Map",
            Preset::B6 => "B5 + MDAB",
            Preset::B7 => "B6 + MBAB",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Preset {
    type Err = SodError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "B1" => Ok(Preset::B1),
            "B2" => Ok(Preset::B2),
            "B3" => Ok(Preset::B3),
            "B4" => Ok(Preset::B4),
            "B5" => Ok(Preset::B5),
            "B6" => Ok(Preset::B6),
            "B7" | "FULL" => Ok(Preset::B7),
            other => Err(SodError::Config(format!("unknown preset `{other}` (expected B1..B7 or full)"))),
        }
    }
}

impl TryFrom<String> for Preset {
    type Error = SodError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_cumulative() {
        assert_eq!(Preset::B1.arch().cascade, Cascade::Direct);
        assert_eq!(Preset::B2.arch().cascade, Cascade::BodyFirst);
        assert!(!Preset::B5.arch().mdab && Preset::B6.arch().mdab && !Preset::B6.arch().mbab);
        assert!(Preset::B7.arch().mbab && Preset::B7.losses().ssim && Preset::B7.losses().iou_f);
        assert!(Preset::B4.losses().ssim && !Preset::B4.losses().iou_f);
        assert!(!Preset::B3.losses().ssim);
        assert_eq!("full".parse::<Preset>().unwrap(), Preset::B7);
        assert!("B9".parse::<Preset>().is_err());
    }
}
