//! Codec taxonomy, per-utterance labels and the four classification tasks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quantizer family of a codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VqKind {
    MultiCodebook,
    SingleCodebook,
    Scalar,
}

/// Auxiliary training objective of a codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxKind {
    None,
    SemanticDistill,
    Disentangle,
}

/// Decoder domain of a codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecKind {
    TimeDomain,
    FreqDomain,
}

impl VqKind {
    pub const ALL: [VqKind; 3] = [VqKind::MultiCodebook, VqKind::SingleCodebook, VqKind::Scalar];
}

impl AuxKind {
    pub const ALL: [AuxKind; 3] = [AuxKind::None, AuxKind::SemanticDistill, AuxKind::Disentangle];
}

impl DecKind {
    pub const ALL: [DecKind; 2] = [DecKind::TimeDomain, DecKind::FreqDomain];
}

/// Full description of a simulated codec.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecProfile {
    pub vq: VqKind,
    pub aux: AuxKind,
    pub dec: DecKind,
    /// Artifact strength in (0, 1].
    pub strength: f64,
}

impl CodecProfile {
    pub fn new(vq: VqKind, aux: AuxKind, dec: DecKind, strength: f64) -> Self {
        Self { vq, aux, dec, strength }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VqLabel {
    Real,
    Mvq,
    Svq,
    Sq,
}

/// `NoAux` marks spoofs whose codec has no auxiliary objective; they carry no
/// AUX-task class and are excluded from AUX sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxLabel {
    Real,
    NoAux,
    SemanticDistill,
    Disentangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecLabel {
    Real,
    Time,
    Freq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinLabel {
    Bonafide,
    Spoof,
}

/// Labels of one utterance for all four tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaxonomyLabel {
    pub vq: VqLabel,
    pub aux: AuxLabel,
    pub dec: DecLabel,
    pub bin: BinLabel,
}

impl TaxonomyLabel {
    pub fn bonafide() -> Self {
        Self {
            vq: VqLabel::Real,
            aux: AuxLabel::Real,
            dec: DecLabel::Real,
            bin: BinLabel::Bonafide,
        }
    }

    pub fn from_profile(p: &CodecProfile) -> Self {
        Self {
            vq: match p.vq {
                VqKind::MultiCodebook => VqLabel::Mvq,
                VqKind::SingleCodebook => VqLabel::Svq,
                VqKind::Scalar => VqLabel::Sq,
            },
            aux: match p.aux {
                AuxKind::None => AuxLabel::NoAux,
                AuxKind::SemanticDistill => AuxLabel::SemanticDistill,
                AuxKind::Disentangle => AuxLabel::Disentangle,
            },
            dec: match p.dec {
                DecKind::TimeDomain => DecLabel::Time,
                DecKind::FreqDomain => DecLabel::Freq,
            },
            bin: BinLabel::Spoof,
        }
    }

    /// Bona fide on one axis iff bona fide on every axis.
    pub fn is_consistent(&self) -> bool {
        let real = [
            self.vq == VqLabel::Real,
            self.aux == AuxLabel::Real,
            self.dec == DecLabel::Real,
            self.bin == BinLabel::Bonafide,
        ];
        real.iter().all(|&r| r) || real.iter().all(|&r| !r)
    }

    pub fn is_bonafide(&self) -> bool {
        self.bin == BinLabel::Bonafide
    }
}

/// One of the four classification tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Vq,
    Aux,
    Dec,
    Bin,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Vq, Task::Aux, Task::Dec, Task::Bin];

    pub fn n_classes(self) -> usize {
        match self {
            Task::Vq => 4,
            Task::Aux | Task::Dec => 3,
            Task::Bin => 2,
        }
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Task::Vq => &["real", "mvq", "svq", "sq"],
            Task::Aux => &["real", "semantic_distill", "disentangle"],
            Task::Dec => &["real", "time", "freq"],
            Task::Bin => &["bonafide", "spoof"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Vq => "vq",
            Task::Aux => "aux",
            Task::Dec => "dec",
            Task::Bin => "bin",
        }
    }

    /// Class index of a label for this task, or `None` when the record is
    /// not eligible for the task.
    pub fn class_of(self, label: &TaxonomyLabel) -> Option<usize> {
        match self {
            Task::Vq => Some(match label.vq {
                VqLabel::Real => 0,
                VqLabel::Mvq => 1,
                VqLabel::Svq => 2,
                VqLabel::Sq => 3,
            }),
            Task::Aux => match label.aux {
                AuxLabel::Real => Some(0),
                AuxLabel::NoAux => None,
                AuxLabel::SemanticDistill => Some(1),
                AuxLabel::Disentangle => Some(2),
            },
            Task::Dec => Some(match label.dec {
                DecLabel::Real => 0,
                DecLabel::Time => 1,
                DecLabel::Freq => 2,
            }),
            Task::Bin => Some(match label.bin {
                BinLabel::Bonafide => 0,
                BinLabel::Spoof => 1,
            }),
        }
    }

    /// Spoof class of a codec profile for this task (`None` if ineligible).
    pub fn class_of_profile(self, p: &CodecProfile) -> Option<usize> {
        self.class_of(&TaxonomyLabel::from_profile(p))
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vq" => Ok(Task::Vq),
            "aux" => Ok(Task::Aux),
            "dec" => Ok(Task::Dec),
            "bin" => Ok(Task::Bin),
            other => Err(Error::config(format!("unknown task `{other}`"))),
        }
    }
}
