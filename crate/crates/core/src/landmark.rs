//! The five facial landmarks and their class ids.
//!
//! Class id 0 is background; landmarks occupy ids 1..=5 in graph-node order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Number of landmark classes (K).
pub const NUM_LANDMARKS: usize = 5;
/// Number of classifier outputs per anchor (K + 1, background first).
pub const NUM_CLASSES: usize = NUM_LANDMARKS + 1;
/// Background class id.
pub const BACKGROUND: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Landmark {
    LeftEye,
    MiddleEyebrow,
    RightEye,
    Nose,
    Chin,
}

impl Landmark {
    pub const ALL: [Landmark; NUM_LANDMARKS] = [
        Landmark::LeftEye,
        Landmark::MiddleEyebrow,
        Landmark::RightEye,
        Landmark::Nose,
        Landmark::Chin,
    ];

    /// Zero-based position in [`Landmark::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    /// Classifier class id (1-based; 0 is background).
    pub fn class_id(self) -> usize {
        self as usize + 1
    }

    pub fn from_index(index: usize) -> Option<Landmark> {
        Self::ALL.get(index).copied()
    }

    pub fn from_class_id(id: usize) -> Option<Landmark> {
        id.checked_sub(1).and_then(Self::from_index)
    }

    pub fn name(self) -> &'static str {
        match self {
            Landmark::LeftEye => "left_eye",
            Landmark::MiddleEyebrow => "middle_eyebrow",
            Landmark::RightEye => "right_eye",
            Landmark::Nose => "nose",
            Landmark::Chin => "chin",
        }
    }

    /// Edge length of the cubic landmark-centred box, in voxels.
    pub fn box_size(self) -> f64 {
        match self {
            Landmark::LeftEye | Landmark::RightEye => 14.0,
            _ => 24.0,
        }
    }

    /// The anatomical mirror image (eyes swap, midline landmarks stay).
    pub fn mirrored(self) -> Landmark {
        match self {
            Landmark::LeftEye => Landmark::RightEye,
            Landmark::RightEye => Landmark::LeftEye,
            other => other,
        }
    }
}

impl fmt::Display for Landmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Landmark {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| format!("unknown landmark `{s}`"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_ids_round_trip() {
        for l in Landmark::ALL {
            assert_eq!(Landmark::from_class_id(l.class_id()), Some(l));
            assert_eq!(l.name().parse::<Landmark>().unwrap(), l);
        }
        assert_eq!(Landmark::from_class_id(BACKGROUND), None);
        assert_eq!(Landmark::from_class_id(6), None);
    }

    #[test]
    fn mirror_is_an_involution() {
        for l in Landmark::ALL {
            assert_eq!(l.mirrored().mirrored(), l);
        }
        assert_eq!(Landmark::LeftEye.mirrored(), Landmark::RightEye);
        assert_eq!(Landmark::Nose.mirrored(), Landmark::Nose);
    }
}
