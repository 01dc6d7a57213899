//! Scene classes shared by the simulator, the classifier and the map.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The three scene classes a camera frame can be assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneClass {
    Normal,
    Flood,
    Unknown,
}

impl SceneClass {
    pub const ALL: [SceneClass; 3] = [SceneClass::Normal, SceneClass::Flood, SceneClass::Unknown];

    pub fn as_str(self) -> &'static str {
        match self {
            SceneClass::Normal => "normal",
            SceneClass::Flood => "flood",
            SceneClass::Unknown => "unknown",
        }
    }

    /// Solid RGB color of the tag band painted into simulated frames.
    pub fn band_color(self) -> [u8; 3] {
        match self {
            SceneClass::Normal => [0, 255, 0],
            SceneClass::Flood => [0, 0, 255],
            SceneClass::Unknown => [255, 0, 255],
        }
    }
}

impl fmt::Display for SceneClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown scene class `{0}`")]
pub struct UnknownSceneClass(pub String);

impl FromStr for SceneClass {
    type Err = UnknownSceneClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Ok(SceneClass::Normal),
            "flood" | "floods" => Ok(SceneClass::Flood),
            "unknown" => Ok(SceneClass::Unknown),
            _ => Err(UnknownSceneClass(s.to_string())),
        }
    }
}

/// Identity tag embedded in every simulated frame.
///
/// Carried losslessly in a JPEG comment segment as
/// `floodwatch-scenetag/1 class=<class> seq=<n> tvid=<id>`; the class alone is
/// additionally painted as a solid band over the top rows of the image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneTag {
    pub class: SceneClass,
    pub tvid: String,
    pub sequence: u64,
}

const TAG_PREFIX: &str = "floodwatch-scenetag/1";

impl SceneTag {
    pub fn encode(&self) -> String {
        // tvid goes last so it may contain spaces.
        format!(
            "{TAG_PREFIX} class={} seq={} tvid={}",
            self.class, self.sequence, self.tvid
        )
    }

    pub fn decode(text: &str) -> Option<SceneTag> {
        let rest = text.strip_prefix(TAG_PREFIX)?.strip_prefix(' ')?;
        let rest = rest.strip_prefix("class=")?;
        let (class, rest) = rest.split_once(' ')?;
        let rest = rest.strip_prefix("seq=")?;
        let (seq, rest) = rest.split_once(' ')?;
        let tvid = rest.strip_prefix("tvid=")?;
        Some(SceneTag {
            class: class.parse().ok()?,
            sequence: seq.parse().ok()?,
            tvid: tvid.to_string(),
        })
    }
}

/// Height in rows of the class band for a frame of the given height.
pub fn band_rows(height: u32) -> u32 {
    (height / 16).max(8).min(height)
}
