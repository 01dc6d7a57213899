//! Three-class scene classification behind a pluggable backend.

use std::fmt;
use std::path::Path;

use image::imageops::FilterType;
use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::frame::{self, FrameError};
use crate::plugin::SocketEndpoint;
use crate::scene::{SceneClass, SceneTag};

/// Side length of the square RGB model input.
pub const INPUT_SIZE: u32 = 224;

const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("invalid probabilities: {0}")]
    Probabilities(String),
    #[error("backend failure: {0}")]
    Backend(String),
}

/// Softmax output over (normal, flood, unknown).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilities {
    pub normal: f64,
    pub flood: f64,
    pub unknown: f64,
}

impl ClassProbabilities {
    pub fn new(normal: f64, flood: f64, unknown: f64) -> Result<Self, ClassifierError> {
        let p = Self {
            normal,
            flood,
            unknown,
        };
        if p.as_array().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(ClassifierError::Probabilities(format!("{p:?} outside [0, 1]")));
        }
        let sum: f64 = p.as_array().iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(ClassifierError::Probabilities(format!("{p:?} sums to {sum}")));
        }
        Ok(p)
    }

    /// `mass` on `class`, remainder split evenly over the other two.
    pub fn peaked(class: SceneClass, mass: f64) -> Self {
        let rest = (1.0 - mass) / 2.0;
        let mut p = Self {
            normal: rest,
            flood: rest,
            unknown: rest,
        };
        *p.get_mut(class) = mass;
        p
    }

    pub fn certain(class: SceneClass) -> Self {
        Self::peaked(class, 1.0)
    }

    /// Parses three decimal numbers separated by commas or whitespace,
    /// renormalizing small rounding drift (up to 1e-3) away.
    pub fn parse_decimal(text: &str) -> Result<Self, ClassifierError> {
        let vals: Vec<f64> = text
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| ClassifierError::Probabilities(format!("`{}`: {e}", text.trim())))?;
        let [n, f, u] = vals[..] else {
            return Err(ClassifierError::Probabilities(format!(
                "expected 3 values, got {}",
                vals.len()
            )));
        };
        let sum = n + f + u;
        if !(sum.is_finite() && (sum - 1.0).abs() <= 1e-3) || [n, f, u].iter().any(|v| *v < 0.0) {
            return Err(ClassifierError::Probabilities(format!("`{}` is not a distribution", text.trim())));
        }
        Self::new(n / sum, f / sum, u / sum)
    }

    pub fn get(&self, class: SceneClass) -> f64 {
        match class {
            SceneClass::Normal => self.normal,
            SceneClass::Flood => self.flood,
            SceneClass::Unknown => self.unknown,
        }
    }

    fn get_mut(&mut self, class: SceneClass) -> &mut f64 {
        match class {
            SceneClass::Normal => &mut self.normal,
            SceneClass::Flood => &mut self.flood,
            SceneClass::Unknown => &mut self.unknown,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.normal, self.flood, self.unknown]
    }

    /// Argmax, ties resolved unknown > flood > normal.
    pub fn argmax(&self) -> SceneClass {
        if self.unknown >= self.flood && self.unknown >= self.normal {
            SceneClass::Unknown
        } else if self.flood >= self.normal {
            SceneClass::Flood
        } else {
            SceneClass::Normal
        }
    }

    pub fn percent(&self, class: SceneClass) -> u32 {
        (self.get(class) * 100.0).round() as u32
    }
}

impl fmt::Display for ClassProbabilities {
    /// Renders the winning class with its confidence, e.g. `flood 82%`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let top = self.argmax();
        write!(f, "{top} {}%", self.percent(top))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLabel {
    pub label: SceneClass,
    pub probabilities: ClassProbabilities,
    /// Why the frame was forced to `unknown`, if it was.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<String>,
}

impl SceneLabel {
    pub fn from_probabilities(probabilities: ClassProbabilities) -> Self {
        Self {
            label: probabilities.argmax(),
            probabilities,
            annotation: None,
        }
    }

    pub fn failed(reason: impl Into<String>) -> Self {
        Self {
            label: SceneClass::Unknown,
            probabilities: ClassProbabilities::certain(SceneClass::Unknown),
            annotation: Some(reason.into()),
        }
    }
}

/// A scene classifier. Must be deterministic for identical input bytes.
pub trait ClassifierBackend: Send + Sync {
    fn name(&self) -> &str;

    fn classify(&self, frame: &[u8]) -> Result<ClassProbabilities, ClassifierError>;

    /// Whether `classify` may be called from several threads at once.
    fn concurrent(&self) -> bool {
        true
    }
}

/// Decodes a frame and resizes it (bilinear, aspect not preserved) to the
/// square model input.
pub fn prepare_input(frame_bytes: &[u8]) -> Result<RgbImage, FrameError> {
    let img = frame::decode(frame_bytes)?.to_rgb8();
    Ok(image::imageops::resize(&img, INPUT_SIZE, INPUT_SIZE, FilterType::Triangle))
}

pub fn classify(backend: &dyn ClassifierBackend, frame: &[u8]) -> SceneLabel {
    match backend.classify(frame) {
        Ok(p) => SceneLabel::from_probabilities(p),
        Err(ClassifierError::Frame(e)) => SceneLabel::failed(format!("decode failure: {e}")),
        Err(e) => SceneLabel::failed(e.to_string()),
    }
}

/// Classifies every frame; element `i` of the output belongs to frame `i`.
pub fn classify_batch<F>(backend: &dyn ClassifierBackend, frames: &[F]) -> Vec<SceneLabel>
where
    F: AsRef<[u8]> + Sync,
{
    if backend.concurrent() {
        frames.par_iter().map(|f| classify(backend, f.as_ref())).collect()
    } else {
        frames.iter().map(|f| classify(backend, f.as_ref())).collect()
    }
}

/// Deterministic stand-in model that reads the simulator's scene tag.
///
/// The tag is taken from a JPEG comment segment when present, otherwise from
/// the solid color band over the top rows of the resized input. Frames with
/// no tag are called `unknown`.
#[derive(Debug, Clone, Copy)]
pub struct StubClassifier {
    pub confidence: f64,
}

impl Default for StubClassifier {
    fn default() -> Self {
        Self { confidence: 0.9 }
    }
}

pub fn stub_backend() -> StubClassifier {
    StubClassifier::default()
}

impl StubClassifier {
    pub fn read_tag(&self, frame_bytes: &[u8], input: &RgbImage) -> Option<SceneClass> {
        comment_class(frame_bytes).or_else(|| band_class(input))
    }
}

fn comment_class(frame_bytes: &[u8]) -> Option<SceneClass> {
    frame::comments(frame_bytes)
        .iter()
        .filter_map(|c| std::str::from_utf8(c).ok())
        .find_map(SceneTag::decode)
        .map(|t| t.class)
}

/// Class whose band color covers at least 90% of the sampled top rows.
fn band_class(input: &RgbImage) -> Option<SceneClass> {
    // Rows 2..10 of the 224-row input sit well inside every band.
    let (w, rows) = (input.width(), 2..10u32.min(input.height()));
    let mut counts = [0usize; 3];
    let mut total = 0usize;
    for y in rows {
        for x in 0..w {
            let px = input.get_pixel(x, y).0;
            total += 1;
            for (i, class) in SceneClass::ALL.iter().enumerate() {
                let c = class.band_color();
                if (0..3).all(|k| px[k].abs_diff(c[k]) <= 60) {
                    counts[i] += 1;
                }
            }
        }
    }
    if total == 0 {
        return None;
    }
    SceneClass::ALL
        .iter()
        .zip(counts)
        .find(|(_, n)| *n * 10 >= total * 9)
        .map(|(c, _)| *c)
}

impl ClassifierBackend for StubClassifier {
    fn name(&self) -> &str {
        "stub"
    }

    fn classify(&self, frame: &[u8]) -> Result<ClassProbabilities, ClassifierError> {
        // A comment tag makes the pixels irrelevant; a header probe is enough
        // to reject truncated frames.
        let class = match comment_class(frame) {
            Some(class) => {
                frame::probe(frame)?;
                class
            }
            None => band_class(&prepare_input(frame)?).unwrap_or(SceneClass::Unknown),
        };
        Ok(ClassProbabilities::peaked(class, self.confidence))
    }
}

/// Model served by another process over a local socket.
///
/// Request payload: the encoded frame bytes. Response payload: three decimal
/// probabilities `normal,flood,unknown` as UTF-8 text.
#[derive(Debug, Clone)]
pub struct ExternalClassifier {
    endpoint: SocketEndpoint,
    concurrent: bool,
}

impl ExternalClassifier {
    pub fn new(socket: impl AsRef<Path>) -> Self {
        Self {
            endpoint: SocketEndpoint::new(socket),
            concurrent: true,
        }
    }

    /// Marks the backend as unable to serve overlapping requests.
    pub fn single_threaded(mut self) -> Self {
        self.concurrent = false;
        self
    }
}

impl ClassifierBackend for ExternalClassifier {
    fn name(&self) -> &str {
        "external"
    }

    fn classify(&self, frame_bytes: &[u8]) -> Result<ClassProbabilities, ClassifierError> {
        frame::probe(frame_bytes)?;
        let reply = self
            .endpoint
            .call(frame_bytes)
            .map_err(|e| ClassifierError::Backend(format!("{}: {e}", self.endpoint.path.display())))?;
        let text = String::from_utf8(reply)
            .map_err(|_| ClassifierError::Backend("response is not UTF-8".into()))?;
        ClassProbabilities::parse_decimal(&text)
    }

    fn concurrent(&self) -> bool {
        self.concurrent
    }
}
