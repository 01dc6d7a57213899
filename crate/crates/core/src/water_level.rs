//! Water depth from a sedan wheel used as an in-scene ruler.
//!
//! Image rows grow downward. For a wheel bounding box spanning rows
//! `top..bottom` (`T_px = bottom - top`), the submerged fraction of the wheel is
//!
//! ```text
//! F_h = F_px / T_px = 1 - T'_px / T_px
//! ```
//!
//! where `F_px = bottom - waterline` is the submerged height and `T'_px` the
//! visible (dry) height of the segmented wheel. Depth in centimeters is
//! `F_L = F_h * D_wheel`, with the wheel diameter derived from the tire
//! sidewall marking:
//!
//! ```text
//! D_wheel = rim_in * 2.54 + 2 * (width_mm / 10) * (aspect_pct / 100)
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Depth above which a flooded location qualifies for disaster compensation.
pub const COMPENSATION_DEPTH_CM: f64 = 50.0;
/// Default coarse grading threshold in wheel units.
pub const GRADE_THRESHOLD: f64 = 1.0 / 3.0;
/// Fraction of the vehicle box height, measured from its bottom edge, in
/// which wheels are expected.
pub const DEFAULT_LOWER_BAND: f64 = 0.4;

const CM_PER_INCH: f64 = 2.54;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WaterLevelError {
    #[error("malformed tire marking `{0}` (expected e.g. 215/60R16)")]
    Marking(String),
    #[error("invalid tire spec: {0}")]
    TireSpec(String),
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("observation has neither a waterline nor a wheel mask")]
    InsufficientObservation,
}

/// Tire size as printed on the sidewall, e.g. `215/60R16`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TireSpec {
    pub width_mm: f64,
    pub aspect_pct: f64,
    pub rim_in: f64,
}

impl TireSpec {
    /// The common passenger sedan tire assumed when nothing else is known.
    pub const SEDAN_DEFAULT: TireSpec = TireSpec {
        width_mm: 215.0,
        aspect_pct: 60.0,
        rim_in: 16.0,
    };

    pub fn new(width_mm: f64, aspect_pct: f64, rim_in: f64) -> Result<Self, WaterLevelError> {
        if !(width_mm > 0.0 && width_mm.is_finite()) {
            return Err(WaterLevelError::TireSpec(format!("width {width_mm} mm")));
        }
        if !(aspect_pct > 0.0 && aspect_pct <= 100.0) {
            return Err(WaterLevelError::TireSpec(format!("aspect ratio {aspect_pct}%")));
        }
        if !(rim_in > 0.0 && rim_in.is_finite()) {
            return Err(WaterLevelError::TireSpec(format!("rim {rim_in} in")));
        }
        Ok(Self {
            width_mm,
            aspect_pct,
            rim_in,
        })
    }

    /// Sidewall height in centimeters.
    pub fn sidewall_cm(&self) -> f64 {
        self.width_mm / 10.0 * (self.aspect_pct / 100.0)
    }

    pub fn wheel_diameter_cm(&self) -> f64 {
        wheel_diameter(self)
    }
}

impl Default for TireSpec {
    fn default() -> Self {
        Self::SEDAN_DEFAULT
    }
}

impl fmt::Display for TireSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}R{}", self.width_mm, self.aspect_pct, self.rim_in)
    }
}

impl FromStr for TireSpec {
    type Err = WaterLevelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_tire_marking(s)
    }
}

/// Parses `W/A{construction}D` markings such as `215/60R16` or `215/60/R16`.
pub fn parse_tire_marking(text: &str) -> Result<TireSpec, WaterLevelError> {
    let bad = || WaterLevelError::Marking(text.to_string());
    let s = text.trim();
    let (width, rest) = s.split_once('/').ok_or_else(bad)?;
    let letter_at = rest.find(|c: char| c.is_ascii_alphabetic()).ok_or_else(bad)?;
    let aspect = rest[..letter_at].strip_suffix('/').unwrap_or(&rest[..letter_at]);
    let after = &rest[letter_at..];
    // Construction code: `R`, `D`, or with a speed letter as in `ZR`.
    let rim = after.trim_start_matches(|c: char| c.is_ascii_alphabetic());
    if after.len() - rim.len() > 2 {
        return Err(bad());
    }
    let num = |t: &str| -> Result<f64, WaterLevelError> {
        if t.is_empty() || !t.chars().all(|c| c.is_ascii_digit() || c == '.') {
            return Err(bad());
        }
        t.parse::<f64>().map_err(|_| bad())
    };
    TireSpec::new(num(width)?, num(aspect)?, num(rim)?)
}

/// Full wheel diameter in centimeters: rim plus two sidewalls.
pub fn wheel_diameter(spec: &TireSpec) -> f64 {
    spec.rim_in * CM_PER_INCH + 2.0 * spec.sidewall_cm()
}

/// Axis-aligned image rectangle, `x0 <= x1`, `y0 <= y1`, rows growing downward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        other.x0 >= self.x0 && other.x1 <= self.x1 && other.y0 >= self.y0 && other.y1 <= self.y1
    }
}

/// One detected wheel and whatever the detector saw of the water on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WheelObservation {
    pub tvid: String,
    pub bbox: BoundingBox,
    /// Row of the water's upper bound inside the box.
    pub waterline_row: Option<f64>,
    /// `(top, bottom)` rows of the visible part of the segmented wheel.
    pub visible_mask_rows: Option<(f64, f64)>,
}

impl WheelObservation {
    /// Observation spanning `top..bottom` rows with no water information yet.
    pub fn rows(tvid: impl Into<String>, top: f64, bottom: f64) -> Self {
        Self {
            tvid: tvid.into(),
            bbox: BoundingBox::new(0.0, top, 0.0, bottom),
            waterline_row: None,
            visible_mask_rows: None,
        }
    }

    pub fn with_waterline(mut self, row: f64) -> Self {
        self.waterline_row = Some(row);
        self
    }

    pub fn with_mask(mut self, top: f64, bottom: f64) -> Self {
        self.visible_mask_rows = Some((top, bottom));
        self
    }

    pub fn box_top(&self) -> f64 {
        self.bbox.y0
    }

    pub fn box_bottom(&self) -> f64 {
        self.bbox.y1
    }

    /// Whole-wheel height in pixels.
    pub fn wheel_px(&self) -> f64 {
        self.bbox.height()
    }

    pub fn validate(&self) -> Result<(), WaterLevelError> {
        let (top, bottom) = (self.box_top(), self.box_bottom());
        if bottom.is_nan() || top.is_nan() || bottom <= top {
            return Err(WaterLevelError::InvalidObservation(format!(
                "box bottom {bottom} not below top {top}"
            )));
        }
        if let Some(w) = self.waterline_row {
            if !(top..=bottom).contains(&w) {
                return Err(WaterLevelError::InvalidObservation(format!(
                    "waterline {w} outside box rows [{top}, {bottom}]"
                )));
            }
        }
        if let Some((mt, mb)) = self.visible_mask_rows {
            if mb.is_nan() || mt.is_nan() || mb < mt {
                return Err(WaterLevelError::InvalidObservation(format!(
                    "mask rows ({mt}, {mb}) inverted"
                )));
            }
        }
        Ok(())
    }
}

/// Submerged fraction of the wheel, in `[0, 1]`.
///
/// A waterline takes precedence over a mask when both are present.
pub fn flood_fraction(obs: &WheelObservation) -> Result<f64, WaterLevelError> {
    let total = obs.wheel_px();
    if total.is_nan() || total <= 0.0 {
        return Err(WaterLevelError::InvalidObservation(format!(
            "wheel height {total} px"
        )));
    }
    let f = if let Some(w) = obs.waterline_row {
        (obs.box_bottom() - w) / total
    } else if let Some((top, bottom)) = obs.visible_mask_rows {
        1.0 - (bottom - top) / total
    } else {
        return Err(WaterLevelError::InsufficientObservation);
    };
    Ok(f.clamp(0.0, 1.0))
}

pub fn flood_depth(flood_fraction: f64, spec: &TireSpec) -> f64 {
    depth_for_diameter(flood_fraction, wheel_diameter(spec))
}

pub fn depth_for_diameter(flood_fraction: f64, wheel_diameter_cm: f64) -> f64 {
    flood_fraction * wheel_diameter_cm
}

pub fn compensation_flag(depth_cm: f64) -> bool {
    depth_cm > COMPENSATION_DEPTH_CM
}

/// What the wheel is assumed to measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WheelReference {
    Tire(TireSpec),
    /// Explicit diameter in centimeters.
    Diameter(f64),
}

impl WheelReference {
    pub fn diameter_cm(&self) -> f64 {
        match self {
            WheelReference::Tire(spec) => wheel_diameter(spec),
            WheelReference::Diameter(d) => *d,
        }
    }

    pub fn tire(&self) -> Option<TireSpec> {
        match self {
            WheelReference::Tire(spec) => Some(*spec),
            WheelReference::Diameter(_) => None,
        }
    }
}

impl Default for WheelReference {
    fn default() -> Self {
        WheelReference::Tire(TireSpec::SEDAN_DEFAULT)
    }
}

/// How several wheels of one vehicle are fused into a single reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WheelAggregation {
    /// The wheel with the largest pixel height.
    #[default]
    LargestWheel,
    /// Mean of the per-wheel fractions.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradingConfig {
    pub reference: WheelReference,
    pub aggregation: WheelAggregation,
    pub lower_band: f64,
    pub threshold: f64,
}

impl Default for GradingConfig {
    fn default() -> Self {
        Self {
            reference: WheelReference::default(),
            aggregation: WheelAggregation::default(),
            lower_band: DEFAULT_LOWER_BAND,
            threshold: GRADE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grade {
    Dry,
    FloodedAboveThird,
    /// A vehicle with no visible wheels: possibly submerged past the wheels.
    Exception,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaterLevelEstimate {
    pub flood_fraction: f64,
    pub depth_cm: f64,
    pub wheel_diameter_cm: f64,
    pub grade: Grade,
    pub compensation: bool,
    pub tire: Option<TireSpec>,
}

impl WaterLevelEstimate {
    pub fn from_fraction(flood_fraction: f64, config: &GradingConfig) -> Self {
        let d = config.reference.diameter_cm();
        let depth = depth_for_diameter(flood_fraction, d);
        Self {
            flood_fraction,
            depth_cm: depth,
            wheel_diameter_cm: d,
            grade: if flood_fraction >= config.threshold {
                Grade::FloodedAboveThird
            } else {
                Grade::Dry
            },
            compensation: compensation_flag(depth),
            tire: config.reference.tire(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleContext {
    pub vehicle_box: BoundingBox,
    pub wheels: Vec<WheelObservation>,
}

impl VehicleContext {
    pub fn new(vehicle_box: BoundingBox, wheels: Vec<WheelObservation>) -> Result<Self, WaterLevelError> {
        for w in &wheels {
            w.validate()?;
            if !vehicle_box.contains(&w.bbox) {
                return Err(WaterLevelError::InvalidObservation(format!(
                    "wheel box {:?} outside vehicle box {:?}",
                    w.bbox, vehicle_box
                )));
            }
        }
        Ok(Self { vehicle_box, wheels })
    }

    /// Wheels whose vertical center lies in the lower band of the vehicle box.
    pub fn wheels_in_band(&self, lower_band: f64) -> impl Iterator<Item = &WheelObservation> {
        let band_top = self.vehicle_box.y1 - lower_band * self.vehicle_box.height();
        self.wheels
            .iter()
            .filter(move |w| (w.box_top() + w.box_bottom()) / 2.0 >= band_top)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradeOutcome {
    pub grade: Grade,
    pub estimate: Option<WaterLevelEstimate>,
}

/// Grades one vehicle.
///
/// A wheel reported without waterline or mask counts as showing no water.
pub fn grade(ctx: &VehicleContext, config: &GradingConfig) -> GradeOutcome {
    let wheels: Vec<&WheelObservation> = ctx.wheels_in_band(config.lower_band).collect();
    if wheels.is_empty() {
        return GradeOutcome {
            grade: Grade::Exception,
            estimate: None,
        };
    }
    let fraction_of = |w: &WheelObservation| flood_fraction(w).unwrap_or(0.0);
    let fraction = match config.aggregation {
        WheelAggregation::LargestWheel => {
            let best = wheels
                .iter()
                .copied()
                .max_by(|a, b| a.wheel_px().total_cmp(&b.wheel_px()))
                .expect("non-empty");
            fraction_of(best)
        }
        WheelAggregation::Mean => {
            wheels.iter().map(|w| fraction_of(w)).sum::<f64>() / wheels.len() as f64
        }
    };
    let estimate = WaterLevelEstimate::from_fraction(fraction, config);
    GradeOutcome {
        grade: estimate.grade,
        estimate: Some(estimate),
    }
}

/// Folds per-vehicle outcomes of one frame into a single reading: any
/// exception wins, otherwise the deepest estimate. `None` when no vehicle was
/// detected.
pub fn grade_frame(vehicles: &[VehicleContext], config: &GradingConfig) -> Option<GradeOutcome> {
    let outcomes: Vec<GradeOutcome> = vehicles.iter().map(|v| grade(v, config)).collect();
    if outcomes.is_empty() {
        return None;
    }
    if let Some(exc) = outcomes.iter().find(|o| o.grade == Grade::Exception) {
        return Some(*exc);
    }
    outcomes.into_iter().max_by(|a, b| {
        let fa = a.estimate.map_or(0.0, |e| e.flood_fraction);
        let fb = b.estimate.map_or(0.0, |e| e.flood_fraction);
        fa.total_cmp(&fb)
    })
}
