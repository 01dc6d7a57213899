//! Camera fleet registry.
//!
//! The registry document is a JSON object mapping a source-network key to an
//! array of camera objects:
//!
//! ```json
//! {
//!   "DGH": [
//!     {
//!       "tvid": "thbCCTV-12-0090-037-01",
//!       "Longitude": 121.70156,
//!       "Latitude": 24.93671,
//!       "roadsection": "Provincial Highway 9 (Sec. 8, Beiyi Rd.)",
//!       "url": "http://11.22.33.44/T9-1K+150"
//!     }
//!   ]
//! }
//! ```
//!
//! Two optional extension keys are understood: `"codec"` (`"MJPEG"`, `"JPEG"`
//! or `"FLV"`) and `"resolution"` (`[width, height]`). Any other key is kept
//! verbatim and written back on serialization.

use std::collections::HashMap;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("malformed registry document at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate camera id `{0}`")]
    DuplicateId(String),
    #[error("invalid camera record `{tvid}` in network `{network}`: {reason}")]
    Validation {
        network: String,
        tvid: String,
        reason: String,
    },
}

impl From<serde_json::Error> for RegistryError {
    fn from(e: serde_json::Error) -> Self {
        RegistryError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Codec {
    Mjpeg,
    Jpeg,
    Flv,
}

impl Codec {
    /// Whether the camera serves a continuous multipart stream rather than
    /// single images.
    pub fn is_stream(self) -> bool {
        !matches!(self, Codec::Jpeg)
    }
}

impl fmt::Display for Codec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Codec::Mjpeg => "MJPEG",
            Codec::Jpeg => "JPEG",
            Codec::Flv => "FLV",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub tvid: String,
    pub longitude: f64,
    pub latitude: f64,
    pub roadsection: String,
    pub url: String,
    pub network: String,
    pub codec_hint: Option<Codec>,
    pub resolution_hint: Option<(u32, u32)>,
    /// Unrecognised keys of the source object, in input order.
    pub extra: Map<String, Value>,
}

/// Wire shape of one camera object.
#[derive(Deserialize)]
struct RawCamera {
    tvid: String,
    #[serde(rename = "Longitude")]
    longitude: f64,
    #[serde(rename = "Latitude")]
    latitude: f64,
    roadsection: String,
    url: String,
    #[serde(default)]
    codec: Option<Codec>,
    #[serde(default)]
    resolution: Option<(u32, u32)>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

/// Immutable, indexed camera fleet.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CameraRegistry {
    records: Vec<CameraRecord>,
    by_network: IndexMap<String, Vec<usize>>,
    by_id: HashMap<String, usize>,
}

impl CameraRegistry {
    /// Builds a registry from records, validating every record.
    ///
    /// Networks are indexed in order of first appearance.
    pub fn from_records(records: Vec<CameraRecord>) -> Result<Self, RegistryError> {
        Self::build(records, Vec::new())
    }

    /// As [`from_records`](Self::from_records), but `networks` are indexed
    /// first, in the given order, even when they have no cameras.
    fn build(records: Vec<CameraRecord>, networks: Vec<String>) -> Result<Self, RegistryError> {
        let mut by_network: IndexMap<String, Vec<usize>> = networks.into_iter().map(|k| (k, Vec::new())).collect();
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            validate(rec)?;
            if by_id.insert(rec.tvid.clone(), i).is_some() {
                return Err(RegistryError::DuplicateId(rec.tvid.clone()));
            }
            by_network.entry(rec.network.clone()).or_default().push(i);
        }
        Ok(Self {
            records,
            by_network,
            by_id,
        })
    }

    pub fn records(&self) -> &[CameraRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn lookup(&self, tvid: &str) -> Option<&CameraRecord> {
        self.by_id.get(tvid).map(|&i| &self.records[i])
    }

    /// Records of one network, in input order.
    pub fn network(&self, key: &str) -> impl Iterator<Item = &CameraRecord> {
        self.by_network
            .get(key)
            .into_iter()
            .flatten()
            .map(|&i| &self.records[i])
    }

    /// One `(network, count)` row per network key, in document order.
    pub fn network_summary(&self) -> Vec<(String, usize)> {
        self.by_network
            .iter()
            .map(|(k, v)| (k.clone(), v.len()))
            .collect()
    }

    /// Serializes back to the registry document shape.
    pub fn to_document(&self) -> String {
        let mut doc = Map::new();
        for (network, idx) in &self.by_network {
            let cams = idx
                .iter()
                .map(|&i| camera_to_value(&self.records[i]))
                .collect();
            doc.insert(network.clone(), Value::Array(cams));
        }
        serde_json::to_string_pretty(&Value::Object(doc)).expect("registry serializes")
    }
}

fn camera_to_value(rec: &CameraRecord) -> Value {
    let mut obj = Map::new();
    obj.insert("tvid".into(), rec.tvid.clone().into());
    obj.insert("Longitude".into(), rec.longitude.into());
    obj.insert("Latitude".into(), rec.latitude.into());
    obj.insert("roadsection".into(), rec.roadsection.clone().into());
    obj.insert("url".into(), rec.url.clone().into());
    if let Some(codec) = rec.codec_hint {
        obj.insert("codec".into(), codec.to_string().into());
    }
    if let Some((w, h)) = rec.resolution_hint {
        obj.insert("resolution".into(), serde_json::json!([w, h]));
    }
    for (k, v) in &rec.extra {
        obj.insert(k.clone(), v.clone());
    }
    Value::Object(obj)
}

fn validate(rec: &CameraRecord) -> Result<(), RegistryError> {
    let fail = |reason: String| RegistryError::Validation {
        network: rec.network.clone(),
        tvid: rec.tvid.clone(),
        reason,
    };
    if !(-180.0..=180.0).contains(&rec.longitude) {
        return Err(fail(format!("longitude {} outside [-180, 180]", rec.longitude)));
    }
    if !(-90.0..=90.0).contains(&rec.latitude) {
        return Err(fail(format!("latitude {} outside [-90, 90]", rec.latitude)));
    }
    if rec.url.trim().is_empty() {
        return Err(fail("empty url".into()));
    }
    url::Url::parse(&rec.url).map_err(|e| fail(format!("url `{}`: {e}", rec.url)))?;
    Ok(())
}

/// Parses a registry document. Trailing commas and other JSON extensions are
/// rejected; see [`parse_registry_lenient`] for hand-edited documents.
pub fn parse_registry(text: &str) -> Result<CameraRegistry, RegistryError> {
    let raw: IndexMap<String, Vec<RawCamera>> = serde_json::from_str(text)?;
    let networks: Vec<String> = raw.keys().cloned().collect();
    let mut records = Vec::new();
    for (network, cams) in raw {
        for cam in cams {
            records.push(CameraRecord {
                tvid: cam.tvid,
                longitude: cam.longitude,
                latitude: cam.latitude,
                roadsection: cam.roadsection,
                url: cam.url,
                network: network.clone(),
                codec_hint: cam.codec,
                resolution_hint: cam.resolution,
                extra: cam.extra,
            });
        }
    }
    CameraRegistry::build(records, networks)
}

/// Parses a hand-edited registry document.
///
/// Accepts, in addition to strict JSON: a leading `Name =` assignment,
/// lines consisting only of `...` (elision placeholders), and trailing commas
/// before `}` or `]`.
pub fn parse_registry_lenient(text: &str) -> Result<CameraRegistry, RegistryError> {
    parse_registry(&relax(text))
}

fn relax(text: &str) -> String {
    let mut body = text.trim_start();
    if let Some(eq) = body.find('=') {
        let head = &body[..eq];
        if !head.is_empty() && head.trim().chars().all(|c| c.is_alphanumeric() || c == '_') {
            body = &body[eq + 1..];
        }
    }
    let mut out = String::with_capacity(body.len());
    for line in body.lines() {
        let t = line.trim();
        if t == "..." || t == "...," {
            out.push('\n');
        } else {
            out.push_str(line);
            out.push('\n');
        }
    }
    strip_trailing_commas(&out)
}

fn strip_trailing_commas(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    let mut in_str = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_str {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            continue;
        }
        match c {
            '"' => {
                in_str = true;
                out.push(c);
            }
            ',' => {
                let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
                if !matches!(next, Some('}') | Some(']')) {
                    out.push(c);
                }
            }
            _ => out.push(c),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: &str = r#"{
      "DGH": [
        {
          "tvid": "thbCCTV-12-0090-037-01",
          "Longitude": 121.70156,
          "Latitude": 24.93671,
          "roadsection": "Provincial Highway 9 (Sec. 8, Beiyi Rd.)",
          "url": "http://11.22.33.44/T9-1K+150"
        }
      ]
    }"#;

    #[test]
    fn parses_single_record() {
        let reg = parse_registry(ONE).unwrap();
        assert_eq!(reg.len(), 1);
        assert_eq!(reg.network_summary(), vec![("DGH".to_string(), 1)]);
        let rec = reg.lookup("thbCCTV-12-0090-037-01").unwrap();
        assert_eq!(rec.longitude, 121.70156);
        assert_eq!(rec.latitude, 24.93671);
        assert_eq!(rec.network, "DGH");
        assert_eq!(rec.codec_hint, None);
    }

    #[test]
    fn empty_network_list() {
        let reg = parse_registry(r#"{"DGH": []}"#).unwrap();
        assert!(reg.is_empty());
        assert_eq!(reg.network_summary(), vec![("DGH".to_string(), 0)]);
        assert!(reg.lookup("anything").is_none());
        assert_eq!(parse_registry(&reg.to_document()).unwrap(), reg);
    }

    #[test]
    fn duplicate_ids_across_networks() {
        let doc = r#"{
          "A": [{"tvid":"X","Longitude":1,"Latitude":1,"roadsection":"r","url":"http://a/1"}],
          "B": [{"tvid":"X","Longitude":2,"Latitude":2,"roadsection":"r","url":"http://a/2"}]
        }"#;
        match parse_registry(doc) {
            Err(RegistryError::DuplicateId(id)) => assert_eq!(id, "X"),
            other => panic!("expected duplicate id, got {other:?}"),
        }
    }

    #[test]
    fn coordinate_out_of_range() {
        let doc = r#"{"A": [{"tvid":"far","Longitude":190.0,"Latitude":1,"roadsection":"r","url":"http://a/1"}]}"#;
        match parse_registry(doc) {
            Err(RegistryError::Validation { tvid, .. }) => assert_eq!(tvid, "far"),
            other => panic!("expected validation error, got {other:?}"),
        }
        let doc = r#"{"A": [{"tvid":"pole","Longitude":0,"Latitude":-90.5,"roadsection":"r","url":"http://a/1"}]}"#;
        assert!(matches!(parse_registry(doc), Err(RegistryError::Validation { .. })));
    }

    #[test]
    fn bad_url() {
        let doc = r#"{"A": [{"tvid":"u","Longitude":0,"Latitude":0,"roadsection":"r","url":""}]}"#;
        assert!(matches!(parse_registry(doc), Err(RegistryError::Validation { .. })));
        let doc = r#"{"A": [{"tvid":"u","Longitude":0,"Latitude":0,"roadsection":"r","url":"not a uri"}]}"#;
        assert!(matches!(parse_registry(doc), Err(RegistryError::Validation { .. })));
    }

    #[test]
    fn malformed_reports_location() {
        let doc = "{\n  \"A\": [\n    {\"tvid\": 3}\n  ]\n}";
        match parse_registry(doc) {
            Err(RegistryError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn strict_rejects_trailing_comma_lenient_accepts() {
        let doc = r#"{"A": [{"tvid":"t","Longitude":0,"Latitude":0,"roadsection":"r","url":"http://x/",},]}"#;
        assert!(matches!(parse_registry(doc), Err(RegistryError::Parse { .. })));
        let reg = parse_registry_lenient(doc).unwrap();
        assert_eq!(reg.len(), 1);
    }

    #[test]
    fn lenient_keeps_commas_inside_strings() {
        let doc = r#"IoC = {"A": [{"tvid":"t","Longitude":0,"Latitude":0,"roadsection":"Sec. 8, ]Rd.","url":"http://x/"}]}"#;
        let reg = parse_registry_lenient(doc).unwrap();
        assert_eq!(reg.records()[0].roadsection, "Sec. 8, ]Rd.");
    }

    #[test]
    fn extension_and_extra_fields_survive() {
        let doc = r#"{"KC": [{"tvid":"k","Longitude":120.3,"Latitude":22.6,"roadsection":"r",
            "url":"http://x/","codec":"JPEG","resolution":[640,480],"owner":{"dept":"traffic"}}]}"#;
        let reg = parse_registry(doc).unwrap();
        let rec = reg.lookup("k").unwrap();
        assert_eq!(rec.codec_hint, Some(Codec::Jpeg));
        assert_eq!(rec.resolution_hint, Some((640, 480)));
        assert_eq!(rec.extra["owner"]["dept"], "traffic");
        let back = parse_registry(&reg.to_document()).unwrap();
        assert_eq!(back, reg);
    }

    #[test]
    fn preserves_network_and_record_order() {
        let doc = r#"{
          "ZZ": [{"tvid":"z2","Longitude":0,"Latitude":0,"roadsection":"r","url":"http://x/2"},
                 {"tvid":"z1","Longitude":0,"Latitude":0,"roadsection":"r","url":"http://x/1"}],
          "AA": [{"tvid":"a","Longitude":0,"Latitude":0,"roadsection":"r","url":"http://x/3"}]
        }"#;
        let reg = parse_registry(doc).unwrap();
        let keys: Vec<_> = reg.network_summary().into_iter().map(|(k, _)| k).collect();
        assert_eq!(keys, ["ZZ", "AA"]);
        let ids: Vec<_> = reg.network("ZZ").map(|r| r.tvid.as_str()).collect();
        assert_eq!(ids, ["z2", "z1"]);
    }
}
