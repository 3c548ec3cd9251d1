use std::collections::BTreeMap;
use std::fmt;

use super::{DicomError, REQUIRED_IDENTIFIERS};

/// A DICOM attribute tag, ordered by (group, element).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tag {
    pub group: u16,
    pub element: u16,
}

impl Tag {
    pub const fn new(group: u16, element: u16) -> Self {
        Tag { group, element }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:04X},{:04X})", self.group, self.element)
    }
}

/// Value representation. The named variants are the supported subset; any
/// other standard code is carried as `Other` with an opaque byte payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[allow(clippy::upper_case_acronyms)]
pub enum Vr {
    AE,
    AS,
    CS,
    DA,
    DS,
    DT,
    IS,
    LO,
    LT,
    PN,
    SH,
    ST,
    TM,
    UI,
    UL,
    US,
    SS,
    SL,
    FL,
    FD,
    OB,
    OW,
    UN,
    SQ,
    Other([u8; 2]),
}

const OTHER_STANDARD_CODES: [&[u8; 2]; 10] = [
    b"AT", b"OD", b"OF", b"OL", b"OV", b"SV", b"UC", b"UR", b"UT", b"UV",
];

impl Vr {
    pub const SUPPORTED: [Vr; 24] = [
        Vr::AE,
        Vr::AS,
        Vr::CS,
        Vr::DA,
        Vr::DS,
        Vr::DT,
        Vr::IS,
        Vr::LO,
        Vr::LT,
        Vr::PN,
        Vr::SH,
        Vr::ST,
        Vr::TM,
        Vr::UI,
        Vr::UL,
        Vr::US,
        Vr::SS,
        Vr::SL,
        Vr::FL,
        Vr::FD,
        Vr::OB,
        Vr::OW,
        Vr::UN,
        Vr::SQ,
    ];

    /// Parses a two-letter code. Returns `None` for anything that is not a
    /// standard VR.
    pub fn from_code(code: [u8; 2]) -> Option<Vr> {
        Vr::SUPPORTED
            .iter()
            .copied()
            .find(|vr| vr.code() == code)
            .or_else(|| {
                OTHER_STANDARD_CODES
                    .iter()
                    .any(|c| **c == code)
                    .then_some(Vr::Other(code))
            })
    }

    pub fn code(self) -> [u8; 2] {
        match self {
            Vr::AE => *b"AE",
            Vr::AS => *b"AS",
            Vr::CS => *b"CS",
            Vr::DA => *b"DA",
            Vr::DS => *b"DS",
            Vr::DT => *b"DT",
            Vr::IS => *b"IS",
            Vr::LO => *b"LO",
            Vr::LT => *b"LT",
            Vr::PN => *b"PN",
            Vr::SH => *b"SH",
            Vr::ST => *b"ST",
            Vr::TM => *b"TM",
            Vr::UI => *b"UI",
            Vr::UL => *b"UL",
            Vr::US => *b"US",
            Vr::SS => *b"SS",
            Vr::SL => *b"SL",
            Vr::FL => *b"FL",
            Vr::FD => *b"FD",
            Vr::OB => *b"OB",
            Vr::OW => *b"OW",
            Vr::UN => *b"UN",
            Vr::SQ => *b"SQ",
            Vr::Other(code) => code,
        }
    }

    pub fn as_str(self) -> String {
        String::from_utf8_lossy(&self.code()).into_owned()
    }

    /// Explicit-VR encodings with a 2-byte reserved field and a 32-bit length.
    pub fn has_long_length(self) -> bool {
        matches!(self, Vr::OB | Vr::OW | Vr::UN | Vr::SQ)
            || matches!(
                self,
                Vr::Other(c) if matches!(&c, b"OD" | b"OF" | b"OL" | b"OV" | b"SV" | b"UC" | b"UR" | b"UT" | b"UV")
            )
    }

    pub fn is_supported(self) -> bool {
        !matches!(self, Vr::Other(_))
    }

    fn is_string(self) -> bool {
        matches!(
            self,
            Vr::AE
                | Vr::AS
                | Vr::CS
                | Vr::DA
                | Vr::DS
                | Vr::DT
                | Vr::IS
                | Vr::LO
                | Vr::LT
                | Vr::PN
                | Vr::SH
                | Vr::ST
                | Vr::TM
                | Vr::UI
        )
    }

    /// Text VRs that hold a single value and keep leading spaces.
    fn is_text(self) -> bool {
        matches!(self, Vr::LT | Vr::ST)
    }
}

impl fmt::Display for Vr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str())
    }
}

/// Decoded element value. The variant is determined by the VR.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Str(Vec<String>),
    U16(Vec<u16>),
    I16(Vec<i16>),
    U32(Vec<u32>),
    I32(Vec<i32>),
    F32(Vec<f32>),
    F64(Vec<f64>),
    Bytes(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub tag: Tag,
    pub vr: Vr,
    pub value: Value,
}

macro_rules! numeric_codec {
    ($raw:expr, $tag:expr, $ty:ty, $variant:ident) => {{
        const N: usize = std::mem::size_of::<$ty>();
        if $raw.len() % N != 0 {
            return Err(DicomError::MalformedValue {
                tag: $tag,
                reason: format!("length {} is not a multiple of {}", $raw.len(), N),
            });
        }
        Value::$variant(
            $raw.chunks_exact(N)
                .map(|c| <$ty>::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    }};
}

impl Element {
    pub fn new(tag: Tag, vr: Vr, value: Value) -> Self {
        Element { tag, vr, value }
    }

    /// Single-valued string element.
    pub fn string(tag: Tag, vr: Vr, s: impl Into<String>) -> Self {
        Element::new(tag, vr, Value::Str(vec![s.into()]))
    }

    pub fn strings<S: Into<String>>(tag: Tag, vr: Vr, values: impl IntoIterator<Item = S>) -> Self {
        Element::new(tag, vr, Value::Str(values.into_iter().map(Into::into).collect()))
    }

    /// Decimal string element formatted from numbers.
    pub fn decimals(tag: Tag, values: &[f64]) -> Self {
        Element::strings(tag, Vr::DS, values.iter().map(|v| format_ds(*v)))
    }

    pub fn u16(tag: Tag, value: u16) -> Self {
        Element::new(tag, Vr::US, Value::U16(vec![value]))
    }

    pub fn bytes(tag: Tag, vr: Vr, bytes: Vec<u8>) -> Self {
        Element::new(tag, vr, Value::Bytes(bytes))
    }

    /// Decodes a raw little-endian payload according to `vr`.
    pub fn decode(tag: Tag, vr: Vr, raw: &[u8]) -> Result<Self, DicomError> {
        let value = match vr {
            Vr::US => numeric_codec!(raw, tag, u16, U16),
            Vr::SS => numeric_codec!(raw, tag, i16, I16),
            Vr::UL => numeric_codec!(raw, tag, u32, U32),
            Vr::SL => numeric_codec!(raw, tag, i32, I32),
            Vr::FL => numeric_codec!(raw, tag, f32, F32),
            Vr::FD => numeric_codec!(raw, tag, f64, F64),
            vr if vr.is_string() => Value::Str(decode_strings(vr, raw)),
            _ => Value::Bytes(raw.to_vec()),
        };
        Ok(Element { tag, vr, value })
    }

    /// Encodes the value to its padded (even-length) little-endian payload.
    pub fn encode(&self) -> Result<Vec<u8>, DicomError> {
        let mismatch = || DicomError::MalformedValue {
            tag: self.tag,
            reason: format!("value variant does not match VR {}", self.vr),
        };
        let mut out = match (&self.value, self.vr) {
            (Value::Str(values), vr) if vr.is_string() => {
                if !vr.is_text() && values.iter().any(|v| v.contains('\\')) {
                    return Err(DicomError::MalformedValue {
                        tag: self.tag,
                        reason: "backslash inside a multi-valued string".into(),
                    });
                }
                if vr.is_text() && values.len() > 1 {
                    return Err(DicomError::MalformedValue {
                        tag: self.tag,
                        reason: format!("{vr} holds a single value"),
                    });
                }
                values.join("\\").into_bytes()
            }
            (Value::U16(v), Vr::US) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            (Value::I16(v), Vr::SS) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            (Value::U32(v), Vr::UL) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            (Value::I32(v), Vr::SL) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            (Value::F32(v), Vr::FL) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            (Value::F64(v), Vr::FD) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            (Value::Bytes(b), Vr::OB | Vr::OW | Vr::UN | Vr::SQ | Vr::Other(_)) => b.clone(),
            _ => return Err(mismatch()),
        };
        if out.len() % 2 == 1 {
            out.push(if self.vr == Vr::UI || !self.vr.is_string() { 0 } else { b' ' });
        }
        Ok(out)
    }

    pub fn strings_view(&self) -> Option<&[String]> {
        match &self.value {
            Value::Str(v) => Some(v),
            _ => None,
        }
    }

    pub fn first_string(&self) -> Option<&str> {
        self.strings_view().and_then(|v| v.first()).map(String::as_str)
    }

    /// Numeric view: decimal/integer strings are parsed, binary numbers widened.
    pub fn to_f64s(&self) -> Result<Vec<f64>, DicomError> {
        let bad = |s: &str| DicomError::MalformedValue {
            tag: self.tag,
            reason: format!("not a number: {s:?}"),
        };
        Ok(match &self.value {
            Value::Str(v) => v
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|_| bad(s)))
                .collect::<Result<_, _>>()?,
            Value::U16(v) => v.iter().map(|&x| x as f64).collect(),
            Value::I16(v) => v.iter().map(|&x| x as f64).collect(),
            Value::U32(v) => v.iter().map(|&x| x as f64).collect(),
            Value::I32(v) => v.iter().map(|&x| x as f64).collect(),
            Value::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Value::F64(v) => v.clone(),
            Value::Bytes(_) => return Err(bad("<binary>")),
        })
    }
}

fn decode_strings(vr: Vr, raw: &[u8]) -> Vec<String> {
    let text = String::from_utf8_lossy(raw);
    let trimmed = text.trim_end_matches([' ', '\0']);
    if trimmed.is_empty() {
        return Vec::new();
    }
    if vr.is_text() {
        return vec![trimmed.to_string()];
    }
    trimmed
        .split('\\')
        .map(|s| s.trim_matches([' ', '\0']).to_string())
        .collect()
}

/// Formats a number as a DS value (at most 16 characters).
pub(crate) fn format_ds(v: f64) -> String {
    let s = format!("{v}");
    if s.len() <= 16 {
        return s;
    }
    for precision in (1..=10).rev() {
        let s = format!("{v:.precision$e}");
        if s.len() <= 16 {
            return s;
        }
    }
    format!("{v:.0e}")
}

/// One parsed file: the main data set plus the transfer syntax it was
/// encoded with. File meta elements are not included.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    elements: BTreeMap<Tag, Element>,
    pub transfer_syntax: String,
}

impl DataSet {
    pub fn new(transfer_syntax: impl Into<String>) -> Self {
        DataSet {
            elements: BTreeMap::new(),
            transfer_syntax: transfer_syntax.into(),
        }
    }

    /// Inserts or replaces the element with the same tag.
    pub fn insert(&mut self, element: Element) -> Option<Element> {
        self.elements.insert(element.tag, element)
    }

    pub fn remove(&mut self, tag: Tag) -> Option<Element> {
        self.elements.remove(&tag)
    }

    pub fn get(&self, tag: Tag) -> Option<&Element> {
        self.elements.get(&tag)
    }

    pub fn elements(&self) -> impl Iterator<Item = &Element> {
        self.elements.values()
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// First string value of `tag`, if present and textual.
    pub fn string(&self, tag: Tag) -> Option<&str> {
        self.get(tag).and_then(Element::first_string)
    }

    pub fn require_string(&self, tag: Tag) -> Result<&str, DicomError> {
        self.string(tag)
            .filter(|s| !s.is_empty())
            .ok_or(DicomError::MissingAttribute(tag))
    }

    pub fn require_f64s(&self, tag: Tag) -> Result<Vec<f64>, DicomError> {
        self.get(tag)
            .ok_or(DicomError::MissingAttribute(tag))?
            .to_f64s()
    }

    pub fn optional_f64(&self, tag: Tag) -> Result<Option<f64>, DicomError> {
        match self.get(tag) {
            None => Ok(None),
            Some(e) => Ok(e.to_f64s()?.first().copied()),
        }
    }

    pub fn require_u16(&self, tag: Tag) -> Result<u16, DicomError> {
        match self.get(tag).map(|e| &e.value) {
            Some(Value::U16(v)) if !v.is_empty() => Ok(v[0]),
            Some(_) => Err(DicomError::MalformedValue {
                tag,
                reason: "expected an unsigned short".into(),
            }),
            None => Err(DicomError::MissingAttribute(tag)),
        }
    }

    pub fn optional_u16(&self, tag: Tag) -> Result<Option<u16>, DicomError> {
        match self.get(tag) {
            None => Ok(None),
            Some(_) => self.require_u16(tag).map(Some),
        }
    }

    /// Checks that SOPInstanceUID, SeriesInstanceUID, StudyInstanceUID,
    /// PatientID and Modality are present and non-empty.
    pub fn validate_identifiers(&self) -> Result<(), DicomError> {
        for tag in REQUIRED_IDENTIFIERS {
            self.require_string(tag)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dicom::tags;

    #[test]
    fn tag_renders_uppercase_hex() {
        assert_eq!(Tag::new(0x7fe0, 0x10).to_string(), "(7FE0,0010)");
        assert_eq!(tags::PIXEL_SPACING.to_string(), "(0028,0030)");
    }

    #[test]
    fn tag_order_is_group_then_element() {
        assert!(Tag::new(0x0008, 0xFFFF) < Tag::new(0x0010, 0x0000));
        assert!(Tag::new(0x0010, 0x0010) < Tag::new(0x0010, 0x0020));
    }

    #[test]
    fn vr_codes() {
        assert_eq!(Vr::from_code(*b"DS"), Some(Vr::DS));
        assert_eq!(Vr::from_code(*b"UT"), Some(Vr::Other(*b"UT")));
        assert_eq!(Vr::from_code(*b"ZZ"), None);
        assert!(Vr::OB.has_long_length());
        assert!(Vr::Other(*b"UT").has_long_length());
        assert!(!Vr::Other(*b"AT").has_long_length());
        assert!(!Vr::DS.has_long_length());
    }

    #[test]
    fn multi_valued_strings_split_on_backslash() {
        let e = Element::decode(tags::IMAGE_ORIENTATION_PATIENT, Vr::DS, b"1\\0\\0\\0\\1\\0 ").unwrap();
        assert_eq!(e.to_f64s().unwrap(), vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(e.encode().unwrap(), b"1\\0\\0\\0\\1\\0 ".to_vec());
    }

    #[test]
    fn uid_padding_is_nul() {
        let e = Element::string(tags::SOP_INSTANCE_UID, Vr::UI, "1.2.3");
        assert_eq!(e.encode().unwrap(), b"1.2.3\0".to_vec());
        let back = Element::decode(e.tag, e.vr, &e.encode().unwrap()).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn text_keeps_backslash() {
        let e = Element::string(Tag::new(0x0010, 0x4000), Vr::LT, "a\\b");
        let back = Element::decode(e.tag, e.vr, &e.encode().unwrap()).unwrap();
        assert_eq!(back.strings_view().unwrap(), ["a\\b".to_string()]);
    }

    #[test]
    fn numeric_length_must_be_multiple() {
        let err = Element::decode(tags::ROWS, Vr::US, &[1, 2, 3]).unwrap_err();
        assert_eq!(err.kind(), "MalformedValue");
    }

    #[test]
    fn ds_formatting_fits_sixteen_chars() {
        for v in [0.0, 1.5, -1024.0, 0.1 + 0.2, 1.0 / 3.0, 123456789.123456789, -1e-300] {
            let s = format_ds(v);
            assert!(s.len() <= 16, "{s}");
            let parsed: f64 = s.parse().unwrap();
            assert!((parsed - v).abs() <= 1e-9 * v.abs().max(1.0), "{v} -> {s}");
        }
    }
}
