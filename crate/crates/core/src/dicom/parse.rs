use super::dictionary::implicit_vr;
use super::{
    tags, DataSet, DicomError, Element, Tag, Vr, EXPLICIT_VR_LITTLE_ENDIAN,
    IMPLICIT_VR_LITTLE_ENDIAN,
};

const PREAMBLE_LEN: usize = 128;
const UNDEFINED_LENGTH: u32 = 0xFFFF_FFFF;
const MAX_NESTING: usize = 32;

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: u64) -> Result<&'a [u8], DicomError> {
        if n > self.remaining() as u64 {
            return Err(DicomError::Truncated {
                offset: self.pos,
                needed: n,
                available: self.remaining(),
            });
        }
        let start = self.pos;
        self.pos += n as usize;
        Ok(&self.buf[start..self.pos])
    }

    fn u16(&mut self) -> Result<u16, DicomError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, DicomError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn tag(&mut self) -> Result<Tag, DicomError> {
        let group = self.u16()?;
        let element = self.u16()?;
        Ok(Tag::new(group, element))
    }

    fn peek_group(&self) -> Option<u16> {
        (self.remaining() >= 2)
            .then(|| u16::from_le_bytes([self.buf[self.pos], self.buf[self.pos + 1]]))
    }
}

struct Header {
    tag: Tag,
    vr: Vr,
    length: u32,
}

fn read_header(cur: &mut Cursor<'_>, explicit: bool) -> Result<Header, DicomError> {
    let tag = cur.tag()?;
    // Item and delimiter tags never carry a VR, even in explicit streams.
    if tag.group == 0xFFFE {
        let length = cur.u32()?;
        return Ok(Header {
            tag,
            vr: Vr::UN,
            length,
        });
    }
    if !explicit {
        let length = cur.u32()?;
        return Ok(Header {
            tag,
            vr: implicit_vr(tag),
            length,
        });
    }
    let offset = cur.pos;
    let code: [u8; 2] = cur.take(2)?.try_into().unwrap();
    let vr = Vr::from_code(code).ok_or_else(|| DicomError::MalformedVR {
        offset,
        code: String::from_utf8_lossy(&code).into_owned(),
    })?;
    let length = if vr.has_long_length() {
        cur.take(2)?;
        cur.u32()?
    } else {
        cur.u16()? as u32
    };
    Ok(Header { tag, vr, length })
}

/// Reads the value bytes of an element whose header has been consumed.
/// Undefined-length sequences are walked item by item so the returned slice
/// ends exactly before the sequence delimiter.
fn read_value<'a>(
    cur: &mut Cursor<'a>,
    header: &Header,
    explicit: bool,
    depth: usize,
) -> Result<&'a [u8], DicomError> {
    if header.length != UNDEFINED_LENGTH {
        return cur.take(header.length as u64);
    }
    match header.vr {
        // UN with undefined length is an implicit-VR encoded sequence.
        Vr::SQ => skip_sequence(cur, header.tag, explicit, depth),
        Vr::UN => skip_sequence(cur, header.tag, false, depth),
        _ => Err(DicomError::MalformedValue {
            tag: header.tag,
            reason: "undefined length on a non-sequence element".into(),
        }),
    }
}

fn skip_sequence<'a>(
    cur: &mut Cursor<'a>,
    tag: Tag,
    explicit: bool,
    depth: usize,
) -> Result<&'a [u8], DicomError> {
    if depth >= MAX_NESTING {
        return Err(DicomError::MalformedValue {
            tag,
            reason: "sequence nesting too deep".into(),
        });
    }
    let start = cur.pos;
    loop {
        let item_start = cur.pos;
        let item = read_header(cur, explicit)?;
        match item.tag {
            tags::SEQUENCE_DELIMITATION => return Ok(&cur.buf[start..item_start]),
            tags::ITEM if item.length == UNDEFINED_LENGTH => loop {
                let nested = read_header(cur, explicit)?;
                if nested.tag == tags::ITEM_DELIMITATION {
                    break;
                }
                read_value(cur, &nested, explicit, depth + 1)?;
            },
            tags::ITEM => {
                cur.take(item.length as u64)?;
            }
            other => {
                return Err(DicomError::MalformedValue {
                    tag,
                    reason: format!("unexpected {other} inside sequence"),
                })
            }
        }
    }
}

fn read_element(cur: &mut Cursor<'_>, explicit: bool) -> Result<Element, DicomError> {
    let header = read_header(cur, explicit)?;
    if header.tag.group == 0xFFFE {
        return Err(DicomError::MalformedValue {
            tag: header.tag,
            reason: "item tag outside a sequence".into(),
        });
    }
    let raw = read_value(cur, &header, explicit, 0)?;
    Element::decode(header.tag, header.vr, raw)
}

/// Parses a DICOM Part-10 file held in memory.
///
/// The file meta group is always explicit VR little endian; the main data
/// set may be implicit or explicit VR little endian. Any other transfer
/// syntax is rejected with [`DicomError::UnsupportedTransferSyntax`].
pub fn parse_file(bytes: &[u8]) -> Result<DataSet, DicomError> {
    if bytes.len() < PREAMBLE_LEN + 4 || &bytes[PREAMBLE_LEN..PREAMBLE_LEN + 4] != b"DICM" {
        return Err(DicomError::MissingMagic);
    }
    let mut cur = Cursor {
        buf: bytes,
        pos: PREAMBLE_LEN + 4,
    };
    if cur.remaining() == 0 {
        // a Part-10 file always carries a meta group after the magic
        return Err(DicomError::Truncated {
            offset: cur.pos,
            needed: 8,
            available: 0,
        });
    }

    let mut transfer_syntax = None;
    let mut meta_end = None;
    while cur.peek_group() == Some(0x0002) || cur.remaining() == 1 {
        if meta_end.is_some_and(|end| cur.pos >= end) {
            break;
        }
        let element = read_element(&mut cur, true)?;
        match element.tag {
            tags::META_GROUP_LENGTH => {
                let len = match &element.value {
                    super::Value::U32(v) if v.len() == 1 => v[0] as usize,
                    _ => {
                        return Err(DicomError::MalformedValue {
                            tag: element.tag,
                            reason: "group length must be a single UL".into(),
                        })
                    }
                };
                if len > cur.remaining() {
                    return Err(DicomError::Truncated {
                        offset: cur.pos,
                        needed: len as u64,
                        available: cur.remaining(),
                    });
                }
                meta_end = Some(cur.pos + len);
            }
            tags::TRANSFER_SYNTAX_UID => {
                transfer_syntax = element.first_string().map(str::to_string);
            }
            _ => {}
        }
    }
    if let Some(end) = meta_end {
        if cur.pos != end {
            return Err(DicomError::MalformedValue {
                tag: tags::META_GROUP_LENGTH,
                reason: format!("meta group ends at {} but length says {end}", cur.pos),
            });
        }
    }

    let transfer_syntax = transfer_syntax.ok_or(DicomError::MissingTransferSyntax)?;
    let explicit = match transfer_syntax.as_str() {
        EXPLICIT_VR_LITTLE_ENDIAN => true,
        IMPLICIT_VR_LITTLE_ENDIAN => false,
        _ => return Err(DicomError::UnsupportedTransferSyntax(transfer_syntax)),
    };

    let mut ds = DataSet::new(transfer_syntax);
    let mut previous: Option<Tag> = None;
    while cur.remaining() > 0 {
        let element = read_element(&mut cur, explicit)?;
        if let Some(prev) = previous {
            if element.tag <= prev {
                return Err(DicomError::TagOrder {
                    previous: prev,
                    found: element.tag,
                });
            }
        }
        previous = Some(element.tag);
        ds.insert(element);
    }
    Ok(ds)
}
