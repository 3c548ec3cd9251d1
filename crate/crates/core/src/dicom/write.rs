use super::{
    tags, DataSet, DicomError, Element, Value, Vr, CT_IMAGE_STORAGE, EXPLICIT_VR_LITTLE_ENDIAN,
    IMPLEMENTATION_CLASS_UID, IMPLEMENTATION_VERSION,
};

#[derive(Debug, Clone)]
pub struct WriteOptions {
    /// Reject data sets lacking the required identifiers.
    pub require_identifiers: bool,
    /// Declare a different transfer syntax in the meta group while still
    /// encoding the body as explicit VR little endian. Only useful for
    /// building rejection fixtures.
    pub transfer_syntax_override: Option<String>,
}

impl Default for WriteOptions {
    fn default() -> Self {
        WriteOptions {
            require_identifiers: true,
            transfer_syntax_override: None,
        }
    }
}

fn put_element(out: &mut Vec<u8>, element: &Element) -> Result<(), DicomError> {
    if !element.vr.is_supported() {
        return Err(DicomError::UnsupportedVR(element.vr.as_str()));
    }
    let payload = element.encode()?;
    out.extend_from_slice(&element.tag.group.to_le_bytes());
    out.extend_from_slice(&element.tag.element.to_le_bytes());
    out.extend_from_slice(&element.vr.code());
    if element.vr.has_long_length() {
        if payload.len() >= u32::MAX as usize {
            return Err(DicomError::MalformedValue {
                tag: element.tag,
                reason: "value too long".into(),
            });
        }
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    } else {
        if payload.len() > u16::MAX as usize {
            return Err(DicomError::MalformedValue {
                tag: element.tag,
                reason: format!("{} bytes exceed the 16-bit length of {}", payload.len(), element.vr),
            });
        }
        out.extend_from_slice(&(payload.len() as u16).to_le_bytes());
    }
    out.extend_from_slice(&payload);
    Ok(())
}

/// Writes `ds` as a Part-10 file in explicit VR little endian.
pub fn write_file(ds: &DataSet) -> Result<Vec<u8>, DicomError> {
    write_file_with(ds, &WriteOptions::default())
}

pub fn write_file_with(ds: &DataSet, opts: &WriteOptions) -> Result<Vec<u8>, DicomError> {
    if ds.transfer_syntax != EXPLICIT_VR_LITTLE_ENDIAN {
        return Err(DicomError::UnsupportedTransferSyntax(ds.transfer_syntax.clone()));
    }
    if opts.require_identifiers {
        ds.validate_identifiers()?;
    }

    let transfer_syntax = opts
        .transfer_syntax_override
        .as_deref()
        .unwrap_or(EXPLICIT_VR_LITTLE_ENDIAN);
    let meta_elements = [
        Element::bytes(tags::META_VERSION, Vr::OB, vec![0, 1]),
        Element::string(
            tags::MEDIA_STORAGE_SOP_CLASS_UID,
            Vr::UI,
            ds.string(tags::SOP_CLASS_UID).unwrap_or(CT_IMAGE_STORAGE),
        ),
        Element::string(
            tags::MEDIA_STORAGE_SOP_INSTANCE_UID,
            Vr::UI,
            ds.string(tags::SOP_INSTANCE_UID).unwrap_or(""),
        ),
        Element::string(tags::TRANSFER_SYNTAX_UID, Vr::UI, transfer_syntax),
        Element::string(tags::IMPLEMENTATION_CLASS_UID, Vr::UI, IMPLEMENTATION_CLASS_UID),
        Element::string(tags::IMPLEMENTATION_VERSION_NAME, Vr::SH, IMPLEMENTATION_VERSION),
    ];
    let mut meta = Vec::new();
    for element in &meta_elements {
        put_element(&mut meta, element)?;
    }

    let mut out = vec![0u8; 128];
    out.extend_from_slice(b"DICM");
    put_element(
        &mut out,
        &Element::new(tags::META_GROUP_LENGTH, Vr::UL, Value::U32(vec![meta.len() as u32])),
    )?;
    out.extend_from_slice(&meta);
    // DataSet keeps elements in a tag-ordered map, so this is file order.
    for element in ds.elements() {
        put_element(&mut out, element)?;
    }
    Ok(out)
}
