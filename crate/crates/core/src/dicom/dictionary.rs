use super::{tags, Tag, Vr};

/// VR lookup for implicit-VR streams. Covers the attributes the pipeline
/// reads; everything else is carried as UN.
pub(crate) fn implicit_vr(tag: Tag) -> Vr {
    if tag.element == 0x0000 {
        return Vr::UL;
    }
    match (tag.group, tag.element) {
        (0x0008, 0x0005) => Vr::CS,
        (0x0008, 0x0008) => Vr::CS,
        (0x0008, 0x0012) => Vr::DA,
        (0x0008, 0x0013) => Vr::TM,
        (0x0008, 0x0016) | (0x0008, 0x0018) => Vr::UI,
        (0x0008, 0x0020..=0x0023) => Vr::DA,
        (0x0008, 0x0030..=0x0033) => Vr::TM,
        (0x0008, 0x0050) => Vr::SH,
        (0x0008, 0x0060) => Vr::CS,
        (0x0008, 0x0070) => Vr::LO,
        (0x0008, 0x0080) => Vr::LO,
        (0x0008, 0x0090) => Vr::PN,
        (0x0008, 0x1030) | (0x0008, 0x103E) => Vr::LO,
        (0x0010, 0x0010) => Vr::PN,
        (0x0010, 0x0020) => Vr::LO,
        (0x0010, 0x0030) => Vr::DA,
        (0x0010, 0x0040) => Vr::CS,
        (0x0010, 0x1010) => Vr::AS,
        (0x0018, 0x0015) => Vr::CS,
        (0x0018, 0x0050) | (0x0018, 0x0088) => Vr::DS,
        (0x0018, 0x0060) => Vr::DS,
        (0x0018, 0x5100) => Vr::CS,
        (0x0020, 0x000D) | (0x0020, 0x000E) | (0x0020, 0x0052) => Vr::UI,
        (0x0020, 0x0010) => Vr::SH,
        (0x0020, 0x0011..=0x0013) => Vr::IS,
        (0x0020, 0x0032) | (0x0020, 0x0037) | (0x0020, 0x1041) => Vr::DS,
        (0x0028, 0x0002) => Vr::US,
        (0x0028, 0x0004) => Vr::CS,
        (0x0028, 0x0008) => Vr::IS,
        (0x0028, 0x0010) | (0x0028, 0x0011) => Vr::US,
        (0x0028, 0x0030) => Vr::DS,
        (0x0028, 0x0100..=0x0103) => Vr::US,
        (0x0028, 0x1050..=0x1053) => Vr::DS,
        (0x0028, 0x1054) => Vr::LO,
        _ if tag == tags::PIXEL_DATA => Vr::OW,
        _ => Vr::UN,
    }
}
