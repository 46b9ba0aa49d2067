//! Single-file NIfTI-1 (`.nii`, `n+1`) subset.
//!
//! Supported: uint8, int16 and float32 payloads; 3-D volumes and 5-D vector
//! fields (`dim[5] = 3`). Both byte orders are accepted on read, detected
//! from `sizeof_hdr`. Extensions, gzip and qform/sform orientation are
//! ignored: grids are assumed axis-aligned with spacing `pixdim[1..=3]`.

use featreg_core::{Dims, DisplacementField, Grid, LabelVolume, Spacing, Volume3D};

use crate::error::{FormatError, Result};

pub const HEADER_SIZE: usize = 348;
pub const DEFAULT_VOX_OFFSET: usize = 352;
pub const MAGIC: [u8; 4] = *b"n+1\0";
/// NIFTI_INTENT_DISPVECT
pub const INTENT_DISPLACEMENT: i16 = 1006;

/// Byte offsets of the header fields used here.
pub mod offset {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const INTENT_CODE: usize = 68;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const SFORM_CODE: usize = 254;
    pub const SROW_X: usize = 280;
    pub const MAGIC: usize = 344;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Datatype {
    U8,
    I16,
    F32,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Self::U8 => 2,
            Self::I16 => 4,
            Self::F32 => 16,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(Self::U8),
            4 => Ok(Self::I16),
            16 => Ok(Self::F32),
            _ => Err(FormatError::UnsupportedDatatype { code }),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Self::U8 => 1,
            Self::I16 => 2,
            Self::F32 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::U8 => "uint8",
            Self::I16 => "int16",
            Self::F32 => "float32",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NiftiHeader {
    pub dim: [i16; 8],
    pub datatype: Datatype,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub intent_code: i16,
    pub endian: Endian,
}

impl NiftiHeader {
    /// Header for a 3-D grid (`ndim = 3`) or a 5-D vector field (`ndim = 5`,
    /// `components` in `dim[5]`).
    pub fn new(dims: Dims, components: usize, spacing: Spacing, datatype: Datatype) -> Result<Self> {
        let to_i16 = |v: usize, field: &'static str| {
            i16::try_from(v).map_err(|_| FormatError::InvalidField {
                field,
                offset: offset::DIM,
                reason: format!("{v} exceeds the int16 range"),
            })
        };
        let mut dim = [1i16; 8];
        dim[1] = to_i16(dims.w, "dim[1]")?;
        dim[2] = to_i16(dims.h, "dim[2]")?;
        dim[3] = to_i16(dims.z, "dim[3]")?;
        if components > 1 {
            dim[0] = 5;
            dim[5] = to_i16(components, "dim[5]")?;
        } else {
            dim[0] = 3;
        }
        let mut pixdim = [1.0f32; 8];
        pixdim[1] = spacing.sx as f32;
        pixdim[2] = spacing.sy as f32;
        pixdim[3] = spacing.sz as f32;
        Ok(Self {
            dim,
            datatype,
            pixdim,
            vox_offset: DEFAULT_VOX_OFFSET as f32,
            scl_slope: 0.0,
            scl_inter: 0.0,
            intent_code: if components > 1 { INTENT_DISPLACEMENT } else { 0 },
            endian: Endian::Little,
        })
    }

    pub fn ndim(&self) -> usize {
        self.dim[0] as usize
    }

    pub fn grid_dims(&self) -> Dims {
        Dims::new(self.dim[1] as usize, self.dim[2] as usize, self.dim[3] as usize)
    }

    pub fn spacing(&self) -> Result<Spacing> {
        let p = &self.pixdim;
        Spacing::new(
            (p[1] as f64).abs(),
            (p[2] as f64).abs(),
            (p[3] as f64).abs(),
        )
        .map_err(|e| FormatError::InvalidField {
            field: "pixdim",
            offset: offset::PIXDIM,
            reason: e.to_string(),
        })
    }

    /// Number of stored samples (product of the used dims).
    pub fn sample_count(&self) -> Option<usize> {
        self.dim[1..=self.ndim()]
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NiftiImage {
    pub header: NiftiHeader,
    /// Samples after `scl_slope`/`scl_inter` scaling, in file order.
    pub data: Vec<f64>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Reader<'_> {
    fn arr<const N: usize>(&self, at: usize) -> [u8; N] {
        self.bytes[at..at + N].try_into().expect("header length checked")
    }

    fn i16(&self, at: usize) -> i16 {
        match self.endian {
            Endian::Little => i16::from_le_bytes(self.arr(at)),
            Endian::Big => i16::from_be_bytes(self.arr(at)),
        }
    }

    fn f32(&self, at: usize) -> f32 {
        match self.endian {
            Endian::Little => f32::from_le_bytes(self.arr(at)),
            Endian::Big => f32::from_be_bytes(self.arr(at)),
        }
    }
}

fn invalid(field: &'static str, offset: usize, reason: impl Into<String>) -> FormatError {
    FormatError::InvalidField {
        field,
        offset,
        reason: reason.into(),
    }
}

pub fn read_header(bytes: &[u8]) -> Result<NiftiHeader> {
    if bytes.len() < HEADER_SIZE {
        return Err(FormatError::TooShort {
            what: "NIfTI-1 header",
            need: HEADER_SIZE,
            have: bytes.len(),
        });
    }
    let raw: [u8; 4] = bytes[..4].try_into().expect("length checked");
    let endian = if i32::from_le_bytes(raw) == HEADER_SIZE as i32 {
        Endian::Little
    } else if i32::from_be_bytes(raw) == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(FormatError::BadHeaderSize {
            found: i32::from_le_bytes(raw),
        });
    };
    let magic = &bytes[offset::MAGIC..offset::MAGIC + 4];
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            offset: offset::MAGIC,
            found: magic.to_vec(),
        });
    }
    let r = Reader { bytes, endian };

    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = r.i16(offset::DIM + 2 * i);
    }
    if !(1..=7).contains(&dim[0]) {
        return Err(invalid("dim[0]", offset::DIM, format!("{} is not in 1..=7", dim[0])));
    }
    for (i, &d) in dim.iter().enumerate().take(dim[0] as usize + 1).skip(1) {
        if d < 1 {
            return Err(invalid("dim", offset::DIM + 2 * i, format!("dim[{i}] = {d} must be positive")));
        }
    }
    // Unused trailing dims are treated as 1.
    let used = dim[0] as usize;
    for d in dim.iter_mut().skip(used + 1) {
        *d = 1;
    }

    let datatype = Datatype::from_code(r.i16(offset::DATATYPE))?;
    let bitpix = r.i16(offset::BITPIX);
    if bitpix as usize != datatype.size() * 8 {
        return Err(invalid(
            "bitpix",
            offset::BITPIX,
            format!("{bitpix} does not match {}", datatype.name()),
        ));
    }
    let mut pixdim = [0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = r.f32(offset::PIXDIM + 4 * i);
    }
    let vox_offset = r.f32(offset::VOX_OFFSET);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32 && vox_offset.fract() == 0.0)
        || vox_offset > u32::MAX as f32
    {
        return Err(invalid(
            "vox_offset",
            offset::VOX_OFFSET,
            format!("{vox_offset} is not an integral offset >= 348"),
        ));
    }
    Ok(NiftiHeader {
        dim,
        datatype,
        pixdim,
        vox_offset,
        scl_slope: r.f32(offset::SCL_SLOPE),
        scl_inter: r.f32(offset::SCL_INTER),
        intent_code: r.i16(offset::INTENT_CODE),
        endian,
    })
}

/// Parses a whole `.nii` buffer. The payload size is validated against the
/// buffer before anything is allocated.
pub fn read_nifti(bytes: &[u8]) -> Result<NiftiImage> {
    let header = read_header(bytes)?;
    let count = header
        .sample_count()
        .ok_or_else(|| invalid("dim", offset::DIM, "sample count overflows"))?;
    let start = header.vox_offset as usize;
    let size = header.datatype.size();
    let expected = count
        .checked_mul(size)
        .ok_or_else(|| invalid("dim", offset::DIM, "payload size overflows"))?;
    let available = bytes.len().saturating_sub(start);
    if available < expected {
        return Err(FormatError::TruncatedPayload {
            offset: start,
            expected,
            actual: available,
        });
    }
    let payload = &bytes[start..start + expected];
    let big = header.endian == Endian::Big;
    let mut data: Vec<f64> = match header.datatype {
        Datatype::U8 => payload.iter().map(|&b| b as f64).collect(),
        Datatype::I16 => payload
            .chunks_exact(2)
            .map(|c| {
                let a = [c[0], c[1]];
                (if big { i16::from_be_bytes(a) } else { i16::from_le_bytes(a) }) as f64
            })
            .collect(),
        Datatype::F32 => payload
            .chunks_exact(4)
            .map(|c| {
                let a = [c[0], c[1], c[2], c[3]];
                (if big { f32::from_be_bytes(a) } else { f32::from_le_bytes(a) }) as f64
            })
            .collect(),
    };
    let slope = header.scl_slope as f64;
    if slope != 0.0 && slope.is_finite() {
        let inter = header.scl_inter as f64;
        let inter = if inter.is_finite() { inter } else { 0.0 };
        data.iter_mut().for_each(|v| *v = *v * slope + inter);
    }
    Ok(NiftiImage { header, data })
}

/// Serializes `raw` samples (stored as-is, no inverse scaling) under `header`.
pub fn write_nifti(header: &NiftiHeader, raw: &[f64]) -> Result<Vec<u8>> {
    let count = header
        .sample_count()
        .ok_or_else(|| invalid("dim", offset::DIM, "sample count overflows"))?;
    if count != raw.len() {
        return Err(FormatError::SizeMismatch {
            expected: count,
            actual: raw.len(),
        });
    }
    let start = header.vox_offset as usize;
    if start < HEADER_SIZE + 4 {
        return Err(invalid("vox_offset", offset::VOX_OFFSET, "must leave room for the extension flag"));
    }
    let big = header.endian == Endian::Big;
    let mut out = vec![0u8; start];
    let put = |out: &mut [u8], at: usize, b: &[u8]| out[at..at + b.len()].copy_from_slice(b);
    let i32b = |v: i32| if big { v.to_be_bytes() } else { v.to_le_bytes() };
    let i16b = |v: i16| if big { v.to_be_bytes() } else { v.to_le_bytes() };
    let f32b = |v: f32| if big { v.to_be_bytes() } else { v.to_le_bytes() };

    put(&mut out, offset::SIZEOF_HDR, &i32b(HEADER_SIZE as i32));
    for (i, d) in header.dim.iter().enumerate() {
        put(&mut out, offset::DIM + 2 * i, &i16b(*d));
    }
    put(&mut out, offset::INTENT_CODE, &i16b(header.intent_code));
    put(&mut out, offset::DATATYPE, &i16b(header.datatype.code()));
    put(&mut out, offset::BITPIX, &i16b((header.datatype.size() * 8) as i16));
    for (i, p) in header.pixdim.iter().enumerate() {
        put(&mut out, offset::PIXDIM + 4 * i, &f32b(*p));
    }
    put(&mut out, offset::VOX_OFFSET, &f32b(header.vox_offset));
    put(&mut out, offset::SCL_SLOPE, &f32b(header.scl_slope));
    put(&mut out, offset::SCL_INTER, &f32b(header.scl_inter));
    // mm + sec
    out[offset::XYZT_UNITS] = 2 | 8;
    // Scanner-aligned sform scaled by the spacing.
    put(&mut out, offset::SFORM_CODE, &i16b(2));
    for r in 0..3 {
        put(&mut out, offset::SROW_X + 16 * r + 4 * r, &f32b(header.pixdim[r + 1]));
    }
    put(&mut out, offset::MAGIC, &MAGIC);

    out.reserve(count * header.datatype.size());
    for &v in raw {
        match header.datatype {
            Datatype::U8 => {
                if !(v.fract() == 0.0 && (0.0..=255.0).contains(&v)) {
                    return Err(FormatError::ValueOutOfRange { value: v, datatype: "uint8" });
                }
                out.push(v as u8);
            }
            Datatype::I16 => {
                if !(v.fract() == 0.0 && (i16::MIN as f64..=i16::MAX as f64).contains(&v)) {
                    return Err(FormatError::ValueOutOfRange { value: v, datatype: "int16" });
                }
                out.extend_from_slice(&i16b(v as i16));
            }
            Datatype::F32 => out.extend_from_slice(&f32b(v as f32)),
        }
    }
    Ok(out)
}

fn expect_grid(img: &NiftiImage, components: usize) -> Result<Dims> {
    let h = &img.header;
    let ok = if components == 1 {
        h.dim[4..8].iter().all(|&d| d == 1)
    } else {
        h.ndim() == 5 && h.dim[4] == 1 && h.dim[5] as usize == components
    };
    if !ok {
        return Err(invalid(
            "dim",
            offset::DIM,
            format!("shape {:?} is not a {}", &h.dim[..=h.ndim()], if components == 1 { "3-D volume" } else { "3-vector field" }),
        ));
    }
    Ok(h.grid_dims())
}

pub fn read_volume(bytes: &[u8]) -> Result<Volume3D> {
    let img = read_nifti(bytes)?;
    let dims = expect_grid(&img, 1)?;
    Ok(Grid::new(dims, img.header.spacing()?, img.data)?)
}

/// Label volumes must hold non-negative integers.
pub fn read_labels(bytes: &[u8]) -> Result<LabelVolume> {
    let img = read_nifti(bytes)?;
    let dims = expect_grid(&img, 1)?;
    let spacing = img.header.spacing()?;
    let labels = img
        .data
        .iter()
        .map(|&v| {
            if v.fract() == 0.0 && (0.0..=u32::MAX as f64).contains(&v) {
                Ok(v as u32)
            } else {
                Err(FormatError::ValueOutOfRange { value: v, datatype: "label" })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Grid::new(dims, spacing, labels)?)
}

/// Reads a 5-D field (`dim[5] = 3`, components in separate x/y/z blocks).
pub fn read_field(bytes: &[u8]) -> Result<DisplacementField> {
    let img = read_nifti(bytes)?;
    let dims = expect_grid(&img, 3)?;
    let n = dims.len();
    let vectors = (0..n)
        .map(|i| [img.data[i], img.data[n + i], img.data[2 * n + i]])
        .collect();
    Ok(Grid::new(dims, img.header.spacing()?, vectors)?)
}

pub fn write_volume(vol: &Volume3D) -> Result<Vec<u8>> {
    let header = NiftiHeader::new(vol.dims(), 1, vol.spacing(), Datatype::F32)?;
    write_nifti(&header, vol.data())
}

/// Labels go to uint8 when they fit, otherwise int16.
pub fn write_labels(labels: &LabelVolume) -> Result<Vec<u8>> {
    let max = labels.data().iter().copied().max().unwrap_or(0);
    let datatype = if max <= u8::MAX as u32 { Datatype::U8 } else { Datatype::I16 };
    let header = NiftiHeader::new(labels.dims(), 1, labels.spacing(), datatype)?;
    let raw: Vec<f64> = labels.data().iter().map(|&l| l as f64).collect();
    write_nifti(&header, &raw)
}

pub fn write_field(field: &DisplacementField) -> Result<Vec<u8>> {
    let header = NiftiHeader::new(field.dims(), 3, field.spacing(), Datatype::F32)?;
    let data = field.data();
    let raw: Vec<f64> = (0..3)
        .flat_map(|c| data.iter().map(move |v| v[c]))
        .collect();
    write_nifti(&header, &raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header_f32(dims: Dims) -> NiftiHeader {
        NiftiHeader::new(dims, 1, Spacing::unit(), Datatype::F32).unwrap()
    }

    #[test]
    fn slope_zero_passes_raw_values() {
        let h = header_f32(Dims::new(2, 2, 2));
        let raw: Vec<f64> = (0..8).map(|v| v as f64 * 0.5).collect();
        let img = read_nifti(&write_nifti(&h, &raw).unwrap()).unwrap();
        assert_eq!(img.data, raw);
    }

    #[test]
    fn slope_and_intercept_are_applied() {
        let mut h = header_f32(Dims::new(1, 1, 1));
        h.scl_slope = 2.0;
        h.scl_inter = 1.0;
        let img = read_nifti(&write_nifti(&h, &[3.0]).unwrap()).unwrap();
        assert_eq!(img.data, vec![7.0]);
    }

    #[test]
    fn big_endian_is_detected() {
        let mut h = NiftiHeader::new(Dims::new(3, 2, 1), 1, Spacing::new(0.5, 2.0, 3.0).unwrap(), Datatype::I16).unwrap();
        h.endian = Endian::Big;
        let raw = [-3.0, 0.0, 1.0, 300.0, -32768.0, 32767.0];
        let bytes = write_nifti(&h, &raw).unwrap();
        assert_eq!(&bytes[..4], &348i32.to_be_bytes());
        let img = read_nifti(&bytes).unwrap();
        assert_eq!(img.header.endian, Endian::Big);
        assert_eq!(img.data, raw);
        assert_eq!(img.header.spacing().unwrap(), Spacing::new(0.5, 2.0, 3.0).unwrap());
    }

    #[test]
    fn truncated_payload_reports_sizes() {
        let h = header_f32(Dims::new(2, 2, 2));
        let bytes = write_nifti(&h, &[0.0; 8]).unwrap();
        match read_nifti(&bytes[..bytes.len() - 5]) {
            Err(FormatError::TruncatedPayload { expected, actual, .. }) => {
                assert_eq!((expected, actual), (32, 27));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_errors_name_the_field() {
        let h = header_f32(Dims::new(1, 1, 1));
        let good = write_nifti(&h, &[1.0]).unwrap();

        let mut bad = good.clone();
        bad[344] = b'x';
        assert!(matches!(read_nifti(&bad), Err(FormatError::BadMagic { offset: 344, .. })));

        let mut bad = good.clone();
        bad[70..72].copy_from_slice(&64i16.to_le_bytes());
        assert!(matches!(read_nifti(&bad), Err(FormatError::UnsupportedDatatype { code: 64 })));

        let mut bad = good.clone();
        bad[0] = 0;
        assert!(matches!(read_nifti(&bad), Err(FormatError::BadHeaderSize { .. })));

        assert!(matches!(read_nifti(&good[..100]), Err(FormatError::TooShort { .. })));
    }

    #[test]
    fn labels_as_uint8() {
        let l = LabelVolume::new(Dims::new(3, 1, 1), Spacing::unit(), vec![0, 5, 255]).unwrap();
        let bytes = write_labels(&l).unwrap();
        assert_eq!(bytes[70], 2);
        assert_eq!(bytes.len(), 352 + 3);
        assert_eq!(read_labels(&bytes).unwrap(), l);
    }

    #[test]
    fn field_round_trip() {
        let f = DisplacementField::from_fn(Dims::new(3, 2, 2), Spacing::new(1.0, 2.0, 1.5).unwrap(), |x, y, z| {
            [x as f64 * 0.25, -(y as f64), z as f64 + 0.5]
        })
        .unwrap();
        let bytes = write_field(&f).unwrap();
        assert_eq!(i16::from_le_bytes([bytes[40], bytes[41]]), 5);
        assert_eq!(read_field(&bytes).unwrap(), f);
        assert!(read_volume(&bytes).is_err());
    }
}
