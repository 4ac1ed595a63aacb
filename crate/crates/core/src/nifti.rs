//! NIfTI-1 single-file reader and writer.
//!
//! Supports the little-endian `.nii` / `.nii.gz` subset used for PET/CT
//! studies: 3D volumes stored as uint8, int16 or float32. Gzip input is
//! detected from the stream magic rather than the file name.
//!
//! Only `pixdim[1..=3]` is interpreted (as voxel spacing). The qform/sform
//! block is carried through [`Orientation`] untouched.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::volume::{
    voxel_count, AnyVolume, LabelVolume, Orientation, ScalarVolume, Shape, Spacing, Volume, VolumeKind,
};

pub const HEADER_SIZE: usize = 348;
pub const VOX_OFFSET: usize = 352;
pub const MAGIC: [u8; 4] = *b"n+1\0";

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_FLOAT32: i16 = 16;

const UNITS_MM: u8 = 2;
/// `intent_name` tag marking a float32 volume as class probabilities.
const PROBABILITY_INTENT: &[u8] = b"probability";

mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const REGULAR: usize = 38;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QOFFSET_X: usize = 268;
    pub const SROW_X: usize = 280;
    pub const INTENT_NAME: usize = 328;
    pub const MAGIC: usize = 344;
}

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("truncated NIfTI stream: {field} needs {needed} bytes, {available} available")]
    Truncated {
        field: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("bad NIfTI magic {found:?}, expected \"n+1\\0\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("big-endian NIfTI streams are not supported")]
    BigEndian,

    #[error("invalid NIfTI header field {field}: {detail}")]
    InvalidField { field: &'static str, detail: String },

    #[error("gzip: {0}")]
    Gzip(#[source] std::io::Error),
}

impl NiftiError {
    /// Name of the header field (or stream section) that failed to parse.
    pub fn field(&self) -> &'static str {
        match self {
            NiftiError::Truncated { field, .. } | NiftiError::InvalidField { field, .. } => field,
            NiftiError::BadMagic { .. } => "magic",
            NiftiError::UnsupportedDatatype(_) => "datatype",
            NiftiError::BigEndian => "endianness",
            NiftiError::Gzip(_) => "gzip",
        }
    }
}

fn invalid(field: &'static str, detail: impl Into<String>) -> NiftiError {
    NiftiError::InvalidField {
        field,
        detail: detail.into(),
    }
}

/// The header fields this crate reads or writes.
#[derive(Clone, Debug, PartialEq)]
pub struct NiftiHeader {
    pub sizeof_hdr: i32,
    pub dim: [i16; 8],
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub xyzt_units: u8,
    pub orientation: Orientation,
    pub intent_name: [u8; 16],
    pub magic: [u8; 4],
}

fn bitpix_for(datatype: i16) -> Option<i16> {
    match datatype {
        DT_UINT8 => Some(8),
        DT_INT16 => Some(16),
        DT_FLOAT32 => Some(32),
        _ => None,
    }
}

impl NiftiHeader {
    /// Parses and validates the first 348 bytes of a (decompressed) stream.
    pub fn parse(bytes: &[u8]) -> Result<Self, NiftiError> {
        if bytes.len() < HEADER_SIZE {
            return Err(NiftiError::Truncated {
                field: "header",
                needed: HEADER_SIZE,
                available: bytes.len(),
            });
        }
        let sizeof_hdr = LittleEndian::read_i32(&bytes[offsets::SIZEOF_HDR..]);
        if sizeof_hdr != HEADER_SIZE as i32 {
            if sizeof_hdr.swap_bytes() == HEADER_SIZE as i32 {
                return Err(NiftiError::BigEndian);
            }
            return Err(invalid("sizeof_hdr", format!("{sizeof_hdr}, expected 348")));
        }

        let mut dim = [0i16; 8];
        LittleEndian::read_i16_into(&bytes[offsets::DIM..offsets::DIM + 16], &mut dim);
        if !(1..=7).contains(&dim[0]) {
            if (1..=7).contains(&dim[0].swap_bytes()) {
                return Err(NiftiError::BigEndian);
            }
            return Err(invalid("dim[0]", format!("{} is not a valid rank", dim[0])));
        }

        let mut magic = [0u8; 4];
        magic.copy_from_slice(&bytes[offsets::MAGIC..offsets::MAGIC + 4]);
        if magic != MAGIC {
            return Err(NiftiError::BadMagic { found: magic });
        }

        if dim[0] != 3 {
            return Err(invalid("dim[0]", format!("{}, only 3D volumes are supported", dim[0])));
        }
        if let Some(axis) = (1..=3).find(|&i| dim[i] < 1) {
            return Err(invalid("dim", format!("dim[{axis}] = {} must be >= 1", dim[axis])));
        }

        let datatype = LittleEndian::read_i16(&bytes[offsets::DATATYPE..]);
        let expected_bitpix = bitpix_for(datatype).ok_or(NiftiError::UnsupportedDatatype(datatype))?;
        let bitpix = LittleEndian::read_i16(&bytes[offsets::BITPIX..]);
        if bitpix != expected_bitpix {
            return Err(invalid(
                "bitpix",
                format!("{bitpix} does not match datatype {datatype} ({expected_bitpix} bits)"),
            ));
        }

        let mut pixdim = [0f32; 8];
        LittleEndian::read_f32_into(&bytes[offsets::PIXDIM..offsets::PIXDIM + 32], &mut pixdim);
        if let Some(axis) = (1..=3).find(|&i| !(pixdim[i].is_finite() && pixdim[i] > 0.0)) {
            return Err(invalid("pixdim", format!("pixdim[{axis}] = {} is not a positive spacing", pixdim[axis])));
        }

        let vox_offset = LittleEndian::read_f32(&bytes[offsets::VOX_OFFSET..]);
        if !(vox_offset >= HEADER_SIZE as f32 && vox_offset.fract() == 0.0 && vox_offset < 1.0e9) {
            return Err(invalid("vox_offset", format!("{vox_offset} is not a usable data offset")));
        }

        let mut srow = [[0f32; 4]; 3];
        for (r, row) in srow.iter_mut().enumerate() {
            let at = offsets::SROW_X + 16 * r;
            LittleEndian::read_f32_into(&bytes[at..at + 16], row);
        }
        let mut quatern = [0f32; 3];
        LittleEndian::read_f32_into(&bytes[offsets::QUATERN_B..offsets::QUATERN_B + 12], &mut quatern);
        let mut qoffset = [0f32; 3];
        LittleEndian::read_f32_into(&bytes[offsets::QOFFSET_X..offsets::QOFFSET_X + 12], &mut qoffset);
        let orientation = Orientation {
            qform_code: LittleEndian::read_i16(&bytes[offsets::QFORM_CODE..]),
            sform_code: LittleEndian::read_i16(&bytes[offsets::SFORM_CODE..]),
            qfac: pixdim[0],
            quatern,
            qoffset,
            srow,
        };

        let mut intent_name = [0u8; 16];
        intent_name.copy_from_slice(&bytes[offsets::INTENT_NAME..offsets::INTENT_NAME + 16]);

        Ok(NiftiHeader {
            sizeof_hdr,
            dim,
            datatype,
            bitpix,
            pixdim,
            vox_offset,
            scl_slope: LittleEndian::read_f32(&bytes[offsets::SCL_SLOPE..]),
            scl_inter: LittleEndian::read_f32(&bytes[offsets::SCL_INTER..]),
            xyzt_units: bytes[offsets::XYZT_UNITS],
            orientation,
            intent_name,
            magic,
        })
    }

    /// Volume shape as (z, y, x).
    pub fn shape(&self) -> Shape {
        [self.dim[3] as usize, self.dim[2] as usize, self.dim[1] as usize]
    }

    /// Voxel spacing as (z, y, x) in mm.
    pub fn spacing(&self) -> Spacing {
        Spacing::new([self.pixdim[3] as f64, self.pixdim[2] as f64, self.pixdim[1] as f64])
            .expect("pixdim validated on parse")
    }

    /// Whether stored values must be rescaled: a zero or non-finite slope, or
    /// the identity pair (1, 0), means raw values are used.
    pub fn has_scaling(&self) -> bool {
        self.scl_slope != 0.0
            && self.scl_slope.is_finite()
            && self.scl_inter.is_finite()
            && !(self.scl_slope == 1.0 && self.scl_inter == 0.0)
    }

    fn is_probability(&self) -> bool {
        self.intent_name.starts_with(PROBABILITY_INTENT)
            && self.intent_name[PROBABILITY_INTENT.len()..].iter().all(|&b| b == 0)
    }

    fn to_bytes(&self) -> [u8; VOX_OFFSET] {
        let mut out = [0u8; VOX_OFFSET];
        LittleEndian::write_i32(&mut out[offsets::SIZEOF_HDR..], self.sizeof_hdr);
        out[offsets::REGULAR] = b'r';
        LittleEndian::write_i16_into(&self.dim, &mut out[offsets::DIM..offsets::DIM + 16]);
        LittleEndian::write_i16(&mut out[offsets::DATATYPE..], self.datatype);
        LittleEndian::write_i16(&mut out[offsets::BITPIX..], self.bitpix);
        LittleEndian::write_f32_into(&self.pixdim, &mut out[offsets::PIXDIM..offsets::PIXDIM + 32]);
        LittleEndian::write_f32(&mut out[offsets::VOX_OFFSET..], self.vox_offset);
        LittleEndian::write_f32(&mut out[offsets::SCL_SLOPE..], self.scl_slope);
        LittleEndian::write_f32(&mut out[offsets::SCL_INTER..], self.scl_inter);
        out[offsets::XYZT_UNITS] = self.xyzt_units;
        let o = &self.orientation;
        LittleEndian::write_i16(&mut out[offsets::QFORM_CODE..], o.qform_code);
        LittleEndian::write_i16(&mut out[offsets::SFORM_CODE..], o.sform_code);
        LittleEndian::write_f32_into(&o.quatern, &mut out[offsets::QUATERN_B..offsets::QUATERN_B + 12]);
        LittleEndian::write_f32_into(&o.qoffset, &mut out[offsets::QOFFSET_X..offsets::QOFFSET_X + 12]);
        for (r, row) in o.srow.iter().enumerate() {
            let at = offsets::SROW_X + 16 * r;
            LittleEndian::write_f32_into(row, &mut out[at..at + 16]);
        }
        out[offsets::INTENT_NAME..offsets::INTENT_NAME + 16].copy_from_slice(&self.intent_name);
        out[offsets::MAGIC..offsets::MAGIC + 4].copy_from_slice(&self.magic);
        // bytes 348..352: empty extension block
        out
    }
}

/// Element types the writer can emit.
pub trait NiftiElement: crate::volume::Voxel {
    const DATATYPE: i16;
    fn write_le(values: &[Self], out: &mut Vec<u8>);
}

impl NiftiElement for u8 {
    const DATATYPE: i16 = DT_UINT8;

    fn write_le(values: &[u8], out: &mut Vec<u8>) {
        out.extend_from_slice(values);
    }
}

impl NiftiElement for f32 {
    const DATATYPE: i16 = DT_FLOAT32;

    fn write_le(values: &[f32], out: &mut Vec<u8>) {
        let start = out.len();
        out.resize(start + 4 * values.len(), 0);
        LittleEndian::write_f32_into(values, &mut out[start..]);
    }
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

fn decompress(bytes: &[u8]) -> Result<Vec<u8>, NiftiError> {
    let mut out = Vec::with_capacity(bytes.len() * 4);
    MultiGzDecoder::new(bytes).read_to_end(&mut out).map_err(NiftiError::Gzip)?;
    Ok(out)
}

/// Stored values, decoded to f32 with scaling applied.
fn decode_values(header: &NiftiHeader, payload: &[u8]) -> Vec<f32> {
    let mut values: Vec<f32> = match header.datatype {
        DT_UINT8 => payload.iter().map(|&b| b as f32).collect(),
        DT_INT16 => payload.chunks_exact(2).map(|c| LittleEndian::read_i16(c) as f32).collect(),
        DT_FLOAT32 => {
            let mut v = vec![0f32; payload.len() / 4];
            LittleEndian::read_f32_into(payload, &mut v);
            v
        }
        _ => unreachable!("datatype validated on parse"),
    };
    if header.has_scaling() {
        let (slope, inter) = (header.scl_slope, header.scl_inter);
        values.iter_mut().for_each(|v| *v = slope * *v + inter);
    }
    values
}

fn split_stream(bytes: &[u8]) -> Result<(NiftiHeader, &[u8]), NiftiError> {
    let header = NiftiHeader::parse(bytes)?;
    let n = voxel_count(header.shape());
    let width = header.bitpix as usize / 8;
    let start = header.vox_offset as usize;
    let needed = start + n * width;
    if bytes.len() < needed {
        return Err(NiftiError::Truncated {
            field: "data",
            needed,
            available: bytes.len(),
        });
    }
    Ok((header, &bytes[start..needed]))
}

/// Parses a NIfTI-1 stream (plain or gzip).
///
/// Unscaled uint8 data loads as a label volume. Everything else loads as
/// float32 intensities, or as probabilities when the writer tagged it so.
pub fn read_nifti(bytes: &[u8]) -> Result<AnyVolume> {
    let owned;
    let raw = if is_gzip(bytes) {
        owned = decompress(bytes)?;
        &owned[..]
    } else {
        bytes
    };
    let (header, payload) = split_stream(raw)?;
    let (shape, spacing) = (header.shape(), header.spacing());

    if header.datatype == DT_UINT8 && !header.has_scaling() {
        let vol = LabelVolume::label(shape, spacing, payload.to_vec())?;
        return Ok(vol.with_orientation(header.orientation).into());
    }

    let values = decode_values(&header, payload);
    let vol = if header.is_probability() && values.iter().all(|v| (0.0..=1.0).contains(v)) {
        ScalarVolume::probability(shape, spacing, values)?
    } else {
        ScalarVolume::intensity(shape, spacing, values)?
    };
    Ok(vol.with_orientation(header.orientation).into())
}

/// Parses a segmentation mask stored with any supported datatype. Values
/// must be exactly 0 or 1 after scaling.
pub fn read_nifti_mask(bytes: &[u8]) -> Result<LabelVolume> {
    let vol = match read_nifti(bytes)? {
        AnyVolume::Label(v) => v,
        AnyVolume::Scalar(v) => {
            let mut data = Vec::with_capacity(v.len());
            for &x in v.data() {
                if x == 0.0 {
                    data.push(0);
                } else if x == 1.0 {
                    data.push(1);
                } else {
                    return Err(Error::InvalidMask(format!("mask value {x} is not 0 or 1")));
                }
            }
            LabelVolume::label(v.shape(), v.spacing(), data)?.with_orientation(*v.orientation())
        }
    };
    if let Some(bad) = vol.data().iter().find(|&&b| b > 1) {
        return Err(Error::InvalidMask(format!("mask value {bad} is not 0 or 1")));
    }
    Ok(vol)
}

/// Builds the header the writer emits for `volume`.
pub fn header_for<T: NiftiElement>(volume: &Volume<T>) -> NiftiHeader {
    let [nz, ny, nx] = volume.shape();
    let s = volume.spacing().as_array();
    let o = *volume.orientation();
    let mut intent_name = [0u8; 16];
    if volume.kind() == VolumeKind::Probability {
        intent_name[..PROBABILITY_INTENT.len()].copy_from_slice(PROBABILITY_INTENT);
    }
    NiftiHeader {
        sizeof_hdr: HEADER_SIZE as i32,
        dim: [3, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1],
        datatype: T::DATATYPE,
        bitpix: bitpix_for(T::DATATYPE).unwrap(),
        pixdim: [o.qfac, s[2] as f32, s[1] as f32, s[0] as f32, 0.0, 0.0, 0.0, 0.0],
        vox_offset: VOX_OFFSET as f32,
        scl_slope: 1.0,
        scl_inter: 0.0,
        xyzt_units: UNITS_MM,
        orientation: o,
        intent_name,
        magic: MAGIC,
    }
}

/// Serializes a volume as single-file NIfTI-1, optionally gzip-compressed.
///
/// Spacing is stored as float32, so spacings that are not representable in
/// single precision come back rounded.
pub fn write_nifti<T: NiftiElement>(volume: &Volume<T>, gzip: bool) -> Vec<u8> {
    let [nz, ny, nx] = volume.shape();
    assert!(
        [nz, ny, nx].iter().all(|&n| n <= i16::MAX as usize),
        "extent exceeds the NIfTI-1 limit of 32767"
    );
    let header = header_for(volume);
    let mut raw = Vec::with_capacity(VOX_OFFSET + volume.len() * 4);
    raw.extend_from_slice(&header.to_bytes());
    T::write_le(volume.data(), &mut raw);
    if !gzip {
        return raw;
    }
    // mtime stays 0 in the gzip header, so output is reproducible
    let mut enc = GzEncoder::new(Vec::with_capacity(raw.len() / 2), Compression::default());
    enc.write_all(&raw).expect("writing to memory cannot fail");
    enc.finish().expect("writing to memory cannot fail")
}

/// Writes an [`AnyVolume`] with the element type it carries.
pub fn write_any(volume: &AnyVolume, gzip: bool) -> Vec<u8> {
    match volume {
        AnyVolume::Scalar(v) => write_nifti(v, gzip),
        AnyVolume::Label(v) => write_nifti(v, gzip),
    }
}

pub fn is_gzip_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

pub fn read_nifti_file(path: &Path) -> Result<AnyVolume> {
    read_nifti(&fs::read(path)?)
}

pub fn write_nifti_file<T: NiftiElement>(path: &Path, volume: &Volume<T>) -> Result<()> {
    fs::write(path, write_nifti(volume, is_gzip_path(path)))?;
    Ok(())
}

pub const CT_FILE: &str = "CTres.nii.gz";
pub const PET_FILE: &str = "SUV.nii.gz";
pub const SEG_FILE: &str = "SEG.nii.gz";

/// One study in the dataset layout: a directory holding `CTres.nii.gz`,
/// `SUV.nii.gz` and optionally `SEG.nii.gz`.
#[derive(Clone, Debug)]
pub struct Case {
    pub id: String,
    pub ct: ScalarVolume,
    pub pet: ScalarVolume,
    pub seg: Option<LabelVolume>,
}

pub fn case_id(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

pub fn read_case(dir: &Path) -> Result<Case> {
    let ct = read_nifti_file(&dir.join(CT_FILE))?.into_scalar()?;
    let pet = read_nifti_file(&dir.join(PET_FILE))?.into_scalar()?;
    let seg_path: PathBuf = dir.join(SEG_FILE);
    let seg = if seg_path.exists() {
        Some(read_nifti_mask(&fs::read(&seg_path)?)?)
    } else {
        None
    };
    Ok(Case {
        id: case_id(dir),
        ct,
        pet,
        seg,
    })
}

pub fn write_case(dir: &Path, case: &Case) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_nifti_file(&dir.join(CT_FILE), &case.ct)?;
    write_nifti_file(&dir.join(PET_FILE), &case.pet)?;
    if let Some(seg) = &case.seg {
        write_nifti_file(&dir.join(SEG_FILE), seg)?;
    }
    Ok(())
}
