//! Minimal NIfTI-1 reader/writer for volumes, label maps, and displacement
//! fields, with transparent gzip.
//!
//! Axis convention: crate axis 0/1/2 maps to NIfTI dim 1/2/3 (x/y/z); the
//! in-memory layout (axis 2 fastest) is transposed to the file layout
//! (dim 1 fastest) on the way through. Fields are 4-D with the component as
//! the last dimension, ordered (x, y, z), in voxel units; a sidecar JSON
//! records the convention.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian, ReadBytesExt};
use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{cast, up, Scalar};
use crate::volgrid::{DisplacementField, LabelMap, Volume};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_INT8: i16 = 256;
const DT_UINT16: i16 = 512;
const DT_UINT32: i16 = 768;

struct RawNifti {
    dims: Vec<usize>,
    pixdim: [f64; 3],
    /// decoded to f64, already slope/intercept scaled, file element order
    data: Vec<f64>,
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 2];
    let got = file.read(&mut magic)?;
    drop(file);
    let file = BufReader::new(File::open(path)?);
    if got == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(MultiGzDecoder::new(file)))
    } else {
        Ok(Box::new(file))
    }
}

fn read_raw(path: &Path) -> Result<RawNifti> {
    let mut reader = open_maybe_gz(path)?;
    let mut header = [0u8; HEADER_SIZE];
    reader
        .read_exact(&mut header)
        .map_err(|e| Error::nifti(path, format!("truncated header: {e}")))?;

    let sizeof_le = LittleEndian::read_i32(&header[0..4]);
    let sizeof_be = BigEndian::read_i32(&header[0..4]);
    let little = if sizeof_le == 348 {
        true
    } else if sizeof_be == 348 {
        false
    } else {
        return Err(Error::nifti(path, "not a NIfTI-1 file (sizeof_hdr != 348)"));
    };
    let read_i16 = |buf: &[u8]| if little { LittleEndian::read_i16(buf) } else { BigEndian::read_i16(buf) };
    let read_f32 = |buf: &[u8]| if little { LittleEndian::read_f32(buf) } else { BigEndian::read_f32(buf) };

    let magic = &header[344..348];
    if magic != b"n+1\0" && magic != b"ni1\0" {
        return Err(Error::nifti(path, "bad NIfTI magic"));
    }
    if magic == b"ni1\0" {
        return Err(Error::nifti(path, "detached .hdr/.img pairs are not supported"));
    }

    let ndim = read_i16(&header[40..42]) as usize;
    if !(1..=7).contains(&ndim) {
        return Err(Error::nifti(path, format!("invalid dim[0] = {ndim}")));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| read_i16(&header[42 + 2 * i..44 + 2 * i]).max(1) as usize)
        .collect();
    let pixdim = [
        read_f32(&header[80..84]).abs() as f64,
        read_f32(&header[84..88]).abs() as f64,
        read_f32(&header[88..92]).abs() as f64,
    ];
    let datatype = read_i16(&header[70..72]);
    let vox_offset = read_f32(&header[108..112]) as usize;
    let scl_slope = read_f32(&header[112..116]);
    let scl_inter = read_f32(&header[116..120]);

    // skip to the data section
    let mut skip = vec![0u8; vox_offset.saturating_sub(HEADER_SIZE)];
    reader
        .read_exact(&mut skip)
        .map_err(|e| Error::nifti(path, format!("truncated extension area: {e}")))?;

    let count: usize = dims.iter().product();
    let elem_size = match datatype {
        DT_UINT8 | DT_INT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_INT32 | DT_UINT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => {
            return Err(Error::nifti(path, format!("unsupported datatype {other}")));
        }
    };
    let mut buf = vec![0u8; count * elem_size];
    reader
        .read_exact(&mut buf)
        .map_err(|e| Error::nifti(path, format!("truncated data section: {e}")))?;

    let mut data = Vec::with_capacity(count);
    let mut cursor = &buf[..];
    macro_rules! decode {
        ($read:expr) => {
            for _ in 0..count {
                data.push($read as f64);
            }
        };
    }
    match (datatype, little) {
        (DT_UINT8, _) => decode!(cursor.read_u8()?),
        (DT_INT8, _) => decode!(cursor.read_i8()?),
        (DT_INT16, true) => decode!(cursor.read_i16::<LittleEndian>()?),
        (DT_INT16, false) => decode!(cursor.read_i16::<BigEndian>()?),
        (DT_UINT16, true) => decode!(cursor.read_u16::<LittleEndian>()?),
        (DT_UINT16, false) => decode!(cursor.read_u16::<BigEndian>()?),
        (DT_INT32, true) => decode!(cursor.read_i32::<LittleEndian>()?),
        (DT_INT32, false) => decode!(cursor.read_i32::<BigEndian>()?),
        (DT_UINT32, true) => decode!(cursor.read_u32::<LittleEndian>()?),
        (DT_UINT32, false) => decode!(cursor.read_u32::<BigEndian>()?),
        (DT_FLOAT32, true) => decode!(cursor.read_f32::<LittleEndian>()?),
        (DT_FLOAT32, false) => decode!(cursor.read_f32::<BigEndian>()?),
        (DT_FLOAT64, true) => decode!(cursor.read_f64::<LittleEndian>()?),
        (DT_FLOAT64, false) => decode!(cursor.read_f64::<BigEndian>()?),
        _ => unreachable!(),
    }
    if scl_slope != 0.0 && !(scl_slope == 1.0 && scl_inter == 0.0) {
        for v in &mut data {
            *v = *v * scl_slope as f64 + scl_inter as f64;
        }
    }
    Ok(RawNifti {
        dims,
        pixdim,
        data,
    })
}

fn write_raw(
    path: &Path,
    dims: &[usize],
    pixdim: [f64; 3],
    datatype: i16,
    payload: &[u8],
) -> Result<()> {
    let mut header = [0u8; VOX_OFFSET];
    LittleEndian::write_i32(&mut header[0..4], 348);
    LittleEndian::write_i16(&mut header[40..42], dims.len() as i16);
    for (i, &d) in dims.iter().enumerate() {
        LittleEndian::write_i16(&mut header[42 + 2 * i..44 + 2 * i], d as i16);
    }
    for i in dims.len()..7 {
        LittleEndian::write_i16(&mut header[42 + 2 * i..44 + 2 * i], 1);
    }
    LittleEndian::write_i16(&mut header[70..72], datatype);
    let bitpix: i16 = match datatype {
        DT_UINT8 | DT_INT8 => 8,
        DT_INT16 | DT_UINT16 => 16,
        DT_INT32 | DT_UINT32 | DT_FLOAT32 => 32,
        DT_FLOAT64 => 64,
        _ => unreachable!(),
    };
    LittleEndian::write_i16(&mut header[72..74], bitpix);
    LittleEndian::write_f32(&mut header[76..80], 1.0);
    LittleEndian::write_f32(&mut header[80..84], pixdim[0] as f32);
    LittleEndian::write_f32(&mut header[84..88], pixdim[1] as f32);
    LittleEndian::write_f32(&mut header[88..92], pixdim[2] as f32);
    for i in 4..8 {
        LittleEndian::write_f32(&mut header[76 + 4 * i..80 + 4 * i], 1.0);
    }
    LittleEndian::write_f32(&mut header[108..112], VOX_OFFSET as f32);
    LittleEndian::write_f32(&mut header[112..116], 1.0); // scl_slope
    LittleEndian::write_f32(&mut header[116..120], 0.0); // scl_inter
    header[344..348].copy_from_slice(b"n+1\0");

    let gz = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("gz"))
        .unwrap_or(false);
    let file = BufWriter::new(File::create(path)?);
    let mut out: Box<dyn Write> = if gz {
        Box::new(GzEncoder::new(file, flate2::Compression::fast()))
    } else {
        Box::new(file)
    };
    out.write_all(&header)?;
    out.write_all(payload)?;
    out.flush()?;
    Ok(())
}

/// Read a 3-D scalar volume. Values arrive unnormalized.
pub fn read_volume<T: Scalar>(path: impl AsRef<Path>) -> Result<Volume<T>> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    let spatial: Vec<usize> = raw.dims.iter().copied().filter(|&d| d > 1).collect();
    let dims = match raw.dims.len() {
        3 => raw.dims.clone(),
        // accept trailing singleton dims (e.g. 4-D with one timepoint)
        _ if spatial.len() == 3 && raw.dims[..3].iter().product::<usize>() == raw.data.len() => {
            raw.dims[..3].to_vec()
        }
        _ => {
            return Err(Error::nifti(
                path,
                format!("expected a 3-D volume, found dims {:?}", raw.dims),
            ));
        }
    };
    let shape = [dims[0], dims[1], dims[2]];
    let n = shape[0] * shape[1] * shape[2];
    let mut values = vec![T::zero(); n];
    // file order: dim1 fastest -> transpose into axis-2-fastest memory
    let mut fi = 0usize;
    for i2 in 0..shape[2] {
        for i1 in 0..shape[1] {
            for i0 in 0..shape[0] {
                values[(i0 * shape[1] + i1) * shape[2] + i2] = cast::<T>(raw.data[fi]);
                fi += 1;
            }
        }
    }
    let v = Volume::new(shape, raw.pixdim, values)?;
    if !v.all_finite() {
        return Err(Error::nifti(path, "volume contains non-finite values"));
    }
    Ok(v)
}

/// Write a 3-D scalar volume as float32.
pub fn write_volume<T: Scalar>(path: impl AsRef<Path>, v: &Volume<T>) -> Result<()> {
    let shape = v.shape;
    let mut payload = Vec::with_capacity(v.values.len() * 4);
    for i2 in 0..shape[2] {
        for i1 in 0..shape[1] {
            for i0 in 0..shape[0] {
                let val = up(v.values[(i0 * shape[1] + i1) * shape[2] + i2]) as f32;
                payload.extend_from_slice(&val.to_le_bytes());
            }
        }
    }
    write_raw(path.as_ref(), &shape, v.spacing, DT_FLOAT32, &payload)
}

/// Read an integer label map (integer datatypes only).
pub fn read_labels(path: impl AsRef<Path>) -> Result<(LabelMap, [f64; 3])> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    if raw.dims.len() != 3 {
        return Err(Error::nifti(
            path,
            format!("expected a 3-D label map, found dims {:?}", raw.dims),
        ));
    }
    let shape = [raw.dims[0], raw.dims[1], raw.dims[2]];
    let mut values = vec![0u32; raw.data.len()];
    let mut fi = 0usize;
    for i2 in 0..shape[2] {
        for i1 in 0..shape[1] {
            for i0 in 0..shape[0] {
                let v = raw.data[fi];
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::nifti(path, format!("non-integer label value {v}")));
                }
                values[(i0 * shape[1] + i1) * shape[2] + i2] = v as u32;
                fi += 1;
            }
        }
    }
    Ok((LabelMap::new(shape, values)?, raw.pixdim))
}

/// Write a label map as int32.
pub fn write_labels(path: impl AsRef<Path>, labels: &LabelMap, spacing: [f64; 3]) -> Result<()> {
    let shape = labels.shape;
    let mut payload = Vec::with_capacity(labels.values.len() * 4);
    for i2 in 0..shape[2] {
        for i1 in 0..shape[1] {
            for i0 in 0..shape[0] {
                let val = labels.values[(i0 * shape[1] + i1) * shape[2] + i2] as i32;
                payload.extend_from_slice(&val.to_le_bytes());
            }
        }
    }
    write_raw(path.as_ref(), &shape, spacing, DT_INT32, &payload)
}

/// Sidecar metadata stored next to every field file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub units: String,
    pub component_order: String,
    pub component_axis: String,
    pub axis_convention: String,
}

impl Default for FieldSidecar {
    fn default() -> Self {
        Self {
            units: "voxels".into(),
            component_order: "xyz".into(),
            component_axis: "last".into(),
            axis_convention: "component j displaces along volume axis j (NIfTI dim j+1)".into(),
        }
    }
}

/// Path of the JSON sidecar for a field file (`field.nii.gz` ->
/// `field.json`).
pub fn sidecar_path(field_path: &Path) -> PathBuf {
    let name = field_path
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_default();
    let stem = name
        .trim_end_matches(".gz")
        .trim_end_matches(".nii")
        .to_string();
    field_path.with_file_name(format!("{stem}.json"))
}

/// Write a displacement field as a 4-D float32 NIfTI (component last, in
/// voxel units) plus its JSON sidecar.
pub fn write_field<T: Scalar>(path: impl AsRef<Path>, field: &DisplacementField<T>) -> Result<()> {
    let path = path.as_ref();
    let shape = field.shape;
    let n = field.vectors.len();
    let mut payload = Vec::with_capacity(3 * n * 4);
    for comp in 0..3 {
        for i2 in 0..shape[2] {
            for i1 in 0..shape[1] {
                for i0 in 0..shape[0] {
                    let val =
                        up(field.vectors[(i0 * shape[1] + i1) * shape[2] + i2][comp]) as f32;
                    payload.extend_from_slice(&val.to_le_bytes());
                }
            }
        }
    }
    write_raw(
        path,
        &[shape[0], shape[1], shape[2], 3],
        field.spacing,
        DT_FLOAT32,
        &payload,
    )?;
    let sidecar = serde_json::to_string_pretty(&FieldSidecar::default())?;
    std::fs::write(sidecar_path(path), sidecar)?;
    Ok(())
}

/// Read a displacement field written by [`write_field`].
pub fn read_field<T: Scalar>(path: impl AsRef<Path>) -> Result<DisplacementField<T>> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    if raw.dims.len() != 4 || raw.dims[3] != 3 {
        return Err(Error::nifti(
            path,
            format!("expected a 4-D field with 3 components, found dims {:?}", raw.dims),
        ));
    }
    let shape = [raw.dims[0], raw.dims[1], raw.dims[2]];
    let n = shape[0] * shape[1] * shape[2];
    let mut vectors = vec![[T::zero(); 3]; n];
    let mut fi = 0usize;
    for comp in 0..3 {
        for i2 in 0..shape[2] {
            for i1 in 0..shape[1] {
                for i0 in 0..shape[0] {
                    vectors[(i0 * shape[1] + i1) * shape[2] + i2][comp] =
                        cast::<T>(raw.data[fi]);
                    fi += 1;
                }
            }
        }
    }
    DisplacementField::new(shape, raw.pixdim, vectors)
}
