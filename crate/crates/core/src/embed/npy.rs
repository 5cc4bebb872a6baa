//! Minimal NPY v1.0 reader/writer for C-order little-endian `float32` and `int64` arrays.

use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";
/// Total header length (magic through the trailing newline) is a multiple of this.
pub const HEADER_ALIGN: usize = 64;

#[derive(Debug, Error)]
pub enum NpyError {
    #[error("npy header error: {0}")]
    Header(String),
    #[error("unsupported npy dtype {0:?}")]
    DtypeUnsupported(String),
    #[error("refusing to write an empty array")]
    Empty,
    #[error("shape {shape:?} does not match {len} values")]
    Shape { shape: Vec<usize>, len: usize },
    #[error("io error at {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

type Result<T> = std::result::Result<T, NpyError>;

#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    F32(Vec<f32>),
    I64(Vec<i64>),
}

impl NpyData {
    fn len(&self) -> usize {
        match self {
            NpyData::F32(v) => v.len(),
            NpyData::I64(v) => v.len(),
        }
    }

    fn descr(&self) -> &'static str {
        match self {
            NpyData::F32(_) => "<f4",
            NpyData::I64(_) => "<i8",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

impl NpyArray {
    pub fn new(shape: Vec<usize>, data: NpyData) -> Result<Self> {
        let len = data.len();
        if shape.iter().product::<usize>() != len {
            return Err(NpyError::Shape { shape, len });
        }
        Ok(Self { shape, data })
    }

    pub fn f32_2d(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(vec![rows, cols], NpyData::F32(data))
    }

    pub fn i64_1d(data: Vec<i64>) -> Self {
        Self {
            shape: vec![data.len()],
            data: NpyData::I64(data),
        }
    }
}

fn shape_literal(shape: &[usize]) -> String {
    match shape {
        [n] => format!("({n},)"),
        dims => format!(
            "({})",
            dims.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
        ),
    }
}

pub fn to_bytes(arr: &NpyArray) -> Result<Vec<u8>> {
    if arr.data.len() == 0 {
        return Err(NpyError::Empty);
    }
    let dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        arr.data.descr(),
        shape_literal(&arr.shape)
    );
    // magic(6) + version(2) + length(2) + dict + padding + '\n'
    let unpadded = 10 + dict.len() + 1;
    let padding = (HEADER_ALIGN - unpadded % HEADER_ALIGN) % HEADER_ALIGN;
    let header_len = dict.len() + padding + 1;
    let header_len = u16::try_from(header_len).map_err(|_| NpyError::Header("header too long for v1.0".into()))?;

    let item = match arr.data {
        NpyData::F32(_) => 4,
        NpyData::I64(_) => 8,
    };
    let mut out = Vec::with_capacity(unpadded + padding + arr.data.len() * item);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.resize(out.len() + padding, b' ');
    out.push(b'\n');
    match &arr.data {
        NpyData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        NpyData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    Ok(out)
}

/// Value following `'key':` in a header dict literal.
fn dict_value<'a>(dict: &'a str, key: &str) -> Result<&'a str> {
    let pat = format!("'{key}':");
    let at = dict
        .find(&pat)
        .ok_or_else(|| NpyError::Header(format!("missing key {key:?}")))?;
    Ok(dict[at + pat.len()..].trim_start())
}

fn parse_shape(rest: &str) -> Result<Vec<usize>> {
    let rest = rest
        .strip_prefix('(')
        .ok_or_else(|| NpyError::Header("shape is not a tuple".into()))?;
    let close = rest
        .find(')')
        .ok_or_else(|| NpyError::Header("unterminated shape tuple".into()))?;
    rest[..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| NpyError::Header(format!("bad shape entry {s:?}"))))
        .collect()
}

pub fn from_bytes(bytes: &[u8]) -> Result<NpyArray> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(NpyError::Header("missing \\x93NUMPY magic".into()));
    }
    if bytes[6..8] != [1, 0] {
        return Err(NpyError::Header(format!("unsupported version {}.{}", bytes[6], bytes[7])));
    }
    let header_len = usize::from(u16::from_le_bytes([bytes[8], bytes[9]]));
    let data_start = 10 + header_len;
    if bytes.len() < data_start {
        return Err(NpyError::Header("truncated header".into()));
    }
    let dict = std::str::from_utf8(&bytes[10..data_start])
        .map_err(|_| NpyError::Header("header is not ascii".into()))?
        .trim();
    if !dict.starts_with('{') || !dict.ends_with('}') {
        return Err(NpyError::Header("header is not a dict literal".into()));
    }

    let descr_rest = dict_value(dict, "descr")?;
    let descr = descr_rest
        .strip_prefix('\'')
        .and_then(|r| r.split('\'').next())
        .ok_or_else(|| NpyError::Header("descr is not a string".into()))?;
    let fortran = dict_value(dict, "fortran_order")?;
    if fortran.starts_with("True") {
        return Err(NpyError::Header("fortran order not supported".into()));
    } else if !fortran.starts_with("False") {
        return Err(NpyError::Header("bad fortran_order value".into()));
    }
    let shape = parse_shape(dict_value(dict, "shape")?)?;
    let count: usize = shape.iter().product();
    let body = &bytes[data_start..];

    let data = match descr {
        "<f4" => {
            if body.len() != count * 4 {
                return Err(NpyError::Header(format!("expected {} data bytes, found {}", count * 4, body.len())));
            }
            NpyData::F32(body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
        }
        "<i8" => {
            if body.len() != count * 8 {
                return Err(NpyError::Header(format!("expected {} data bytes, found {}", count * 8, body.len())));
            }
            NpyData::I64(body.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect())
        }
        other => return Err(NpyError::DtypeUnsupported(other.to_string())),
    };
    Ok(NpyArray { shape, data })
}

pub fn write_npy(path: &Path, arr: &NpyArray) -> Result<()> {
    let bytes = to_bytes(arr)?;
    std::fs::write(path, bytes).map_err(|source| NpyError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_npy(path: &Path) -> Result<NpyArray> {
    let bytes = std::fs::read(path).map_err(|source| NpyError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes)
}
