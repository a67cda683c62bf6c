//! Dense matrix files.
//!
//! Binary `.saem`: magic `SAEM`, `u16` version, `u32` rows, `u32` cols
//! (little-endian), then `rows · cols` row-major `f32` values. Row and
//! column ids live in optional UTF-8 sidecars `<file>.rows` / `<file>.cols`
//! with one id per line.
//!
//! `.csv`: a header row of column ids followed by one comma-separated row
//! per matrix row. An empty first header cell marks a leading row-id column.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};

use super::binary::{read_exact_or, ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 4] = b"SAEM";
pub const MATRIX_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub data: Array2<f32>,
    pub row_ids: Option<Vec<String>>,
    pub col_ids: Option<Vec<String>>,
}

impl LabeledMatrix {
    pub fn new(data: Array2<f32>) -> Self {
        LabeledMatrix {
            data,
            row_ids: None,
            col_ids: None,
        }
    }

    pub fn with_col_ids(mut self, ids: Vec<String>) -> Self {
        self.col_ids = Some(ids);
        self
    }

    pub fn with_row_ids(mut self, ids: Vec<String>) -> Self {
        self.row_ids = Some(ids);
        self
    }

    /// Column ids, or their indices as strings when none were stored.
    pub fn col_ids_or_index(&self) -> Vec<String> {
        self.col_ids
            .clone()
            .unwrap_or_else(|| (0..self.data.ncols()).map(|i| i.to_string()).collect())
    }

    pub fn row_ids_or_index(&self) -> Vec<String> {
        self.row_ids
            .clone()
            .unwrap_or_else(|| (0..self.data.nrows()).map(|i| i.to_string()).collect())
    }

    fn check_ids(&self) -> Result<()> {
        check_id_count("row", self.row_ids.as_deref(), self.data.nrows())?;
        check_id_count("column", self.col_ids.as_deref(), self.data.ncols())
    }
}

fn check_id_count(what: &str, ids: Option<&[String]>, expected: usize) -> Result<()> {
    match ids {
        Some(ids) if ids.len() != expected => Err(Error::Format(format!(
            "{what} id count mismatch: {} ids for {expected} {what}s",
            ids.len()
        ))),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Binary,
    Csv,
}

impl MatrixFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("saem") => Ok(MatrixFormat::Binary),
            Some(e) if e.eq_ignore_ascii_case("csv") => Ok(MatrixFormat::Csv),
            _ => Err(Error::Argument(format!(
                "{}: matrix files must end in .saem or .csv",
                path.display()
            ))),
        }
    }
}

pub fn sidecar_path(path: &Path, kind: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(kind);
    PathBuf::from(s)
}

pub fn write_matrix(path: &Path, m: &LabeledMatrix) -> Result<()> {
    m.check_ids()?;
    match MatrixFormat::from_path(path)? {
        MatrixFormat::Binary => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            encode_binary(m.data.view(), BufWriter::new(file))?;
            write_sidecar(&sidecar_path(path, "rows"), m.row_ids.as_deref())?;
            write_sidecar(&sidecar_path(path, "cols"), m.col_ids.as_deref())
        }
        MatrixFormat::Csv => write_csv(path, m),
    }
}

pub fn read_matrix(path: &Path) -> Result<LabeledMatrix> {
    match MatrixFormat::from_path(path)? {
        MatrixFormat::Binary => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let data = decode_binary(BufReader::new(file))
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            let m = LabeledMatrix {
                data,
                row_ids: read_sidecar(&sidecar_path(path, "rows"))?,
                col_ids: read_sidecar(&sidecar_path(path, "cols"))?,
            };
            m.check_ids()
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            Ok(m)
        }
        MatrixFormat::Csv => read_csv(path),
    }
}

pub fn encode_binary<W: Write>(data: ArrayView2<f32>, out: W) -> Result<()> {
    let mut w = ByteWriter::new(out);
    w.bytes(MATRIX_MAGIC)?;
    w.u16(MATRIX_VERSION)?;
    w.u32(u32::try_from(data.nrows()).map_err(|_| Error::Argument("too many rows".into()))?)?;
    w.u32(u32::try_from(data.ncols()).map_err(|_| Error::Argument("too many columns".into()))?)?;
    w.f32s(data.iter().copied())?;
    w.finish()
}

pub fn decode_binary<R: Read>(input: R) -> Result<Array2<f32>> {
    let mut r = ByteReader::new(input);
    let magic: [u8; 4] = read_exact_or(&mut r, "header")?;
    if &magic != MATRIX_MAGIC {
        return Err(Error::Format(format!(
            "magic mismatch: expected SAEM, found {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = r.u16()?;
    if version != MATRIX_VERSION {
        return Err(Error::Format(format!("unsupported SAEM version {version}")));
    }
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let values = r.f32s(rows * cols)?;
    if !r.at_end()? {
        return Err(Error::Format(format!(
            "trailing bytes after payload at byte {}",
            r.position()
        )));
    }
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Format(e.to_string()))
}

fn write_sidecar(path: &Path, ids: Option<&[String]>) -> Result<()> {
    match ids {
        Some(ids) => {
            let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
            for id in ids {
                if id.contains('\n') {
                    return Err(Error::Argument(format!("id {id:?} contains a newline")));
                }
                writeln!(out, "{id}").map_err(|e| Error::io(path, e))?;
            }
            out.flush().map_err(|e| Error::io(path, e))
        }
        None => match std::fs::remove_file(path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(Error::io(path, e)),
        },
    }
}

fn read_sidecar(path: &Path) -> Result<Option<Vec<String>>> {
    match File::open(path) {
        Ok(f) => BufReader::new(f)
            .lines()
            .collect::<std::io::Result<Vec<_>>>()
            .map(Some)
            .map_err(|e| Error::io(path, e)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn write_csv(path: &Path, m: &LabeledMatrix) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut header = Vec::with_capacity(m.data.ncols() + 1);
    if m.row_ids.is_some() {
        header.push(String::new());
    }
    header.extend(m.col_ids_or_index());
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for (i, row) in m.data.rows().into_iter().enumerate() {
        let mut fields = Vec::with_capacity(row.len() + 1);
        if let Some(ids) = &m.row_ids {
            fields.push(ids[i].clone());
        }
        fields.extend(row.iter().map(|v| v.to_string()));
        writeln!(out, "{}", fields.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

fn read_csv(path: &Path) -> Result<LabeledMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty CSV", path.display())))?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let mut header: Vec<String> = header.trim_end_matches('\r').split(',').map(str::to_owned).collect();
    let has_row_ids = header.first().is_some_and(|h| h.is_empty());
    if has_row_ids {
        header.remove(0);
    }
    let cols = header.len();
    let mut values = Vec::new();
    let mut row_ids = Vec::new();
    let mut rows = 0;
    for (lineno, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        if has_row_ids {
            row_ids.push(fields.next().unwrap_or_default().to_owned());
        }
        let before = values.len();
        for f in fields {
            let v: f32 = f.trim().parse().map_err(|_| {
                Error::Format(format!("{}:{}: bad number {f:?}", path.display(), lineno + 1))
            })?;
            values.push(v);
        }
        if values.len() - before != cols {
            return Err(Error::Format(format!(
                "{}:{}: expected {cols} values, found {}",
                path.display(),
                lineno + 1,
                values.len() - before
            )));
        }
        rows += 1;
    }
    let data = Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Format(e.to_string()))?;
    Ok(LabeledMatrix {
        data,
        row_ids: has_row_ids.then_some(row_ids),
        col_ids: Some(header),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn binary_round_trip_with_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.saem");
        let m = LabeledMatrix::new(array![[1.0, -2.5, 3.25, 0.0], [f32::MIN_POSITIVE, 5.0, 6.0, 7.0], [8.0, 9.0, 1e-30, -0.0]])
            .with_col_ids(vec!["a".into(), "b".into(), "c".into(), "d".into()])
            .with_row_ids(vec!["r0".into(), "r1".into(), "r2".into()]);
        write_matrix(&path, &m).unwrap();
        let back = read_matrix(&path).unwrap();
        assert_eq!(back.row_ids, m.row_ids);
        assert_eq!(back.col_ids, m.col_ids);
        let bits = |a: &Array2<f32>| a.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.data), bits(&m.data));
    }

    #[test]
    fn header_layout_is_fixed() {
        let mut buf = Vec::new();
        encode_binary(array![[1.0f32, 2.0]].view(), &mut buf).unwrap();
        assert_eq!(&buf[..4], b"SAEM");
        assert_eq!(&buf[4..6], &1u16.to_le_bytes());
        assert_eq!(&buf[6..10], &1u32.to_le_bytes());
        assert_eq!(&buf[10..14], &2u32.to_le_bytes());
        assert_eq!(&buf[14..18], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 14 + 8);
    }

    #[test]
    fn truncated_payload_reports_byte() {
        let mut buf = Vec::new();
        encode_binary(Array2::<f32>::zeros((3, 4)).view(), &mut buf).unwrap();
        buf.truncate(30);
        let err = decode_binary(buf.as_slice()).unwrap_err();
        assert_eq!(err.to_string(), "truncated payload at byte 30");
    }

    #[test]
    fn magic_mismatch_rejected() {
        let err = decode_binary(&b"NOPE\x01\x00"[..]).unwrap_err();
        assert!(err.to_string().contains("magic mismatch"), "{err}");
    }

    #[test]
    fn id_count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.saem");
        let m = LabeledMatrix::new(Array2::zeros((2, 2))).with_col_ids(vec!["x".into()]);
        assert!(write_matrix(&path, &m).is_err());
        write_matrix(&path, &LabeledMatrix::new(Array2::zeros((2, 2)))).unwrap();
        std::fs::write(sidecar_path(&path, "cols"), "x\ny\nz\n").unwrap();
        let err = read_matrix(&path).unwrap_err();
        assert!(err.to_string().contains("id count mismatch"), "{err}");
    }

    #[test]
    fn csv_with_named_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "g1,g2,g3\n1,2.5,3\n-4,5e-1,0.125\n").unwrap();
        let m = read_matrix(&path).unwrap();
        assert_eq!(m.data, array![[1.0, 2.5, 3.0], [-4.0, 0.5, 0.125]]);
        assert_eq!(m.col_ids.unwrap(), vec!["g1", "g2", "g3"]);
        assert!(m.row_ids.is_none());
    }

    #[test]
    fn unknown_extension_rejected() {
        assert!(MatrixFormat::from_path(Path::new("x.h5")).is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip_six_digits(values in proptest::collection::vec(-1e6f32..1e6, 6)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.csv");
            let m = LabeledMatrix::new(Array2::from_shape_vec((2, 3), values).unwrap())
                .with_row_ids(vec!["a".into(), "b".into()]);
            write_matrix(&path, &m).unwrap();
            let back = read_matrix(&path).unwrap();
            prop_assert_eq!(back.row_ids.clone(), m.row_ids.clone());
            for (a, b) in back.data.iter().zip(m.data.iter()) {
                prop_assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-30));
            }
        }
    }
}
