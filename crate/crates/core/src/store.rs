//! Binary activation dataset container (`SAEACT01`).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//!      0     8  magic "SAEACT01"
//!      8     4  version (u32, currently 1)
//!     12     8  rows N (u64)
//!     20     4  cols d (u32)
//!     24     4  element type (u32, 0 = float32)
//!     28     8  metadata length in bytes (u64)
//!     36   4Nd  row-major float32 payload
//!      …     …  metadata block (UTF-8)
//! ```
//!
//! The metadata block starts with zero or more `#key=value` attribute lines
//! (for example the layer tag) followed by zero or N sample records, one per
//! line: `sample_id \t source_uri \t taxon_id \t class_label`, with empty
//! fields for absent values.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const DATASET_MAGIC: &[u8; 8] = b"SAEACT01";
pub const DATASET_VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 36;

/// Element type code stored in the header. Only float32 exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    Float32,
}

impl ElementType {
    fn code(self) -> u32 {
        match self {
            ElementType::Float32 => 0,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(ElementType::Float32),
            other => Err(Error::Format(format!("unsupported element type {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetHeader {
    pub version: u32,
    pub rows: u64,
    pub cols: u32,
    pub element_type: ElementType,
    pub meta_bytes: u64,
}

impl DatasetHeader {
    pub fn payload_bytes(&self) -> u64 {
        self.rows * self.cols as u64 * 4
    }

    pub fn file_bytes(&self) -> u64 {
        HEADER_LEN + self.payload_bytes() + self.meta_bytes
    }

    fn encode(&self) -> [u8; HEADER_LEN as usize] {
        let mut buf = [0u8; HEADER_LEN as usize];
        buf[0..8].copy_from_slice(DATASET_MAGIC);
        buf[8..12].copy_from_slice(&self.version.to_le_bytes());
        buf[12..20].copy_from_slice(&self.rows.to_le_bytes());
        buf[20..24].copy_from_slice(&self.cols.to_le_bytes());
        buf[24..28].copy_from_slice(&self.element_type.code().to_le_bytes());
        buf[28..36].copy_from_slice(&self.meta_bytes.to_le_bytes());
        buf
    }

    fn decode(buf: &[u8; HEADER_LEN as usize]) -> Result<Self> {
        if &buf[0..8] != DATASET_MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"SAEACT01\"",
                String::from_utf8_lossy(&buf[0..8])
            )));
        }
        let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let header = Self {
            version,
            rows: u64::from_le_bytes(buf[12..20].try_into().unwrap()),
            cols: u32::from_le_bytes(buf[20..24].try_into().unwrap()),
            element_type: ElementType::from_code(u32::from_le_bytes(
                buf[24..28].try_into().unwrap(),
            ))?,
            meta_bytes: u64::from_le_bytes(buf[28..36].try_into().unwrap()),
        };
        if header.rows == 0 || header.cols == 0 {
            return Err(Error::Format(format!(
                "empty dataset: rows={} cols={}",
                header.rows, header.cols
            )));
        }
        Ok(header)
    }

    /// `rows=N cols=d version=v` followed by a line with the remaining fields.
    pub fn describe(&self) -> String {
        format!(
            "rows={} cols={} version={}\nelement_type=float32 meta_bytes={}\n",
            self.rows, self.cols, self.version, self.meta_bytes
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SampleMeta {
    pub sample_id: String,
    pub source_uri: Option<String>,
    pub taxon_id: Option<String>,
    pub class_label: Option<String>,
}

impl SampleMeta {
    pub fn new(sample_id: impl Into<String>) -> Self {
        Self {
            sample_id: sample_id.into(),
            ..Default::default()
        }
    }

    pub fn with_taxon(mut self, taxon: impl Into<String>) -> Self {
        self.taxon_id = Some(taxon.into());
        self
    }
}

/// An `N × d` activation matrix with optional per-sample metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDataset {
    data: Matrix<f32>,
    meta: Vec<SampleMeta>,
    attributes: BTreeMap<String, String>,
}

impl ActivationDataset {
    pub fn new(data: Matrix<f32>, meta: Vec<SampleMeta>) -> Result<Self> {
        if data.rows() == 0 || data.cols() == 0 {
            return Err(Error::Argument(format!(
                "dataset must have at least one row and column, got {}x{}",
                data.rows(),
                data.cols()
            )));
        }
        if let Some((r, c)) = data.find_non_finite() {
            return Err(Error::Data(format!(
                "non-finite value {} at row {r}, col {c}",
                data.get(r, c)
            )));
        }
        if !meta.is_empty() && meta.len() != data.rows() {
            return Err(Error::Argument(format!(
                "metadata has {} records for {} rows",
                meta.len(),
                data.rows()
            )));
        }
        validate_meta(&meta)?;
        Ok(Self {
            data,
            meta,
            attributes: BTreeMap::new(),
        })
    }

    /// Attaches a dataset-level attribute such as `layer=22`.
    pub fn with_attribute(mut self, key: &str, value: &str) -> Result<Self> {
        if key.is_empty() || key.contains(['=', '\n', '\t']) || value.contains('\n') {
            return Err(Error::Argument(format!("invalid attribute {key:?}={value:?}")));
        }
        self.attributes.insert(key.to_string(), value.to_string());
        Ok(self)
    }

    pub fn attribute(&self, key: &str) -> Option<&str> {
        self.attributes.get(key).map(String::as_str)
    }

    pub fn attributes(&self) -> &BTreeMap<String, String> {
        &self.attributes
    }

    pub fn data(&self) -> &Matrix<f32> {
        &self.data
    }

    pub fn into_data(self) -> Matrix<f32> {
        self.data
    }

    pub fn meta(&self) -> &[SampleMeta] {
        &self.meta
    }

    pub fn rows(&self) -> usize {
        self.data.rows()
    }

    pub fn cols(&self) -> usize {
        self.data.cols()
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            version: DATASET_VERSION,
            rows: self.rows() as u64,
            cols: self.cols() as u32,
            element_type: ElementType::Float32,
            meta_bytes: self.encode_meta().len() as u64,
        }
    }

    /// New dataset holding the listed rows (and their metadata) in order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let meta = if self.meta.is_empty() {
            Vec::new()
        } else {
            indices.iter().map(|&i| self.meta[i].clone()).collect()
        };
        Self {
            data: self.data.select_rows(indices),
            meta,
            attributes: self.attributes.clone(),
        }
    }

    fn encode_meta(&self) -> Vec<u8> {
        let mut out = String::new();
        for (k, v) in &self.attributes {
            out.push('#');
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        for m in &self.meta {
            out.push_str(&m.sample_id);
            for field in [&m.source_uri, &m.taxon_id, &m.class_label] {
                out.push('\t');
                out.push_str(field.as_deref().unwrap_or(""));
            }
            out.push('\n');
        }
        out.into_bytes()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = self.encode_meta();
        let header = DatasetHeader {
            meta_bytes: meta.len() as u64,
            ..self.header()
        };
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&header.encode())?;
        for &x in self.data.as_slice() {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(&meta)?;
        w.flush()?;
        Ok(())
    }
}

fn validate_meta(meta: &[SampleMeta]) -> Result<()> {
    let mut seen = HashSet::with_capacity(meta.len());
    for (i, m) in meta.iter().enumerate() {
        if m.sample_id.is_empty() || m.sample_id.starts_with('#') {
            return Err(Error::Argument(format!(
                "record {i}: sample_id must be non-empty and must not start with '#'"
            )));
        }
        let fields = [
            Some(&m.sample_id),
            m.source_uri.as_ref(),
            m.taxon_id.as_ref(),
            m.class_label.as_ref(),
        ];
        if fields.iter().flatten().any(|f| f.contains(['\t', '\n', '\r'])) {
            return Err(Error::Argument(format!(
                "record {i}: metadata fields may not contain tabs or newlines"
            )));
        }
        if !seen.insert(m.sample_id.as_str()) {
            return Err(Error::Argument(format!(
                "duplicate sample_id {:?}",
                m.sample_id
            )));
        }
    }
    Ok(())
}

fn decode_meta(bytes: &[u8], rows: usize) -> Result<(Vec<SampleMeta>, BTreeMap<String, String>)> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::Format(format!("metadata is not UTF-8: {e}")))?;
    let mut attributes = BTreeMap::new();
    let mut meta = Vec::new();
    for line in text.lines() {
        if let Some(attr) = line.strip_prefix('#') {
            let (k, v) = attr
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("malformed attribute line {line:?}")))?;
            attributes.insert(k.to_string(), v.to_string());
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Format(format!(
                "metadata record has {} fields, expected 4: {line:?}",
                fields.len()
            )));
        }
        let opt = |s: &str| (!s.is_empty()).then(|| s.to_string());
        meta.push(SampleMeta {
            sample_id: fields[0].to_string(),
            source_uri: opt(fields[1]),
            taxon_id: opt(fields[2]),
            class_label: opt(fields[3]),
        });
    }
    if !meta.is_empty() && meta.len() != rows {
        return Err(Error::Format(format!(
            "metadata has {} records for {rows} rows",
            meta.len()
        )));
    }
    validate_meta(&meta).map_err(|e| Error::Format(e.to_string()))?;
    Ok((meta, attributes))
}

/// Writes `matrix` with `meta` (empty, or one record per row).
pub fn write_dataset(path: impl AsRef<Path>, matrix: &Matrix<f32>, meta: &[SampleMeta]) -> Result<()> {
    ActivationDataset::new(matrix.clone(), meta.to_vec())?.write(path)
}

/// Reads and fully validates a dataset file.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<ActivationDataset> {
    let mut reader = DatasetReader::open(path)?;
    let rows = reader.header.rows as usize;
    let data = reader.read_rows(0, rows)?;
    let meta_bytes = reader.read_meta_bytes()?;
    let (meta, attributes) = decode_meta(&meta_bytes, rows)?;
    let mut ds = ActivationDataset::new(data, meta)?;
    ds.attributes = attributes;
    Ok(ds)
}

/// Reads only the header, validating it against the file size.
pub fn read_header(path: impl AsRef<Path>) -> Result<DatasetHeader> {
    Ok(DatasetReader::open(path)?.header)
}

/// Sequential/chunked access to a dataset file without materializing it.
pub struct DatasetReader {
    file: BufReader<File>,
    header: DatasetHeader,
}

impl DatasetReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        let actual = file.metadata()?.len();
        let mut file = BufReader::new(file);
        let mut buf = [0u8; HEADER_LEN as usize];
        if actual < HEADER_LEN {
            return Err(Error::Corrupt {
                expected: HEADER_LEN,
                actual,
            });
        }
        file.read_exact(&mut buf)?;
        let header = DatasetHeader::decode(&buf)?;
        if actual != header.file_bytes() {
            return Err(Error::Corrupt {
                expected: header.file_bytes(),
                actual,
            });
        }
        Ok(Self { file, header })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    /// Reads `count` rows starting at `start`; rejects non-finite values.
    pub fn read_rows(&mut self, start: usize, count: usize) -> Result<Matrix<f32>> {
        let rows = self.header.rows as usize;
        let cols = self.header.cols as usize;
        if start + count > rows {
            return Err(Error::Argument(format!(
                "row range {start}..{} exceeds {rows} rows",
                start + count
            )));
        }
        self.file
            .seek(SeekFrom::Start(HEADER_LEN + (start * cols * 4) as u64))?;
        let mut bytes = vec![0u8; count * cols * 4];
        self.file.read_exact(&mut bytes)?;
        let mut data = Vec::with_capacity(count * cols);
        for (i, c) in bytes.chunks_exact(4).enumerate() {
            let x = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if !x.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite value {x} at row {}, col {}",
                    start + i / cols,
                    i % cols
                )));
            }
            data.push(x);
        }
        Matrix::from_vec(count, cols, data)
    }

    /// Iterates the payload in chunks of at most `chunk_rows` rows.
    pub fn chunks(&mut self, chunk_rows: usize) -> impl Iterator<Item = Result<Matrix<f32>>> + '_ {
        let rows = self.header.rows as usize;
        let step = chunk_rows.max(1);
        (0..rows)
            .step_by(step)
            .map(move |s| self.read_rows(s, step.min(rows - s)))
    }

    fn read_meta_bytes(&mut self) -> Result<Vec<u8>> {
        self.file
            .seek(SeekFrom::Start(HEADER_LEN + self.header.payload_bytes()))?;
        let mut bytes = vec![0u8; self.header.meta_bytes as usize];
        self.file.read_exact(&mut bytes)?;
        Ok(bytes)
    }
}

/// Random disjoint split into `⌈fraction·N⌉` training rows and the remainder.
/// Rows keep their original relative order inside each part.
pub fn split_dataset(
    ds: &ActivationDataset,
    fraction: f64,
    seed: u64,
) -> Result<(ActivationDataset, ActivationDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = ds.rows();
    if n < 2 {
        return Err(Error::Argument(format!("cannot split {n} row(s)")));
    }
    let (train_idx, val_idx) = split_indices(n, fraction, seed)?;
    Ok((ds.select(&train_idx), ds.select(&val_idx)))
}

pub(crate) fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    // guard against 0.7 * 10 = 7.000000000000001
    let n_train = ((fraction * n as f64) - 1e-9).ceil() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Argument(format!(
            "fraction {fraction} of {n} rows leaves an empty part"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = idx[..n_train].to_vec();
    let mut val = idx[n_train..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    fn ds(rows: usize, cols: usize) -> ActivationDataset {
        let data = (0..rows * cols).map(|i| i as f32 * 0.25 - 3.0).collect();
        ActivationDataset::new(Matrix::from_vec(rows, cols, data).unwrap(), vec![]).unwrap()
    }

    #[test]
    fn single_zero_round_trip() {
        let dir = tmp();
        let p = dir.path().join("a.saeact");
        let m = Matrix::from_rows(&[[0.0f32]]).unwrap();
        write_dataset(&p, &m, &[]).unwrap();
        let back = read_dataset(&p).unwrap();
        assert_eq!(back.header().rows, 1);
        assert_eq!(back.header().cols, 1);
        assert_eq!(back.data(), &m);
    }

    #[test]
    fn small_round_trip_with_meta_and_attributes() {
        let dir = tmp();
        let p = dir.path().join("b.saeact");
        let m = Matrix::from_rows(&[[1.5f32, -2.0, 3.25], [4.0, 5.5, -6.75]]).unwrap();
        let meta = vec![
            SampleMeta {
                sample_id: "img-0".into(),
                source_uri: Some("file:///x.jpg".into()),
                taxon_id: Some("t1".into()),
                class_label: None,
            },
            SampleMeta::new("img-1").with_taxon("t2"),
        ];
        let d = ActivationDataset::new(m, meta)
            .unwrap()
            .with_attribute("layer", "CLS layer 22")
            .unwrap();
        d.write(&p).unwrap();
        let back = read_dataset(&p).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.attribute("layer"), Some("CLS layer 22"));
    }

    #[test]
    fn non_finite_rejected_with_location() {
        let m = Matrix::from_rows(&[[1.0f32, 2.0], [3.0, f32::INFINITY]]).unwrap();
        let err = write_dataset(tmp().path().join("x"), &m, &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 1") && msg.contains("col 1"), "{msg}");
    }

    #[test]
    fn meta_length_mismatch_rejected() {
        let m = Matrix::from_rows(&[[1.0f32], [2.0]]).unwrap();
        let err = write_dataset(tmp().path().join("x"), &m, &[SampleMeta::new("a")]).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn duplicate_sample_ids_rejected() {
        let m = Matrix::from_rows(&[[1.0f32], [2.0]]).unwrap();
        let meta = vec![SampleMeta::new("a"), SampleMeta::new("a")];
        assert!(ActivationDataset::new(m, meta).is_err());
    }

    #[test]
    fn bad_magic_is_format_error() {
        let dir = tmp();
        let p = dir.path().join("c.saeact");
        ds(2, 2).write(&p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[..8].copy_from_slice(b"XXXXXXXX");
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::Format(_))));
    }

    #[test]
    fn bad_version_is_format_error() {
        let dir = tmp();
        let p = dir.path().join("v.saeact");
        ds(2, 2).write(&p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_reports_byte_counts() {
        let dir = tmp();
        let p = dir.path().join("d.saeact");
        ds(10, 4).write(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let expected = bytes.len() as u64;
        std::fs::write(&p, &bytes[..(HEADER_LEN as usize + 50)]).unwrap();
        match read_dataset(&p) {
            Err(Error::Corrupt { expected: e, actual }) => {
                assert_eq!(e, expected);
                assert_eq!(actual, HEADER_LEN + 50);
            }
            other => panic!("expected corruption error, got {other:?}"),
        }
    }

    #[test]
    fn nan_in_payload_is_data_error() {
        let dir = tmp();
        let p = dir.path().join("e.saeact");
        ds(3, 3).write(&p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        let off = HEADER_LEN as usize + 4 * 4;
        bytes[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&p, bytes).unwrap();
        let err = read_dataset(&p).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        assert!(err.to_string().contains("row 1, col 1"));
    }

    #[test]
    fn chunked_reads_cover_payload() {
        let dir = tmp();
        let p = dir.path().join("f.saeact");
        let d = ds(10, 3);
        d.write(&p).unwrap();
        let mut r = DatasetReader::open(&p).unwrap();
        let chunks: Vec<_> = r.chunks(4).collect::<Result<_>>().unwrap();
        assert_eq!(chunks.iter().map(|c| c.rows()).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert_eq!(chunks[2].row(1), d.data().row(9));
    }

    #[test]
    fn split_partition_law() {
        let d = ds(10, 2);
        let (a, b) = split_dataset(&d, 0.8, 7).unwrap();
        assert_eq!((a.rows(), b.rows()), (8, 2));
        let mut rows: Vec<Vec<f32>> = a.data().iter_rows().chain(b.data().iter_rows()).map(<[f32]>::to_vec).collect();
        rows.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let mut orig: Vec<Vec<f32>> = d.data().iter_rows().map(<[f32]>::to_vec).collect();
        orig.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(rows, orig);
        let (a2, b2) = split_dataset(&d, 0.8, 7).unwrap();
        assert_eq!((a, b), (a2, b2));
    }

    #[test]
    fn split_ceiling_rule() {
        let (a, b) = split_dataset(&ds(3, 1), 0.5, 1).unwrap();
        assert_eq!((a.rows(), b.rows()), (2, 1));
        let (a, b) = split_dataset(&ds(10, 1), 0.7, 1).unwrap();
        assert_eq!((a.rows(), b.rows()), (7, 3));
    }

    #[test]
    fn split_rejects_bad_fraction() {
        for f in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(split_dataset(&ds(4, 1), f, 0), Err(Error::Argument(_))));
        }
    }
}
