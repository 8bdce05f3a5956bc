//! Little-endian binary artifacts.
//!
//! Every file starts with an 8-byte magic and a `u32` version. Readers take
//! the whole file, check the magic, version and exact length, and reject
//! anything left over.

use std::fs;
use std::path::Path;

use memaudit_core::attacks::{AttackId, AttackScores};
use memaudit_core::nn::{Dataset, LayerParams, Matrix, MlpModel};
use memaudit_core::shadow::MembershipMatrix;

use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"MEMDSET1";
pub const MODEL_MAGIC: &[u8; 8] = b"MEMMLP1\0";
pub const LOGITS_MAGIC: &[u8; 8] = b"MEMLGT1\0";
pub const MASK_MAGIC: &[u8; 8] = b"MEMMSK1\0";
pub const SCORES_MAGIC: &[u8; 8] = b"MEMSCR1\0";
pub const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn new(magic: &[u8; 8]) -> Self {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(magic);
        w.u32(VERSION);
        w
    }

    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    path: &'a Path,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(path: &'a Path, buf: &'a [u8], magic: &[u8; 8]) -> Result<Self> {
        if buf.len() < 8 || &buf[..8] != magic {
            return Err(Error::format(
                path,
                format!("bad magic, expected {:?}", String::from_utf8_lossy(magic)),
            ));
        }
        let mut r = Reader { path, buf, pos: 8 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format(self.path, format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    /// Fails early when a header promises more payload than the file holds.
    fn expect_remaining(&self, n: Option<usize>) -> Result<()> {
        let left = self.buf.len() - self.pos;
        match n {
            Some(n) if n == left => Ok(()),
            Some(n) if n > left => Err(Error::format(
                self.path,
                format!("truncated: header needs {n} payload bytes, found {left}"),
            )),
            Some(n) => Err(Error::format(
                self.path,
                format!("{} trailing bytes after payload", left - n),
            )),
            None => Err(Error::format(self.path, "header sizes overflow")),
        }
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.err("size overflow"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn err(&self, reason: impl Into<String>) -> Error {
        Error::format(self.path, reason)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn to_usize(v: u64, r: &Reader) -> Result<usize> {
    usize::try_from(v).map_err(|_| r.err("size does not fit in memory"))
}

fn mul(parts: &[usize]) -> Option<usize> {
    parts.iter().try_fold(1usize, |acc, &p| acc.checked_mul(p))
}

fn check_finite(values: &[f32], r: &Reader) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(r.err(format!("non-finite value at element {i}"))),
        None => Ok(()),
    }
}

// ---- dataset ----

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    if ds.n_classes() > u16::MAX as usize + 1 {
        return Err(Error::Config("too many classes for the dataset format".into()));
    }
    let mut w = Writer::new(DATASET_MAGIC);
    w.u64(ds.n_samples() as u64);
    w.u32(ds.n_features() as u32);
    w.u32(ds.n_classes() as u32);
    for &v in ds.features().as_slice() {
        w.f32(v as f32);
    }
    for &y in ds.labels() {
        w.u16(y as u16);
    }
    Ok(w.0)
}

pub fn decode_dataset(path: &Path, buf: &[u8]) -> Result<Dataset> {
    let mut r = Reader::open(path, buf, DATASET_MAGIC)?;
    let n = r.u64()?;
    let n = to_usize(n, &r)?;
    let d = r.u32()? as usize;
    let c = r.u32()? as usize;
    let payload = mul(&[n, d, 4]).and_then(|f| f.checked_add(n.checked_mul(2)?));
    r.expect_remaining(payload)?;
    let features = r.f32s(n * d)?;
    check_finite(&features, &r)?;
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = r.u16()? as usize;
        if y >= c {
            return Err(r.err(format!("label {y} of sample {i} is not below {c}")));
        }
        labels.push(y);
    }
    let matrix = Matrix::from_vec(n, d, features.into_iter().map(f64::from).collect())
        .map_err(|e| r.err(e.to_string()))?;
    Dataset::new(matrix, labels, c).map_err(|e| r.err(e.to_string()))
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_file(path, &encode_dataset(ds)?)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(path, &read_file(path)?)
}

// ---- model checkpoint ----

pub fn encode_model(model: &MlpModel) -> Vec<u8> {
    let mut w = Writer::new(MODEL_MAGIC);
    let sizes = model.layer_sizes();
    w.u32(sizes.len() as u32);
    for &s in &sizes {
        w.u32(s as u32);
    }
    for layer in model.layers() {
        for &v in &layer.weights {
            w.f32(v as f32);
        }
        for &v in &layer.biases {
            w.f32(v as f32);
        }
    }
    w.0
}

pub fn decode_model(path: &Path, buf: &[u8]) -> Result<MlpModel> {
    let mut r = Reader::open(path, buf, MODEL_MAGIC)?;
    let count = r.u32()? as usize;
    if count < 2 {
        return Err(r.err(format!("model needs at least 2 layer sizes, found {count}")));
    }
    let mut sizes = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let s = r.u32()? as usize;
        if s == 0 {
            return Err(r.err("zero layer size"));
        }
        sizes.push(s);
    }
    let params = sizes.windows(2).try_fold(0usize, |acc, w| {
        acc.checked_add(w[0].checked_mul(w[1])?.checked_add(w[1])?)
    });
    r.expect_remaining(params.and_then(|p| p.checked_mul(4)))?;
    let mut layers = Vec::with_capacity(count - 1);
    for w in sizes.windows(2) {
        let weights = r.f32s(w[0] * w[1])?;
        let biases = r.f32s(w[1])?;
        check_finite(&weights, &r)?;
        check_finite(&biases, &r)?;
        layers.push(LayerParams {
            fan_in: w[0],
            fan_out: w[1],
            weights: weights.into_iter().map(f64::from).collect(),
            biases: biases.into_iter().map(f64::from).collect(),
        });
    }
    MlpModel::from_layers(layers).map_err(|e| r.err(e.to_string()))
}

pub fn write_model(path: &Path, model: &MlpModel) -> Result<()> {
    write_file(path, &encode_model(model))
}

pub fn read_model(path: &Path) -> Result<MlpModel> {
    decode_model(path, &read_file(path)?)
}

// ---- logits (and the phi companion, which shares the layout) ----

pub fn encode_logits(n_samples: usize, n_classes: usize, values: &[f32]) -> Result<Vec<u8>> {
    if values.len() != n_samples * n_classes {
        return Err(Error::Other(format!(
            "logit buffer holds {} values, expected {n_samples}x{n_classes}",
            values.len()
        )));
    }
    let mut w = Writer::new(LOGITS_MAGIC);
    w.u64(n_samples as u64);
    w.u32(n_classes as u32);
    for &v in values {
        w.f32(v);
    }
    Ok(w.0)
}

/// Returns `(n_samples, n_classes, values)`.
pub fn decode_logits(path: &Path, buf: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    let mut r = Reader::open(path, buf, LOGITS_MAGIC)?;
    let n = r.u64()?;
    let n = to_usize(n, &r)?;
    let c = r.u32()? as usize;
    if c == 0 {
        return Err(r.err("zero classes"));
    }
    r.expect_remaining(mul(&[n, c, 4]))?;
    let values = r.f32s(n * c)?;
    check_finite(&values, &r)?;
    Ok((n, c, values))
}

pub fn write_logits(path: &Path, n_samples: usize, n_classes: usize, values: &[f32]) -> Result<()> {
    write_file(path, &encode_logits(n_samples, n_classes, values)?)
}

pub fn read_logits(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    decode_logits(path, &read_file(path)?)
}

// ---- membership mask ----

fn row_bytes(n: usize) -> usize {
    n.div_ceil(8)
}

pub fn encode_mask(mx: &MembershipMatrix) -> Vec<u8> {
    let (m, n) = (mx.n_models(), mx.n_samples());
    let mut w = Writer::new(MASK_MAGIC);
    w.u32(m as u32);
    w.u64(n as u64);
    for model in 0..m {
        let mut row = vec![0u8; row_bytes(n)];
        for (j, &bit) in mx.row(model).iter().enumerate() {
            if bit {
                row[j / 8] |= 1 << (j % 8);
            }
        }
        w.0.extend_from_slice(&row);
    }
    w.0
}

/// Decodes a mask; `require_balanced` additionally enforces exactly `M/2`
/// IN models per sample.
pub fn decode_mask(path: &Path, buf: &[u8], require_balanced: bool) -> Result<MembershipMatrix> {
    let mut r = Reader::open(path, buf, MASK_MAGIC)?;
    let m = r.u32()? as usize;
    let n = r.u64()?;
    let n = to_usize(n, &r)?;
    let rb = row_bytes(n);
    r.expect_remaining(rb.checked_mul(m))?;
    let mut bits = Vec::with_capacity(m * n);
    for model in 0..m {
        let row = r.take(rb)?;
        for j in 0..n {
            bits.push(row[j / 8] >> (j % 8) & 1 == 1);
        }
        if n % 8 != 0 && row[rb - 1] >> (n % 8) != 0 {
            return Err(r.err(format!("row {model} has nonzero padding bits")));
        }
    }
    let mx = MembershipMatrix::from_bits(m, n, bits).map_err(|e| r.err(e.to_string()))?;
    if require_balanced {
        mx.check_balanced().map_err(|e| r.err(e.to_string()))?;
    }
    Ok(mx)
}

pub fn write_mask(path: &Path, mx: &MembershipMatrix) -> Result<()> {
    write_file(path, &encode_mask(mx))
}

pub fn read_mask(path: &Path) -> Result<MembershipMatrix> {
    decode_mask(path, &read_file(path)?, true)
}

// ---- attack scores ----

pub fn encode_scores(scores: &AttackScores) -> Vec<u8> {
    let mut w = Writer::new(SCORES_MAGIC);
    w.u32(scores.attack.code());
    w.u32(scores.target as u32);
    w.u64(scores.scores.len() as u64);
    for &s in &scores.scores {
        w.f32(s as f32);
    }
    w.0
}

pub fn decode_scores(path: &Path, buf: &[u8]) -> Result<AttackScores> {
    let mut r = Reader::open(path, buf, SCORES_MAGIC)?;
    let code = r.u32()?;
    let attack = AttackId::from_code(code).ok_or_else(|| r.err(format!("unknown attack id {code}")))?;
    let target = r.u32()? as usize;
    let n = r.u64()?;
    let n = to_usize(n, &r)?;
    r.expect_remaining(n.checked_mul(4))?;
    let values = r.f32s(n)?;
    if values.iter().any(|v| v.is_nan()) {
        return Err(r.err("NaN score"));
    }
    Ok(AttackScores {
        attack,
        target,
        scores: values.into_iter().map(f64::from).collect(),
    })
}

pub fn write_scores(path: &Path, scores: &AttackScores) -> Result<()> {
    write_file(path, &encode_scores(scores))
}

pub fn read_scores(path: &Path) -> Result<AttackScores> {
    decode_scores(path, &read_file(path)?)
}

// ---- CSV exports ----

pub fn scores_csv(scores: &[f64], membership: &[bool]) -> String {
    let mut out = String::from("sample_id,score,is_member\n");
    for (i, (s, &m)) in scores.iter().zip(membership).enumerate() {
        out.push_str(&format!("{i},{s},{}\n", u8::from(m)));
    }
    out
}

pub fn memorization_csv(mem: &[f64]) -> String {
    let mut out = String::from("sample_id,mem_score\n");
    for (i, v) in mem.iter().enumerate() {
        out.push_str(&format!("{i},{v}\n"));
    }
    out
}

/// Parses a `sample_id,score,is_member` CSV back into columns.
pub fn parse_scores_csv(path: &Path, text: &str) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut lines = text.lines();
    if lines.next() != Some("sample_id,score,is_member") {
        return Err(Error::format(path, "missing scores CSV header"));
    }
    let mut scores = Vec::new();
    let mut member = Vec::new();
    for (i, line) in lines.enumerate() {
        let bad = || Error::format(path, format!("malformed row {}", i + 2));
        let mut f = line.split(',');
        let id: usize = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let s: f64 = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let m = match f.next() {
            Some("0") => false,
            Some("1") => true,
            _ => return Err(bad()),
        };
        if id != i || f.next().is_some() {
            return Err(bad());
        }
        scores.push(s);
        member.push(m);
    }
    Ok((scores, member))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}
