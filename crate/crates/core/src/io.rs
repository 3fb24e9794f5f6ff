//! Text formats: operator field files, coefficient lists, sweep tables and
//! decomposition dumps.
//!
//! Operator field file, version 1:
//!
//! ```text
//! modspec-operator 1
//! encoding decimal            # or base64
//! points 2
//! truncation 1
//! hermitian true
//! point 0.0e0 5.0e-1 2        # label weight dim, one line per point
//! point 1.0e0 5.0e-1 2
//! block 0 <re im re im ...>   # row-major (N·n)² complex entries
//! block 1 <...>
//! end
//! ```
//!
//! With `encoding base64` each block is a single token holding the
//! little-endian `f64` pairs. `#` starts a comment.

use std::fmt::Write as _;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::{DecodeError, Engine};

use crate::algebra::ParameterGrid;
use crate::diag::{ModuleOperator, SpectralDecomposition, Term};
use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};
use crate::magnetic::{Coefficients, Sweep};
use crate::tol;

pub const OPERATOR_MAGIC: &str = "modspec-operator";
pub const OPERATOR_VERSION: u32 = 1;
pub const SWEEP_HEADER: &str = "# modspec-sweep v1: theta,bloch1,bloch2,eigenvalue,trusted";
pub const EIGENVALUE_HEADER: &str = "# modspec-eigenvalues v1: part,term,point,label,index,eigenvalue";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Encoding {
    Decimal,
    Base64,
}

/// Raw contents of an operator field file. Parsing validates the weights
/// and Hermiticity, but the blocks are kept exactly as read.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorFieldFile {
    pub labels: Vec<f64>,
    pub weights: Vec<f64>,
    pub dims: Vec<usize>,
    pub truncation: usize,
    pub blocks: Vec<CMat>,
    pub encoding: Encoding,
}

fn float(x: f64) -> String {
    format!("{x:.16e}")
}

impl OperatorFieldFile {
    pub fn from_operator(k: &ModuleOperator, encoding: Encoding) -> Self {
        let g = k.grid();
        OperatorFieldFile {
            labels: g.labels().to_vec(),
            weights: g.weights().to_vec(),
            dims: g.dims().to_vec(),
            truncation: k.len(),
            blocks: k.fibers().to_vec(),
            encoding,
        }
    }

    /// Checks Hermiticity at the input tolerance and builds the operator.
    pub fn to_operator(&self) -> Result<ModuleOperator> {
        let grid = match ParameterGrid::new(self.labels.clone(), self.weights.clone(), self.dims.clone()) {
            Ok(g) => g,
            Err(_) => ParameterGrid::normalized(self.labels.clone(), self.weights.clone(), self.dims.clone())?,
        };
        ModuleOperator::with_tolerance(&grid, self.truncation, self.blocks.clone(), tol::HERMITIAN_INPUT)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let enc = match self.encoding {
            Encoding::Decimal => "decimal",
            Encoding::Base64 => "base64",
        };
        let _ = writeln!(s, "{OPERATOR_MAGIC} {OPERATOR_VERSION}");
        let _ = writeln!(s, "encoding {enc}");
        let _ = writeln!(s, "points {}", self.labels.len());
        let _ = writeln!(s, "truncation {}", self.truncation);
        let _ = writeln!(s, "hermitian true");
        for ((l, w), d) in self.labels.iter().zip(&self.weights).zip(&self.dims) {
            let _ = writeln!(s, "point {} {} {d}", float(*l), float(*w));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let _ = write!(s, "block {i}");
            match self.encoding {
                Encoding::Decimal => {
                    for r in 0..b.nrows() {
                        s.push('\n');
                        for c in 0..b.ncols() {
                            let z = b[(r, c)];
                            if c > 0 {
                                s.push(' ');
                            }
                            let _ = write!(s, "{} {}", float(z.re), float(z.im));
                        }
                    }
                    s.push('\n');
                }
                Encoding::Base64 => {
                    let mut bytes = Vec::with_capacity(16 * b.len());
                    for r in 0..b.nrows() {
                        for c in 0..b.ncols() {
                            bytes.extend_from_slice(&b[(r, c)].re.to_le_bytes());
                            bytes.extend_from_slice(&b[(r, c)].im.to_le_bytes());
                        }
                    }
                    let _ = writeln!(s, " {}", STANDARD.encode(bytes));
                }
            }
        }
        s.push_str("end\n");
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut t = Tokens { src: text, pos: 0 };
        t.keyword(OPERATOR_MAGIC)?;
        let (off, v) = t.number::<u32>()?;
        if v != OPERATOR_VERSION {
            return Err(parse_err(off, format!("unsupported version {v}")));
        }
        t.keyword("encoding")?;
        let (off, enc) = t.token()?;
        let encoding = match enc {
            "decimal" => Encoding::Decimal,
            "base64" => Encoding::Base64,
            other => return Err(parse_err(off, format!("unknown encoding '{other}'"))),
        };
        t.keyword("points")?;
        let (off, points) = t.number::<usize>()?;
        if points == 0 {
            return Err(parse_err(off, "grid has no points"));
        }
        t.keyword("truncation")?;
        let (off, truncation) = t.number::<usize>()?;
        if truncation == 0 {
            return Err(parse_err(off, "truncation must be positive"));
        }
        t.keyword("hermitian")?;
        let (off, h) = t.token()?;
        if h != "true" {
            return Err(parse_err(off, "only Hermitian operator fields are supported"));
        }
        let mut labels = Vec::with_capacity(points);
        let mut weights = Vec::with_capacity(points);
        let mut dims = Vec::with_capacity(points);
        let weights_at = t.pos;
        for _ in 0..points {
            t.keyword("point")?;
            labels.push(t.finite()?);
            let (off, w) = t.number::<f64>()?;
            if !(w > 0.0) || !w.is_finite() {
                return Err(parse_err(off, "weight must be strictly positive"));
            }
            weights.push(w);
            let (off, d) = t.number::<usize>()?;
            if d == 0 {
                return Err(parse_err(off, "fiber dimension must be positive"));
            }
            dims.push(d);
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > tol::WEIGHT_SUM_FILE {
            return Err(parse_err(weights_at, format!("weights sum to {total}, expected 1")));
        }
        let mut blocks = Vec::with_capacity(points);
        for (i, &d) in dims.iter().enumerate() {
            t.keyword("block")?;
            let (off, idx) = t.number::<usize>()?;
            if idx != i {
                return Err(parse_err(off, format!("expected block {i}, found {idx}")));
            }
            let size = truncation * d;
            let block = match encoding {
                Encoding::Decimal => {
                    let mut m = CMat::zeros(size, size);
                    for r in 0..size {
                        for c in 0..size {
                            let re = t.finite()?;
                            let im = t.finite()?;
                            m[(r, c)] = C64::new(re, im);
                        }
                    }
                    m
                }
                Encoding::Base64 => {
                    let (off, payload) = t.token()?;
                    let bytes = STANDARD.decode(payload).map_err(|e| decode_err(off, e))?;
                    if bytes.len() != 16 * size * size {
                        return Err(parse_err(
                            off,
                            format!("payload has {} bytes, expected {}", bytes.len(), 16 * size * size),
                        ));
                    }
                    let mut vals = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()));
                    let mut m = CMat::zeros(size, size);
                    for r in 0..size {
                        for c in 0..size {
                            let re = vals.next().unwrap();
                            let im = vals.next().unwrap();
                            if !re.is_finite() || !im.is_finite() {
                                return Err(parse_err(off, format!("non-finite entry ({r}, {c})")));
                            }
                            m[(r, c)] = C64::new(re, im);
                        }
                    }
                    m
                }
            };
            blocks.push(block);
        }
        t.keyword("end")?;
        if let Some((off, tok)) = t.next() {
            return Err(parse_err(off, format!("trailing content '{tok}'")));
        }
        let file = OperatorFieldFile { labels, weights, dims, truncation, blocks, encoding };
        file.to_operator()?;
        Ok(file)
    }
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse { offset, message: message.into() }
}

fn decode_err(offset: usize, e: DecodeError) -> Error {
    let (at, what) = match e {
        DecodeError::InvalidByte(i, b) => (i, format!("invalid base64 byte 0x{b:02x}")),
        DecodeError::InvalidLastSymbol { offset, symbol, .. } => (offset, format!("invalid final base64 symbol 0x{symbol:02x}")),
        DecodeError::InvalidLength(n) => (0, format!("invalid base64 length {n}")),
        DecodeError::InvalidPadding => (0, "invalid base64 padding".to_string()),
    };
    parse_err(offset + at, what)
}

struct Tokens<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Option<(usize, &'a str)> {
        let bytes = self.src.as_bytes();
        loop {
            while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < bytes.len() && bytes[self.pos] == b'#' {
                while self.pos < bytes.len() && bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        if self.pos >= bytes.len() {
            return None;
        }
        let start = self.pos;
        while self.pos < bytes.len() && !bytes[self.pos].is_ascii_whitespace() && bytes[self.pos] != b'#' {
            self.pos += 1;
        }
        Some((start, &self.src[start..self.pos]))
    }

    fn token(&mut self) -> Result<(usize, &'a str)> {
        self.next().ok_or_else(|| parse_err(self.src.len(), "unexpected end of input"))
    }

    fn keyword(&mut self, word: &str) -> Result<()> {
        let (off, tok) = self.token()?;
        if tok != word {
            return Err(parse_err(off, format!("expected '{word}', found '{tok}'")));
        }
        Ok(())
    }

    fn number<T: std::str::FromStr>(&mut self) -> Result<(usize, T)> {
        let (off, tok) = self.token()?;
        tok.parse().map(|v| (off, v)).map_err(|_| parse_err(off, format!("malformed number '{tok}'")))
    }

    fn finite(&mut self) -> Result<f64> {
        let (off, v) = self.number::<f64>()?;
        if !v.is_finite() {
            return Err(parse_err(off, "non-finite value"));
        }
        Ok(v)
    }
}

pub fn read_operator_file(path: &Path) -> Result<OperatorFieldFile> {
    OperatorFieldFile::parse(&std::fs::read_to_string(path)?)
}

pub fn write_operator_file(path: &Path, file: &OperatorFieldFile) -> Result<()> {
    std::fs::write(path, file.to_text())?;
    Ok(())
}

/// Coefficient list: one `k,l,re,im` record per line, `#` comments. Both
/// members of every conjugate pair must be present.
pub fn parse_coefficients(text: &str) -> Result<Coefficients> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut entries = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let off = e.position().map_or(0, |p| p.byte() as usize);
            parse_err(off, e.to_string())
        })?;
        let off = rec.position().map_or(0, |p| p.byte() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != 4 {
            return Err(parse_err(off, format!("expected 4 fields k,l,re,im, found {}", rec.len())));
        }
        let k: i32 = rec[0].parse().map_err(|_| parse_err(off, format!("bad k '{}'", &rec[0])))?;
        let l: i32 = rec[1].parse().map_err(|_| parse_err(off, format!("bad l '{}'", &rec[1])))?;
        let re: f64 = rec[2].parse().map_err(|_| parse_err(off, format!("bad real part '{}'", &rec[2])))?;
        let im: f64 = rec[3].parse().map_err(|_| parse_err(off, format!("bad imaginary part '{}'", &rec[3])))?;
        if !re.is_finite() || !im.is_finite() {
            return Err(parse_err(off, "non-finite coefficient"));
        }
        entries.push((k, l, C64::new(re, im)));
    }
    Coefficients::new(entries)
}

pub fn read_coefficients(path: &Path) -> Result<Coefficients> {
    parse_coefficients(&std::fs::read_to_string(path)?)
}

pub fn coefficients_to_text(c: &Coefficients) -> String {
    let mut s = String::from("# k,l,re,im\n");
    for (k, l, w) in c.entries() {
        let _ = writeln!(s, "{k},{l},{},{}", float(w.re), float(w.im));
    }
    s
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn write_sweep_csv<W: std::io::Write>(out: W, sweep: &Sweep) -> Result<()> {
    let mut out = out;
    writeln!(out, "{SWEEP_HEADER}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["theta", "bloch1", "bloch2", "eigenvalue", "trusted"]).map_err(csv_err)?;
    for r in &sweep.rows {
        w.write_record([
            float(r.theta),
            float(r.bloch1),
            float(r.bloch2),
            float(r.eigenvalue),
            r.trusted.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Eigenvalue fields, one row per term, grid point and eigenvalue.
pub fn write_eigenvalues_csv<W: std::io::Write>(out: W, dec: &SpectralDecomposition) -> Result<()> {
    let mut out = out;
    writeln!(out, "{EIGENVALUE_HEADER}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["part", "term", "point", "label", "index", "eigenvalue"]).map_err(csv_err)?;
    let labels = dec.grid().labels();
    let mut rows = |part: &str, terms: &[Term]| -> Result<()> {
        for (i, t) in terms.iter().enumerate() {
            for (g, vals) in t.captured.iter().enumerate() {
                for (j, v) in vals.iter().enumerate() {
                    w.write_record([
                        part.to_string(),
                        (i + 1).to_string(),
                        g.to_string(),
                        float(labels[g]),
                        j.to_string(),
                        float(*v),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
        Ok(())
    };
    rows("positive", &dec.terms)?;
    rows("negative", &dec.negative)?;
    w.flush()?;
    Ok(())
}

pub fn certificate_report(dec: &SpectralDecomposition) -> String {
    let c = &dec.certificates;
    let mark = |ok: bool| if ok { "PASS" } else { "FAIL" };
    let mut s = String::new();
    let _ = writeln!(s, "terms: {} positive, {} negative", dec.terms.len(), dec.negative.len());
    if let Some(k) = &dec.kernel {
        let ranks: Vec<String> = k.iter().map(|p| format!("{}", p.trace().re.round())).collect();
        let _ = writeln!(s, "kernel ranks: {}", ranks.join(" "));
    }
    let _ = writeln!(s, "orthonormality {:.3e} {}", c.orthonormality, mark(c.orthonormality <= tol::CERTIFICATE));
    let _ = writeln!(s, "residual {:.3e} {}", c.max_residual, mark(c.max_residual <= tol::RESIDUAL));
    let _ = writeln!(s, "operator ordering {:.3e} {}", c.operator_ordering, mark(c.operator_ordering <= tol::CERTIFICATE));
    let _ = writeln!(s, "separation {:.3e} {}", c.separation, mark(c.separation <= tol::CERTIFICATE));
    let norms: Vec<String> = c.norms.iter().map(|n| format!("{n:.6e}")).collect();
    let _ = writeln!(s, "norms {} {}", norms.join(" "), mark(c.norms_nonincreasing));
    for r in &c.rounded {
        let _ = writeln!(s, "rank rounding: {r:?}");
    }
    let _ = writeln!(s, "certificates {}", mark(c.passed()));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::{dyadic_coefficients, dyadic_grid, dyadic_operator};
    use crate::linalg::c;

    fn sample() -> ModuleOperator {
        let g = ParameterGrid::normalized(vec![0.1, 0.7, 0.3], vec![0.3, 0.3, 0.4], vec![1, 2, 1]).unwrap();
        let fibers = (0..3)
            .map(|i| {
                let n = 2 * g.dim(i);
                let mut m = CMat::from_fn(n, n, |r, s| C64::new(1.0 / (1.0 + (r + s) as f64), 0.1 * r as f64 - 0.1 * s as f64));
                m[(0, 0)] = c(std::f64::consts::PI / 7.0);
                m
            })
            .collect();
        ModuleOperator::new(&g, 2, fibers).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for enc in [Encoding::Decimal, Encoding::Base64] {
            let f = OperatorFieldFile::from_operator(&sample(), enc);
            let back = OperatorFieldFile::parse(&f.to_text()).unwrap();
            assert_eq!(back, f);
        }
    }

    #[test]
    fn corrupted_base64_reports_offset() {
        let f = OperatorFieldFile::from_operator(&sample(), Encoding::Base64);
        let text = f.to_text();
        let at = text.find("block 1 ").unwrap() + 8 + 5;
        let mut bytes = text.into_bytes();
        bytes[at] = b'!';
        let err = OperatorFieldFile::parse(std::str::from_utf8(&bytes).unwrap()).unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert_eq!(offset, at),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn bad_weights_and_asymmetry_are_refused() {
        let f = OperatorFieldFile::from_operator(&sample(), Encoding::Decimal);
        let mut g = f.clone();
        g.weights[0] += 1e-6;
        assert!(matches!(OperatorFieldFile::parse(&g.to_text()), Err(Error::Parse { .. })));
        let mut h = f.clone();
        h.blocks[1][(0, 1)] += c(1e-6);
        assert!(matches!(OperatorFieldFile::parse(&h.to_text()), Err(Error::NotHermitian { .. })));
        let mut ok = f;
        ok.blocks[1][(0, 1)] += c(1e-12);
        assert!(OperatorFieldFile::parse(&ok.to_text()).is_ok());
    }

    #[test]
    fn truncated_input_points_at_end() {
        let text = OperatorFieldFile::from_operator(&sample(), Encoding::Decimal).to_text();
        let cut = &text[..text.len() / 2];
        let cut = &cut[..cut.rfind(' ').unwrap()];
        match OperatorFieldFile::parse(cut) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, cut.len()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn coefficients_parse_and_reject() {
        let c = parse_coefficients("# comment\n1,0,0.1,0\n-1,0,0.1,0\n\n0,0,0.05,0\n").unwrap();
        assert_eq!(c.entries().len(), 3);
        assert!(parse_coefficients("").unwrap().entries().is_empty());
        assert!(matches!(parse_coefficients("1,0,0.1\n"), Err(Error::Parse { .. })));
        assert!(parse_coefficients("1,0,0.1,0\n").is_err());
        let round = parse_coefficients(&coefficients_to_text(&c)).unwrap();
        assert_eq!(round.entries(), c.entries());
    }

    #[test]
    fn eigenvalue_dump_lists_every_captured_value() {
        let g = dyadic_grid(4).unwrap();
        let k = dyadic_operator(&g, &dyadic_coefficients(4)).unwrap();
        let dec = crate::diag::diagonalize(&k, &Default::default()).unwrap();
        let mut buf = Vec::new();
        write_eigenvalues_csv(&mut buf, &dec).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let captured: usize = dec.terms.iter().chain(&dec.negative).map(|t| t.captured.iter().map(Vec::len).sum::<usize>()).sum();
        assert_eq!(text.lines().count(), captured + 2);
        assert!(text.starts_with(EIGENVALUE_HEADER));
        assert!(certificate_report(&dec).contains("certificates PASS"));
    }
}
