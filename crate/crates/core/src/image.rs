//! Row-major 2-D grids and portable graymap (PGM) I/O.

use std::io::{self, Read, Write};

use thiserror::Error;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid { width, height, data: vec![value; width * height] }
    }
}

impl<T> Grid<T> {
    /// # Panics
    /// If `data.len() != width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "grid data does not match {width}x{height}");
        Grid { width, height, data }
    }

    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid { width: self.width, height: self.height, data: self.data.iter().map(f).collect() }
    }
}

#[derive(Debug, Error)]
pub enum PgmError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a PGM file: {0}")]
    Format(String),
}

/// A decoded graymap: raw sample values and the declared maximum.
#[derive(Clone, Debug, PartialEq)]
pub struct Graymap {
    pub pixels: Grid<u16>,
    pub maxval: u16,
}

impl Graymap {
    /// Samples as doubles in `[0, maxval]`.
    pub fn to_f64(&self) -> Grid<f64> {
        self.pixels.map(|&v| v as f64)
    }

    /// Quantizes values in `[0, 1]` (clamped) to `0..=maxval`.
    pub fn from_unit(values: &Grid<f64>, maxval: u16) -> Self {
        let m = maxval as f64;
        Graymap { pixels: values.map(|&v| (v.clamp(0.0, 1.0) * m).round() as u16), maxval }
    }

    /// Rounds and clamps arbitrary values to `0..=maxval`.
    pub fn from_values(values: &Grid<f64>, maxval: u16) -> Self {
        let m = maxval as f64;
        Graymap { pixels: values.map(|&v| v.round().clamp(0.0, m) as u16), maxval }
    }
}

/// Writes binary PGM (P5); 16-bit big-endian samples when `maxval > 255`.
pub fn write_pgm<W: Write>(mut w: W, img: &Graymap) -> io::Result<()> {
    assert!(img.maxval > 0, "maxval must be positive");
    write!(w, "P5\n{} {}\n{}\n", img.pixels.width, img.pixels.height, img.maxval)?;
    if img.maxval < 256 {
        let bytes: Vec<u8> = img.pixels.data.iter().map(|&v| v.min(img.maxval) as u8).collect();
        w.write_all(&bytes)?;
    } else {
        let mut bytes = Vec::with_capacity(img.pixels.len() * 2);
        for &v in &img.pixels.data {
            bytes.extend_from_slice(&v.min(img.maxval).to_be_bytes());
        }
        w.write_all(&bytes)?;
    }
    Ok(())
}

/// Reads binary (P5) or plain (P2) PGM.
pub fn read_pgm<R: Read>(mut r: R) -> Result<Graymap, PgmError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut pos = 0;
    let magic = token(&buf, &mut pos)?;
    let plain = match magic.as_str() {
        "P5" => false,
        "P2" => true,
        other => return Err(PgmError::Format(format!("magic `{other}`"))),
    };
    let width = number(&buf, &mut pos)?;
    let height = number(&buf, &mut pos)?;
    let maxval = number(&buf, &mut pos)?;
    if maxval == 0 || maxval > 65535 {
        return Err(PgmError::Format(format!("maxval {maxval}")));
    }
    let n = width * height;
    let mut data = Vec::with_capacity(n);
    if plain {
        for _ in 0..n {
            data.push(number(&buf, &mut pos)? as u16);
        }
    } else {
        pos += 1; // single whitespace after maxval
        let bytes = if maxval < 256 { 1 } else { 2 };
        let body = buf.get(pos..pos + n * bytes).ok_or_else(|| PgmError::Format("truncated pixel data".into()))?;
        if bytes == 1 {
            data.extend(body.iter().map(|&b| b as u16));
        } else {
            data.extend(body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])));
        }
    }
    if data.iter().any(|&v| v as usize > maxval) {
        return Err(PgmError::Format("sample exceeds maxval".into()));
    }
    Ok(Graymap { pixels: Grid::from_vec(width, height, data), maxval: maxval as u16 })
}

fn token(buf: &[u8], pos: &mut usize) -> Result<String, PgmError> {
    loop {
        while *pos < buf.len() && buf[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < buf.len() && buf[*pos] == b'#' {
            while *pos < buf.len() && buf[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < buf.len() && !buf[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(PgmError::Format("unexpected end of header".into()));
    }
    Ok(String::from_utf8_lossy(&buf[start..*pos]).into_owned())
}

fn number(buf: &[u8], pos: &mut usize) -> Result<usize, PgmError> {
    let t = token(buf, pos)?;
    t.parse().map_err(|_| PgmError::Format(format!("bad number `{t}`")))
}
