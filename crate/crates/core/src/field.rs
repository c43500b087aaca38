//! Dense per-pixel displacement fields on the undeformed grid.

use std::path::Path;

use crate::error::{Error, Result};

/// Schema tag carried in the first line of every field CSV.
pub const DISPLACEMENT_SCHEMA: &str = "# warpfield field schema=displacement units=px";

/// Per-pixel displacement (u rightward, v downward, in pixels) with a
/// validity mask. Invalid pixels store zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    width: usize,
    height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DisplacementField {
    pub fn zeros(width: usize, height: usize) -> Self {
        DisplacementField {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
            valid: vec![true; width * height],
        }
    }

    pub fn from_parts(
        width: usize,
        height: usize,
        u: Vec<f64>,
        v: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = width * height;
        if u.len() != n || v.len() != n || valid.len() != n {
            return Err(Error::Parameter(format!(
                "field buffers must all have {n} entries"
            )));
        }
        for i in 0..n {
            if valid[i] && (!u[i].is_finite() || !v[i].is_finite()) {
                return Err(Error::Parameter(format!(
                    "non-finite displacement at valid pixel {i}"
                )));
            }
        }
        Ok(DisplacementField { width, height, u, v, valid })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<(f64, f64)> {
        let i = self.idx(x, y);
        self.valid[i].then(|| (self.u[i], self.v[i]))
    }

    pub fn set(&mut self, x: usize, y: usize, u: f64, v: f64) {
        let i = self.idx(x, y);
        self.u[i] = u;
        self.v[i] = v;
        self.valid[i] = true;
    }

    pub fn invalidate(&mut self, x: usize, y: usize) {
        let i = self.idx(x, y);
        self.u[i] = 0.0;
        self.v[i] = 0.0;
        self.valid[i] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Root-mean-square magnitude of the pointwise difference to `other`
    /// over jointly valid pixels.
    pub fn rms_difference(&self, other: &DisplacementField) -> Result<f64> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Parameter("field dimensions differ".into()));
        }
        let mut acc = 0.0;
        let mut n = 0usize;
        for i in 0..self.u.len() {
            if self.valid[i] && other.valid[i] {
                let du = self.u[i] - other.u[i];
                let dv = self.v[i] - other.v[i];
                acc += du * du + dv * dv;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Parameter("no jointly valid pixels".into()));
        }
        Ok((acc / n as f64).sqrt())
    }

    /// Maximum displacement magnitude over valid pixels.
    pub fn max_magnitude(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.u.len() {
            if self.valid[i] {
                m = m.max((self.u[i] * self.u[i] + self.v[i] * self.v[i]).sqrt());
            }
        }
        m
    }

    /// CSV serialization: schema line, header `x,y,u,v,valid`, one row per
    /// pixel in row-major order.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.u.len() * 16);
        s.push_str(DISPLACEMENT_SCHEMA);
        s.push('\n');
        s.push_str("x,y,u,v,valid\n");
        for y in 0..self.height {
            for x in 0..self.width {
                let i = y * self.width + x;
                s.push_str(&format!(
                    "{},{},{},{},{}\n",
                    x,
                    y,
                    self.u[i],
                    self.v[i],
                    u8::from(self.valid[i])
                ));
            }
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        parse_field_csv(text, path, DISPLACEMENT_SCHEMA, "x,y,u,v,valid").map(
            |(w, h, cols, valid)| {
                let mut it = cols.into_iter();
                let u = it.next().unwrap();
                let v = it.next().unwrap();
                DisplacementField { width: w, height: h, u, v, valid }
            },
        )
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_csv(&text, path.as_ref())
    }
}

/// Shared CSV grid parser: schema line, header, then `x,y,<values...>,valid`
/// rows in row-major order. Returns the value columns and validity.
pub(crate) fn parse_field_csv(
    text: &str,
    path: &Path,
    schema: &str,
    header: &str,
) -> Result<(usize, usize, Vec<Vec<f64>>, Vec<bool>)> {
    let n_values = header.split(',').count() - 3;
    let fail = |offset: usize, reason: String| Error::Format {
        path: path.to_path_buf(),
        offset,
        reason,
    };
    let mut offset = 0usize;
    let mut lines = text.lines();

    let schema_line = lines.next().ok_or_else(|| fail(0, "empty file".into()))?;
    if schema_line.trim() != schema {
        return Err(fail(0, format!("schema mismatch: expected {schema:?}, got {schema_line:?}")));
    }
    offset += schema_line.len() + 1;
    let header_line = lines.next().ok_or_else(|| fail(offset, "missing header".into()))?;
    if header_line.trim() != header {
        return Err(fail(offset, format!("header mismatch: expected {header:?}")));
    }
    offset += header_line.len() + 1;

    let mut rows: Vec<(usize, usize, Vec<f64>, bool)> = Vec::new();
    let (mut max_x, mut max_y) = (0usize, 0usize);
    for line in lines {
        let at = offset;
        offset += line.len() + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != n_values + 3 {
            return Err(fail(at, format!("expected {} fields, got {}", n_values + 3, parts.len())));
        }
        let x: usize = parts[0]
            .trim()
            .parse()
            .map_err(|_| fail(at, format!("bad x {:?}", parts[0])))?;
        let y: usize = parts[1]
            .trim()
            .parse()
            .map_err(|_| fail(at, format!("bad y {:?}", parts[1])))?;
        let mut vals = Vec::with_capacity(n_values);
        for p in &parts[2..2 + n_values] {
            let v: f64 = p
                .trim()
                .parse()
                .map_err(|_| fail(at, format!("bad value {p:?}")))?;
            vals.push(v);
        }
        let valid = match parts[n_values + 2].trim() {
            "0" => false,
            "1" => true,
            other => return Err(fail(at, format!("bad validity flag {other:?}"))),
        };
        max_x = max_x.max(x);
        max_y = max_y.max(y);
        rows.push((x, y, vals, valid));
    }
    let (w, h) = (max_x + 1, max_y + 1);
    if rows.len() != w * h {
        return Err(fail(offset, format!("expected {}x{} = {} rows, got {}", w, h, w * h, rows.len())));
    }
    let mut cols = vec![vec![0.0; w * h]; n_values];
    let mut valid = vec![false; w * h];
    for (x, y, vals, ok) in rows {
        let i = y * w + x;
        for (c, v) in vals.into_iter().enumerate() {
            cols[c][i] = v;
        }
        valid[i] = ok;
    }
    Ok((w, h, cols, valid))
}
