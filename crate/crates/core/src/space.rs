//! Frozen hotel embedding spaces and their text file format.
//!
//! The file starts with a `<count> <dim>` line followed by one
//! `<hotel_id> <v1> ... <vdim>` line per hotel. Components are written with
//! the shortest representation that parses back to the same `f64`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::data::Brand;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSpace {
    dim: usize,
    brand: Brand,
    ids: Vec<String>,
    data: Vec<f64>,
    index: HashMap<String, usize>,
}

impl EmbeddingSpace {
    pub fn new(brand: Brand, dim: usize) -> Self {
        EmbeddingSpace {
            dim,
            brand,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn push(&mut self, id: impl Into<String>, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        if let Some(v) = vector.iter().find(|v| !v.is_finite()) {
            return Err(Error::Config(format!("non-finite embedding component {v}")));
        }
        let id = id.into();
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateHotel(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn brand(&self) -> &Brand {
        &self.brand
    }

    pub fn with_brand(mut self, brand: Brand) -> Self {
        self.brand = brand;
        self
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.row(i))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), self.row(i)))
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.len(), self.dim)?;
        for (id, v) in self.iter() {
            out.write_all(id.as_bytes())?;
            for x in v {
                write!(out, " {x:?}")?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_text(path: &Path, brand: Brand) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.into(),
            line,
            message,
        };

        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing `<count> <dim>` header".into()))?
            .map_err(|e| Error::io(path, e))?;
        let mut parts = header.split_whitespace();
        let (count, dim) = match (parts.next(), parts.next(), parts.next()) {
            (Some(c), Some(d), None) => (
                c.parse::<usize>().map_err(|e| parse_err(1, e.to_string()))?,
                d.parse::<usize>().map_err(|e| parse_err(1, e.to_string()))?,
            ),
            _ => return Err(parse_err(1, "expected `<count> <dim>`".into())),
        };

        let mut space = EmbeddingSpace::new(brand, dim);
        let mut vector = Vec::with_capacity(dim);
        for (n, line) in lines.enumerate() {
            let line_no = n + 2;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(' ');
            let id = fields.next().unwrap_or_default();
            vector.clear();
            for f in fields {
                vector.push(
                    f.parse::<f64>()
                        .map_err(|e| parse_err(line_no, format!("`{f}`: {e}")))?,
                );
            }
            space.push(id, &vector).map_err(|e| parse_err(line_no, e.to_string()))?;
        }
        if space.len() != count {
            return Err(parse_err(
                1,
                format!("header announces {count} vectors, found {}", space.len()),
            ));
        }
        Ok(space)
    }
}
