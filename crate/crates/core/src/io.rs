//! Plain-text formats for tensors, cores and sample sets.
//!
//! Indices in files are 1-based; the library is 0-based throughout. Floats are
//! written in shortest round-trip form so a write/read cycle is exact.
//!
//! * coordinate tensor: header `d n_1 ... n_d`, then lines `i_1 ... i_d value`
//!   (entries not listed are zero);
//! * sample set: header `d n_1 ... n_d m`, then `m` lines `i_1 ... i_d value`;
//! * cores: header `d`, then per core a line `r_k n_k r_{k+1}` followed by its
//!   `r_k n_k r_{k+1}` values in storage order. A uTR core is a one-core file.

use std::io::{BufRead, Write};

use crate::completion::SampleSet;
use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Shape};
use crate::tr::{TrCores, UtrCore};

fn parse_err<T>(line: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse { line, msg: msg.into() })
}

/// Non-blank lines with their 1-based line numbers; `#` starts a comment.
fn content_lines(r: impl BufRead) -> impl Iterator<Item = Result<(usize, String)>> {
    r.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(Error::Io(e))),
        Ok(l) => {
            let body = l.split('#').next().unwrap_or("").trim().to_string();
            (!body.is_empty()).then_some(Ok((i + 1, body)))
        }
    })
}

fn parse_usize(tok: &str, line: usize, what: &str) -> Result<usize> {
    tok.parse().or_else(|_| parse_err(line, format!("expected {what}, found `{tok}`")))
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => parse_err(line, format!("expected a finite number, found `{tok}`")),
    }
}

fn parse_shape(dims: &[&str], line: usize) -> Result<Shape> {
    let dims = dims.iter().map(|t| parse_usize(t, line, "a mode size")).collect::<Result<Vec<_>>>()?;
    Shape::new(dims).or_else(|e| parse_err(line, e.to_string()))
}

/// Header `d n_1 ... n_d [extra...]`; returns the shape and the extra tokens.
fn parse_header(line: usize, text: &str, extra: usize) -> Result<(Shape, Vec<usize>)> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    let d = parse_usize(toks[0], line, "the tensor order")?;
    if d == 0 {
        return parse_err(line, "tensor order must be positive");
    }
    if toks.len() != 1 + d + extra {
        return parse_err(line, format!("header needs {} fields, found {}", 1 + d + extra, toks.len()));
    }
    let shape = parse_shape(&toks[1..=d], line)?;
    let rest = toks[1 + d..].iter().map(|t| parse_usize(t, line, "a count")).collect::<Result<Vec<_>>>()?;
    Ok((shape, rest))
}

/// Entry line `i_1 ... i_d value` with 1-based indices.
fn parse_entry(line: usize, text: &str, shape: &Shape) -> Result<(Vec<usize>, f64)> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    let d = shape.order();
    if toks.len() != d + 1 {
        return parse_err(line, format!("entry needs {} fields, found {}", d + 1, toks.len()));
    }
    let mut idx = Vec::with_capacity(d);
    for (k, t) in toks[..d].iter().enumerate() {
        let i = parse_usize(t, line, "an index")?;
        if i == 0 || i > shape.dim(k) {
            return parse_err(line, format!("index {i} out of range 1..={} in mode {}", shape.dim(k), k + 1));
        }
        idx.push(i - 1);
    }
    Ok((idx, parse_f64(toks[d], line)?))
}

fn write_entry(w: &mut impl Write, idx: &[usize], value: f64) -> Result<()> {
    for i in idx {
        write!(w, "{} ", i + 1)?;
    }
    writeln!(w, "{value}")?;
    Ok(())
}

fn write_dims(w: &mut impl Write, shape: &Shape) -> Result<()> {
    write!(w, "{}", shape.order())?;
    for n in shape.dims() {
        write!(w, " {n}")?;
    }
    Ok(())
}

pub fn read_coordinate_tensor(r: impl BufRead) -> Result<DenseTensor> {
    let mut lines = content_lines(r);
    let Some(first) = lines.next() else { return parse_err(1, "empty tensor file") };
    let (line, text) = first?;
    let (shape, _) = parse_header(line, &text, 0)?;
    let mut t = DenseTensor::zeros(shape.clone());
    let mut seen = vec![false; shape.numel()];
    for item in lines {
        let (line, text) = item?;
        let (idx, v) = parse_entry(line, &text, &shape)?;
        let off = shape.offset_unchecked(&idx);
        if std::mem::replace(&mut seen[off], true) {
            return parse_err(line, "duplicate entry");
        }
        t.data_mut()[off] = v;
    }
    Ok(t)
}

/// Writes every entry in storage order.
pub fn write_coordinate_tensor(mut w: impl Write, t: &DenseTensor) -> Result<()> {
    write_dims(&mut w, t.shape())?;
    writeln!(w)?;
    for (off, &v) in t.data().iter().enumerate() {
        write_entry(&mut w, &t.shape().multi_index(off), v)?;
    }
    Ok(())
}

pub fn read_sample_set(r: impl BufRead) -> Result<SampleSet> {
    let mut lines = content_lines(r);
    let Some(first) = lines.next() else { return parse_err(1, "empty sample file") };
    let (header_line, text) = first?;
    let (shape, extra) = parse_header(header_line, &text, 1)?;
    let m = extra[0];
    let mut entries: Vec<(Vec<usize>, f64, usize)> = Vec::with_capacity(m);
    for item in lines {
        let (line, text) = item?;
        if entries.len() == m {
            return parse_err(line, format!("more than the {m} declared samples"));
        }
        let (idx, v) = parse_entry(line, &text, &shape)?;
        entries.push((idx, v, line));
    }
    if entries.len() < m {
        return parse_err(header_line, format!("header declares {m} samples, found {}", entries.len()));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| entries[a].0.cmp(&entries[b].0).then(entries[a].2.cmp(&entries[b].2)));
    for w in order.windows(2) {
        if entries[w[0]].0 == entries[w[1]].0 {
            return parse_err(entries[w[1]].2, format!("duplicate sample (first on line {})", entries[w[0]].2));
        }
    }
    let (indices, values): (Vec<_>, Vec<_>) = entries.into_iter().map(|(i, v, _)| (i, v)).unzip();
    SampleSet::new(shape, indices, values)
}

pub fn write_sample_set(mut w: impl Write, s: &SampleSet) -> Result<()> {
    write_dims(&mut w, s.shape())?;
    writeln!(w, " {}", s.len())?;
    for (idx, &v) in s.iter_indices().zip(s.values()) {
        write_entry(&mut w, idx, v)?;
    }
    Ok(())
}

/// Whitespace-separated tokens with their line numbers.
struct Tokens<I> {
    lines: I,
    pending: std::vec::IntoIter<String>,
    line: usize,
}

impl<I: Iterator<Item = Result<(usize, String)>>> Tokens<I> {
    fn new(lines: I) -> Self {
        Self { lines, pending: Vec::new().into_iter(), line: 0 }
    }

    fn next(&mut self, what: &str) -> Result<(usize, String)> {
        loop {
            if let Some(t) = self.pending.next() {
                return Ok((self.line, t));
            }
            match self.lines.next() {
                Some(item) => {
                    let (line, text) = item?;
                    self.line = line;
                    self.pending = text.split_whitespace().map(str::to_string).collect::<Vec<_>>().into_iter();
                }
                None => return parse_err(self.line.max(1), format!("unexpected end of file, expected {what}")),
            }
        }
    }

    fn usize(&mut self, what: &str) -> Result<(usize, usize)> {
        let (line, t) = self.next(what)?;
        Ok((line, parse_usize(&t, line, what)?))
    }

    fn finish(&mut self) -> Result<()> {
        match self.next("") {
            Ok((line, t)) => parse_err(line, format!("trailing data `{t}`")),
            Err(_) => Ok(()),
        }
    }
}

fn read_core_list(r: impl BufRead) -> Result<(usize, Vec<DenseTensor>)> {
    let mut toks = Tokens::new(content_lines(r));
    let (header_line, d) = toks.usize("the number of cores")?;
    if d == 0 {
        return parse_err(header_line, "at least one core is required");
    }
    let mut cores = Vec::with_capacity(d);
    for k in 0..d {
        let (line, p) = toks.usize("a bond dimension")?;
        let (_, n) = toks.usize("a mode size")?;
        let (_, q) = toks.usize("a bond dimension")?;
        if p == 0 || n == 0 || q == 0 {
            return parse_err(line, format!("core {} has a zero dimension", k + 1));
        }
        let len = p
            .checked_mul(n)
            .and_then(|x| x.checked_mul(q))
            .ok_or_else(|| Error::Parse { line, msg: "core size overflows".into() })?;
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let (l, t) = toks.next("a core entry")?;
            data.push(parse_f64(&t, l)?);
        }
        cores.push(DenseTensor::order3(p, n, q, data)?);
    }
    toks.finish()?;
    Ok((header_line, cores))
}

pub fn read_cores(r: impl BufRead) -> Result<TrCores> {
    let (line, cores) = read_core_list(r)?;
    TrCores::new(cores).or_else(|e| parse_err(line, e.to_string()))
}

/// Reads a one-core file as a uniform ring of the given order.
pub fn read_utr_core(r: impl BufRead, order: usize) -> Result<UtrCore> {
    let (line, mut cores) = read_core_list(r)?;
    if cores.len() != 1 {
        return parse_err(line, format!("a uniform ring file holds one core, found {}", cores.len()));
    }
    UtrCore::new(cores.pop().unwrap(), order).or_else(|e| parse_err(line, e.to_string()))
}

fn write_core_list(mut w: impl Write, cores: &[DenseTensor]) -> Result<()> {
    writeln!(w, "{}", cores.len())?;
    for c in cores {
        let d = c.dims();
        writeln!(w, "{} {} {}", d[0], d[1], d[2])?;
        let mut first = true;
        for v in c.data() {
            if !first {
                write!(w, " ")?;
            }
            write!(w, "{v}")?;
            first = false;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_cores(w: impl Write, u: &TrCores) -> Result<()> {
    write_core_list(w, u.cores())
}

pub fn write_utr_core(w: impl Write, c: &UtrCore) -> Result<()> {
    write_core_list(w, std::slice::from_ref(c.core()))
}
