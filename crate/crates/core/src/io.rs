//! Text formats for label stacks (`MRL 1`), probability maps (`MRP 1`)
//! and per-iteration trace reports.
//!
//! Both grid formats are ASCII with LF line endings, single spaces between
//! fields, no trailing whitespace and a final LF. Reals are written with 17
//! significant digits so every `f64` survives a write/read cycle bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::calibrate::RecurrenceTrace;
use crate::error::{Error, Result};
use crate::grid::{argmax_grid, ClassGrid, GridShape, LabelStack, ProbMap};
use crate::metrics::{dice, DiceSpec};

pub const MRL_MAGIC: &str = "MRL 1";
pub const MRP_MAGIC: &str = "MRP 1";

pub fn write_mrl(stack: &LabelStack) -> String {
    let s = stack.shape();
    let mut out = format!(
        "{MRL_MAGIC}\n{} {} {} {}\n",
        s.height, s.width, s.classes, s.raters
    );
    for rater in stack.raters() {
        for row in rater.cells().chunks_exact(s.width) {
            push_row(&mut out, row.iter().map(|c| c.to_string()));
        }
    }
    out
}

pub fn write_mrp(map: &ProbMap) -> String {
    let s = map.shape();
    let mut out = format!("{MRP_MAGIC}\n{} {} {}\n", s.height, s.width, s.classes);
    for k in 0..s.classes {
        let channel = map.channel(k);
        for row in channel.chunks_exact(s.width) {
            push_row(&mut out, row.iter().map(|v| format!("{v:.16e}")));
        }
    }
    out
}

fn push_row(out: &mut String, fields: impl Iterator<Item = String>) {
    for (i, f) in fields.enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&f);
    }
    out.push('\n');
}

struct Lines<'a> {
    lines: Vec<&'a str>,
    next: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Result<Self> {
        if text.is_empty() {
            return Err(Error::format(1, "empty file"));
        }
        let body = text
            .strip_suffix('\n')
            .ok_or_else(|| Error::format(text.lines().count(), "file must end with LF"))?;
        let lines: Vec<&str> = body.split('\n').collect();
        for (i, line) in lines.iter().enumerate() {
            if line.contains('\r') {
                return Err(Error::format(i + 1, "carriage return in line"));
            }
            if line.ends_with(' ') || line.starts_with(' ') {
                return Err(Error::format(i + 1, "leading or trailing whitespace"));
            }
        }
        Ok(Self { lines, next: 0 })
    }

    /// 1-based number of the line most recently returned.
    fn number(&self) -> usize {
        self.next
    }

    fn take(&mut self) -> Result<&'a str> {
        let line = self
            .lines
            .get(self.next)
            .copied()
            .ok_or_else(|| Error::format(self.next + 1, "unexpected end of file"))?;
        self.next += 1;
        Ok(line)
    }

    fn fields(&mut self, expected: usize) -> Result<Vec<&'a str>> {
        let line = self.take()?;
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.iter().any(|f| f.is_empty()) {
            return Err(Error::format(
                self.number(),
                "fields must be separated by single spaces",
            ));
        }
        if fields.len() != expected {
            return Err(Error::format(
                self.number(),
                format!("expected {expected} fields, found {}", fields.len()),
            ));
        }
        Ok(fields)
    }

    fn finish(&self) -> Result<()> {
        if self.next != self.lines.len() {
            return Err(Error::format(self.next + 1, "unexpected trailing content"));
        }
        Ok(())
    }
}

fn parse_usize(field: &str, line: usize) -> Result<usize> {
    if field.starts_with('+') || (field.len() > 1 && field.starts_with('0')) {
        return Err(Error::format(
            line,
            format!("non-canonical integer `{field}`"),
        ));
    }
    field
        .parse()
        .map_err(|_| Error::format(line, format!("bad integer `{field}`")))
}

fn header<'a>(lines: &mut Lines<'a>, magic: &str, dims: usize) -> Result<Vec<usize>> {
    if lines.take()? != magic {
        return Err(Error::format(1, format!("expected header `{magic}`")));
    }
    let fields = lines.fields(dims)?;
    let n = lines.number();
    fields.into_iter().map(|f| parse_usize(f, n)).collect()
}

fn shape_from(dims: &[usize], line: usize) -> Result<GridShape> {
    let raters = dims.get(3).copied().unwrap_or(1);
    GridShape::new(dims[0], dims[1], dims[2], raters)
        .map_err(|e| Error::format(line, e.to_string()))
}

pub fn parse_mrl(text: &str) -> Result<LabelStack> {
    let mut lines = Lines::new(text)?;
    let dims = header(&mut lines, MRL_MAGIC, 4)?;
    let shape = shape_from(&dims, 2)?;
    let mut grids = Vec::with_capacity(shape.raters);
    for _ in 0..shape.raters {
        let mut cells = Vec::with_capacity(shape.pixels());
        for _ in 0..shape.height {
            for f in lines.fields(shape.width)? {
                let c = parse_usize(f, lines.number())?;
                if c >= shape.classes {
                    return Err(Error::format(
                        lines.number(),
                        format!("class {c} out of range for {} classes", shape.classes),
                    ));
                }
                cells.push(c);
            }
        }
        grids.push(ClassGrid::new(
            shape.height,
            shape.width,
            shape.classes,
            cells,
        )?);
    }
    lines.finish()?;
    LabelStack::new(grids)
}

pub fn parse_mrp(text: &str) -> Result<ProbMap> {
    let mut lines = Lines::new(text)?;
    let dims = header(&mut lines, MRP_MAGIC, 3)?;
    let shape = shape_from(&dims, 2)?;
    let (n, k) = (shape.pixels(), shape.classes);
    let mut values = vec![0.0; n * k];
    for c in 0..k {
        for i in 0..shape.height {
            for (j, f) in lines.fields(shape.width)?.into_iter().enumerate() {
                let v: f64 = f
                    .parse()
                    .map_err(|_| Error::format(lines.number(), format!("bad real `{f}`")))?;
                if !v.is_finite() {
                    return Err(Error::format(lines.number(), "non-finite value"));
                }
                values[(i * shape.width + j) * k + c] = v;
            }
        }
    }
    lines.finish()?;
    ProbMap::new(shape, values).map_err(|e| Error::format(2, e.to_string()))
}

/// Either grid format, dispatched on the header line.
#[derive(Debug, Clone, PartialEq)]
pub enum GridFile {
    Labels(LabelStack),
    Probs(ProbMap),
}

impl GridFile {
    pub fn parse(text: &str) -> Result<Self> {
        match text.split('\n').next() {
            Some(MRL_MAGIC) => parse_mrl(text).map(GridFile::Labels),
            Some(MRP_MAGIC) => parse_mrp(text).map(GridFile::Probs),
            _ => Err(Error::format(
                1,
                "unknown header; expected `MRL 1` or `MRP 1`",
            )),
        }
    }

    /// Hard labels; a probability map is reduced by argmax. Label stacks
    /// must hold a single rater.
    pub fn into_class_grid(self) -> Result<ClassGrid> {
        match self {
            GridFile::Labels(stack) if stack.num_raters() == 1 => Ok(stack.rater(0).clone()),
            GridFile::Labels(stack) => Err(Error::shape(format!(
                "expected a single label grid, found {} raters",
                stack.num_raters()
            ))),
            GridFile::Probs(map) => Ok(argmax_grid(&map)),
        }
    }

    /// Probabilities; single-rater label files are one-hot encoded.
    pub fn into_prob_map(self) -> Result<ProbMap> {
        match self {
            GridFile::Probs(map) => Ok(map),
            GridFile::Labels(stack) if stack.num_raters() == 1 => Ok(stack.one_hot(0)),
            GridFile::Labels(stack) => Err(Error::shape(format!(
                "expected a single label grid, found {} raters",
                stack.num_raters()
            ))),
        }
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_grid_file(path: &Path) -> Result<GridFile> {
    GridFile::parse(&read_text(path)?)
}

pub fn read_mrl(path: &Path) -> Result<LabelStack> {
    parse_mrl(&read_text(path)?)
}

pub fn read_mrp(path: &Path) -> Result<ProbMap> {
    parse_mrp(&read_text(path)?)
}

/// One `key=value` line per iteration. Dice against `reference` is added
/// when one is given.
pub fn trace_report(
    trace: &RecurrenceTrace,
    reference: Option<(&ClassGrid, &DiceSpec)>,
) -> Result<String> {
    let mut out = String::new();
    for (idx, it) in trace.iterations.iter().enumerate() {
        let mut fields = vec![format!("iteration={}", idx + 1)];
        fields.push(match it.ssim_prev {
            Some(s) => format!("ssim_prev={s:.9}"),
            None => "ssim_prev=na".to_string(),
        });
        fields.push(match it.delta {
            Some(d) => format!("delta={d:.6e}"),
            None => "delta=na".to_string(),
        });
        for (m, ce) in it.rater_cross_entropy.iter().enumerate() {
            fields.push(format!("ce_r{m}={ce:.9}"));
        }
        if let Some((gold, spec)) = reference {
            let scores = dice(&argmax_grid(&it.fused), gold, spec)?;
            let mean = scores.iter().map(|(_, s)| s).sum::<f64>() / scores.len() as f64;
            for (name, s) in &scores {
                fields.push(format!("dice_{name}={s:.6}"));
            }
            fields.push(format!("dice_vs_ref={mean:.6}"));
        }
        fields.push(format!("converged={}", it.converged));
        let _ = writeln!(out, "{}", fields.join(" "));
    }
    Ok(out)
}

/// Splits `key=value` lines into ordered pairs.
pub fn parse_records(text: &str) -> Result<Vec<Vec<(String, String)>>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            line.split_whitespace()
                .map(|kv| {
                    kv.split_once('=')
                        .map(|(k, v)| (k.to_string(), v.to_string()))
                        .ok_or_else(|| Error::format(n + 1, format!("`{kv}` is not key=value")))
                })
                .collect()
        })
        .collect()
}
