//! Text weights files.
//!
//! ```text
//! MLMCNET 1
//! 5 16 16                      input dimension, hidden widths
//! 0.05 0.05 0.2 0.2 ...        box: lo hi per coordinate (10 reals)
//! -1.2345678901234567e-1       one parameter per line, flat layout order
//! ...
//! ```
//!
//! Several net blocks may follow one magic line. Reals are written with 17
//! significant digits, so a save/load round trip is bit exact.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{TrainingBox, DIM};
use crate::nn::{NetworkStructure, Weights};
use crate::trainer::TrainedNet;

pub const MAGIC: &str = "MLMCNET";
pub const VERSION: &str = "1";

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_nets<W: Write>(nets: &[TrainedNet], w: W) -> Result<()> {
    let mut w = std::io::BufWriter::new(w);
    writeln!(w, "{MAGIC} {VERSION}")?;
    for net in nets {
        let mut dims = vec![net.structure.input_dim.to_string()];
        dims.extend(net.structure.hidden.iter().map(|h| h.to_string()));
        writeln!(w, "{}", dims.join(" "))?;
        let bounds: Vec<String> = net.bx.bounds.iter().flat_map(|&(lo, hi)| [real(lo), real(hi)]).collect();
        writeln!(w, "{}", bounds.join(" "))?;
        for &t in &net.weights.theta {
            writeln!(w, "{}", real(t))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        location: format!("line {line}"),
        reason: reason.into(),
    }
}

pub fn read_nets<R: Read>(r: R) -> Result<Vec<TrainedNet>> {
    let lines: Vec<String> = BufReader::new(r).lines().collect::<std::io::Result<_>>()?;
    let mut it = lines.iter().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (_, magic) = it.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let mut head = magic.split_whitespace();
    if head.next() != Some(MAGIC) {
        return Err(parse_err(1, format!("expected `{MAGIC} {VERSION}`")));
    }
    match head.next() {
        Some(VERSION) => {}
        Some(v) => return Err(Error::Version(v.to_string())),
        None => return Err(parse_err(1, "missing version")),
    }
    let mut nets = Vec::new();
    while let Some((n, line)) = it.next() {
        if line.is_empty() {
            continue;
        }
        let dims = line
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| parse_err(n, "bad structure line"))?;
        let structure = NetworkStructure::new(dims[0], dims[1..].to_vec()).map_err(|e| parse_err(n, e.to_string()))?;
        if structure.input_dim != DIM {
            return Err(parse_err(n, format!("input dimension must be {DIM}")));
        }
        let (n, line) = it.next().ok_or_else(|| parse_err(n + 1, "missing box line"))?;
        let b = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| parse_err(n, "bad box line"))?;
        if b.len() != 2 * DIM {
            return Err(parse_err(n, format!("box line needs {} reals", 2 * DIM)));
        }
        let mut bounds = [(0.0, 0.0); DIM];
        for k in 0..DIM {
            bounds[k] = (b[2 * k], b[2 * k + 1]);
        }
        let bx = TrainingBox::new(bounds).map_err(|e| parse_err(n, e.to_string()))?;
        let p = structure.param_count();
        let mut theta = Vec::with_capacity(p);
        let mut last = n;
        for _ in 0..p {
            let (n, line) = it.next().ok_or_else(|| parse_err(last + 1, format!("expected {p} parameters")))?;
            theta.push(line.parse::<f64>().map_err(|_| parse_err(n, "bad parameter"))?);
            last = n;
        }
        nets.push(TrainedNet {
            structure,
            weights: Weights { theta },
            bx,
        });
    }
    if nets.is_empty() {
        return Err(parse_err(lines.len(), "no networks in file"));
    }
    Ok(nets)
}

pub fn save(path: &Path, nets: &[TrainedNet]) -> Result<()> {
    write_nets(nets, std::fs::File::create(path)?)
}

pub fn load(path: &Path) -> Result<Vec<TrainedNet>> {
    let f = std::fs::File::open(path)?;
    read_nets(f).map_err(|e| match e {
        Error::Parse { location, reason } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            reason,
        },
        other => other,
    })
}
