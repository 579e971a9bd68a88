//! Plain-text fixture format.
//!
//! A file is a sequence of blocks. Each block starts with a header line
//! `NAME rows cols` followed by `rows` lines of `cols` row-major entries printed
//! with 17 significant digits in scientific notation. Blank lines and lines
//! starting with `#` are ignored.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

use super::{LdsModel, SparseTrajectory};

/// A named dense matrix block.
pub type Block = (String, Mat);

/// Formats blocks in the fixture format.
pub fn format_blocks(blocks: &[(&str, &Mat)]) -> String {
    let mut out = String::new();
    for (name, mat) in blocks {
        let _ = writeln!(out, "{name} {} {}", mat.nrows(), mat.ncols());
        for i in 0..mat.nrows() {
            let row: Vec<String> = (0..mat.ncols()).map(|j| format!("{:.16e}", mat[(i, j)])).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    out
}

/// Writes blocks to `w` in the fixture format.
pub fn write_blocks<W: Write>(mut w: W, blocks: &[(&str, &Mat)]) -> Result<()> {
    w.write_all(format_blocks(blocks).as_bytes())?;
    Ok(())
}

/// Parses every block from `r`.
pub fn read_blocks<R: BufRead>(r: R) -> Result<Vec<Block>> {
    let mut tokens: Vec<(usize, String)> = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        tokens.extend(trimmed.split_whitespace().map(|t| (lineno + 1, t.to_string())));
    }
    let mut blocks = Vec::new();
    let mut it = tokens.into_iter();
    while let Some((line, name)) = it.next() {
        let mut dim = |what: &str| -> Result<usize> {
            let (l, tok) = it
                .next()
                .ok_or_else(|| Error::Parse(format!("line {line}: missing {what} for block {name}")))?;
            tok.parse::<usize>()
                .map_err(|_| Error::Parse(format!("line {l}: bad {what} '{tok}' for block {name}")))
        };
        let rows = dim("row count")?;
        let cols = dim("column count")?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let (l, tok) = it
                .next()
                .ok_or_else(|| Error::Parse(format!("block {name}: expected {} values", rows * cols)))?;
            let v = tok
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("line {l}: bad number '{tok}' in block {name}")))?;
            data.push(v);
        }
        blocks.push((name, Mat::from_row_slice(rows, cols, &data)));
    }
    Ok(blocks)
}

fn find<'a>(blocks: &'a [Block], name: &str) -> Option<&'a Mat> {
    blocks.iter().find(|(n, _)| n == name).map(|(_, m)| m)
}

fn require<'a>(blocks: &'a [Block], name: &str) -> Result<&'a Mat> {
    find(blocks, name).ok_or_else(|| Error::Parse(format!("missing block {name}")))
}

/// Serialises a model. Time-varying lists use block names `A@1`, `A@2`, ….
pub fn format_model(model: &LdsModel) -> String {
    let horizon = Mat::from_element(1, 1, model.horizon() as f64);
    let mut names: Vec<(String, &Mat)> = vec![("HORIZON".into(), &horizon)];
    for (name, list) in model.lists() {
        if list.len() == 1 {
            names.push((name.to_string(), &list[0]));
        } else {
            for (k, mat) in list.iter().enumerate() {
                names.push((format!("{name}@{}", k + 1), mat));
            }
        }
    }
    let refs: Vec<(&str, &Mat)> = names.iter().map(|(n, m)| (n.as_str(), *m)).collect();
    format_blocks(&refs)
}

/// Parses a model written by [`format_model`].
pub fn parse_model(blocks: &[Block]) -> Result<LdsModel> {
    let horizon_block = require(blocks, "HORIZON")?;
    let horizon = horizon_block[(0, 0)];
    if horizon < 1.0 || horizon.fract() != 0.0 {
        return Err(Error::Parse(format!("bad horizon {horizon}")));
    }
    let horizon = horizon as usize;
    let list = |name: &str| -> Result<Vec<Mat>> {
        if let Some(m) = find(blocks, name) {
            return Ok(vec![m.clone()]);
        }
        (1..=horizon)
            .map(|k| require(blocks, &format!("{name}@{k}")).cloned())
            .collect()
    };
    LdsModel::new(horizon, list("A")?, list("B")?, list("C")?, list("D")?, list("Q")?, list("R")?)
}

fn rows_matrix(seq: &[Vector]) -> Mat {
    let cols = seq.first().map_or(0, |v| v.len());
    Mat::from_fn(seq.len(), cols, |i, j| seq[i][j])
}

/// Splits the rows of a matrix into a vector sequence.
pub fn matrix_rows(mat: &Mat) -> Vec<Vector> {
    (0..mat.nrows()).map(|i| mat.row(i).transpose()).collect()
}

/// Serialises a vector sequence as one block with one row per step.
pub fn format_sequence(name: &str, seq: &[Vector]) -> String {
    format_blocks(&[(name, &rows_matrix(seq))])
}

/// Serialises a trajectory with blocks `X`, `U`, `Y`, `W`, `V` and `SIGMA` (σ_u, σ_v).
pub fn format_trajectory(traj: &SparseTrajectory) -> String {
    let sigma = Mat::from_row_slice(1, 2, &[traj.sigma_u, traj.sigma_v]);
    let (x, u, y, w, v) = (
        rows_matrix(&traj.x),
        rows_matrix(&traj.u),
        rows_matrix(&traj.y),
        rows_matrix(&traj.w),
        rows_matrix(&traj.v),
    );
    format_blocks(&[("X", &x), ("U", &u), ("Y", &y), ("W", &w), ("V", &v), ("SIGMA", &sigma)])
}

/// Parses a trajectory written by [`format_trajectory`]. Supports are
/// recovered from the nonzero entries of `U`.
pub fn parse_trajectory(blocks: &[Block]) -> Result<SparseTrajectory> {
    let sigma = require(blocks, "SIGMA")?;
    let u = matrix_rows(require(blocks, "U")?);
    let supports = u
        .iter()
        .map(|uk| (0..uk.len()).filter(|&i| uk[i] != 0.0).collect())
        .collect();
    Ok(SparseTrajectory {
        x: matrix_rows(require(blocks, "X")?),
        u,
        supports,
        y: matrix_rows(require(blocks, "Y")?),
        w: matrix_rows(require(blocks, "W")?),
        v: matrix_rows(require(blocks, "V")?),
        sigma_u: sigma[(0, 0)],
        sigma_v: sigma[(0, 1)],
        seed: 0,
    })
}

/// Reads the measurement sequence from block `Y`.
pub fn parse_measurements(blocks: &[Block]) -> Result<Vec<Vector>> {
    Ok(matrix_rows(require(blocks, "Y")?))
}
