//! Plain-text configuration snapshots.
//!
//! ```text
//! lattice-gas 1
//! <width> <height> <vacant|occupied>
//! <row y = 0>
//! ...
//! <row y = height - 1>
//! ```
//! Each row holds `width` characters, `0` for vacant and `1` for occupied.
//! Blank lines and lines starting with `#` are ignored. Sites start at (0, 0).

use std::sync::Arc;

use thiserror::Error;

use crate::lattice::{BoundaryCondition, Config, LatticeError, Region};

pub const MAGIC: &str = "lattice-gas 1";

#[derive(Debug, Error, PartialEq)]
pub enum SnapshotError {
    #[error("missing or wrong magic line, expected `{MAGIC}`")]
    Magic,
    #[error("line {line}: header must be `<width> <height> <vacant|occupied>`")]
    Header { line: usize },
    #[error("line {line}: unknown boundary kind `{kind}`")]
    BoundaryKind { line: usize, kind: String },
    #[error("explicit boundary conditions cannot be written to a snapshot")]
    ExplicitBoundary,
    #[error("snapshots are only defined for rectangles at the origin")]
    NotARectangle,
    #[error("line {line}: expected {expected} cells, found {found}")]
    RowLength { line: usize, expected: usize, found: usize },
    #[error("line {line}, column {column}: invalid cell `{ch}`")]
    Cell { line: usize, column: usize, ch: char },
    #[error("expected {expected} rows, found {found}")]
    RowCount { expected: usize, found: usize },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

pub fn write(config: &Config, bc: &BoundaryCondition) -> Result<String, SnapshotError> {
    let kind = match bc {
        BoundaryCondition::Vacant => "vacant",
        BoundaryCondition::Occupied => "occupied",
        BoundaryCondition::Explicit(_) => return Err(SnapshotError::ExplicitBoundary),
    };
    let (w, h) = match config.region().shape() {
        crate::lattice::Shape::Rectangle { x0: 0, y0: 0, width, height } => (width, height),
        _ => return Err(SnapshotError::NotARectangle),
    };
    let mut out = String::with_capacity((w as usize + 1) * h as usize + 32);
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!("{w} {h} {kind}\n"));
    for y in 0..h as usize {
        for x in 0..w as usize {
            out.push(if config.get(y * w as usize + x) { '1' } else { '0' });
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn parse(text: &str) -> Result<(Config, BoundaryCondition), SnapshotError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, l)) if l == MAGIC => {}
        _ => return Err(SnapshotError::Magic),
    }
    let (hline, header) = lines.next().ok_or(SnapshotError::Header { line: 0 })?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(SnapshotError::Header { line: hline });
    }
    let w: u32 = parts[0].parse().map_err(|_| SnapshotError::Header { line: hline })?;
    let h: u32 = parts[1].parse().map_err(|_| SnapshotError::Header { line: hline })?;
    let bc = match parts[2] {
        "vacant" => BoundaryCondition::Vacant,
        "occupied" => BoundaryCondition::Occupied,
        other => return Err(SnapshotError::BoundaryKind { line: hline, kind: other.to_string() }),
    };
    let region = Arc::new(Region::rectangle(w, h)?);
    let mut config = Config::empty(region);
    let mut rows = 0usize;
    for (line, row) in lines {
        if rows == h as usize {
            return Err(SnapshotError::RowCount { expected: h as usize, found: rows + 1 });
        }
        let n = row.chars().count();
        if n != w as usize {
            return Err(SnapshotError::RowLength { line, expected: w as usize, found: n });
        }
        for (x, ch) in row.chars().enumerate() {
            match ch {
                '0' => {}
                '1' => config.set(rows * w as usize + x, true),
                _ => return Err(SnapshotError::Cell { line, column: x + 1, ch }),
            }
        }
        rows += 1;
    }
    if rows != h as usize {
        return Err(SnapshotError::RowCount { expected: h as usize, found: rows });
    }
    Ok((config, bc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Site;

    #[test]
    fn round_trip() {
        let r = Arc::new(Region::rectangle(3, 2).unwrap());
        let c = Config::from_sites(r, &[Site::new(0, 0), Site::new(2, 1)]).unwrap();
        let text = write(&c, &BoundaryCondition::Occupied).unwrap();
        assert_eq!(text, "lattice-gas 1\n3 2 occupied\n100\n001\n");
        let (back, bc) = parse(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(bc, BoundaryCondition::Occupied);
    }

    #[test]
    fn comments_and_blank_lines() {
        let (c, _) = parse("# hi\nlattice-gas 1\n\n2 1 vacant\n# row\n11\n").unwrap();
        assert_eq!(c.particle_count(), 2);
    }

    #[test]
    fn errors() {
        assert_eq!(parse(""), Err(SnapshotError::Magic));
        assert_eq!(parse("lattice-gas 1\n2 x vacant\n"), Err(SnapshotError::Header { line: 2 }));
        assert!(matches!(parse("lattice-gas 1\n1 1 wet\n1\n"), Err(SnapshotError::BoundaryKind { .. })));
        assert_eq!(
            parse("lattice-gas 1\n2 1 vacant\n1\n"),
            Err(SnapshotError::RowLength { line: 3, expected: 2, found: 1 })
        );
        assert_eq!(
            parse("lattice-gas 1\n2 1 vacant\n1x\n"),
            Err(SnapshotError::Cell { line: 3, column: 2, ch: 'x' })
        );
        assert_eq!(
            parse("lattice-gas 1\n1 2 vacant\n1\n"),
            Err(SnapshotError::RowCount { expected: 2, found: 1 })
        );
        assert!(matches!(parse("lattice-gas 1\n0 2 vacant\n"), Err(SnapshotError::Lattice(_))));
    }
}
