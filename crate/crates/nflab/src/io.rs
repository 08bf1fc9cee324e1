//! Field snapshot files, ledger CSV, and JSON report output.
//!
//! Snapshot layout, little-endian throughout:
//!
//! ```text
//! magic  6 bytes  "NFLAB1"
//! kind   u8       0 scalar | 1 vector | 2 director | 3 spectral scalar
//! ncomp  u8       1 or 3
//! n      u32      points per axis
//! l      f64      box side
//! time   f64      snapshot time
//! data   ncomp * n^3 f64, row-major (x slowest, z fastest);
//!        spectral kind stores interleaved (re, im) pairs instead
//! ```

use crate::error::{Error, Result};
use crate::field::{DirectorField, EnergyLedger, FlowState, LedgerEntry, ScalarField, VectorField};
use crate::grid::PeriodicGrid;
use crate::spectral::SpectralField;
use num_complex::Complex64;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 6] = b"NFLAB1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Scalar = 0,
    Vector = 1,
    Director = 2,
    Spectral = 3,
}

impl FieldKind {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Self::Scalar),
            1 => Ok(Self::Vector),
            2 => Ok(Self::Director),
            3 => Ok(Self::Spectral),
            other => Err(Error::FileCorrupt(format!("unknown field kind byte {other}"))),
        }
    }
}

/// A snapshot read back from disk.
#[derive(Debug, Clone)]
pub enum Snapshot {
    Scalar { field: ScalarField, time: f64 },
    Vector { field: VectorField, time: f64 },
    Director { field: VectorField, time: f64 },
    Spectral { field: SpectralField, time: f64 },
}

fn write_header(
    w: &mut impl Write,
    kind: FieldKind,
    ncomp: u8,
    grid: PeriodicGrid,
    time: f64,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[kind as u8, ncomp])?;
    w.write_all(&(grid.n() as u32).to_le_bytes())?;
    w.write_all(&grid.length().to_le_bytes())?;
    w.write_all(&time.to_le_bytes())?;
    Ok(())
}

fn write_component(w: &mut impl Write, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_scalar_snapshot(path: &Path, field: &ScalarField, time: f64) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut w, FieldKind::Scalar, 1, field.grid(), time)?;
    write_component(&mut w, field.values())?;
    Ok(())
}

pub fn write_vector_snapshot(
    path: &Path,
    field: &VectorField,
    time: f64,
    kind: FieldKind,
) -> Result<()> {
    if !matches!(kind, FieldKind::Vector | FieldKind::Director) {
        return Err(Error::InvalidState("vector snapshots are kind 1 or 2".into()));
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut w, kind, 3, field.grid(), time)?;
    for c in 0..3 {
        write_component(&mut w, field.component(c).values())?;
    }
    Ok(())
}

/// Spectral dump: same header with kind = 3 and interleaved (re, im).
pub fn write_spectral_snapshot(path: &Path, field: &SpectralField, time: f64) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut w, FieldKind::Spectral, 1, field.grid(), time)?;
    for c in field.coeffs() {
        w.write_all(&c.re.to_le_bytes())?;
        w.write_all(&c.im.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::FileCorrupt("truncated float".into()))?;
    Ok(f64::from_le_bytes(buf))
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| Error::FileCorrupt("file shorter than the header".into()))?;
    if &magic != MAGIC {
        return Err(Error::FileCorrupt(format!(
            "bad magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let mut kind_ncomp = [0u8; 2];
    r.read_exact(&mut kind_ncomp)
        .map_err(|_| Error::FileCorrupt("truncated header".into()))?;
    let kind = FieldKind::from_byte(kind_ncomp[0])?;
    let ncomp = kind_ncomp[1] as usize;
    let mut n_buf = [0u8; 4];
    r.read_exact(&mut n_buf)
        .map_err(|_| Error::FileCorrupt("truncated header".into()))?;
    let n = u32::from_le_bytes(n_buf) as usize;
    let l = read_f64(&mut r)?;
    let time = read_f64(&mut r)?;
    let grid = PeriodicGrid::new(n, l)
        .map_err(|e| Error::FileCorrupt(format!("header grid invalid: {e}")))?;

    let expected_comp = match kind {
        FieldKind::Scalar | FieldKind::Spectral => 1,
        FieldKind::Vector | FieldKind::Director => 3,
    };
    if ncomp != expected_comp {
        return Err(Error::FileCorrupt(format!(
            "kind {kind:?} expects {expected_comp} components, header says {ncomp}"
        )));
    }

    let npts = grid.point_count();
    let mut read_field = || -> Result<ScalarField> {
        let mut values = Vec::with_capacity(npts);
        for _ in 0..npts {
            values.push(read_f64(&mut r)?);
        }
        ScalarField::from_values(grid, values)
    };

    let snapshot = match kind {
        FieldKind::Scalar => Snapshot::Scalar {
            field: read_field()?,
            time,
        },
        FieldKind::Vector | FieldKind::Director => {
            let field = VectorField::new([read_field()?, read_field()?, read_field()?])?;
            if kind == FieldKind::Vector {
                Snapshot::Vector { field, time }
            } else {
                Snapshot::Director { field, time }
            }
        }
        FieldKind::Spectral => {
            let mut spec = SpectralField::zeros(grid);
            for slot in 0..npts {
                let re = read_f64(&mut r)?;
                let im = read_f64(&mut r)?;
                spec.coeffs_mut()[slot] = Complex64::new(re, im);
            }
            Snapshot::Spectral { field: spec, time }
        }
    };
    // trailing garbage means a shape mismatch
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::FileCorrupt("trailing bytes after payload".into()));
    }
    Ok(snapshot)
}

/// Writes a full state as three snapshot files in `dir`:
/// velocity.nfs, director.nfs, pressure.nfs.
pub fn save_state(dir: &Path, state: &FlowState) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_vector_snapshot(
        &dir.join("velocity.nfs"),
        &state.velocity,
        state.time,
        FieldKind::Vector,
    )?;
    write_vector_snapshot(
        &dir.join("director.nfs"),
        state.director.as_vector(),
        state.time,
        FieldKind::Director,
    )?;
    write_scalar_snapshot(&dir.join("pressure.nfs"), &state.pressure, state.time)?;
    Ok(())
}

/// Loads a state saved by [`save_state`]; the flow invariants are revalidated.
pub fn load_state(dir: &Path) -> Result<FlowState> {
    let velocity = match read_snapshot(&dir.join("velocity.nfs"))? {
        Snapshot::Vector { field, .. } => field,
        _ => return Err(Error::FileCorrupt("velocity.nfs is not a vector snapshot".into())),
    };
    let (director, time) = match read_snapshot(&dir.join("director.nfs"))? {
        Snapshot::Director { field, time } => (field, time),
        _ => {
            return Err(Error::FileCorrupt(
                "director.nfs is not a director snapshot".into(),
            ))
        }
    };
    let pressure = match read_snapshot(&dir.join("pressure.nfs"))? {
        Snapshot::Scalar { field, .. } => field,
        _ => return Err(Error::FileCorrupt("pressure.nfs is not a scalar snapshot".into())),
    };
    FlowState::new(velocity, DirectorField::new(director)?, pressure, time)
}

const LEDGER_HEADER: &str = "time,E2,E3,dissipation,uloc3,sup_grad_u_m0,sup_grad_u_m1,sup_grad_u_m2";

/// Ledger CSV with the sup-norm columns sup|grad^m u| + sup|grad^(m+1) d|.
/// Floats print in shortest round-trip form, so identical runs produce
/// byte-identical files.
pub fn write_ledger(path: &Path, ledger: &EnergyLedger) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{LEDGER_HEADER}")?;
    for e in ledger.entries() {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            e.time,
            e.e2,
            e.e3,
            e.dissipation,
            e.uloc3,
            e.sup_grad.first().copied().unwrap_or(0.0),
            e.sup_grad.get(1).copied().unwrap_or(0.0),
            e.sup_grad.get(2).copied().unwrap_or(0.0),
        )?;
    }
    Ok(())
}

pub fn read_ledger(path: &Path) -> Result<EnergyLedger> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::FileCorrupt("empty ledger file".into()))??;
    if header.trim() != LEDGER_HEADER {
        return Err(Error::FileCorrupt(format!("unexpected ledger header `{header}`")));
    }
    let mut ledger = EnergyLedger::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 8 {
            return Err(Error::FileCorrupt(format!(
                "ledger row has {} columns, expected 8",
                cols.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::FileCorrupt(format!("bad float `{s}` in ledger")))
        };
        ledger.push(LedgerEntry {
            time: parse(cols[0])?,
            e2: parse(cols[1])?,
            e3: parse(cols[2])?,
            dissipation: parse(cols[3])?,
            uloc3: parse(cols[4])?,
            sup_grad: vec![parse(cols[5])?, parse(cols[6])?, parse(cols[7])?],
        })?;
    }
    Ok(ledger)
}

/// Pretty-printed JSON with a trailing newline; deterministic field order.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidState(format!("serialization failed: {e}")))?;
    writeln!(w, "{s}")?;
    Ok(())
}
