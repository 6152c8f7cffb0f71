//! Field serialization.
//!
//! CSV is for inspection: a `#`-prefixed header records the grid shape, then
//! one row per `y` node with full round-trip precision. The binary format is
//! for checkpoints: a fixed 32-byte header (magic, version, shape, flags)
//! followed by row-major little-endian f64 values. Readers validate the
//! header and the payload length before touching the data.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;

use super::{ChannelGrid, PhysField};
use crate::error::{Error, Result};
use crate::scalar::Real;

const MAGIC: &[u8; 8] = b"PKSFLD01";
const VERSION: u32 = 1;

pub fn write_field_csv<T: Real>(field: &PhysField<T>, path: &Path) -> Result<()> {
    let g = field.grid();
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# nx={} ny={} dealias={}", g.nx(), g.ny(), g.dealias())?;
    for row in field.data().outer_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{}", v.as_f64())).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_field_csv<T: Real>(grid: &Arc<ChannelGrid<T>>, path: &Path) -> Result<PhysField<T>> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Checkpoint("empty field file".into()))??;
    let (nx, ny, _) = parse_csv_header(&header)?;
    if nx != grid.nx() || ny != grid.ny() {
        return Err(Error::Checkpoint(format!(
            "field file is {}x{}, grid wants {}x{}",
            nx,
            ny,
            grid.nx(),
            grid.ny()
        )));
    }
    let mut data = Array2::zeros((ny + 1, nx));
    let mut j = 0usize;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if j > ny {
            return Err(Error::Checkpoint("too many rows in field file".into()));
        }
        let mut i = 0usize;
        for tok in line.split(',') {
            if i >= nx {
                return Err(Error::Checkpoint(format!("row {j} has too many columns")));
            }
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|e| Error::Checkpoint(format!("row {j} col {i}: {e}")))?;
            data[[j, i]] = T::lit(v);
            i += 1;
        }
        if i != nx {
            return Err(Error::Checkpoint(format!(
                "row {j} has {i} columns, expected {nx}"
            )));
        }
        j += 1;
    }
    if j != ny + 1 {
        return Err(Error::Checkpoint(format!(
            "field file has {j} rows, expected {}",
            ny + 1
        )));
    }
    PhysField::from_data(grid, data)
}

fn parse_csv_header(line: &str) -> Result<(usize, usize, bool)> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::Checkpoint("missing # header line".into()))?;
    let mut nx = None;
    let mut ny = None;
    let mut dealias = None;
    for tok in body.split_whitespace() {
        if let Some((key, val)) = tok.split_once('=') {
            match key {
                "nx" => nx = val.parse().ok(),
                "ny" => ny = val.parse().ok(),
                "dealias" => dealias = val.parse().ok(),
                _ => {}
            }
        }
    }
    match (nx, ny, dealias) {
        (Some(nx), Some(ny), Some(d)) => Ok((nx, ny, d)),
        _ => Err(Error::Checkpoint(format!("malformed header: {line}"))),
    }
}

pub fn write_field_bin<T: Real>(field: &PhysField<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_field_bin_to(field, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Binary layout: magic(8) version(4) nx(4) ny(4) flags(4) reserved(8),
/// then `(ny+1)*nx` f64 little-endian values, row-major.
pub fn write_field_bin_to<T: Real>(field: &PhysField<T>, w: &mut impl Write) -> Result<()> {
    let g = field.grid();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(g.nx() as u32).to_le_bytes())?;
    w.write_all(&(g.ny() as u32).to_le_bytes())?;
    w.write_all(&(g.dealias() as u32).to_le_bytes())?;
    w.write_all(&[0u8; 8])?;
    for row in field.data().outer_iter() {
        for v in row {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_field_bin<T: Real>(grid: &Arc<ChannelGrid<T>>, path: &Path) -> Result<PhysField<T>> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    read_field_bin_from(grid, &mut r)
}

pub fn read_field_bin_from<T: Real>(
    grid: &Arc<ChannelGrid<T>>,
    r: &mut impl Read,
) -> Result<PhysField<T>> {
    let mut head = [0u8; 32];
    r.read_exact(&mut head)
        .map_err(|e| Error::Checkpoint(format!("short header: {e}")))?;
    if &head[0..8] != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(head[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let nx = u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize;
    let ny = u32::from_le_bytes(head[16..20].try_into().unwrap()) as usize;
    if nx != grid.nx() || ny != grid.ny() {
        return Err(Error::Checkpoint(format!(
            "field blob is {}x{}, grid wants {}x{}",
            nx,
            ny,
            grid.nx(),
            grid.ny()
        )));
    }
    let mut data = Array2::zeros((ny + 1, nx));
    let mut buf = [0u8; 8];
    for j in 0..=ny {
        for i in 0..nx {
            r.read_exact(&mut buf)
                .map_err(|e| Error::Checkpoint(format!("short payload at ({j},{i}): {e}")))?;
            data[[j, i]] = T::lit(f64::from_le_bytes(buf));
        }
    }
    PhysField::from_data(grid, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ChannelGrid, Lp, PhysField};

    #[test]
    fn csv_round_trip_preserves_values() {
        let g = ChannelGrid::<f64>::new(16, 8, true).unwrap();
        let f = PhysField::from_fn(&g, |x, y| (x.sin() + 1.0) * y - 1.0 / 3.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        write_field_csv(&f, &p).unwrap();
        let back = read_field_csv(&g, &p).unwrap();
        let mut diff = back.clone();
        diff.add_scaled(&f, -1.0).unwrap();
        assert_eq!(diff.lp_norm(Lp::Inf), 0.0);
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let g = ChannelGrid::<f64>::new(16, 8, false).unwrap();
        let f = PhysField::from_fn(&g, |x, y| x.cos() * (std::f64::consts::PI * y).sin() + 0.1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        write_field_bin(&f, &p).unwrap();
        let back = read_field_bin(&g, &p).unwrap();
        for (a, b) in f.data().iter().zip(back.data().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let g = ChannelGrid::<f64>::new(16, 8, true).unwrap();
        let dir = tempfile::tempdir().unwrap();

        let p = dir.path().join("bad_magic.bin");
        std::fs::write(&p, b"NOTAFLDX00000000000000000000000000000000").unwrap();
        assert!(read_field_bin(&g, &p).is_err());

        let f = PhysField::from_fn(&g, |x, _| x);
        let p2 = dir.path().join("truncated.bin");
        write_field_bin(&f, &p2).unwrap();
        let bytes = std::fs::read(&p2).unwrap();
        std::fs::write(&p2, &bytes[..bytes.len() - 9]).unwrap();
        assert!(read_field_bin(&g, &p2).is_err());

        let p3 = dir.path().join("wrong_shape.csv");
        write_field_csv(&f, &p3).unwrap();
        let g2 = ChannelGrid::<f64>::new(32, 8, true).unwrap();
        assert!(read_field_csv(&g2, &p3).is_err());

        let p4 = dir.path().join("no_header.csv");
        std::fs::write(&p4, "1.0,2.0\n").unwrap();
        assert!(read_field_csv(&g, &p4).is_err());
    }
}
