//! Binary field snapshots.
//!
//! Layout (all integers and floats little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 4     | magic `G2F1` |
//! | 4     | format version (`u32`, currently 1) |
//! | 1     | scheme tag (0 spectral, 1 central) |
//! | 56    | extents, 7 × `u64` |
//! | 56    | spacings, 7 × `f64` |
//! | 1     | form degree |
//! | 8·n   | coefficients, site-major, lexicographic components within a site |

use std::io::{Read, Write};
use std::path::Path;

use crate::exterior::{n_components, DIM};
use crate::lattice::{Grid, LatticeField, Scheme};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"G2F1";
pub const VERSION: u32 = 1;

pub fn write_field<W: Write>(mut w: W, field: &LatticeField) -> Result<()> {
    let g = field.grid();
    let mut buf = Vec::with_capacity(130 + 8 * field.raw().len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(g.scheme().tag());
    for n in g.extents() {
        buf.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for h in g.spacings() {
        buf.extend_from_slice(&h.to_le_bytes());
    }
    buf.push(field.degree() as u8);
    for v in field.to_site_major() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn take<'a>(data: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if data.len() < n {
        return Err(Error::Format(format!("truncated snapshot while reading {what}")));
    }
    let (head, tail) = data.split_at(n);
    *data = tail;
    Ok(head)
}

pub fn read_field<R: Read>(mut r: R) -> Result<LatticeField> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut data = bytes.as_slice();
    let magic = take(&mut data, 4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(magic),
            std::str::from_utf8(MAGIC).expect("ascii")
        )));
    }
    let version = u32::from_le_bytes(take(&mut data, 4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported snapshot version {version}, this build reads version {VERSION}"
        )));
    }
    let scheme = Scheme::from_tag(take(&mut data, 1, "scheme")?[0])?;
    let mut extents = [0usize; DIM];
    for e in extents.iter_mut() {
        let v = u64::from_le_bytes(take(&mut data, 8, "extents")?.try_into().expect("8 bytes"));
        *e = usize::try_from(v).map_err(|_| Error::Format(format!("extent {v} too large")))?;
    }
    let mut spacings = [0f64; DIM];
    for h in spacings.iter_mut() {
        *h = f64::from_le_bytes(take(&mut data, 8, "spacings")?.try_into().expect("8 bytes"));
    }
    let degree = take(&mut data, 1, "degree")?[0] as usize;
    if degree > DIM {
        return Err(Error::Format(format!("form degree {degree} out of range")));
    }
    let grid = Grid::new(extents, spacings, scheme).map_err(|e| Error::Format(e.to_string()))?;
    let count = grid.sites() * n_components(degree);
    if data.len() != 8 * count {
        return Err(Error::Format(format!(
            "expected {} coefficient bytes, found {}",
            8 * count,
            data.len()
        )));
    }
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    LatticeField::from_site_major(&grid, degree, &values).map_err(|e| Error::Format(e.to_string()))
}

pub fn save(path: &Path, field: &LatticeField) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_field(std::io::BufWriter::new(f), field)
}

pub fn load(path: &Path) -> Result<LatticeField> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_field(std::io::BufReader::new(f))
}
