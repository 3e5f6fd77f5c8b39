//! PSLF binary field files and CSV export.
//!
//! Layout: `b"PSLFIELD"`, then little-endian `u32` version, kind, n_t, n_x,
//! n_xi, N, then `f64` x_min, x_max, xi_min, xi_max, t_min, t_max, h, T, then
//! the `f64` payload in row-major order (complex values as re, im pairs).
//!
//! | kind | payload                                            |
//! |------|----------------------------------------------------|
//! | 0    | scalar field, `n_t·n_x·n_xi` reals                 |
//! | 1    | matrix field, `n_t·n_x·n_xi·N·N` complex           |
//! | 2    | operator, `(n_x·N)²` complex, `n_t = 1`, `T = 0`   |

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{MatrixField, PhaseGrid, ScalarField, TimeGrid};
use crate::quantization::OperatorMatrix;

pub const MAGIC: &[u8; 8] = b"PSLFIELD";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 6 * 4 + 8 * 8;

#[derive(Debug, Clone)]
pub enum Field {
    Scalar(ScalarField),
    Matrix(MatrixField),
    Operator(OperatorMatrix),
}

impl Field {
    pub fn kind(&self) -> u32 {
        match self {
            Field::Scalar(_) => 0,
            Field::Matrix(_) => 1,
            Field::Operator(_) => 2,
        }
    }
}

fn header(out: &mut Vec<u8>, kind: u32, dims: [u32; 4], grid: &PhaseGrid, t: [f64; 3]) {
    out.extend_from_slice(MAGIC);
    for v in [VERSION, kind, dims[0], dims[1], dims[2], dims[3]] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [grid.x_min, grid.x_max, grid.xi_min, grid.xi_max, t[0], t[1], grid.h, t[2]] {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_complex(out: &mut Vec<u8>, values: impl Iterator<Item = Complex64>) {
    for z in values {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
}

pub fn encode(field: &Field) -> Vec<u8> {
    let mut out = Vec::new();
    match field {
        Field::Scalar(f) => {
            let (g, t) = (&f.grid, &f.time);
            header(&mut out, 0, [t.n_t as u32, g.n_x as u32, g.n_xi as u32, 1], g, [t.t_min, t.t_max, t.T]);
            for v in &f.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Field::Matrix(f) => {
            let (g, t) = (&f.grid, &f.time);
            let dims = [t.n_t as u32, g.n_x as u32, g.n_xi as u32, f.dim as u32];
            header(&mut out, 1, dims, g, [t.t_min, t.t_max, t.T]);
            push_complex(&mut out, f.values.iter().copied());
        }
        Field::Operator(op) => {
            let g = &op.grid;
            header(&mut out, 2, [1, g.n_x as u32, g.n_xi as u32, op.sys_dim as u32], g, [0.0, 0.0, 0.0]);
            // row-major
            let n = op.size();
            push_complex(&mut out, (0..n * n).map(|p| op.entries[(p / n, p % n)]));
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u32(&mut self) -> u32 {
        let v = u32::from_le_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        v
    }
    fn f64(&mut self) -> f64 {
        let v = f64::from_le_bytes(self.bytes[self.pos..self.pos + 8].try_into().unwrap());
        self.pos += 8;
        v
    }
}

pub fn decode(bytes: &[u8]) -> Result<Field> {
    if bytes.len() < MAGIC.len() || &bytes[..8] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated { expected: HEADER_LEN, found: bytes.len() });
    }
    let mut r = Reader { bytes, pos: 8 };
    let version = r.u32();
    if version != VERSION {
        return Err(Error::Unsupported(format!("version {version}")));
    }
    let kind = r.u32();
    let (n_t, n_x, n_xi, dim) = (r.u32() as usize, r.u32() as usize, r.u32() as usize, r.u32() as usize);
    let [x_min, x_max, xi_min, xi_max, t_min, t_max, h, t_half] = [(); 8].map(|_| r.f64());
    let grid = PhaseGrid::new((x_min, x_max, n_x), (xi_min, xi_max, n_xi), h)?;

    let reals = match kind {
        0 => n_t * n_x * n_xi,
        1 => 2 * n_t * n_x * n_xi * dim * dim,
        2 => 2 * (n_x * dim).pow(2),
        k => return Err(Error::Unsupported(format!("kind {k}"))),
    };
    let payload = &bytes[HEADER_LEN..];
    let expected = reals * 8;
    if payload.len() < expected {
        return Err(Error::Truncated { expected, found: payload.len() });
    }
    if payload.len() > expected {
        return Err(Error::ShapeMismatch(format!(
            "payload has {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let floats: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let complex = || -> Vec<Complex64> { floats.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect() };

    Ok(match kind {
        0 => {
            let time = TimeGrid::new(t_min, t_max, n_t, t_half)?;
            Field::Scalar(ScalarField::from_values(grid, time, floats)?)
        }
        1 => {
            let time = TimeGrid::new(t_min, t_max, n_t, t_half)?;
            Field::Matrix(MatrixField::from_values(grid, time, dim, complex())?)
        }
        _ => {
            if n_t != 1 {
                return Err(Error::ShapeMismatch("operator files have n_t = 1".into()));
            }
            let n = n_x * dim;
            let entries = nalgebra::DMatrix::from_row_slice(n, n, &complex());
            Field::Operator(OperatorMatrix::new(grid, dim, entries, "file")?)
        }
    })
}

pub fn write_field(path: impl AsRef<Path>, field: &Field) -> Result<()> {
    fs::write(path, encode(field))?;
    Ok(())
}

pub fn read_field(path: impl AsRef<Path>) -> Result<Field> {
    decode(&fs::read(path)?)
}

/// `re,im` pairs per entry, one matrix row per line.
pub fn write_operator_csv(path: impl AsRef<Path>, op: &OperatorMatrix) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    let n = op.size();
    for i in 0..n {
        let row: Vec<String> = (0..n)
            .map(|k| {
                let z = op.entries[(i, k)];
                format!("{:e},{:e}", z.re, z.im)
            })
            .collect();
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(())
}

/// `t,x,xi,value` rows.
pub fn write_scalar_csv(path: impl AsRef<Path>, field: &ScalarField) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "t,x,xi,value")?;
    let g = field.grid.nodes();
    for (p, v) in field.values.iter().enumerate() {
        let (x, xi) = field.grid.coords(p % g);
        writeln!(f, "{:e},{:e},{:e},{:e}", field.time.t(p / g), x, xi, v)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::sample_scalar;
    use crate::linalg::c;
    use proptest::prelude::*;

    fn scalar() -> ScalarField {
        let time = TimeGrid::new(-1.0, 1.5, 4, 0.75).unwrap();
        let grid = PhaseGrid::new((-1.0, 2.0, 3), (-0.5, 0.5, 5), 0.3).unwrap();
        sample_scalar(|t, x, xi| t.sin() + x * xi.exp(), time, grid).unwrap()
    }

    #[test]
    fn scalar_round_trip_is_bitwise() {
        let f = scalar();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.pslf");
        write_field(&path, &Field::Scalar(f.clone())).unwrap();
        match read_field(&path).unwrap() {
            Field::Scalar(g) => {
                assert_eq!(g.grid, f.grid);
                assert_eq!(g.time, f.time);
                assert!(g.values.iter().zip(&f.values).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn matrix_and_operator_round_trip() {
        let f = scalar();
        let vals: Vec<Complex64> = (0..f.values.len() * 4).map(|p| c(p as f64 * 0.1, -(p as f64))).collect();
        let m = MatrixField::from_values(f.grid, f.time, 2, vals).unwrap();
        let back = decode(&encode(&Field::Matrix(m.clone()))).unwrap();
        match back {
            Field::Matrix(b) => assert_eq!(b, m),
            _ => panic!(),
        }
        let grid = PhaseGrid::new((-1.0, 1.0, 3), (-1.0, 1.0, 3), 1.0).unwrap();
        let e = nalgebra::DMatrix::from_fn(6, 6, |i, k| c(i as f64, k as f64 * 0.5));
        let op = OperatorMatrix::new(grid, 2, e.clone(), "x").unwrap();
        match decode(&encode(&Field::Operator(op))).unwrap() {
            Field::Operator(o) => assert_eq!(o.entries, e),
            _ => panic!(),
        }
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = encode(&Field::Scalar(scalar()));
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::BadMagic)));
        assert!(matches!(decode(b"PSL"), Err(Error::BadMagic)));
    }

    #[test]
    fn truncated_payload() {
        let time = TimeGrid::new(-1.0, 1.0, 3, 1.0).unwrap();
        let grid = PhaseGrid::new((-1.0, 1.0, 2), (-1.0, 1.0, 2), 1.0).unwrap();
        let f = ScalarField::constant(grid, time, 1.0);
        let mut bytes = encode(&Field::Scalar(f));
        // rewrite header to (2, 2, 2) with 7 payload floats
        bytes[16..20].copy_from_slice(&2u32.to_le_bytes());
        bytes.truncate(HEADER_LEN + 7 * 8);
        match decode(&bytes) {
            Err(Error::Truncated { expected, found }) => assert_eq!((expected, found), (64, 56)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unsupported_version_and_kind() {
        let mut bytes = encode(&Field::Scalar(scalar()));
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::Unsupported(_))));
        let mut bytes = encode(&Field::Scalar(scalar()));
        bytes[12..16].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::Unsupported(_))));
    }

    proptest! {
        #[test]
        fn any_values_round_trip(vals in prop::collection::vec(-1e300f64..1e300, 12)) {
            let time = TimeGrid::new(-1.0, 1.0, 3, 1.0).unwrap();
            let grid = PhaseGrid::new((-1.0, 1.0, 2), (-1.0, 1.0, 2), 0.5).unwrap();
            let f = ScalarField::from_values(grid, time, vals.clone()).unwrap();
            match decode(&encode(&Field::Scalar(f))).unwrap() {
                Field::Scalar(g) => prop_assert_eq!(g.values, vals),
                _ => prop_assert!(false),
            }
        }
    }
}
