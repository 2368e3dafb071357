//! Randomly-shifted rank-1 lattice rules.

use std::path::Path;

use crate::error::{Error, Result};

/// Modulus of the built-in generating vector (number of lattice points the
/// vector was sized for; power of two so halved point counts stay valid).
pub const BUILTIN_MODULUS: u64 = 1 << 20;

/// Dimension of the built-in generating vector.
pub const BUILTIN_DIMENSION: usize = 3600;

/// Deterministic built-in generating vector: component 1 is the
/// conventional 1, the rest are odd values from a fixed splitmix64 stream,
/// so every component is coprime to any power-of-two point count. Randomly
/// chosen generating vectors attain the average-case shift-averaged error,
/// which is adequate here; a construction tuned to the integrand can be
/// supplied through a lattice file instead.
pub fn builtin_generating_vector(d: usize) -> Result<Vec<u64>> {
    if d > BUILTIN_DIMENSION {
        return Err(Error::Dimension(format!(
            "built-in generating vector has {BUILTIN_DIMENSION} components, {d} requested; \
             supply a larger vector via a lattice file"
        )));
    }
    let mut state = 0x6C07_8965_F4B1_D27Du64; // fixed stream seed
    let mut z = Vec::with_capacity(d);
    for j in 0..d {
        if j == 0 {
            z.push(1);
        } else {
            z.push((splitmix64(&mut state) % BUILTIN_MODULUS) | 1);
        }
    }
    Ok(z)
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut x = *state;
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Read the first `d` generating-vector components from a text file.
///
/// One component per line; tokens are whitespace-separated and the last
/// integer token on each line is the component, so files with a leading
/// index column are accepted as-is. Blank lines are skipped.
pub fn load_generating_vector(path: impl AsRef<Path>, d: usize) -> Result<Vec<u64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut z = Vec::with_capacity(d);
    for (lineno, line) in text.lines().enumerate() {
        if z.len() == d {
            break;
        }
        let Some(token) = line.split_whitespace().last() else {
            continue; // blank line
        };
        let value: u64 = token.parse().map_err(|_| Error::Parse {
            path: path.display().to_string(),
            reason: format!("line {}: '{token}' is not an integer", lineno + 1),
        })?;
        z.push(value);
    }
    if z.len() < d {
        return Err(Error::Dimension(format!(
            "{} holds {} generating-vector components, {d} requested",
            path.display(),
            z.len()
        )));
    }
    Ok(z)
}

/// A randomised rank-1 lattice rule: P points, R independent uniform shifts.
#[derive(Debug, Clone)]
pub struct LatticeRule {
    /// Generating vector, at least `dim` components.
    pub z: Vec<u64>,
    /// Number of lattice points per shift.
    pub p_points: u64,
    /// Random shifts, row-major R x dim.
    pub shifts: Vec<f64>,
    /// Active dimension.
    pub dim: usize,
}

impl LatticeRule {
    pub fn new(z: Vec<u64>, p_points: u64, shifts: Vec<f64>, dim: usize) -> Result<LatticeRule> {
        if z.len() < dim {
            return Err(Error::Dimension(format!(
                "generating vector has {} components, dimension {dim} requested",
                z.len()
            )));
        }
        if p_points == 0 {
            return Err(Error::InvalidParameter("lattice needs P >= 1".into()));
        }
        if shifts.is_empty() || shifts.len() % dim != 0 {
            return Err(Error::Dimension(format!(
                "shift storage of {} values is not a multiple of dimension {dim}",
                shifts.len()
            )));
        }
        if shifts.iter().any(|v| !(0.0..1.0).contains(v)) {
            return Err(Error::InvalidParameter(
                "shift components must lie in [0,1)".into(),
            ));
        }
        Ok(LatticeRule {
            z,
            p_points,
            shifts,
            dim,
        })
    }

    pub fn num_shifts(&self) -> usize {
        self.shifts.len() / self.dim
    }

    pub fn shift(&self, r: usize) -> &[f64] {
        &self.shifts[r * self.dim..(r + 1) * self.dim]
    }

    /// Shifted lattice point v^(n) = frac(n z / P + Delta_r), componentwise.
    pub fn point(&self, n: u64, r: usize, out: &mut [f64]) -> Result<()> {
        if n >= self.p_points {
            return Err(Error::InvalidParameter(format!(
                "point index {n} out of range for P = {}",
                self.p_points
            )));
        }
        if r >= self.num_shifts() {
            return Err(Error::InvalidParameter(format!(
                "shift index {r} out of range for R = {}",
                self.num_shifts()
            )));
        }
        let p = self.p_points;
        let shift = self.shift(r);
        for (j, slot) in out.iter_mut().enumerate().take(self.dim) {
            // n z_j mod P in integers first: exact, no rounding of huge products.
            let zj = self.z[j] % p;
            let frac = ((n % p) as u128 * zj as u128 % p as u128) as f64 / p as f64;
            let v = frac + shift[j];
            *slot = v - v.floor();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn rule(z: Vec<u64>, p: u64, shifts: Vec<f64>, d: usize) -> LatticeRule {
        LatticeRule::new(z, p, shifts, d).unwrap()
    }

    #[test]
    fn unshifted_first_point_is_origin() {
        let r = rule(vec![1, 3], 4, vec![0.0, 0.0], 2);
        let mut v = [9.0; 2];
        r.point(0, 0, &mut v).unwrap();
        assert_eq!(v, [0.0, 0.0]);
    }

    #[test]
    fn plain_point_values() {
        let r = rule(vec![1, 3], 4, vec![0.0, 0.0], 2);
        let mut v = [0.0; 2];
        r.point(1, 0, &mut v).unwrap();
        assert!((v[0] - 0.25).abs() < 1e-15 && (v[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn shifted_point_values() {
        let r = rule(vec![1, 3], 4, vec![0.9, 0.5], 2);
        let mut v = [0.0; 2];
        r.point(1, 0, &mut v).unwrap();
        assert!((v[0] - 0.15).abs() < 1e-15, "got {}", v[0]);
        assert!((v[1] - 0.25).abs() < 1e-15, "got {}", v[1]);
    }

    #[test]
    fn indices_validated() {
        let r = rule(vec![1, 3], 4, vec![0.0, 0.0], 2);
        let mut v = [0.0; 2];
        assert!(r.point(4, 0, &mut v).is_err());
        assert!(r.point(0, 1, &mut v).is_err());
    }

    #[test]
    fn one_dimensional_projection_is_equidistributed() {
        // for gcd(z_j, P) = 1 the j-th coordinates of the P points are
        // exactly {frac(k/P + delta_j)}.
        let p = 16u64;
        let delta = 0.37;
        let r = rule(vec![1, 7, 13], p, vec![delta; 3], 3);
        for j in 0..3 {
            let mut coords: Vec<f64> = (0..p)
                .map(|n| {
                    let mut v = [0.0; 3];
                    r.point(n, 0, &mut v).unwrap();
                    v[j]
                })
                .collect();
            coords.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut expected: Vec<f64> = (0..p)
                .map(|k| {
                    let v = k as f64 / p as f64 + delta;
                    v - v.floor()
                })
                .collect();
            expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (a, b) in coords.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12, "projection {j}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn builtin_vector_is_deterministic_and_odd() {
        let a = builtin_generating_vector(64).unwrap();
        let b = builtin_generating_vector(64).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0], 1);
        for (j, z) in a.iter().enumerate().skip(1) {
            assert!(z % 2 == 1, "component {j} = {z} is even");
            assert!(*z < BUILTIN_MODULUS);
        }
        assert!(builtin_generating_vector(BUILTIN_DIMENSION + 1).is_err());
    }

    #[test]
    fn loads_two_column_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "1 1").unwrap();
        writeln!(f, "2 182667").unwrap();
        let z = load_generating_vector(f.path(), 2).unwrap();
        assert_eq!(z, vec![1, 182667]);
        // same file, more components than lines -> dimension error
        assert!(matches!(
            load_generating_vector(f.path(), 3),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn loads_single_column_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "1").unwrap();
        writeln!(f, "5").unwrap();
        assert_eq!(load_generating_vector(f.path(), 2).unwrap(), vec![1, 5]);
    }

    #[test]
    fn rejects_non_integer_token() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "1 abc").unwrap();
        assert!(matches!(
            load_generating_vector(f.path(), 1),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_generating_vector("/nonexistent/lattice.txt", 4),
            Err(Error::Io { .. })
        ));
    }
}
