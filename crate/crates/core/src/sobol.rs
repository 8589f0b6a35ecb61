//! Sobol low-discrepancy points with Joe-Kuo direction numbers.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

const MAXBIT: usize = 30;

/// Primitive polynomials (bit-encoded, leading and trailing ones included).
const POLY: [u32; 22] = [1, 3, 7, 11, 13, 19, 25, 37, 41, 47, 55, 59, 61, 67, 91, 97, 103, 109, 115, 131, 137, 143];

const VINIT: [&[u32]; 22] = [
    &[1],
    &[1],
    &[1, 3],
    &[1, 3, 1],
    &[1, 1, 1],
    &[1, 1, 3, 3],
    &[1, 3, 5, 13],
    &[1, 1, 5, 5, 17],
    &[1, 1, 5, 5, 5],
    &[1, 1, 7, 11, 19],
    &[1, 1, 5, 1, 1],
    &[1, 1, 1, 3, 11],
    &[1, 3, 5, 5, 31],
    &[1, 3, 3, 9, 7, 49],
    &[1, 1, 1, 15, 21, 21],
    &[1, 3, 1, 13, 27, 49],
    &[1, 1, 1, 15, 7, 5],
    &[1, 3, 1, 15, 13, 25],
    &[1, 1, 5, 5, 19, 61],
    &[1, 3, 7, 11, 23, 15, 103],
    &[1, 3, 7, 13, 13, 15, 69],
    &[1, 1, 3, 13, 7, 35, 63],
];

pub const MAX_DIM: usize = POLY.len();

fn direction_numbers(dim: usize) -> [u32; MAXBIT] {
    let mut m = [0u32; MAXBIT];
    if dim == 0 {
        m.fill(1);
    } else {
        let p = POLY[dim];
        let s = (32 - p.leading_zeros() - 1) as usize;
        m[..s].copy_from_slice(VINIT[dim]);
        for k in s..MAXBIT {
            let mut v = m[k - s] ^ (m[k - s] << s);
            for i in 1..s {
                if (p >> (s - i)) & 1 == 1 {
                    v ^= m[k - i] << i;
                }
            }
            m[k] = v;
        }
    }
    let mut out = [0u32; MAXBIT];
    for (k, (o, mk)) in out.iter_mut().zip(m).enumerate() {
        *o = mk << (MAXBIT - 1 - k);
    }
    out
}

/// First `n` points of the `d`-dimensional sequence in `[0, 1)^d`, digitally
/// shifted by a random mask drawn from `seed` (`None` leaves it unscrambled).
pub fn sobol_points(n: usize, d: usize, seed: Option<u64>) -> Result<Vec<Vec<f64>>> {
    if d == 0 || d > MAX_DIM {
        return Err(Error::domain(format!("Sobol dimension must be in 1..={MAX_DIM}, got {d}")));
    }
    let dirs: Vec<[u32; MAXBIT]> = (0..d).map(direction_numbers).collect();
    let shift: Vec<u32> = match seed {
        Some(s) => {
            let mut r = rng::stream(s, 0, rng::tag::SOBOL);
            (0..d).map(|_| r.random_range(0..1u32 << MAXBIT)).collect()
        }
        None => vec![0; d],
    };
    let scale = 1.0 / (1u64 << MAXBIT) as f64;
    let mut state = vec![0u32; d];
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(state.iter().zip(&shift).map(|(x, s)| f64::from(x ^ s) * scale).collect());
        let c = (!i).trailing_zeros() as usize;
        if c >= MAXBIT {
            return Err(Error::domain("Sobol sequence exhausted"));
        }
        for (x, v) in state.iter_mut().zip(&dirs) {
            *x ^= v[c];
        }
    }
    Ok(out)
}

/// Sobol points mapped into the box `bounds`.
pub fn sobol_in_bounds(n: usize, bounds: &[(f64, f64)], seed: u64) -> Result<Vec<Vec<f64>>> {
    let pts = sobol_points(n, bounds.len(), Some(seed))?;
    Ok(pts
        .into_iter()
        .map(|p| p.iter().zip(bounds).map(|(u, (lo, hi))| lo + u * (hi - lo)).collect())
        .collect())
}
