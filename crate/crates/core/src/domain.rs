//! Hypercube domains, the boundary factor `h(x)` and point sets on `Ω`.

use std::ops::Range;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The first 64 primes, used as Halton bases.
pub const HALTON_PRIMES: [u64; 64] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191,
    193, 197, 199, 211, 223, 227, 229, 233, 239, 241, 251, 257, 263, 269, 271, 277, 281, 283, 293,
    307, 311,
];

/// Axis-aligned box `(a_1,b_1) × … × (a_d,b_d)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypercube {
    bounds: Vec<(f64, f64)>,
}

impl Hypercube {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::contract("domain needs at least one dimension"));
        }
        for (i, &(a, b)) in bounds.iter().enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::contract(format!(
                    "dimension {i}: lower bound {a} must be below upper bound {b}"
                )));
            }
        }
        Ok(Self { bounds })
    }

    /// `(-1, 1)^d`.
    pub fn symmetric_unit(dim: usize) -> Result<Self> {
        Self::new(vec![(-1.0, 1.0); dim])
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn volume(&self) -> f64 {
        self.bounds.iter().map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.bounds).all(|(&xi, &(a, b))| a < xi && xi < b)
    }

    /// `h(x) = ∏ (x_i − a_i)(b_i − x_i)`: positive inside, exactly zero on
    /// every face.
    pub fn boundary_factor(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.bounds)
            .map(|(&xi, &(a, b))| (xi - a) * (b - xi))
            .product()
    }

    /// `h(x)` and `∇h(x)` (written to `grad`).
    pub fn boundary_factor_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.dim();
        debug_assert_eq!(x.len(), d);
        debug_assert_eq!(grad.len(), d);
        // factors and their derivatives; products excluding index i without division
        let mut prefix = 1.0;
        for i in 0..d {
            grad[i] = prefix;
            let (a, b) = self.bounds[i];
            prefix *= (x[i] - a) * (b - x[i]);
        }
        let mut suffix = 1.0;
        for i in (0..d).rev() {
            let (a, b) = self.bounds[i];
            let df = a + b - 2.0 * x[i];
            grad[i] *= suffix * df;
            suffix *= (x[i] - a) * (b - x[i]);
        }
        prefix
    }

    /// Maps a point of the unit cube affinely onto the domain, in place.
    fn map_from_unit(&self, u: &mut [f64]) {
        for (ui, &(a, b)) in u.iter_mut().zip(&self.bounds) {
            *ui = a + (b - a) * *ui;
        }
    }
}

/// Radical inverse of `n` in `base`.
pub fn radical_inverse(mut n: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut scale = inv;
    let mut out = 0.0;
    while n > 0 {
        out += (n % base) as f64 * scale;
        n /= base;
        scale *= inv;
    }
    out
}

/// Quadrature point set `𝒯 ⊂ Ω`, stored row-major `N × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct McSample {
    dim: usize,
    points: Vec<f64>,
    skip: u64,
}

impl McSample {
    pub fn from_points(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(Error::contract("point buffer must hold a positive multiple of dim values"));
        }
        Ok(Self { dim, points, skip: 0 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn skip(&self) -> u64 {
        self.skip
    }

    pub fn point(&self, n: usize) -> &[f64] {
        &self.points[n * self.dim..(n + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.points.chunks_exact(self.dim)
    }

    /// Contiguous batches covering `0..N`; the last batch takes the remainder.
    pub fn batches(&self, count: usize) -> Result<Vec<Range<usize>>> {
        let n = self.len();
        if count == 0 || count > n {
            return Err(Error::contract(format!(
                "batch count {count} must be between 1 and the sample size {n}"
            )));
        }
        let size = n / count;
        Ok((0..count)
            .map(|b| {
                let start = b * size;
                let end = if b + 1 == count { n } else { start + size };
                start..end
            })
            .collect())
    }

    /// Copy of the points in `range`.
    pub fn slice(&self, range: Range<usize>) -> McSample {
        McSample {
            dim: self.dim,
            points: self.points[range.start * self.dim..range.end * self.dim].to_vec(),
            skip: self.skip + range.start as u64,
        }
    }
}

/// First `n` Halton points after `skip`, bases = first `d` primes, mapped to
/// the domain. Point `k` uses sequence index `k + 1 + skip`.
pub fn halton_points(dom: &Hypercube, n: usize, skip: u64) -> Result<McSample> {
    let d = dom.dim();
    if n == 0 {
        return Err(Error::contract("Halton sample needs at least one point"));
    }
    if d > HALTON_PRIMES.len() {
        return Err(Error::contract(format!(
            "Halton sampling supports up to {} dimensions, got {d}",
            HALTON_PRIMES.len()
        )));
    }
    let mut points = Vec::with_capacity(n * d);
    let mut row = vec![0.0; d];
    for k in 0..n as u64 {
        for (j, r) in row.iter_mut().enumerate() {
            *r = radical_inverse(k + 1 + skip, HALTON_PRIMES[j]);
        }
        dom.map_from_unit(&mut row);
        points.extend_from_slice(&row);
    }
    Ok(McSample { dim: d, points, skip })
}

/// `count` i.i.d. uniform points in the open domain, reproducible from `seed`.
pub fn uniform_test_points(dom: &Hypercube, count: usize, seed: u64) -> Result<McSample> {
    if count == 0 {
        return Err(Error::contract("test set needs at least one point"));
    }
    let d = dom.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count * d);
    let mut row = vec![0.0; d];
    for _ in 0..count {
        for r in row.iter_mut() {
            *r = rng.sample(Open01);
        }
        dom.map_from_unit(&mut row);
        points.extend_from_slice(&row);
    }
    Ok(McSample { dim: d, points, skip: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_bounds() {
        assert!(Hypercube::new(vec![(1.0, 1.0)]).is_err());
        assert!(Hypercube::new(vec![(0.0, 1.0), (2.0, -1.0)]).is_err());
        assert!(Hypercube::new(vec![]).is_err());
    }

    #[test]
    fn boundary_factor_values() {
        let dom = Hypercube::symmetric_unit(3).unwrap();
        assert_eq!(dom.boundary_factor(&[0.0, 0.0, 0.0]), 1.0);
        assert_eq!(dom.boundary_factor(&[-1.0, 0.3, 0.2]), 0.0);
        assert_eq!(dom.boundary_factor(&[0.1, 1.0, 0.2]), 0.0);

        let sq = Hypercube::symmetric_unit(2).unwrap();
        let mut g = [0.0; 2];
        let h = sq.boundary_factor_grad(&[0.5, 0.5], &mut g);
        assert_eq!(h, 0.5625);
        assert!((g[0] + 0.75).abs() < 1e-15 && (g[1] + 0.75).abs() < 1e-15);
    }

    #[test]
    fn boundary_gradient_matches_finite_differences() {
        let dom = Hypercube::new(vec![(-1.0, 2.0), (0.0, 1.0), (-0.5, 0.5)]).unwrap();
        let x = [0.3, 0.71, -0.12];
        let mut g = [0.0; 3];
        dom.boundary_factor_grad(&x, &mut g);
        for j in 0..3 {
            let step = 1e-5;
            let mut xp = x;
            let mut xm = x;
            xp[j] += step;
            xm[j] -= step;
            let fd = (dom.boundary_factor(&xp) - dom.boundary_factor(&xm)) / (2.0 * step);
            assert!(((fd - g[j]) / g[j]).abs() < 1e-8, "{j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn halton_hand_values() {
        let unit = Hypercube::new(vec![(0.0, 1.0)]).unwrap();
        let s = halton_points(&unit, 3, 0).unwrap();
        assert_eq!(s.points(), &[0.5, 0.25, 0.75]);

        let sq = Hypercube::new(vec![(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let s = halton_points(&sq, 1, 0).unwrap();
        assert_eq!(s.point(0)[0], 0.5);
        assert!((s.point(0)[1] - 1.0 / 3.0).abs() < 1e-16);

        let sym = Hypercube::symmetric_unit(1).unwrap();
        let s = halton_points(&sym, 2, 0).unwrap();
        assert_eq!(s.points(), &[0.0, -0.5]);
    }

    #[test]
    fn halton_skip_shifts_the_sequence() {
        let dom = Hypercube::symmetric_unit(3).unwrap();
        let full = halton_points(&dom, 10, 0).unwrap();
        let tail = halton_points(&dom, 6, 4).unwrap();
        assert_eq!(&full.points()[12..], tail.points());
        assert_eq!(full, halton_points(&dom, 10, 0).unwrap());
    }

    #[test]
    fn halton_points_inside() {
        let dom = Hypercube::new(vec![(-2.0, 3.0); 7]).unwrap();
        let s = halton_points(&dom, 5000, 17).unwrap();
        assert!(s.iter().all(|p| dom.contains(p)));
        assert!(halton_points(&Hypercube::symmetric_unit(65).unwrap(), 1, 0).is_err());
    }

    #[test]
    fn batches_partition() {
        let s = halton_points(&Hypercube::symmetric_unit(2).unwrap(), 10, 0).unwrap();
        let b = s.batches(3).unwrap();
        assert_eq!(b, vec![0..3, 3..6, 6..10]);
        assert!(s.batches(0).is_err());
        assert!(s.batches(11).is_err());
        assert_eq!(s.slice(3..6).point(0), s.point(3));
    }

    #[test]
    fn uniform_points_are_reproducible_and_centred() {
        let dom = Hypercube::symmetric_unit(2).unwrap();
        let a = uniform_test_points(&dom, 100_000, 9).unwrap();
        let b = uniform_test_points(&dom, 100_000, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| dom.contains(p)));
        for j in 0..2 {
            let mean = a.iter().map(|p| p[j]).sum::<f64>() / a.len() as f64;
            assert!(mean.abs() < 0.02, "coordinate {j} mean {mean}");
        }
        assert_ne!(a, uniform_test_points(&dom, 100_000, 10).unwrap());
    }
}
