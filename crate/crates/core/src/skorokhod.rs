//! Discrete Skorokhod problem on a half-line and on boxes.
//!
//! Given an input path `w`, the reflected path is `ξ = w + φ` where the
//! regulator `φ` starts at zero, keeps `ξ` inside the closed domain, and only
//! moves while `ξ` sits on a face, pushing along the inward normal.
//!
//! On a box the normal cone at any boundary point is spanned by the active
//! coordinate axes, so the problem decouples per coordinate. The recursion
//! used here works in regulator space:
//!
//! ```text
//! φ_{k+1} = clamp(φ_k, lower - w_{k+1}, upper - w_{k+1})
//! ```
//!
//! which is the projection step `ξ_{k+1} = Π(ξ_k + w_{k+1} - w_k)` written so
//! that the half-line case reproduces the running-minimum formula bit for bit.

use crate::error::{Error, Result};
use crate::model::DomainBox;

/// Default face tolerance for externally supplied pairs.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Values of a `dim`-dimensional path on a time grid starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    times: Vec<f64>,
    dim: usize,
    data: Vec<f64>,
}

pub(crate) fn validate_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidPath("empty time grid".into()));
    }
    if times[0] != 0.0 {
        return Err(Error::InvalidPath(format!(
            "grid must start at 0, starts at {}",
            times[0]
        )));
    }
    if let Some(k) = times
        .windows(2)
        .position(|w| !(w[1] > w[0]) || !w[1].is_finite())
    {
        return Err(Error::InvalidPath(format!(
            "grid is not strictly increasing at index {}",
            k + 1
        )));
    }
    Ok(())
}

impl SampledPath {
    /// Builds a path from row-major `data` (`times.len() * dim` entries).
    pub fn new(times: Vec<f64>, dim: usize, data: Vec<f64>) -> Result<Self> {
        validate_grid(&times)?;
        if dim == 0 {
            return Err(Error::InvalidPath("dimension must be positive".into()));
        }
        if data.len() != times.len() * dim {
            return Err(Error::InvalidPath(format!(
                "{} values for {} times of dimension {dim}",
                data.len(),
                times.len()
            )));
        }
        Ok(SampledPath { times, dim, data })
    }

    pub fn scalar(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        SampledPath::new(times, 1, values)
    }

    pub fn from_rows(times: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidPath("rows have differing lengths".into()));
        }
        SampledPath::new(times, dim, rows.concat())
    }

    pub fn zeros(times: Vec<f64>, dim: usize) -> Result<Self> {
        let len = times.len() * dim;
        SampledPath::new(times, dim, vec![0.0; len])
    }

    /// Grid and shape already checked by the caller.
    pub(crate) fn from_parts(times: Vec<f64>, dim: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(times.len() * dim, data.len());
        SampledPath { times, dim, data }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn values(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn last(&self) -> &[f64] {
        self.value(self.len() - 1)
    }

    /// One coordinate across the whole grid.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.values().map(|v| v[c]).collect()
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    pub fn same_grid(&self, other: &SampledPath) -> bool {
        self.times == other.times
    }
}

/// Reflected path, its regulator, and the regulator's total variation.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectedPair {
    pub reflected: SampledPath,
    pub regulator: SampledPath,
    pub tv: Vec<f64>,
}

/// Reflection at zero: `ξ(t) = w(t) - min(0, min_{s ≤ t} w(s))`.
pub fn skorokhod_map_1d(w: &SampledPath) -> Result<ReflectedPair> {
    if w.dim() != 1 {
        return Err(Error::InvalidPath(format!(
            "one-dimensional map needs a scalar path, got dimension {}",
            w.dim()
        )));
    }
    let w0 = w.value(0)[0];
    if !(w0 >= 0.0) {
        return Err(Error::OutsideDomain { point: vec![w0] });
    }
    let mut phi = 0.0f64;
    let mut regulator = Vec::with_capacity(w.len());
    let mut reflected = Vec::with_capacity(w.len());
    for v in w.values() {
        // phi = -min(0, running min of w)
        phi = phi.max(-v[0]);
        regulator.push(phi);
        reflected.push(v[0] + phi);
    }
    let regulator = SampledPath::from_parts(w.times().to_vec(), 1, regulator);
    let tv = regulator_total_variation(&regulator);
    Ok(ReflectedPair {
        reflected: SampledPath::from_parts(w.times().to_vec(), 1, reflected),
        regulator,
        tv,
    })
}

/// Normal reflection of a `d`-dimensional path on a box by per-step
/// projection. Faces violated simultaneously are handled independently,
/// which keeps the regulator direction inside the normal cone at corners.
pub fn skorokhod_map_box(w: &SampledPath, domain: &DomainBox) -> Result<ReflectedPair> {
    let d = domain.dim();
    if w.dim() != d {
        return Err(Error::InvalidPath(format!(
            "path dimension {} does not match box dimension {d}",
            w.dim()
        )));
    }
    if !domain.contains(w.value(0)) {
        return Err(Error::OutsideDomain {
            point: w.value(0).to_vec(),
        });
    }
    let (lo, hi) = (domain.lower(), domain.upper());
    let mut phi = vec![0.0f64; d];
    let mut reflected = Vec::with_capacity(w.raw().len());
    let mut regulator = Vec::with_capacity(w.raw().len());
    for v in w.values() {
        for c in 0..d {
            phi[c] = phi[c].max(lo[c] - v[c]).min(hi[c] - v[c]);
            // The outer clamp only absorbs rounding in `lo - v`.
            reflected.push((v[c] + phi[c]).clamp(lo[c], hi[c]));
            regulator.push(phi[c]);
        }
    }
    let regulator = SampledPath::from_parts(w.times().to_vec(), d, regulator);
    let tv = regulator_total_variation(&regulator);
    Ok(ReflectedPair {
        reflected: SampledPath::from_parts(w.times().to_vec(), d, reflected),
        regulator,
        tv,
    })
}

/// True iff the regulator only moves, coordinate by coordinate, at steps
/// where the reflected value ends within `boundary_tol` of a face in that
/// coordinate.
pub fn check_complementarity(
    pair: &ReflectedPair,
    domain: &DomainBox,
    boundary_tol: f64,
) -> Result<bool> {
    let (x, reg) = (&pair.reflected, &pair.regulator);
    if !x.same_grid(reg) || x.dim() != reg.dim() || x.dim() != domain.dim() {
        return Err(Error::GridMismatch);
    }
    for k in 1..x.len() {
        let (prev, cur) = (reg.value(k - 1), reg.value(k));
        let state = x.value(k);
        for c in 0..x.dim() {
            if cur[c] != prev[c] && !domain.on_face(state, c, boundary_tol) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Sum of absolute increments per coordinate.
pub fn regulator_total_variation(regulator: &SampledPath) -> Vec<f64> {
    let mut tv = vec![0.0; regulator.dim()];
    for k in 1..regulator.len() {
        for (c, acc) in tv.iter_mut().enumerate() {
            *acc += (regulator.value(k)[c] - regulator.value(k - 1)[c]).abs();
        }
    }
    tv
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn grid(n: usize, dt: f64) -> Vec<f64> {
        (0..n).map(|k| k as f64 * dt).collect()
    }

    fn scalar(values: &[f64]) -> SampledPath {
        SampledPath::scalar(grid(values.len(), 1.0), values.to_vec()).unwrap()
    }

    /// Running-minimum oracle, written independently of the recursion.
    fn running_min_oracle(w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut reflected = vec![];
        let mut regulator = vec![];
        for t in 0..w.len() {
            let m = w[..=t]
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min)
                .min(0.0);
            reflected.push(w[t] - m);
            regulator.push(-m);
        }
        (reflected, regulator)
    }

    #[test]
    fn grid_validation() {
        assert!(SampledPath::scalar(vec![0.1, 0.2], vec![0.0, 0.0]).is_err());
        assert!(SampledPath::scalar(vec![0.0, 0.0], vec![0.0, 0.0]).is_err());
        assert!(SampledPath::scalar(vec![0.0, 1.0], vec![0.0]).is_err());
        assert!(SampledPath::scalar(vec![], vec![]).is_err());
    }

    #[test]
    fn identity_off_the_boundary() {
        let w = scalar(&[0.5, 1.0, 0.2, 3.0]);
        let pair = skorokhod_map_1d(&w).unwrap();
        assert_eq!(pair.reflected.raw(), w.raw());
        assert!(pair.regulator.raw().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_descent_is_absorbed() {
        let times = grid(11, 0.1);
        let w: Vec<f64> = times.iter().map(|t| -t).collect();
        let pair = skorokhod_map_1d(&SampledPath::scalar(times.clone(), w).unwrap()).unwrap();
        assert!(pair.reflected.raw().iter().all(|&v| v == 0.0));
        assert_eq!(pair.regulator.raw(), &times[..]);
    }

    #[test]
    fn four_point_hand_example() {
        let pair = skorokhod_map_1d(&scalar(&[0.0, 1.0, -1.0, 0.5])).unwrap();
        assert_eq!(pair.reflected.raw(), &[0.0, 1.0, 0.0, 1.5]);
        assert_eq!(pair.regulator.raw(), &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(pair.tv, vec![1.0]);
    }

    #[test]
    fn negative_start_is_rejected() {
        assert!(matches!(
            skorokhod_map_1d(&scalar(&[-0.1, 0.0])),
            Err(Error::OutsideDomain { .. })
        ));
        let b = DomainBox::square(0.0, 1.0).unwrap();
        let w = SampledPath::from_rows(grid(2, 1.0), &[vec![2.0, 0.5], vec![0.5, 0.5]]).unwrap();
        assert!(skorokhod_map_box(&w, &b).is_err());
    }

    #[test]
    fn box_interior_path_is_untouched() {
        let b = DomainBox::square(0.0, 1.0).unwrap();
        let rows = vec![vec![0.5, 0.5], vec![0.6, 0.4], vec![0.2, 0.9]];
        let w = SampledPath::from_rows(grid(3, 0.5), &rows).unwrap();
        let pair = skorokhod_map_box(&w, &b).unwrap();
        assert_eq!(pair.reflected.raw(), w.raw());
        assert!(pair.regulator.raw().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_push_against_a_face() {
        // Drift of -1 per step in y from a start on the lower face.
        let b = DomainBox::square(0.0, 4.0).unwrap();
        let rows = vec![
            vec![2.0, 0.0],
            vec![2.0, -1.0],
            vec![2.0, -2.0],
            vec![2.0, -3.0],
        ];
        let w = SampledPath::from_rows(grid(4, 1.0), &rows).unwrap();
        let pair = skorokhod_map_box(&w, &b).unwrap();
        assert_eq!(pair.reflected.component(1), vec![0.0; 4]);
        assert_eq!(pair.reflected.component(0), vec![2.0; 4]);
        assert_eq!(pair.regulator.component(1), vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(pair.regulator.component(0), vec![0.0; 4]);
        assert_eq!(pair.tv, vec![0.0, 3.0]);
    }

    #[test]
    fn corner_clamps_both_coordinates() {
        let b = DomainBox::square(0.0, 1.0).unwrap();
        let rows = vec![vec![0.1, 0.1], vec![-0.4, -0.2]];
        let w = SampledPath::from_rows(grid(2, 1.0), &rows).unwrap();
        let pair = skorokhod_map_box(&w, &b).unwrap();
        assert_eq!(pair.reflected.last(), &[0.0, 0.0]);
        assert_eq!(pair.regulator.last(), &[0.4, 0.2]);
    }

    #[test]
    fn upper_face_pushes_down() {
        let b = DomainBox::new(vec![0.0], vec![1.0]).unwrap();
        let pair = skorokhod_map_box(&scalar(&[0.5, 1.5, 1.2, 0.1]), &b).unwrap();
        let x = pair.reflected.raw();
        assert_eq!((x[0], x[1], x[3]), (0.5, 1.0, 0.0));
        assert!((x[2] - 0.7).abs() < 1e-15);
        // pushed down by 0.5 at the upper face, then up by 0.4 at the lower one
        let reg = pair.regulator.raw();
        assert_eq!(reg[1], -0.5);
        assert!((reg[3] - (-0.1)).abs() < 1e-15);
        assert!(check_complementarity(&pair, &b, BOUNDARY_TOL).unwrap());
    }

    #[test]
    fn interior_regulator_move_is_flagged() {
        let b = DomainBox::new(vec![0.0], vec![1.0]).unwrap();
        let pair = ReflectedPair {
            reflected: scalar(&[0.5, 0.5, 0.5]),
            regulator: scalar(&[0.0, 0.1, 0.1]),
            tv: vec![0.1],
        };
        assert!(!check_complementarity(&pair, &b, BOUNDARY_TOL).unwrap());
    }

    #[test]
    fn complementarity_rejects_mismatched_grids() {
        let b = DomainBox::new(vec![0.0], vec![1.0]).unwrap();
        let pair = ReflectedPair {
            reflected: scalar(&[0.5, 0.5]),
            regulator: SampledPath::scalar(vec![0.0, 2.0], vec![0.0, 0.0]).unwrap(),
            tv: vec![0.0],
        };
        assert_eq!(
            check_complementarity(&pair, &b, BOUNDARY_TOL),
            Err(Error::GridMismatch)
        );
    }

    #[test]
    fn total_variation_cases() {
        assert_eq!(
            regulator_total_variation(&scalar(&[0.0, 0.0, 0.0])),
            vec![0.0]
        );
        assert_eq!(
            regulator_total_variation(&scalar(&[0.0, 0.25, 0.5, 1.0])),
            vec![1.0]
        );
        assert_eq!(
            regulator_total_variation(&scalar(&[0.0, 1.0, 0.0, 1.0])),
            vec![3.0]
        );
    }

    fn brownian(rng: &mut rand_chacha::ChaCha8Rng, steps: usize, dt: f64, start: f64) -> Vec<f64> {
        let mut w = vec![start];
        for _ in 0..steps {
            let z: f64 = StandardNormal.sample(rng);
            w.push(w.last().unwrap() + dt.sqrt() * z);
        }
        w
    }

    #[test]
    fn refinement_changes_output_by_at_most_one_step_modulus() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let fine_steps = 1 << 12;
        let w = brownian(&mut rng, fine_steps, 1.0 / fine_steps as f64, 0.05);
        for level in [6u32, 4, 2] {
            // Coarse grid keeps every `stride`-th point; the finer grid halves it.
            let stride = 1usize << level;
            let half = stride / 2;
            let pick = |s: usize| -> Vec<f64> { w.iter().step_by(s).cloned().collect() };
            let coarse = pick(stride);
            let finer = pick(half);
            let rc = skorokhod_map_1d(&scalar(&coarse)).unwrap();
            let rf = skorokhod_map_1d(&scalar(&finer)).unwrap();
            let mut diff = 0.0f64;
            for (k, v) in rc.reflected.raw().iter().enumerate() {
                diff = diff.max((v - rf.reflected.raw()[2 * k]).abs());
            }
            let modulus = finer
                .windows(2)
                .map(|p| (p[1] - p[0]).abs())
                .fold(0.0, f64::max);
            assert!(diff <= modulus + 1e-12, "diff {diff} vs modulus {modulus}");
        }
    }

    proptest! {
        #[test]
        fn one_d_map_matches_running_minimum(
            start in 0.0f64..1.0,
            steps in prop::collection::vec(-1.0f64..1.0, 1..64),
        ) {
            let mut w = vec![start];
            for s in steps { w.push(w.last().unwrap() + s); }
            let pair = skorokhod_map_1d(&scalar(&w)).unwrap();
            let (x, l) = running_min_oracle(&w);
            prop_assert_eq!(pair.reflected.raw(), &x[..]);
            prop_assert_eq!(pair.regulator.raw(), &l[..]);
            prop_assert!(pair.regulator.raw().windows(2).all(|p| p[1] >= p[0]));
            prop_assert!(pair.reflected.raw().iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn box_map_on_half_line_matches_one_d_map(
            start in 0.0f64..1.0,
            steps in prop::collection::vec(-1.0f64..1.0, 1..64),
        ) {
            let mut w = vec![start];
            for s in steps { w.push(w.last().unwrap() + s); }
            let path = scalar(&w);
            let a = skorokhod_map_1d(&path).unwrap();
            let b = skorokhod_map_box(&path, &DomainBox::half_line()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn box_map_confines_and_is_complementary(
            seed in any::<u64>(),
            x0 in 0.0f64..1.0,
            y0 in 0.0f64..2.0,
        ) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let b = DomainBox::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap();
            let xs = brownian(&mut rng, 200, 0.01, x0);
            let ys = brownian(&mut rng, 200, 0.01, y0);
            let rows: Vec<Vec<f64>> = xs.iter().zip(&ys).map(|(a, b)| vec![*a, *b]).collect();
            let w = SampledPath::from_rows(grid(201, 0.01), &rows).unwrap();
            let pair = skorokhod_map_box(&w, &b).unwrap();
            prop_assert!(pair.reflected.values().all(|v| b.contains(v)));
            prop_assert!(check_complementarity(&pair, &b, BOUNDARY_TOL).unwrap());
            let fin = pair.regulator.last();
            for (tv, f) in pair.tv.iter().zip(fin) { prop_assert!(*tv >= f.abs()); }
        }
    }
}
