use crate::error::{Error, Result};
use crate::geometry::{Grid, Point};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Coefficients of `L = -c_lap Δ - c_graddiv ∇(∇·) + c_id I`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizerSpec {
    pub c_lap: f64,
    pub c_graddiv: f64,
    pub c_id: f64,
}

impl Default for RegularizerSpec {
    fn default() -> Self {
        Self { c_lap: 0.75, c_graddiv: 0.25, c_id: 0.01 }
    }
}

impl RegularizerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.c_lap >= 0.0 && self.c_graddiv >= 0.0 && self.c_id > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("regularizer coefficients {self:?}")))
        }
    }
}

type Stencil = Vec<(usize, f64)>;

/// 1D first and second difference stencils along an axis of `n` samples:
/// central in the interior, one-sided at the ends.
fn first_diff(i: usize, n: usize, h: f64) -> Stencil {
    if i == 0 {
        vec![(1, 1.0 / h), (0, -1.0 / h)]
    } else if i == n - 1 {
        vec![(n - 1, 1.0 / h), (n - 2, -1.0 / h)]
    } else {
        vec![(i + 1, 0.5 / h), (i - 1, -0.5 / h)]
    }
}

fn second_diff(i: usize, n: usize, h: f64) -> Stencil {
    let c = 1.0 / (h * h);
    let mid = i.clamp(1, n - 2);
    vec![(mid - 1, c), (mid, -2.0 * c), (mid + 1, c)]
}

/// The discretized operator `L` on a 2-component field over a grid, stored as
/// sparse rows. Row `2n + c` is component `c` of `(Lu)` at pixel `n`; column
/// `2m + d` is component `d` of `u` at pixel `m`.
#[derive(Clone, Debug)]
pub struct RegularizerOp<T> {
    grid: Grid<T>,
    rows: Vec<Vec<(usize, T)>>,
    area: T,
}

impl<T: Scalar> RegularizerOp<T> {
    pub fn new(grid: &Grid<T>, spec: &RegularizerSpec) -> Result<Self> {
        spec.validate()?;
        if grid.width < 3 || grid.height < 3 {
            return Err(Error::InvalidGrid("regularizer needs at least 3x3 samples".into()));
        }
        let (w, hgt) = (grid.width, grid.height);
        let h = grid.spacing.to_f64_lossy();
        let idx = |i: usize, j: usize| j * w + i;
        let mut rows = Vec::with_capacity(2 * grid.len());
        for j in 0..hgt {
            for i in 0..w {
                let mut acc: [BTreeMap<usize, f64>; 2] = [BTreeMap::new(), BTreeMap::new()];
                let mut add = |out: usize, comp: usize, pix: usize, coef: f64| {
                    *acc[out].entry(2 * pix + comp).or_insert(0.0) += coef;
                };
                let dxx: Vec<(usize, f64)> = second_diff(i, w, h).into_iter().map(|(k, c)| (idx(k, j), c)).collect();
                let dyy: Vec<(usize, f64)> = second_diff(j, hgt, h).into_iter().map(|(k, c)| (idx(i, k), c)).collect();
                // mixed derivative as d/dx of d/dy, both with first-difference stencils
                let mut dxy = Vec::new();
                for (ii, cx) in first_diff(i, w, h) {
                    for (jj, cy) in first_diff(j, hgt, h) {
                        dxy.push((idx(ii, jj), cx * cy));
                    }
                }
                for comp in 0..2 {
                    for &(p, c) in dxx.iter().chain(&dyy) {
                        add(comp, comp, p, -spec.c_lap * c);
                    }
                }
                // grad-div: x row = uxx_x + uxy_y ; y row = uxy_x + uyy_y
                for &(p, c) in &dxx {
                    add(0, 0, p, -spec.c_graddiv * c);
                }
                for &(p, c) in &dxy {
                    add(0, 1, p, -spec.c_graddiv * c);
                    add(1, 0, p, -spec.c_graddiv * c);
                }
                for &(p, c) in &dyy {
                    add(1, 1, p, -spec.c_graddiv * c);
                }
                let n = idx(i, j);
                add(0, 0, n, spec.c_id);
                add(1, 1, n, spec.c_id);
                for row in acc {
                    rows.push(row.into_iter().filter(|(_, c)| *c != 0.0).map(|(k, c)| (k, T::lit(c))).collect());
                }
            }
        }
        Ok(Self { grid: *grid, rows, area: grid.spacing * grid.spacing })
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    /// `L u`, interleaved (x, y) per pixel.
    pub fn apply(&self, u: &[Point<T>]) -> Vec<T> {
        assert_eq!(u.len(), self.grid.len());
        let comp = |k: usize| if k % 2 == 0 { u[k / 2].x } else { u[k / 2].y };
        self.rows.iter().map(|row| row.iter().map(|(k, c)| *c * comp(*k)).sum()).collect()
    }

    /// `sum |L u|^2 * area`.
    pub fn energy(&self, u: &[Point<T>]) -> T {
        self.apply(u).iter().map(|v| *v * *v).sum::<T>() * self.area
    }

    /// Energy and its gradient `2 area L^T L u` with respect to every sample of `u`.
    pub fn energy_with_grad(&self, u: &[Point<T>]) -> (T, Vec<Point<T>>) {
        let lu = self.apply(u);
        let e = lu.iter().map(|v| *v * *v).sum::<T>() * self.area;
        let two_a = self.area + self.area;
        let mut g = vec![Point::zero(); u.len()];
        for (row, v) in self.rows.iter().zip(&lu) {
            let s = two_a * *v;
            for (k, c) in row {
                if k % 2 == 0 {
                    g[k / 2].x += s * *c;
                } else {
                    g[k / 2].y += s * *c;
                }
            }
        }
        (e, g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(g: &Grid<f64>, rng: &mut ChaCha8Rng) -> Vec<Point<f64>> {
        (0..g.len()).map(|_| Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    #[test]
    fn homogeneity() {
        let g = Grid::centered(12, 10, 1.3).unwrap();
        let op = RegularizerOp::new(&g, &RegularizerSpec::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_field(&g, &mut rng);
        let e = op.energy(&u);
        for lambda in [-3.0, 0.5, 7.25] {
            let scaled: Vec<Point<f64>> = u.iter().map(|p| *p * lambda).collect();
            assert!(((op.energy(&scaled) - lambda * lambda * e) / e).abs() < 1e-12);
        }
    }

    #[test]
    fn positive_definite_on_random_fields() {
        let g = Grid::centered(6, 6, 1.0).unwrap();
        let op = RegularizerOp::new(&g, &RegularizerSpec::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let u = random_field(&g, &mut rng);
            assert!(op.energy(&u) > 0.0);
        }
        // a checkerboard is not in the kernel either (identity term)
        let cb: Vec<Point<f64>> = (0..g.len()).map(|k| Point::new(if (k + k / 6) % 2 == 0 { 1.0 } else { -1.0 }, 0.0)).collect();
        assert!(op.energy(&cb) > 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = Grid::centered(7, 6, 1.1).unwrap();
        let op = RegularizerOp::new(&g, &RegularizerSpec::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_field(&g, &mut rng);
        let (_, grad) = op.energy_with_grad(&u);
        let h = 1e-6;
        for n in [0, 5, 17, 41] {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[n].y += h;
            dn[n].y -= h;
            let fd = (op.energy(&up) - op.energy(&dn)) / (2.0 * h);
            assert!((fd - grad[n].y).abs() <= 1e-6 * fd.abs().max(1.0));
        }
    }
}
