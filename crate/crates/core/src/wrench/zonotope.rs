//! Convex polytopes in halfspace/vertex form and exact zonotope construction.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{null_space, rank};

/// Largest ambient dimension handled.
pub const MAX_DIM: usize = 6;
/// Generator count up to which the vertex list is enumerated.
pub const MAX_VERTEX_GENERATORS: usize = 12;

/// Axis-aligned box `lower ≤ x ≤ upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl IntervalBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension(format!(
                "box bounds of length {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if let Some(k) = (0..lower.len()).find(|&k| !(lower[k] <= upper[k])) {
            return Err(Error::InvalidArgument(format!(
                "box axis {k}: lower {} exceeds upper {}",
                lower[k], upper[k]
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| l <= v && v <= u)
    }
}

/// One outward halfspace `normal · x ≤ offset` with a unit normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Halfspace {
    /// Signed slack `offset − normal · x`: positive inside.
    pub fn slack(&self, x: &DVector<f64>) -> f64 {
        self.offset - self.normal.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Bounded convex polytope. `affine_dim` is the dimension of its affine hull;
/// when it is below `dim` the halfspace list contains opposite pairs pinning
/// the set to that hull.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexPolytope {
    pub dim: usize,
    pub affine_dim: usize,
    pub halfspaces: Vec<Halfspace>,
    pub vertices: Vec<Vec<f64>>,
}

impl ConvexPolytope {
    /// Halfspace form of a box, with its 2^k corners.
    pub fn from_box(b: &IntervalBox) -> Self {
        let k = b.dim();
        let mut halfspaces = Vec::with_capacity(2 * k);
        for a in 0..k {
            let mut n = vec![0.0; k];
            n[a] = 1.0;
            halfspaces.push(Halfspace {
                normal: n.clone(),
                offset: b.upper[a],
            });
            n[a] = -1.0;
            halfspaces.push(Halfspace {
                normal: n,
                offset: -b.lower[a],
            });
        }
        let vertices = (0..1usize << k)
            .map(|mask| {
                (0..k)
                    .map(|a| if mask >> a & 1 == 1 { b.upper[a] } else { b.lower[a] })
                    .collect()
            })
            .collect();
        let affine_dim = (0..k).filter(|&a| b.upper[a] > b.lower[a]).count();
        Self {
            dim: k,
            affine_dim,
            halfspaces,
            vertices,
        }
    }

    /// `min_k (b_k − a_k · x)` and the index of the minimising halfspace.
    pub fn signed_distance(&self, x: &DVector<f64>) -> (f64, usize) {
        self.halfspaces
            .iter()
            .enumerate()
            .map(|(k, h)| (h.slack(x), k))
            .fold(
                (f64::INFINITY, usize::MAX),
                |best, cur| if cur.0 < best.0 { cur } else { best },
            )
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.halfspaces.iter().all(|h| h.slack(x) >= -tol)
    }

    /// Distance along `dir` from an interior `x` to the boundary.
    pub fn ray_exit(&self, x: &DVector<f64>, dir: &DVector<f64>) -> f64 {
        let mut s = f64::INFINITY;
        for h in &self.halfspaces {
            let rate: f64 = h.normal.iter().zip(dir.iter()).map(|(a, b)| a * b).sum();
            if rate > 0.0 {
                s = s.min(h.slack(x) / rate);
            }
        }
        s
    }
}

/// Zonotope `{c + Σ σ_k h_k : σ ∈ [−1, 1]^m}` in halfspace form, with its
/// vertex list when `m ≤ MAX_VERTEX_GENERATORS`.
///
/// Facet normals are the directions orthogonal to every (r−1)-subset of
/// generators of rank r−1 inside the generator span (r = its rank). Flat
/// zonotopes gain opposite halfspace pairs along the complement of the span.
pub fn zonotope(center: &DVector<f64>, half_generators: &DMatrix<f64>) -> Result<ConvexPolytope> {
    let d = center.len();
    if d > MAX_DIM {
        return Err(Error::Dimension(format!(
            "zonotopes above {MAX_DIM} dimensions are not supported (got {d})"
        )));
    }
    if half_generators.nrows() != d {
        return Err(Error::Dimension(format!(
            "generators have {} rows, centre has {d}",
            half_generators.nrows()
        )));
    }
    let scale = half_generators.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    let kept: Vec<usize> = (0..half_generators.ncols())
        .filter(|&k| half_generators.column(k).norm() > 1e-12 * scale.max(f64::MIN_POSITIVE))
        .collect();
    let g = half_generators.select_columns(&kept);
    let r = if g.ncols() == 0 { 0 } else { rank(&g) };

    // Orthonormal basis of the span and of its complement.
    let (span, complement) = if r == 0 {
        (DMatrix::zeros(d, 0), DMatrix::identity(d, d))
    } else {
        let svd = g.clone().svd(true, false);
        let u = svd.u.expect("u requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let span = DMatrix::from_columns(&order[..r].iter().map(|&k| u.column(k).into_owned()).collect::<Vec<_>>());
        let complement = null_space(&span.transpose());
        (span, complement)
    };

    let mut normals: Vec<DVector<f64>> = Vec::new();
    if r == 1 {
        normals.push(span.column(0).into_owned());
    } else if r >= 2 {
        let local = span.transpose() * &g;
        for subset in (0..g.ncols()).combinations(r - 1) {
            let sub = local.select_columns(&subset);
            if rank(&sub) != r - 1 {
                continue;
            }
            let ns = null_space(&sub.transpose());
            if ns.ncols() != 1 {
                continue;
            }
            let n = &span * ns.column(0);
            let n = n.normalize();
            if !normals.iter().any(|m| m.dot(&n).abs() > 1.0 - 1e-9) {
                normals.push(n);
            }
        }
    }

    let mut halfspaces = Vec::with_capacity(2 * normals.len() + 2 * complement.ncols());
    let support = |n: &DVector<f64>| -> (f64, f64) {
        let spread: f64 = g.column_iter().map(|h| n.dot(&h).abs()).sum();
        let c = n.dot(center);
        (c + spread, -c + spread)
    };
    for n in &normals {
        let (up, down) = support(n);
        halfspaces.push(Halfspace {
            normal: n.iter().copied().collect(),
            offset: up,
        });
        halfspaces.push(Halfspace {
            normal: n.iter().map(|v| -v).collect(),
            offset: down,
        });
    }
    let facet_count = halfspaces.len();
    for k in 0..complement.ncols() {
        let n = complement.column(k).into_owned();
        let c = n.dot(center);
        halfspaces.push(Halfspace {
            normal: n.iter().copied().collect(),
            offset: c,
        });
        halfspaces.push(Halfspace {
            normal: n.iter().map(|v| -v).collect(),
            offset: -c,
        });
    }

    let mut vertices: Vec<Vec<f64>> = Vec::new();
    let m = g.ncols();
    if m <= MAX_VERTEX_GENERATORS {
        let tol = 1e-9 * (1.0 + scale * m as f64);
        for mask in 0..1usize << m {
            let mut v = center.clone();
            for k in 0..m {
                let s = if mask >> k & 1 == 1 { 1.0 } else { -1.0 };
                v += g.column(k) * s;
            }
            let active = halfspaces[..facet_count].iter().filter(|h| h.slack(&v).abs() <= tol).count();
            if active >= r
                && !vertices
                    .iter()
                    .any(|w| w.iter().zip(v.iter()).all(|(a, b)| (a - b).abs() <= tol))
            {
                vertices.push(v.iter().copied().collect());
            }
        }
    }

    Ok(ConvexPolytope {
        dim: d,
        affine_dim: r,
        halfspaces,
        vertices,
    })
}

/// Zonotope image `{W t : lower ≤ t ≤ upper}`.
pub fn box_image(w: &DMatrix<f64>, b: &IntervalBox) -> Result<ConvexPolytope> {
    if w.ncols() != b.dim() {
        return Err(Error::Dimension(format!(
            "map has {} columns, box has {} axes",
            w.ncols(),
            b.dim()
        )));
    }
    let mid = DVector::from_iterator(b.dim(), b.lower.iter().zip(&b.upper).map(|(l, u)| 0.5 * (l + u)));
    let half = DVector::from_iterator(b.dim(), b.lower.iter().zip(&b.upper).map(|(l, u)| 0.5 * (u - l)));
    let center = w * mid;
    let gens = w * DMatrix::from_diagonal(&half);
    zonotope(&center, &gens)
}
