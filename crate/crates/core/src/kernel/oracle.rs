//! Independent finite-difference model of the BMD Poisson kernel.
//!
//! A square lattice over a truncated box in the upper half-plane; each slit's
//! nodes are merged into one super-node, which forces a common value and zero
//! net flux (darning). The source is a unit-mass discrete Poisson kernel at the
//! node of `ξ₀`: value `1/h` there and zero elsewhere on the real axis. The
//! artificial top and side walls carry the half-plane kernel `P`, which keeps
//! the truncation error far below the lattice error.

use super::{poisson_halfplane, DriftVector, KernelError};
use crate::geometry::SlitVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    pub h: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl LatticeConfig {
    /// Box `[ξ − w, ξ + w] × [0, height]` with `cells` cells across.
    pub fn centered(xi: f64, half_width: f64, height: f64, cells: usize) -> Self {
        let h = 2.0 * half_width / cells as f64;
        LatticeConfig {
            h,
            x_min: xi - half_width,
            x_max: xi + half_width,
            y_max: height,
            rel_tol: 1e-10,
            max_iter: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Node {
    Fixed(f64),
    Free(usize),
    Slit(usize),
}

#[derive(Debug, Clone)]
pub struct LatticeGrid {
    pub h: f64,
    pub x_min: f64,
    pub nx: usize,
    pub ny: usize,
    values: Vec<f64>,
    pub slit_values: Vec<f64>,
    /// (row, first column, last column) per slit
    slit_cells: Vec<(usize, usize, usize)>,
    pub iterations: usize,
}

impl LatticeGrid {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j * (self.nx + 1) + i]
    }

    pub fn point(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(self.x_min + i as f64 * self.h, j as f64 * self.h)
    }

    /// Euclidean distance from node `(i, j)` to the nearest slit, in cells.
    pub fn cells_from_slits(&self, i: usize, j: usize) -> f64 {
        self.slit_cells
            .iter()
            .map(|&(js, i0, i1)| {
                let di = if i < i0 {
                    (i0 - i) as f64
                } else if i > i1 {
                    (i - i1) as f64
                } else {
                    0.0
                };
                di.hypot(j as f64 - js as f64)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn lattice_index(v: f64, origin: f64, h: f64) -> Option<usize> {
    let k = ((v - origin) / h).round();
    ((k * h + origin - v).abs() <= 1e-6 * h && k >= 0.0).then_some(k as usize)
}

/// Solves the darned lattice problem and returns nodal values of `Im Ψ`.
pub fn oracle_kernel_fd(s: &SlitVector, xi: f64, cfg: &LatticeConfig) -> Result<LatticeGrid, KernelError> {
    let h = cfg.h;
    if !(h > 0.0) || cfg.x_max <= cfg.x_min || cfg.y_max <= 0.0 {
        return Err(KernelError::BadLattice("empty box".into()));
    }
    let nx = ((cfg.x_max - cfg.x_min) / h).round() as usize;
    let ny = (cfg.y_max / h).round() as usize;
    let w = nx + 1;
    let ixi = lattice_index(xi, cfg.x_min, h)
        .filter(|&i| i > 0 && i < nx)
        .ok_or_else(|| KernelError::BadLattice("ξ₀ is not an interior lattice node".into()))?;
    let mut slit_cells = Vec::with_capacity(s.n());
    for (k, sl) in s.slits().iter().enumerate() {
        if sl.len() < 2.0 * h {
            return Err(KernelError::LatticeTooCoarse(k + 1));
        }
        let js = lattice_index(sl.y, 0.0, h)
            .ok_or_else(|| KernelError::BadLattice(format!("slit {} height off the lattice", k + 1)))?;
        let i0 = ((sl.x - cfg.x_min) / h - 1e-9).ceil();
        let i1 = ((sl.xr - cfg.x_min) / h + 1e-9).floor();
        if js == 0 || js >= ny || i0 < 1.0 || i1 > (nx - 1) as f64 {
            return Err(KernelError::BadLattice(format!("slit {} outside the box", k + 1)));
        }
        slit_cells.push((js, i0 as usize, i1 as usize));
    }
    let mut kind = vec![Node::Fixed(0.0); w * (ny + 1)];
    let mut nf = 0;
    for j in 0..=ny {
        for i in 0..=nx {
            let z = Complex64::new(cfg.x_min + i as f64 * h, j as f64 * h);
            kind[j * w + i] = if j == 0 {
                Node::Fixed(if i == ixi { 1.0 / h } else { 0.0 })
            } else if j == ny || i == 0 || i == nx {
                Node::Fixed(poisson_halfplane(z, xi))
            } else {
                nf += 1;
                Node::Free(nf - 1)
            };
        }
    }
    for (k, &(js, i0, i1)) in slit_cells.iter().enumerate() {
        for i in i0..=i1 {
            kind[js * w + i] = Node::Slit(k);
        }
    }
    // renumber free nodes after slit overwrite
    let mut free_pos = Vec::with_capacity(nf);
    for (p, node) in kind.iter_mut().enumerate() {
        if let Node::Free(_) = node {
            *node = Node::Free(free_pos.len());
            free_pos.push(p);
        }
    }
    let nf = free_pos.len();
    let ns = s.n();
    let dim = nf + ns;
    // CSR assembly
    let mut row_ptr = Vec::with_capacity(dim + 1);
    let mut cols = Vec::with_capacity(5 * dim);
    let mut vals = Vec::with_capacity(5 * dim);
    let mut rhs = vec![0.0; dim];
    let neighbors = |p: usize| [p - 1, p + 1, p - w, p + w];
    row_ptr.push(0);
    for (r, &p) in free_pos.iter().enumerate() {
        cols.push(r);
        vals.push(4.0);
        for q in neighbors(p) {
            match kind[q] {
                Node::Fixed(g) => rhs[r] += g,
                Node::Free(m) => {
                    cols.push(m);
                    vals.push(-1.0);
                }
                Node::Slit(k) => {
                    cols.push(nf + k);
                    vals.push(-1.0);
                }
            }
        }
        row_ptr.push(cols.len());
    }
    for (k, &(js, i0, i1)) in slit_cells.iter().enumerate() {
        let diag_at = cols.len();
        cols.push(nf + k);
        vals.push(0.0);
        let mut deg = 0.0;
        for i in i0..=i1 {
            for q in neighbors(js * w + i) {
                match kind[q] {
                    Node::Slit(kk) if kk == k => {}
                    Node::Slit(kk) => {
                        deg += 1.0;
                        cols.push(nf + kk);
                        vals.push(-1.0);
                    }
                    Node::Fixed(g) => {
                        deg += 1.0;
                        rhs[nf + k] += g;
                    }
                    Node::Free(m) => {
                        deg += 1.0;
                        cols.push(m);
                        vals.push(-1.0);
                    }
                }
            }
        }
        vals[diag_at] = deg;
        row_ptr.push(cols.len());
    }
    let spmv = |x: &[f64], y: &mut [f64]| {
        for r in 0..dim {
            let mut acc = 0.0;
            for e in row_ptr[r]..row_ptr[r + 1] {
                acc += vals[e] * x[cols[e]];
            }
            y[r] = acc;
        }
    };
    let diag: Vec<f64> = (0..dim).map(|r| vals[row_ptr[r]]).collect();
    // initial guess: half-plane kernel
    let mut x = vec![0.0; dim];
    for (r, &p) in free_pos.iter().enumerate() {
        let (i, j) = (p % w, p / w);
        x[r] = poisson_halfplane(Complex64::new(cfg.x_min + i as f64 * h, j as f64 * h), xi);
    }
    for (k, sl) in s.slits().iter().enumerate() {
        x[nf + k] = poisson_halfplane(Complex64::new(0.5 * (sl.x + sl.xr), sl.y), xi);
    }
    let mut ax = vec![0.0; dim];
    spmv(&x, &mut ax);
    let mut res: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let bnorm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let mut zv: Vec<f64> = res.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut pv = zv.clone();
    let mut rz: f64 = res.iter().zip(&zv).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; dim];
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let rnorm = res.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= cfg.rel_tol * bnorm {
            break;
        }
        spmv(&pv, &mut ap);
        let pap: f64 = pv.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let alpha = rz / pap;
        for r in 0..dim {
            x[r] += alpha * pv[r];
            res[r] -= alpha * ap[r];
            zv[r] = res[r] / diag[r];
        }
        let rz_new: f64 = res.iter().zip(&zv).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for r in 0..dim {
            pv[r] = zv[r] + beta * pv[r];
        }
        iterations += 1;
    }
    if iterations >= cfg.max_iter {
        return Err(KernelError::BadLattice(format!("CG did not converge in {} iterations", cfg.max_iter)));
    }
    let values = kind
        .iter()
        .map(|node| match *node {
            Node::Fixed(g) => g,
            Node::Free(m) => x[m],
            Node::Slit(k) => x[nf + k],
        })
        .collect();
    Ok(LatticeGrid {
        h,
        x_min: cfg.x_min,
        nx,
        ny,
        values,
        slit_values: x[nf..].to_vec(),
        slit_cells,
        iterations,
    })
}

/// Slit drift from the lattice solution. Heights use the super-node values;
/// `Re Ψ` at a tip is recovered along the slit's row from the box wall via
/// the Cauchy–Riemann relation `∂ₓ Re Ψ = ∂ᵧ Im Ψ`. Requires the row between
/// each tip and the near wall to be free of other slits.
pub fn oracle_drift(s: &SlitVector, xi: f64, cfg: &LatticeConfig) -> Result<DriftVector, KernelError> {
    let g = oracle_kernel_fd(s, xi, cfg)?;
    let n = s.n();
    let h = g.h;
    let mut b = vec![0.0; 3 * n];
    let dy = |i: usize, j: usize| (g.value(i, j + 1) - g.value(i, j - 1)) / (2.0 * h);
    let re_pole = |z: Complex64| (-1.0 / (PI * (z - xi))).re;
    for (k, &(js, i0, i1)) in g.slit_cells.iter().enumerate() {
        for (m, &(jm, a0, a1)) in g.slit_cells.iter().enumerate() {
            if m != k && jm == js && (a1 < i0 || a0 > i1) {
                return Err(KernelError::BadLattice("another slit shares a tip's row".into()));
            }
        }
        b[k] = -2.0 * PI * g.slit_values[k];
        let mut left = re_pole(g.point(0, js));
        for i in 0..i0 {
            left += 0.5 * h * (dy(i, js) + dy(i + 1, js));
        }
        let mut right = re_pole(g.point(g.nx, js));
        for i in i1..g.nx {
            right -= 0.5 * h * (dy(i, js) + dy(i + 1, js));
        }
        b[n + k] = -2.0 * PI * left;
        b[2 * n + k] = -2.0 * PI * right;
    }
    Ok(DriftVector { b })
}
