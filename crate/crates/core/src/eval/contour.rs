//! Two-dimensional slices of the certificate for plotting.

use std::io::Write;

use crate::clbf::Certificate;
use crate::dynamics::SystemSpec;
use crate::error::{Error, Result};

/// `V` on a regular grid over two state coordinates, others held fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct ContourSlice {
    pub axes: (usize, usize),
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row-major over `ys` then `xs`: `values[iy * xs.len() + ix]`.
    pub values: Vec<f64>,
    pub fixed: Vec<f64>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Evaluates `V` on a `resolution.0 × resolution.1` grid spanning `bounds`
/// along `axes`, with every other coordinate taken from `fixed`.
pub fn contour_slice(
    cert: &dyn Certificate,
    sys: &SystemSpec,
    axes: (usize, usize),
    bounds: [(f64, f64); 2],
    resolution: (usize, usize),
    fixed: &[f64],
) -> Result<ContourSlice> {
    let n = sys.n();
    if axes.0 == axes.1 || axes.0 >= n || axes.1 >= n {
        return Err(Error::config(
            "axes",
            format!("need two distinct state indices below {n}, got {} and {}", axes.0, axes.1),
        ));
    }
    if resolution.0 < 2 || resolution.1 < 2 {
        return Err(Error::config("resolution", "need at least 2 points per axis"));
    }
    crate::error::check_dim("fixed values", n, fixed.len())?;
    let xs = linspace(bounds[0].0, bounds[0].1, resolution.0);
    let ys = linspace(bounds[1].0, bounds[1].1, resolution.1);
    let mut x = fixed.to_vec();
    let mut values = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &xv in &xs {
            x[axes.0] = xv;
            x[axes.1] = y;
            values.push(cert.value_at(&x));
        }
    }
    Ok(ContourSlice {
        axes,
        xs,
        ys,
        values,
        fixed: fixed.to_vec(),
    })
}

impl ContourSlice {
    /// Grid point with the smallest `V`.
    pub fn argmin(&self) -> (f64, f64, f64) {
        let (k, v) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (k, v)| if *v < acc.1 { (k, *v) } else { acc });
        (self.xs[k % self.xs.len()], self.ys[k / self.xs.len()], v)
    }
}

/// Writes `x,y,V` rows.
pub fn write_contour_csv(out: &mut impl Write, slice: &ContourSlice) -> Result<()> {
    writeln!(out, "x,y,V")?;
    for (iy, y) in slice.ys.iter().enumerate() {
        for (ix, x) in slice.xs.iter().enumerate() {
            writeln!(out, "{x:.16e},{y:.16e},{:.16e}", slice.values[iy * slice.xs.len() + ix])?;
        }
    }
    Ok(())
}

/// Companion plotting script for a contour CSV.
pub const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plot a certificate contour slice: python3 plot_contour.py contour.csv [out.png]"""
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

path = sys.argv[1] if len(sys.argv) > 1 else "contour.csv"
out = sys.argv[2] if len(sys.argv) > 2 else path.rsplit(".", 1)[0] + ".png"
data = np.genfromtxt(path, delimiter=",", names=True)
xs = np.unique(data["x"])
ys = np.unique(data["y"])
V = data["V"].reshape(len(ys), len(xs))
fig, ax = plt.subplots(figsize=(5, 4))
cs = ax.contourf(xs, ys, V, levels=30)
ax.contour(xs, ys, V, levels=[1.0], colors="k", linewidths=1.0)
fig.colorbar(cs, ax=ax, label="V")
ax.set_xlabel("x")
ax.set_ylabel("y")
fig.tight_layout()
fig.savefig(out, dpi=150)
"#;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clbf::MlpCertificate;

    #[test]
    fn grid_counts_and_zero_net() {
        let sys = SystemSpec::builtin("pendulum").unwrap();
        let cert = MlpCertificate::zeros(&[2, 4, 1]).unwrap();
        let s = contour_slice(&cert, &sys, (0, 1), [(-1.0, 1.0), (-2.0, 2.0)], (2, 2), &[0.0, 0.0]).unwrap();
        assert!(s.values.iter().all(|v| *v == 0.0));
        let mut buf = Vec::new();
        write_contour_csv(&mut buf, &s).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 4);
    }

    #[test]
    fn bad_axes() {
        let sys = SystemSpec::builtin("pendulum").unwrap();
        let cert = MlpCertificate::zeros(&[2, 4, 1]).unwrap();
        assert!(contour_slice(&cert, &sys, (0, 0), [(-1.0, 1.0); 2], (3, 3), &[0.0, 0.0]).is_err());
        assert!(contour_slice(&cert, &sys, (0, 2), [(-1.0, 1.0); 2], (3, 3), &[0.0, 0.0]).is_err());
        assert!(contour_slice(&cert, &sys, (0, 1), [(-1.0, 1.0); 2], (1, 3), &[0.0, 0.0]).is_err());
    }

    #[test]
    fn argmin_of_bowl() {
        struct Bowl;
        impl Certificate for Bowl {
            fn input_dim(&self) -> usize {
                2
            }
            fn value_at(&self, x: &[f64]) -> f64 {
                (x[0] - 0.5).powi(2) + x[1] * x[1]
            }
            fn value_and_grad_at(&self, _: &[f64], _: &mut [f64]) -> f64 {
                unimplemented!()
            }
        }
        let sys = SystemSpec::builtin("pendulum").unwrap();
        let s = contour_slice(&Bowl, &sys, (0, 1), [(-1.0, 1.0), (-1.0, 1.0)], (5, 5), &[0.0, 0.0]).unwrap();
        assert_eq!(s.argmin(), (0.5, 0.0, 0.0));
    }
}
