//! Least-squares line fitting and the Nelder-Mead downhill simplex method.

use alloc::vec::Vec;


use crate::{Error, Result};

/// Ordinary least-squares fit of `y = slope * x + intercept`.
pub fn least_squares_line(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("xs and ys must have equal length"));
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateData("at least two points are required".into()));
    }
    if !xs.iter().chain(ys).all(|v| v.is_finite()) {
        return Err(Error::invalid("non-finite sample"));
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        sxx += dx * dx;
        sxy += dx * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateData("all x values are identical".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, mean_y - slope * mean_x))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexConfig {
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    pub max_iter: usize,
    /// Stop once every vertex lies within this distance (infinity norm) of
    /// the best vertex.
    pub x_tol: f64,
    /// Stop once the spread of vertex values falls below this.
    pub f_tol: f64,
}

impl Default for SimplexConfig {
    fn default() -> Self {
        SimplexConfig {
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            max_iter: 2000,
            x_tol: 1e-10,
            f_tol: 1e-16,
        }
    }
}

impl SimplexConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.reflection > 0.0
            && self.expansion > 1.0
            && self.expansion > self.reflection
            && self.contraction > 0.0
            && self.contraction < 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.x_tol >= 0.0
            && self.f_tol >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("simplex coefficients violate their sign constraints"))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    /// `false` when `max_iter` was hit before either tolerance was met.
    pub converged: bool,
    /// Best vertex value after each iteration.
    pub best_history: Vec<f64>,
}

/// Initial simplex around `x0`: one vertex per axis, offset by
/// `max(0.05 |x0_i|, 0.00025)`.
pub fn initial_simplex(x0: &[f64]) -> Vec<Vec<f64>> {
    let mut simplex = Vec::with_capacity(x0.len() + 1);
    simplex.push(x0.to_vec());
    for i in 0..x0.len() {
        let mut v = x0.to_vec();
        v[i] += (0.05 * x0[i].abs()).max(0.00025);
        simplex.push(v);
    }
    simplex
}

/// Minimizes `f` starting from `x0`.
pub fn nelder_mead<F>(f: F, x0: &[f64], cfg: &SimplexConfig) -> Result<SimplexResult>
where
    F: FnMut(&[f64]) -> f64,
{
    if x0.is_empty() {
        return Err(Error::invalid("x0 must have at least one dimension"));
    }
    nelder_mead_from(f, initial_simplex(x0), cfg)
}

/// Minimizes `f` from an explicit `n + 1` vertex simplex. The first vertex
/// plays the role of `x0`.
pub fn nelder_mead_from<F>(mut f: F, simplex: Vec<Vec<f64>>, cfg: &SimplexConfig) -> Result<SimplexResult>
where
    F: FnMut(&[f64]) -> f64,
{
    cfg.validate()?;
    let n = simplex.len().saturating_sub(1);
    if n == 0 || simplex.iter().any(|v| v.len() != n) {
        return Err(Error::invalid("simplex must have n + 1 vertices of dimension n"));
    }
    let mut vertices: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    for v in simplex {
        let fv = f(&v);
        if vertices.is_empty() && !fv.is_finite() {
            return Err(Error::invalid("objective is not finite at x0"));
        }
        vertices.push((v, sanitize(fv)));
    }
    let f0 = vertices[0].1;

    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut centroid = alloc::vec![0.0; n];
    let mut trial = alloc::vec![0.0; n];

    loop {
        // Stable sort keeps x0 first among ties, so fMin <= f(x0) holds.
        vertices.sort_by(|a, b| a.1.total_cmp(&b.1));
        if iterations > 0 {
            history.push(vertices[0].1);
        }
        if is_converged(&vertices, cfg) {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iter {
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for (v, _) in &vertices[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let worst = vertices[n].0.clone();
        let f_best = vertices[0].1;
        let f_second_worst = vertices[n - 1].1;
        let f_worst = vertices[n].1;

        let along = |t: f64, out: &mut Vec<f64>| {
            for ((o, c), w) in out.iter_mut().zip(&centroid).zip(&worst) {
                *o = c + t * (c - w);
            }
        };

        along(cfg.reflection, &mut trial);
        let f_reflect = sanitize(f(&trial));

        if f_reflect < f_best {
            let reflected = trial.clone();
            along(cfg.reflection * cfg.expansion, &mut trial);
            let f_expand = sanitize(f(&trial));
            vertices[n] = if f_expand < f_reflect {
                (trial.clone(), f_expand)
            } else {
                (reflected, f_reflect)
            };
            continue;
        }
        if f_reflect < f_second_worst {
            vertices[n] = (trial.clone(), f_reflect);
            continue;
        }
        // Contraction: outside if the reflection beat the worst vertex.
        let outside = f_reflect < f_worst;
        let t = if outside {
            cfg.reflection * cfg.contraction
        } else {
            -cfg.contraction
        };
        along(t, &mut trial);
        let f_contract = sanitize(f(&trial));
        let accept = if outside {
            f_contract <= f_reflect
        } else {
            f_contract < f_worst
        };
        if accept {
            vertices[n] = (trial.clone(), f_contract);
            continue;
        }
        let best = vertices[0].0.clone();
        for (v, fv) in vertices.iter_mut().skip(1) {
            for (x, b) in v.iter_mut().zip(&best) {
                *x = b + cfg.shrink * (*x - b);
            }
            *fv = sanitize(f(v));
        }
    }

    let (x, fmin) = vertices.swap_remove(0);
    debug_assert!(fmin <= f0);
    Ok(SimplexResult {
        x,
        f: fmin,
        iterations,
        converged,
        best_history: history,
    })
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn is_converged(vertices: &[(Vec<f64>, f64)], cfg: &SimplexConfig) -> bool {
    let best = &vertices[0];
    let spread = vertices[vertices.len() - 1].1 - best.1;
    let size = vertices[1..]
        .iter()
        .flat_map(|(v, _)| v.iter().zip(&best.0).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    size < cfg.x_tol || spread.abs() < cfg.f_tol
}
