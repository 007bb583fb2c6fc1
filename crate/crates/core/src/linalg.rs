//! Dense kernels for the small matrices that appear in the design formulas.
//!
//! Everything here is sized for desk-scale systems (n of at most a handful)
//! and favors plain, predictable algorithms over asymptotic speed.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which induced norm `|.|` denotes for vectors and matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    #[default]
    Two,
    Inf,
}

/// Row-major dense matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix{}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            if r > 0 {
                write!(f, "; ")?;
            }
            for c in 0..self.cols {
                if c > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{}", self[(r, c)])?;
            }
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn row(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks(self.cols.max(1))
            .map(<[f64]>::to_vec)
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Matrix-vector product.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.data
            .chunks(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    fn one_norm(&self) -> f64 {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self[(r, c)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn require_square(&self) -> Result<()> {
        if self.is_square() {
            Ok(())
        } else {
            Err(Error::NotSquare {
                rows: self.rows,
                cols: self.cols,
            })
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "inner dimensions differ");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out[(i, j)] += a * rhs[(k, j)];
                }
            }
        }
        out
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a + b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a - b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }
}

/// Vector norm consistent with [`induced_norm`].
pub fn vec_norm(x: &[f64], kind: NormKind) -> f64 {
    match kind {
        NormKind::Two => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        NormKind::Inf => x.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
    }
}

/// `e^{At}` by scaling and squaring over a truncated Taylor series.
pub fn mat_exp(a: &Matrix, t: f64) -> Result<Matrix> {
    a.require_square()?;
    if !t.is_finite() {
        return Err(Error::NonFinite("mat_exp time"));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("matrix"));
    }
    let n = a.rows;
    if t == 0.0 {
        return Ok(Matrix::identity(n));
    }
    let at = a.scale(t);
    let norm = at.one_norm();
    if norm == 0.0 {
        return Ok(Matrix::identity(n));
    }
    // scaled norm below 0.5
    let mut squarings = 0u32;
    while norm / 2f64.powi(squarings as i32) >= 0.5 {
        squarings += 1;
    }
    let scaled = at.scale(1.0 / 2f64.powi(squarings as i32));

    let mut sum = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=40 {
        term = (&term * &scaled).scale(1.0 / k as f64);
        sum = &sum + &term;
        if term.max_abs() <= f64::EPSILON * 1e-2 * sum.max_abs() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    Ok(sum)
}

/// Induced operator norm: spectral norm (`Two`) or maximum row sum (`Inf`).
pub fn induced_norm(a: &Matrix, kind: NormKind) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::NonFinite("matrix"));
    }
    Ok(match kind {
        NormKind::Inf => a
            .data
            .chunks(a.cols.max(1))
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max),
        NormKind::Two => {
            if a.rows == 0 || a.cols == 0 {
                return Ok(0.0);
            }
            // work with the smaller Gram matrix
            let gram = if a.rows >= a.cols {
                &a.transpose() * a
            } else {
                a * &a.transpose()
            };
            symmetric_eigenvalues(&gram)
                .into_iter()
                .fold(0.0_f64, f64::max)
                .max(0.0)
                .sqrt()
        }
    })
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(s: &Matrix) -> Vec<f64> {
    let n = s.rows;
    let mut m = s.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off <= 1e-30 * (1.0 + m.max_abs().powi(2)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s_ = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s_ * mkq;
                    m[(k, q)] = s_ * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s_ * mqk;
                    m[(q, k)] = s_ * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[(i, i)]).collect()
}

/// Coefficients `[1, c1, ..., cn]` of `det(sI - A) = s^n + c1 s^{n-1} + ... + cn`
/// (Faddeev-LeVerrier).
pub fn characteristic_polynomial(a: &Matrix) -> Result<Vec<f64>> {
    a.require_square()?;
    let n = a.rows;
    let mut coeffs = vec![1.0];
    let mut m = Matrix::zeros(n, n);
    let id = Matrix::identity(n);
    for k in 1..=n {
        m = &(a * &m) + &id.scale(coeffs[k - 1]);
        let am = a * &m;
        coeffs.push(-am.trace() / k as f64);
    }
    Ok(coeffs)
}

/// Eigenvalues: closed form for n <= 2, Durand-Kerner on the characteristic
/// polynomial otherwise.
pub fn eigenvalues(a: &Matrix) -> Result<Vec<Complex64>> {
    a.require_square()?;
    let n = a.rows;
    match n {
        0 => Ok(Vec::new()),
        1 => Ok(vec![Complex64::new(a[(0, 0)], 0.0)]),
        2 => {
            let tr = a.trace();
            let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
            let disc = Complex64::new(tr * tr / 4.0 - det, 0.0).sqrt();
            let half = Complex64::new(tr / 2.0, 0.0);
            Ok(vec![half + disc, half - disc])
        }
        _ => Ok(polynomial_roots(&characteristic_polynomial(a)?)),
    }
}

fn polynomial_roots(monic: &[f64]) -> Vec<Complex64> {
    let n = monic.len() - 1;
    let eval = |z: Complex64| {
        monic
            .iter()
            .fold(Complex64::new(0.0, 0.0), |acc, c| acc * z + c)
    };
    // Cauchy bound on root magnitude
    let radius = 1.0 + monic[1..].iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> = (0..n).map(|k| seed.powu(k as u32) * radius).collect();
    for _ in 0..2000 {
        let mut delta = 0.0_f64;
        for i in 0..n {
            let zi = roots[i];
            let denom = roots
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .fold(Complex64::new(1.0, 0.0), |acc, (_, zj)| acc * (zi - zj));
            if denom.norm() == 0.0 {
                roots[i] += Complex64::new(1e-10, 1e-10);
                continue;
            }
            let step = eval(zi) / denom;
            roots[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-15 * radius {
            break;
        }
    }
    roots
}

/// Largest real part over the spectrum.
pub fn spectral_abscissa(a: &Matrix) -> Result<f64> {
    Ok(eigenvalues(a)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Routh-Hurwitz test on the characteristic polynomial: true iff every
/// eigenvalue has strictly negative real part.
pub fn is_hurwitz(a: &Matrix) -> bool {
    let Ok(coeffs) = characteristic_polynomial(a) else {
        return false;
    };
    if coeffs.iter().any(|c| !c.is_finite()) {
        return false;
    }
    routh_stable(&coeffs)
}

fn routh_stable(coeffs: &[f64]) -> bool {
    let n = coeffs.len() - 1;
    if n == 0 {
        return true;
    }
    let scale = coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let tiny = 1e-13 * scale;
    if coeffs.iter().any(|c| *c <= tiny) {
        return false;
    }
    let width = n / 2 + 1;
    let mut prev: Vec<f64> = (0..width)
        .map(|k| coeffs.get(2 * k).copied().unwrap_or(0.0))
        .collect();
    let mut cur: Vec<f64> = (0..width)
        .map(|k| coeffs.get(2 * k + 1).copied().unwrap_or(0.0))
        .collect();
    for _ in 1..n {
        if cur[0] <= tiny {
            return false;
        }
        let next: Vec<f64> = (0..width)
            .map(|k| {
                let p = prev.get(k + 1).copied().unwrap_or(0.0);
                let c = cur.get(k + 1).copied().unwrap_or(0.0);
                (cur[0] * p - prev[0] * c) / cur[0]
            })
            .collect();
        prev = cur;
        cur = next;
    }
    cur[0] > tiny
}

/// Pair `(M_sigma, sigma)` with `|e^{At}| <= M_sigma e^{-sigma t}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayEnvelope {
    pub m_sigma: f64,
    pub sigma: f64,
}

impl DecayEnvelope {
    pub fn new(m_sigma: f64, sigma: f64) -> Result<Self> {
        let env = Self::pinned(m_sigma, sigma)?;
        if m_sigma < 1.0 {
            return Err(Error::Constant(format!(
                "overshoot M_sigma = {m_sigma} < 1 contradicts |e^0| = 1"
            )));
        }
        Ok(env)
    }

    /// Accepts `m_sigma < 1` (reference scenarios pin such values); callers should surface
    /// [`DecayEnvelope::is_admissible`] as a warning.
    pub fn pinned(m_sigma: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite() && m_sigma > 0.0 && m_sigma.is_finite()) {
            return Err(Error::Constant(format!(
                "envelope needs M_sigma > 0 and sigma > 0, got ({m_sigma}, {sigma})"
            )));
        }
        Ok(Self { m_sigma, sigma })
    }

    pub fn is_admissible(&self) -> bool {
        self.m_sigma >= 1.0
    }

    pub fn bound(&self, t: f64) -> f64 {
        self.m_sigma * (-self.sigma * t).exp()
    }
}

/// Safety factor applied to the sampled supremum.
pub const ENVELOPE_PAD: f64 = 1.05;

/// Sampled supremum of `|e^{At}| e^{sigma t}` over `[0, horizon]`, padded by 5%.
pub fn estimate_decay_envelope(
    a: &Matrix,
    sigma: f64,
    horizon: f64,
    samples: usize,
    norm: NormKind,
) -> Result<DecayEnvelope> {
    a.require_square()?;
    let abscissa = spectral_abscissa(a)?;
    if !is_hurwitz(a) {
        return Err(Error::NotHurwitz { abscissa });
    }
    let limit = -abscissa;
    // σ equal to the slowest rate is fine when that mode is semisimple; the
    // growth test below catches the defective case
    let at_limit = (sigma - limit).abs() <= 1e-9 * limit;
    if !(sigma > 0.0) || (sigma > limit && !at_limit) {
        return Err(Error::DecayRateTooLarge { sigma, limit });
    }
    if !(horizon > 0.0) || samples < 2 {
        return Err(Error::Constant(
            "envelope sampling needs horizon > 0 and >= 2 samples".into(),
        ));
    }
    let weighted =
        |t: f64| -> Result<f64> { Ok(induced_norm(&mat_exp(a, t)?, norm)? * (sigma * t).exp()) };
    if at_limit && weighted(horizon)? > 1.01 * weighted(horizon / 2.0)? {
        return Err(Error::DecayRateTooLarge { sigma, limit });
    }
    let mut sup = 0.0_f64;
    for k in 0..samples {
        let t = horizon * k as f64 / (samples - 1) as f64;
        sup = sup.max(weighted(t)?);
    }
    DecayEnvelope::new(sup.max(1.0) * ENVELOPE_PAD, sigma)
}
