//! Monomial candidate library and coefficient matrices over it.
//!
//! Terms are ordered graded-lexicographically with `x > y > z`:
//! `1, x, y, z, x^2, xy, xz, y^2, yz, z^2, x^3, x^2y, ...`. The same ordering
//! is used for ground truth and discovered coefficients, so supports can be
//! compared entry by entry.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Exponents `(i, j, k)` of the monomial `x^i y^j z^k`.
pub type Exponents = [u8; 3];

/// Ordered list of monomials in three variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateLibrary {
    max_degree: u8,
    terms: Vec<Exponents>,
}

impl CandidateLibrary {
    /// All monomials of total degree `<= max_degree`, constant first.
    pub fn new(max_degree: u8) -> Self {
        let mut terms = Vec::new();
        for degree in 0..=max_degree {
            for i in (0..=degree).rev() {
                for j in (0..=degree - i).rev() {
                    terms.push([i, j, degree - i - j]);
                }
            }
        }
        Self { max_degree, terms }
    }

    /// The 20-term degree-3 library used throughout the pipeline.
    pub fn cubic() -> Self {
        Self::new(3)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_degree(&self) -> u8 {
        self.max_degree
    }

    pub fn terms(&self) -> &[Exponents] {
        &self.terms
    }

    pub fn index_of(&self, exps: Exponents) -> Option<usize> {
        self.terms.iter().position(|&t| t == exps)
    }

    /// Human-readable label, e.g. `1`, `x`, `x^2y`, `xyz`.
    pub fn label(&self, index: usize) -> String {
        term_label(self.terms[index])
    }

    pub fn labels(&self) -> Vec<String> {
        self.terms.iter().map(|&t| term_label(t)).collect()
    }

    /// Index of the term with the given label.
    pub fn index_of_label(&self, label: &str) -> Option<usize> {
        let wanted = label.replace(['*', ' '], "");
        self.terms.iter().position(|&t| term_label(t) == wanted)
    }

    /// Evaluate every term at `state` into `out` (length `len()`).
    pub fn eval_into(&self, state: [f64; 3], out: &mut [f64]) {
        let pows = powers(state, self.max_degree);
        for (o, t) in out.iter_mut().zip(&self.terms) {
            *o = pows[0][t[0] as usize] * pows[1][t[1] as usize] * pows[2][t[2] as usize];
        }
    }

    pub fn eval(&self, state: [f64; 3]) -> Vec<f64> {
        let mut row = vec![0.0; self.len()];
        self.eval_into(state, &mut row);
        row
    }

    /// Evaluate every term and its gradient with respect to the state.
    pub fn eval_with_grad(&self, state: [f64; 3], values: &mut [f64], grads: &mut [[f64; 3]]) {
        let pows = powers(state, self.max_degree);
        for ((v, g), t) in values.iter_mut().zip(grads.iter_mut()).zip(&self.terms) {
            let (i, j, k) = (t[0] as usize, t[1] as usize, t[2] as usize);
            let (px, py, pz) = (pows[0][i], pows[1][j], pows[2][k]);
            *v = px * py * pz;
            g[0] = if i > 0 { i as f64 * pows[0][i - 1] * py * pz } else { 0.0 };
            g[1] = if j > 0 { j as f64 * px * pows[1][j - 1] * pz } else { 0.0 };
            g[2] = if k > 0 { k as f64 * px * py * pows[2][k - 1] } else { 0.0 };
        }
    }
}

impl Default for CandidateLibrary {
    fn default() -> Self {
        Self::cubic()
    }
}

fn powers(state: [f64; 3], max_degree: u8) -> [Vec<f64>; 3] {
    let n = max_degree as usize + 1;
    let mut out = [vec![1.0; n], vec![1.0; n], vec![1.0; n]];
    for (d, p) in out.iter_mut().enumerate() {
        for e in 1..n {
            p[e] = p[e - 1] * state[d];
        }
    }
    out
}

fn term_label(t: Exponents) -> String {
    if t == [0, 0, 0] {
        return "1".to_string();
    }
    let mut s = String::new();
    for (name, &e) in ["x", "y", "z"].iter().zip(&t) {
        match e {
            0 => {}
            1 => s.push_str(name),
            _ => {
                let _ = write!(s, "{name}^{e}");
            }
        }
    }
    s
}

fn binomial(n: u8, k: u8) -> f64 {
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

/// Sparse coefficient matrix `l x 3`: column `d` holds the right-hand side
/// of the `d`-th state derivative over the library terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientMatrix {
    pub values: Vec<[f64; 3]>,
}

impl CoefficientMatrix {
    pub fn zeros(n_terms: usize) -> Self {
        Self {
            values: vec![[0.0; 3]; n_terms],
        }
    }

    pub fn n_terms(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, term: usize, dim: usize) -> f64 {
        self.values[term][dim]
    }

    pub fn set(&mut self, term: usize, dim: usize, value: f64) {
        self.values[term][dim] = value;
    }

    pub fn column(&self, dim: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[dim]).collect()
    }

    pub fn set_column(&mut self, dim: usize, col: &[f64]) {
        for (r, &v) in self.values.iter_mut().zip(col) {
            r[dim] = v;
        }
    }

    /// `true` where the entry is exactly nonzero.
    pub fn support(&self) -> Vec<[bool; 3]> {
        self.support_with_tol(0.0)
    }

    /// `true` where `|value| > tol`.
    pub fn support_with_tol(&self, tol: f64) -> Vec<[bool; 3]> {
        self.values
            .iter()
            .map(|r| [r[0].abs() > tol, r[1].abs() > tol, r[2].abs() > tol])
            .collect()
    }

    pub fn nnz(&self) -> usize {
        self.values.iter().flatten().filter(|v| **v != 0.0).count()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self
                .values
                .iter()
                .map(|r| [r[0] * factor, r[1] * factor, r[2] * factor])
                .collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Contract the library row `phi` with the coefficients: `phi * Lambda`.
    pub fn contract(&self, phi: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (row, &p) in self.values.iter().zip(phi) {
            for d in 0..3 {
                out[d] += p * row[d];
            }
        }
        out
    }

    /// Evaluate the polynomial vector field at `state`.
    pub fn eval(&self, library: &CandidateLibrary, state: [f64; 3]) -> [f64; 3] {
        self.contract(&library.eval(state))
    }

    /// Re-express the field after the substitution `x -> x - delta`, i.e.
    /// returns coefficients of `G(x) = F(x - delta)`. Degree is preserved,
    /// so the result lives on the same library.
    pub fn substitute_shift(&self, library: &CandidateLibrary, delta: [f64; 3]) -> Self {
        let mut out = Self::zeros(self.n_terms());
        for (term, row) in library.terms().iter().zip(&self.values) {
            if row.iter().all(|v| *v == 0.0) {
                continue;
            }
            for a in 0..=term[0] {
                let ca = binomial(term[0], a) * (-delta[0]).powi((term[0] - a) as i32);
                for b in 0..=term[1] {
                    let cb = binomial(term[1], b) * (-delta[1]).powi((term[1] - b) as i32);
                    for c in 0..=term[2] {
                        let cc = binomial(term[2], c) * (-delta[2]).powi((term[2] - c) as i32);
                        let idx = library
                            .index_of([a, b, c])
                            .expect("library is closed under lower-degree monomials");
                        let w = ca * cb * cc;
                        for d in 0..3 {
                            out.values[idx][d] += w * row[d];
                        }
                    }
                }
            }
        }
        out
    }

    /// Zero every entry with `|value| < tol`.
    pub fn pruned(&self, tol: f64) -> Self {
        Self {
            values: self
                .values
                .iter()
                .map(|r| r.map(|v| if v.abs() < tol { 0.0 } else { v }))
                .collect(),
        }
    }

    /// Render as `dx/dt = ...` lines with two decimals.
    pub fn render(&self, library: &CandidateLibrary) -> Vec<String> {
        ["dx/dt", "dy/dt", "dz/dt"]
            .iter()
            .enumerate()
            .map(|(d, lhs)| format!("{lhs} = {}", render_column(self, library, d)))
            .collect()
    }
}

fn render_column(m: &CoefficientMatrix, library: &CandidateLibrary, dim: usize) -> String {
    // constant goes last, matching the usual table layout
    let order = (1..m.n_terms()).chain(std::iter::once(0));
    let mut out = String::new();
    for idx in order {
        let v = m.values[idx][dim];
        if v == 0.0 {
            continue;
        }
        let mag = v.abs();
        let body = if idx == 0 {
            format!("{mag:.2}")
        } else {
            format!("{mag:.2}*{}", library.label(idx))
        };
        if out.is_empty() {
            if v < 0.0 {
                out.push('-');
            }
        } else {
            out.push_str(if v < 0.0 { " - " } else { " + " });
        }
        out.push_str(&body);
    }
    if out.is_empty() {
        out.push('0');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_library_has_twenty_terms_constant_first() {
        let lib = CandidateLibrary::cubic();
        assert_eq!(lib.len(), 20);
        assert_eq!(lib.terms()[0], [0, 0, 0]);
        assert_eq!(
            lib.labels()[..10],
            ["1", "x", "y", "z", "x^2", "xy", "xz", "y^2", "yz", "z^2"]
        );
        assert_eq!(lib.label(19), "z^3");
        assert_eq!(lib.index_of_label("x*y*z"), lib.index_of([1, 1, 1]));
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let lib = CandidateLibrary::cubic();
        let s = [0.7, -1.3, 2.1];
        let mut v = vec![0.0; 20];
        let mut g = vec![[0.0; 3]; 20];
        lib.eval_with_grad(s, &mut v, &mut g);
        let h = 1e-6;
        for d in 0..3 {
            let mut sp = s;
            let mut sm = s;
            sp[d] += h;
            sm[d] -= h;
            let (vp, vm) = (lib.eval(sp), lib.eval(sm));
            for k in 0..20 {
                let fd = (vp[k] - vm[k]) / (2.0 * h);
                assert!((fd - g[k][d]).abs() < 1e-6, "term {k} dim {d}");
            }
        }
    }

    #[test]
    fn shift_of_linear_term_adds_constant() {
        let lib = CandidateLibrary::cubic();
        let mut m = CoefficientMatrix::zeros(20);
        m.set(1, 0, 2.0);
        let s = m.substitute_shift(&lib, [3.0, 0.0, 0.0]);
        assert_eq!(s.get(1, 0), 2.0);
        assert_eq!(s.get(0, 0), -6.0);
    }

    #[test]
    fn render_two_decimals_constant_last() {
        let lib = CandidateLibrary::cubic();
        let mut m = CoefficientMatrix::zeros(20);
        m.set(1, 0, -10.0);
        m.set(2, 0, 10.01);
        m.set(0, 0, -0.94);
        assert_eq!(m.render(&lib)[0], "dx/dt = -10.00*x + 10.01*y - 0.94");
        assert_eq!(m.render(&lib)[1], "dy/dt = 0");
    }
}
