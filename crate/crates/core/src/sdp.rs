//! Solver-agnostic SDP representation.
//!
//! Decision variables are matrices; constraints are LMIs whose matrix is an
//! affine expression in those variables. The backend adapter converts a
//! [`ConicProgram`] into Clarabel's standard form (`A x + s = b`, `s` in a
//! product of PSD-triangle cones). No backend type leaves this module, and
//! every optimal assignment is re-checked by [`scaled_violation`], which only
//! evaluates the affine expressions and takes eigenvalues.

use std::ops::{Add, Mul, Neg, Sub};
use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus as BackendStatus, SupportedConeT};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix_kit::{definiteness_margin, Sense, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    Symmetric,
    Rectangular,
    Scalar,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarDecl {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub structure: Structure,
}

impl VarDecl {
    /// Number of free scalar coordinates.
    pub fn coord_count(&self) -> usize {
        match self.structure {
            Structure::Symmetric => self.rows * (self.rows + 1) / 2,
            Structure::Rectangular => self.rows * self.cols,
            Structure::Scalar => 1,
        }
    }

    /// Basis matrix of coordinate `k` as a list of `(row, col)` unit entries.
    fn basis(&self, k: usize) -> Vec<(usize, usize)> {
        match self.structure {
            Structure::Scalar => vec![(0, 0)],
            Structure::Rectangular => vec![(k / self.cols, k % self.cols)],
            Structure::Symmetric => {
                let (i, j) = sym_coord(self.rows, k);
                if i == j {
                    vec![(i, i)]
                } else {
                    vec![(i, j), (j, i)]
                }
            }
        }
    }

    fn matrix_from_coords(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for (k, v) in x.iter().enumerate() {
            for (i, j) in self.basis(k) {
                m[(i, j)] = *v;
            }
        }
        m
    }
}

/// Row-major upper-triangle enumeration of a symmetric `n x n` variable.
fn sym_coord(n: usize, mut k: usize) -> (usize, usize) {
    for i in 0..n {
        let len = n - i;
        if k < len {
            return (i, i + k);
        }
        k -= len;
    }
    panic!("symmetric coordinate out of range")
}

#[derive(Debug, Clone)]
enum Term {
    /// `left * V * right`, or `left * V^T * right` when `transpose` is set.
    Product { var: VarId, left: DMatrix<f64>, right: DMatrix<f64>, transpose: bool },
    /// `v * coeff` for a scalar variable `v`.
    Scaled { var: VarId, coeff: DMatrix<f64> },
}

impl Term {
    fn var(&self) -> VarId {
        match self {
            Term::Product { var, .. } | Term::Scaled { var, .. } => *var,
        }
    }

    fn apply(&self, value: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Term::Product { left, right, transpose, .. } => {
                if *transpose {
                    left * value.transpose() * right
                } else {
                    left * value * right
                }
            }
            Term::Scaled { coeff, .. } => coeff * value[(0, 0)],
        }
    }

    /// Image of the unit matrix `E_ij`.
    fn apply_unit(&self, i: usize, j: usize, out: &mut DMatrix<f64>) {
        match self {
            Term::Product { left, right, transpose, .. } => {
                let (i, j) = if *transpose { (j, i) } else { (i, j) };
                let l = left.column(i);
                let r = right.row(j);
                *out += l * r;
            }
            Term::Scaled { coeff, .. } => *out += coeff,
        }
    }

    fn transposed(&self) -> Term {
        match self {
            Term::Product { var, left, right, transpose } => {
                Term::Product { var: *var, left: right.transpose(), right: left.transpose(), transpose: !transpose }
            }
            Term::Scaled { var, coeff } => Term::Scaled { var: *var, coeff: coeff.transpose() },
        }
    }

    fn scaled(&self, s: f64) -> Term {
        match self {
            Term::Product { var, left, right, transpose } => {
                Term::Product { var: *var, left: left * s, right: right.clone(), transpose: *transpose }
            }
            Term::Scaled { var, coeff } => Term::Scaled { var: *var, coeff: coeff * s },
        }
    }

    fn lmul(&self, m: &DMatrix<f64>) -> Term {
        match self {
            Term::Product { var, left, right, transpose } => {
                Term::Product { var: *var, left: m * left, right: right.clone(), transpose: *transpose }
            }
            Term::Scaled { var, coeff } => Term::Scaled { var: *var, coeff: m * coeff },
        }
    }

    fn rmul(&self, m: &DMatrix<f64>) -> Term {
        match self {
            Term::Product { var, left, right, transpose } => {
                Term::Product { var: *var, left: left.clone(), right: right * m, transpose: *transpose }
            }
            Term::Scaled { var, coeff } => Term::Scaled { var: *var, coeff: coeff * m },
        }
    }

    /// Embeds the term into a larger matrix at offset `(r0, c0)`.
    fn embed(&self, rows: usize, cols: usize, r0: usize, c0: usize) -> Term {
        match self {
            Term::Product { var, left, right, transpose } => {
                let mut l = DMatrix::zeros(rows, left.ncols());
                l.view_mut((r0, 0), left.shape()).copy_from(left);
                let mut r = DMatrix::zeros(right.nrows(), cols);
                r.view_mut((0, c0), right.shape()).copy_from(right);
                Term::Product { var: *var, left: l, right: r, transpose: *transpose }
            }
            Term::Scaled { var, coeff } => {
                let mut c = DMatrix::zeros(rows, cols);
                c.view_mut((r0, c0), coeff.shape()).copy_from(coeff);
                Term::Scaled { var: *var, coeff: c }
            }
        }
    }
}

/// A matrix-valued affine expression `C + sum_i L_i(V_i)` over program
/// variables.
///
/// Arithmetic panics on shape mismatch: builders validate their inputs
/// before composing expressions, so a panic here is a programming error.
#[derive(Debug, Clone)]
pub struct AffineMatrix {
    constant: DMatrix<f64>,
    terms: Vec<Term>,
}

impl AffineMatrix {
    pub fn constant(m: DMatrix<f64>) -> Self {
        Self { constant: m, terms: Vec::new() }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(DMatrix::identity(n, n))
    }

    pub fn scalar(v: f64) -> Self {
        Self::constant(DMatrix::from_element(1, 1, v))
    }

    pub fn nrows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    pub fn constant_part(&self) -> &DMatrix<f64> {
        &self.constant
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    /// Variables referenced by this expression.
    pub fn vars(&self) -> Vec<VarId> {
        let mut v: Vec<VarId> = self.terms.iter().map(Term::var).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn t(&self) -> Self {
        Self { constant: self.constant.transpose(), terms: self.terms.iter().map(Term::transposed).collect() }
    }

    /// `m * self`.
    pub fn lmul(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(m.ncols(), self.nrows(), "lmul shape mismatch");
        Self { constant: m * &self.constant, terms: self.terms.iter().map(|t| t.lmul(m)).collect() }
    }

    /// `self * m`.
    pub fn rmul(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(self.ncols(), m.nrows(), "rmul shape mismatch");
        Self { constant: &self.constant * m, terms: self.terms.iter().map(|t| t.rmul(m)).collect() }
    }

    /// `m^T * self * m`.
    pub fn congruence(&self, m: &DMatrix<f64>) -> Self {
        self.lmul(&m.transpose()).rmul(m)
    }

    /// `s * m` for a 1x1 expression `s`. Terms of `s` must be scalar variables.
    pub fn scalar_times(s: &AffineMatrix, m: &DMatrix<f64>) -> Self {
        assert_eq!(s.shape(), (1, 1), "scalar_times needs a 1x1 expression");
        let terms = s
            .terms
            .iter()
            .map(|t| match t {
                Term::Product { var, left, right, .. } => {
                    assert_eq!(left.shape(), (1, 1), "scalar_times needs scalar variables");
                    Term::Scaled { var: *var, coeff: m * (left[(0, 0)] * right[(0, 0)]) }
                }
                Term::Scaled { var, coeff } => Term::Scaled { var: *var, coeff: m * coeff[(0, 0)] },
            })
            .collect();
        Self { constant: m * s.constant[(0, 0)], terms }
    }

    /// Assembles a block grid; every block row must share a row count and
    /// every block column a column count.
    pub fn blocks(grid: Vec<Vec<AffineMatrix>>) -> Self {
        assert!(!grid.is_empty() && !grid[0].is_empty(), "empty block grid");
        let ncols_grid = grid[0].len();
        let row_dims: Vec<usize> = grid.iter().map(|r| r[0].nrows()).collect();
        let col_dims: Vec<usize> = grid[0].iter().map(|b| b.ncols()).collect();
        let rows: usize = row_dims.iter().sum();
        let cols: usize = col_dims.iter().sum();
        let mut constant = DMatrix::zeros(rows, cols);
        let mut terms = Vec::new();
        let mut r0 = 0;
        for (i, row) in grid.iter().enumerate() {
            assert_eq!(row.len(), ncols_grid, "ragged block grid");
            let mut c0 = 0;
            for (j, b) in row.iter().enumerate() {
                assert_eq!(b.shape(), (row_dims[i], col_dims[j]), "block ({i},{j}) shape mismatch");
                constant.view_mut((r0, c0), b.shape()).copy_from(&b.constant);
                terms.extend(b.terms.iter().map(|t| t.embed(rows, cols, r0, c0)));
                c0 += col_dims[j];
            }
            r0 += row_dims[i];
        }
        Self { constant, terms }
    }

    /// Block-diagonal assembly of square or rectangular parts.
    pub fn block_diag(parts: Vec<AffineMatrix>) -> Self {
        let n = parts.len();
        let dims: Vec<(usize, usize)> = parts.iter().map(|p| p.shape()).collect();
        let grid = parts
            .into_iter()
            .enumerate()
            .map(|(i, p)| (0..n).map(|j| if i == j { p.clone() } else { AffineMatrix::zeros(dims[i].0, dims[j].1) }).collect())
            .collect();
        Self::blocks(grid)
    }

    pub fn vstack(parts: Vec<AffineMatrix>) -> Self {
        Self::blocks(parts.into_iter().map(|p| vec![p]).collect())
    }

    pub fn hstack(parts: Vec<AffineMatrix>) -> Self {
        Self::blocks(vec![parts])
    }

    /// Evaluates the expression at a full assignment.
    pub fn evaluate(&self, assignment: &Assignment) -> Result<DMatrix<f64>> {
        let mut out = self.constant.clone();
        for t in &self.terms {
            let v = assignment.get(t.var())?;
            out += t.apply(v);
        }
        Ok(out)
    }

    /// Value of a variable-free expression.
    pub fn value(&self) -> DMatrix<f64> {
        assert!(self.is_constant(), "expression still references variables");
        self.constant.clone()
    }

    /// Image of one scalar coordinate of `var` under the linear part.
    fn coefficient(&self, var: VarId, decl: &VarDecl, coord: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows(), self.ncols());
        let basis = decl.basis(coord);
        for t in self.terms.iter().filter(|t| t.var() == var) {
            for &(i, j) in &basis {
                t.apply_unit(i, j, &mut out);
            }
        }
        out
    }
}

impl Add for AffineMatrix {
    type Output = AffineMatrix;
    fn add(mut self, rhs: AffineMatrix) -> AffineMatrix {
        assert_eq!(self.shape(), rhs.shape(), "add shape mismatch");
        self.constant += rhs.constant;
        self.terms.extend(rhs.terms);
        self
    }
}

impl Add for &AffineMatrix {
    type Output = AffineMatrix;
    fn add(self, rhs: &AffineMatrix) -> AffineMatrix {
        self.clone() + rhs.clone()
    }
}

impl Neg for AffineMatrix {
    type Output = AffineMatrix;
    fn neg(self) -> AffineMatrix {
        self * -1.0
    }
}

impl Neg for &AffineMatrix {
    type Output = AffineMatrix;
    fn neg(self) -> AffineMatrix {
        self.clone() * -1.0
    }
}

impl Sub for AffineMatrix {
    type Output = AffineMatrix;
    fn sub(self, rhs: AffineMatrix) -> AffineMatrix {
        self + (-rhs)
    }
}

impl Sub for &AffineMatrix {
    type Output = AffineMatrix;
    fn sub(self, rhs: &AffineMatrix) -> AffineMatrix {
        self.clone() - rhs.clone()
    }
}

impl Mul<f64> for AffineMatrix {
    type Output = AffineMatrix;
    fn mul(self, s: f64) -> AffineMatrix {
        AffineMatrix { constant: self.constant * s, terms: self.terms.iter().map(|t| t.scaled(s)).collect() }
    }
}

impl Mul<f64> for &AffineMatrix {
    type Output = AffineMatrix;
    fn mul(self, s: f64) -> AffineMatrix {
        self.clone() * s
    }
}

impl From<DMatrix<f64>> for AffineMatrix {
    fn from(m: DMatrix<f64>) -> Self {
        AffineMatrix::constant(m)
    }
}

impl From<&DMatrix<f64>> for AffineMatrix {
    fn from(m: &DMatrix<f64>) -> Self {
        AffineMatrix::constant(m.clone())
    }
}

impl From<&SymMatrix> for AffineMatrix {
    fn from(m: &SymMatrix) -> Self {
        AffineMatrix::constant(m.as_matrix().clone())
    }
}

/// Direction of an LMI constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LmiSense {
    /// `F(x) ⪰ margin·I`
    Psd,
    /// `F(x) ⪯ -margin·I`
    Nsd,
}

#[derive(Debug, Clone)]
pub struct LmiConstraint {
    pub name: String,
    pub expr: AffineMatrix,
    pub sense: LmiSense,
    pub strict: bool,
    pub margin: f64,
}

/// Default relative margin used to encode strict LMIs.
pub const DEFAULT_MARGIN_REL: f64 = 1e-7;

/// A minimisation SDP with a linear objective `sum_i <W_i, V_i>`.
#[derive(Debug, Clone)]
pub struct ConicProgram {
    vars: Vec<VarDecl>,
    constraints: Vec<LmiConstraint>,
    objective: Vec<(VarId, DMatrix<f64>)>,
    margin_rel: f64,
}

impl Default for ConicProgram {
    fn default() -> Self {
        Self::new()
    }
}

impl ConicProgram {
    pub fn new() -> Self {
        Self { vars: Vec::new(), constraints: Vec::new(), objective: Vec::new(), margin_rel: DEFAULT_MARGIN_REL }
    }

    pub fn with_margin_rel(mut self, margin_rel: f64) -> Self {
        self.margin_rel = margin_rel;
        self
    }

    pub fn vars(&self) -> &[VarDecl] {
        &self.vars
    }

    pub fn constraints(&self) -> &[LmiConstraint] {
        &self.constraints
    }

    pub fn decl(&self, id: VarId) -> &VarDecl {
        &self.vars[id.0]
    }

    fn declare(&mut self, name: &str, rows: usize, cols: usize, structure: Structure) -> (VarId, AffineMatrix) {
        let id = VarId(self.vars.len());
        self.vars.push(VarDecl { name: name.to_string(), rows, cols, structure });
        (id, self.expr(id))
    }

    /// The expression `V` for an already declared variable.
    pub fn expr(&self, id: VarId) -> AffineMatrix {
        let d = &self.vars[id.0];
        AffineMatrix {
            constant: DMatrix::zeros(d.rows, d.cols),
            terms: vec![Term::Product {
                var: id,
                left: DMatrix::identity(d.rows, d.rows),
                right: DMatrix::identity(d.cols, d.cols),
                transpose: false,
            }],
        }
    }

    pub fn symmetric(&mut self, name: &str, n: usize) -> (VarId, AffineMatrix) {
        self.declare(name, n, n, Structure::Symmetric)
    }

    pub fn rectangular(&mut self, name: &str, rows: usize, cols: usize) -> (VarId, AffineMatrix) {
        self.declare(name, rows, cols, Structure::Rectangular)
    }

    pub fn scalar(&mut self, name: &str) -> (VarId, AffineMatrix) {
        self.declare(name, 1, 1, Structure::Scalar)
    }

    /// Adds `expr ⪰ 0` / `expr ⪯ 0`, or the strict version encoded with a
    /// margin of `margin_rel * (1 + ||constant||_F)`.
    pub fn add_lmi(&mut self, name: &str, expr: AffineMatrix, sense: LmiSense, strict: bool) {
        assert_eq!(expr.nrows(), expr.ncols(), "LMI `{name}` must be square");
        let margin = if strict { self.margin_rel * (1.0 + expr.constant.norm()) } else { 0.0 };
        self.constraints.push(LmiConstraint { name: name.to_string(), expr, sense, strict, margin });
    }

    /// Adds `<weight, var>` to the objective.
    pub fn minimize_inner(&mut self, var: VarId, weight: DMatrix<f64>) {
        self.objective.push((var, weight));
    }

    /// Adds `tr(var)` to the objective.
    pub fn minimize_trace(&mut self, var: VarId) {
        let n = self.vars[var.0].rows;
        self.minimize_inner(var, DMatrix::identity(n, n));
    }

    /// Multiplies every objective weight by `s`.
    pub fn scale_objective(&mut self, s: f64) {
        for (_, w) in &mut self.objective {
            *w *= s;
        }
    }

    fn validate(&self) -> Result<()> {
        for c in &self.constraints {
            for v in c.expr.vars() {
                if v.0 >= self.vars.len() {
                    return Err(Error::MissingVariable(format!("#{} in `{}`", v.0, c.name)));
                }
            }
            let k = &c.expr.constant;
            if (k - k.transpose()).amax() > 1e-9 * (1.0 + k.amax()) {
                return Err(Error::ShapeMismatch(format!("constant of `{}` is not symmetric", c.name)));
            }
        }
        Ok(())
    }

    /// Objective value of an assignment.
    pub fn objective_value(&self, a: &Assignment) -> Result<f64> {
        let mut acc = 0.0;
        for (v, w) in &self.objective {
            acc += w.dot(a.get(*v)?);
        }
        Ok(acc)
    }

    /// Standard-form data: `min q'x  s.t.  A x + s = b, s ∈ K`.
    pub fn standard_form(&self) -> Result<StandardForm> {
        self.validate()?;
        let mut offsets = Vec::with_capacity(self.vars.len());
        let mut n = 0;
        for d in &self.vars {
            offsets.push(n);
            n += d.coord_count();
        }
        let mut q = vec![0.0; n];
        for (v, w) in &self.objective {
            let d = &self.vars[v.0];
            for k in 0..d.coord_count() {
                q[offsets[v.0] + k] += d.basis(k).iter().map(|&(i, j)| w[(i, j)]).sum::<f64>();
            }
        }
        let mut rows_i = Vec::new();
        let mut cols_j = Vec::new();
        let mut vals = Vec::new();
        let mut b = Vec::new();
        let mut cones = Vec::new();
        for c in &self.constraints {
            let dim = c.expr.nrows();
            let sign = match c.sense {
                LmiSense::Psd => 1.0,
                LmiSense::Nsd => -1.0,
            };
            let row0 = b.len();
            let shifted = &c.expr.constant * sign - DMatrix::identity(dim, dim) * c.margin;
            b.extend(svec(&shifted));
            for v in c.expr.vars() {
                let d = &self.vars[v.0];
                for k in 0..d.coord_count() {
                    let coef = c.expr.coefficient(v, d, k) * sign;
                    for (r, val) in svec(&coef).into_iter().enumerate() {
                        if val != 0.0 {
                            rows_i.push(row0 + r);
                            cols_j.push(offsets[v.0] + k);
                            vals.push(-val);
                        }
                    }
                }
            }
            cones.push(ConeSpec { name: c.name.clone(), dim });
        }
        Ok(StandardForm { n, q, a_rows: rows_i, a_cols: cols_j, a_vals: vals, b, cones, offsets })
    }
}

/// `svec` in the backend's layout: column-major upper triangle with
/// off-diagonal entries scaled by `sqrt(2)`.
fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    let s2 = std::f64::consts::FRAC_1_SQRT_2;
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                out.push(m[(i, i)]);
            } else {
                out.push((m[(i, j)] + m[(j, i)]) * s2);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConeSpec {
    pub name: String,
    pub dim: usize,
}

/// Standard-form problem in coordinate format; serialisable for
/// cross-solver reproduction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StandardForm {
    pub n: usize,
    pub q: Vec<f64>,
    pub a_rows: Vec<usize>,
    pub a_cols: Vec<usize>,
    pub a_vals: Vec<f64>,
    pub b: Vec<f64>,
    pub cones: Vec<ConeSpec>,
    pub offsets: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct DebugDump<'a> {
    vars: &'a [VarDecl],
    svec_layout: &'static str,
    standard_form: &'a StandardForm,
}

impl ConicProgram {
    /// JSON dump of the standard form together with the variable layout.
    pub fn debug_json(&self) -> Result<String> {
        let sf = self.standard_form()?;
        let dump = DebugDump {
            vars: &self.vars,
            svec_layout: "column-major upper triangle, off-diagonals scaled by sqrt(2); A x + s = b",
            standard_form: &sf,
        };
        Ok(serde_json::to_string_pretty(&dump)?)
    }
}

/// Values for every variable of a program, indexed by [`VarId`].
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    values: Vec<Option<DMatrix<f64>>>,
    names: Vec<String>,
}

impl Assignment {
    pub fn empty(p: &ConicProgram) -> Self {
        Self { values: vec![None; p.vars.len()], names: p.vars.iter().map(|d| d.name.clone()).collect() }
    }

    pub fn set(&mut self, id: VarId, value: DMatrix<f64>) {
        self.values[id.0] = Some(value);
    }

    pub fn with(mut self, id: VarId, value: DMatrix<f64>) -> Self {
        self.set(id, value);
        self
    }

    pub fn get(&self, id: VarId) -> Result<&DMatrix<f64>> {
        self.values
            .get(id.0)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::MissingVariable(self.names.get(id.0).cloned().unwrap_or(format!("#{}", id.0))))
    }

    pub fn scalar(&self, id: VarId) -> Result<f64> {
        Ok(self.get(id)?[(0, 0)])
    }

    /// `(1 - t) * self + t * other`.
    pub fn lerp(&self, other: &Assignment, t: f64) -> Result<Assignment> {
        let mut out = self.clone();
        for (i, v) in out.values.iter_mut().enumerate() {
            let a = v.as_ref().ok_or_else(|| Error::MissingVariable(self.names[i].clone()))?;
            let b = other.get(VarId(i))?;
            *v = Some(a * (1.0 - t) + b * t);
        }
        Ok(out)
    }
}

/// Worst eigenvalue violation across all constraints, `0` when every
/// constraint holds (strict ones including their margin).
pub fn check_assignment(p: &ConicProgram, a: &Assignment) -> Result<f64> {
    Ok(constraint_margins(p, a)?.into_iter().fold(0.0_f64, |acc, (_, m)| acc.max(-m)))
}

/// Worst violation with each constraint measured relative to its own
/// magnitude, `max(1, max|F_ij|)`.
pub fn scaled_violation(p: &ConicProgram, a: &Assignment) -> Result<f64> {
    p.constraints.iter().try_fold(0.0_f64, |acc, c| {
        let f = SymMatrix::new(c.expr.evaluate(a)?)?;
        let sense = match c.sense {
            LmiSense::Psd => Sense::Psd,
            LmiSense::Nsd => Sense::Nsd,
        };
        let scale = f.as_matrix().amax().max(1.0);
        Ok(acc.max(-(definiteness_margin(&f, sense)? - c.margin) / scale))
    })
}

/// Per-constraint slack: `min eig(F) - margin` for `⪰`, `-max eig(F) - margin`
/// for `⪯`. Negative means violated.
pub fn constraint_margins(p: &ConicProgram, a: &Assignment) -> Result<Vec<(String, f64)>> {
    p.constraints
        .iter()
        .map(|c| {
            let f = SymMatrix::new(c.expr.evaluate(a)?)?;
            let sense = match c.sense {
                LmiSense::Psd => Sense::Psd,
                LmiSense::Nsd => Sense::Nsd,
            };
            Ok((c.name.clone(), definiteness_margin(&f, sense)? - c.margin))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverReport {
    pub status: SolveStatus,
    #[serde(skip)]
    pub assignment: Option<Assignment>,
    pub objective_value: f64,
    pub max_violation: f64,
    pub iterations: u32,
    pub backend_status: String,
    #[serde(skip)]
    pub solve_seconds: f64,
}

impl SolverReport {
    pub fn into_result(self) -> Result<(Assignment, f64)> {
        match self.status {
            SolveStatus::Optimal => Ok((self.assignment.expect("optimal report carries assignment"), self.objective_value)),
            SolveStatus::Infeasible => Err(Error::Infeasible),
            SolveStatus::NumericalFailure => Err(Error::NumericalFailure(self.backend_status)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Certification tolerance on the worst eigenvalue violation, relative
    /// to each constraint's magnitude.
    pub cert_tol: f64,
    pub max_iter: u32,
    pub tol_gap: f64,
    pub tol_feas: f64,
    pub verbose: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { cert_tol: 1e-7, max_iter: 200, tol_gap: 1e-9, tol_feas: 1e-9, verbose: false }
    }
}

/// Solves `p` with the interior-point backend and certifies the result.
pub fn solve(p: &ConicProgram, opts: &SolveOptions) -> SolverReport {
    let start = Instant::now();
    let fail = |status: SolveStatus, msg: String| SolverReport {
        status,
        assignment: None,
        objective_value: f64::NAN,
        max_violation: f64::INFINITY,
        iterations: 0,
        backend_status: msg,
        solve_seconds: start.elapsed().as_secs_f64(),
    };
    let sf = match p.standard_form() {
        Ok(sf) => sf,
        Err(e) => return fail(SolveStatus::NumericalFailure, e.to_string()),
    };
    let m = sf.b.len();
    let pmat = CscMatrix::<f64>::zeros((sf.n, sf.n));
    let amat = CscMatrix::new_from_triplets(m, sf.n, sf.a_rows.clone(), sf.a_cols.clone(), sf.a_vals.clone());
    let cones: Vec<SupportedConeT<f64>> = sf
        .cones
        .iter()
        .map(|c| if c.dim == 1 { SupportedConeT::NonnegativeConeT(1) } else { SupportedConeT::PSDTriangleConeT(c.dim) })
        .collect();
    let settings = match DefaultSettingsBuilder::default()
        .verbose(opts.verbose)
        .max_iter(opts.max_iter)
        .tol_gap_abs(opts.tol_gap)
        .tol_gap_rel(opts.tol_gap)
        .tol_feas(opts.tol_feas)
        .build()
    {
        Ok(s) => s,
        Err(e) => return fail(SolveStatus::NumericalFailure, format!("settings: {e:?}")),
    };
    let mut solver = match DefaultSolver::new(&pmat, &sf.q, &amat, &sf.b, &cones, settings) {
        Ok(s) => s,
        Err(e) => return fail(SolveStatus::NumericalFailure, format!("setup: {e:?}")),
    };
    solver.solve();
    let sol = &solver.solution;
    let backend_status = format!("{:?}", sol.status);
    let iterations = sol.iterations;
    match sol.status {
        BackendStatus::Solved | BackendStatus::AlmostSolved => {}
        BackendStatus::PrimalInfeasible | BackendStatus::AlmostPrimalInfeasible => {
            let mut r = fail(SolveStatus::Infeasible, backend_status);
            r.iterations = iterations;
            return r;
        }
        _ => {
            let mut r = fail(SolveStatus::NumericalFailure, backend_status);
            r.iterations = iterations;
            return r;
        }
    }
    let mut assignment = Assignment::empty(p);
    for (i, d) in p.vars.iter().enumerate() {
        let x = &sol.x[sf.offsets[i]..sf.offsets[i] + d.coord_count()];
        assignment.set(VarId(i), d.matrix_from_coords(x));
    }
    let (max_violation, objective_value) = match (scaled_violation(p, &assignment), p.objective_value(&assignment)) {
        (Ok(v), Ok(o)) => (v, o),
        (Err(e), _) | (_, Err(e)) => return fail(SolveStatus::NumericalFailure, e.to_string()),
    };
    let status = if max_violation <= opts.cert_tol { SolveStatus::Optimal } else { SolveStatus::NumericalFailure };
    SolverReport {
        status,
        assignment: if status == SolveStatus::Optimal { Some(assignment) } else { None },
        objective_value,
        max_violation,
        iterations,
        backend_status: if status == SolveStatus::Optimal {
            backend_status
        } else {
            format!("{backend_status}; certificate violation {max_violation:.3e}")
        },
        solve_seconds: start.elapsed().as_secs_f64(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn d(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    #[test]
    fn trace_minimisation_over_shifted_cone() {
        let mut p = ConicProgram::new();
        let (y, ye) = p.symmetric("Y", 2);
        p.add_lmi("Y>=I", ye - AffineMatrix::identity(2), LmiSense::Psd, false);
        p.minimize_trace(y);
        let r = solve(&p, &SolveOptions::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        assert_relative_eq!(r.objective_value, 2.0, epsilon = 1e-6);
        let yv = r.assignment.unwrap().get(y).unwrap().clone();
        assert!((yv - DMatrix::<f64>::identity(2, 2)).norm() < 1e-5);
    }

    #[test]
    fn svec_layout_matches_backend_on_3x3() {
        // min tr(Y) s.t. Y ⪰ C recovers C when C is PSD.
        let c = d(3, 3, &[2.0, 0.5, -0.3, 0.5, 1.0, 0.2, -0.3, 0.2, 1.5]);
        let mut p = ConicProgram::new();
        let (y, ye) = p.symmetric("Y", 3);
        p.add_lmi("Y>=C", ye - AffineMatrix::constant(c.clone()), LmiSense::Psd, false);
        p.minimize_trace(y);
        let r = solve(&p, &SolveOptions::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        let yv = r.assignment.unwrap().get(y).unwrap().clone();
        assert!((yv - c).norm() < 1e-5);
    }

    #[test]
    fn infeasible_scalar_program() {
        let mut p = ConicProgram::new();
        let (_, x) = p.scalar("x");
        p.add_lmi("x-2>=0", x.clone() - AffineMatrix::scalar(2.0), LmiSense::Psd, false);
        p.add_lmi("1-x>=0", AffineMatrix::scalar(1.0) - x, LmiSense::Psd, false);
        let r = solve(&p, &SolveOptions::default());
        assert_eq!(r.status, SolveStatus::Infeasible);
        assert!(matches!(r.into_result(), Err(Error::Infeasible)));
    }

    #[test]
    fn lyapunov_scalar_feasibility() {
        let mut p = ConicProgram::new();
        let (pid, pv) = p.scalar("P");
        p.add_lmi("P>1", pv.clone() - AffineMatrix::scalar(1.0), LmiSense::Psd, true);
        p.add_lmi("lyap", pv.clone() * 0.25 - pv + AffineMatrix::scalar(1.0), LmiSense::Nsd, false);
        let r = solve(&p, &SolveOptions::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        let pval = r.assignment.unwrap().scalar(pid).unwrap();
        assert!(pval >= 4.0 / 3.0 - 1e-7);
    }

    #[test]
    fn check_assignment_examples() {
        let mut p = ConicProgram::new();
        let (y, ye) = p.symmetric("Y", 2);
        p.add_lmi("Y>=I", ye - AffineMatrix::identity(2), LmiSense::Psd, false);
        let zero = Assignment::empty(&p).with(y, DMatrix::zeros(2, 2));
        assert_relative_eq!(check_assignment(&p, &zero).unwrap(), 1.0, epsilon = 1e-12);
        let feas = Assignment::empty(&p).with(y, DMatrix::identity(2, 2) * 3.0);
        assert_eq!(check_assignment(&p, &feas).unwrap(), 0.0);
        let tight = Assignment::empty(&p).with(y, DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0 - 1e-3, 2.0])));
        assert_relative_eq!(check_assignment(&p, &tight).unwrap(), 1e-3, epsilon = 1e-12);
        let missing = Assignment::empty(&p);
        assert!(matches!(check_assignment(&p, &missing), Err(Error::MissingVariable(_))));
    }

    #[test]
    fn objective_scaling_keeps_argmin() {
        let build = |s: f64| {
            let mut p = ConicProgram::new();
            let (x, xe) = p.symmetric("X", 2);
            let c = d(2, 2, &[1.0, 0.3, 0.3, 2.0]);
            p.add_lmi("X>=C", xe, LmiSense::Psd, false);
            p.add_lmi("X>=C", p.expr(x) - AffineMatrix::constant(c), LmiSense::Psd, false);
            p.minimize_inner(x, d(2, 2, &[1.0, 0.2, 0.2, 3.0]));
            p.scale_objective(s);
            let r = solve(&p, &SolveOptions::default());
            r.assignment.unwrap().get(x).unwrap().clone()
        };
        let a = build(1.0);
        let b = build(37.0);
        assert!((a - b).norm() < 1e-5);
    }

    #[test]
    fn affine_expression_algebra() {
        let mut p = ConicProgram::new();
        let (z, ze) = p.rectangular("Z", 2, 1);
        let (s, se) = p.scalar("s");
        let a = d(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let expr = AffineMatrix::blocks(vec![
            vec![AffineMatrix::scalar_times(&se, &DMatrix::identity(2, 2)), ze.lmul(&a)],
            vec![ze.lmul(&a).t(), AffineMatrix::scalar(5.0)],
        ]);
        let zv = d(2, 1, &[0.5, -1.0]);
        let asg = Assignment::empty(&p).with(z, zv.clone()).with(s, d(1, 1, &[2.0]));
        let v = expr.evaluate(&asg).unwrap();
        let az = &a * &zv;
        assert_eq!(v[(0, 0)], 2.0);
        assert_eq!(v[(0, 2)], az[0]);
        assert_eq!(v[(2, 1)], az[1]);
        assert_eq!(v[(2, 2)], 5.0);
    }

    #[test]
    fn debug_dump_is_json() {
        let mut p = ConicProgram::new();
        let (y, ye) = p.symmetric("Y", 2);
        p.add_lmi("Y>=I", ye - AffineMatrix::identity(2), LmiSense::Psd, false);
        p.minimize_trace(y);
        let text = p.debug_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["standard_form"]["n"], 3);
    }
}
