//! Thin deterministic conic-programming layer: real/complex affine
//! expressions, Hermitian matrix expressions, and a cone-by-cone problem
//! builder that lowers everything to a single interior-point solve.
//!
//! Supported cones: zero (equality), nonnegative, second-order, rotated
//! second-order (lowered to second-order), exponential, three-dimensional
//! power, and positive-semidefinite (Hermitian matrices via their real
//! symmetric embedding). After a solve the layer re-evaluates every
//! constraint block against the returned point and reports the worst
//! primal residual, so callers never have to trust the solver's own
//! bookkeeping.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("conic assembly: {0}")]
    Assembly(String),
    #[error("conic solver: {0}")]
    Solver(String),
}

/// Handle to one scalar decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(pub(crate) usize);

/// Real affine expression c·x + d.
#[derive(Debug, Clone, Default)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(v: VarId) -> Self {
        Self { terms: vec![(v.0, 1.0)], constant: 0.0 }
    }

    pub fn term(v: VarId, coeff: f64) -> Self {
        Self { terms: vec![(v.0, coeff)], constant: 0.0 }
    }

    /// Adds `coeff · v` in place.
    pub fn add_term(&mut self, v: VarId, coeff: f64) {
        self.terms.push((v.0, coeff));
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            terms: self.terms.iter().map(|&(v, a)| (v, a * c)).collect(),
            constant: self.constant * c,
        }
    }

    /// Collapses duplicate variable entries (used at assembly time).
    fn compacted(&self) -> Vec<(usize, f64)> {
        let mut t = self.terms.clone();
        t.sort_unstable_by_key(|&(v, _)| v);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(t.len());
        for (v, c) in t {
            match out.last_mut() {
                Some((lv, lc)) if *lv == v => *lc += c,
                _ => out.push((v, c)),
            }
        }
        out.retain(|&(_, c)| c != 0.0);
        out
    }
}

impl From<VarId> for LinExpr {
    fn from(v: VarId) -> Self {
        LinExpr::var(v)
    }
}

impl std::ops::Add for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: LinExpr) -> LinExpr {
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
        self
    }
}

impl std::ops::Add<f64> for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: f64) -> LinExpr {
        self.constant += rhs;
        self
    }
}

impl std::ops::Sub for LinExpr {
    type Output = LinExpr;
    fn sub(self, rhs: LinExpr) -> LinExpr {
        self + rhs.scale(-1.0)
    }
}

impl std::ops::Sub<f64> for LinExpr {
    type Output = LinExpr;
    fn sub(mut self, rhs: f64) -> LinExpr {
        self.constant -= rhs;
        self
    }
}

impl std::ops::Neg for LinExpr {
    type Output = LinExpr;
    fn neg(self) -> LinExpr {
        self.scale(-1.0)
    }
}

impl std::ops::Mul<f64> for LinExpr {
    type Output = LinExpr;
    fn mul(self, rhs: f64) -> LinExpr {
        self.scale(rhs)
    }
}

impl std::ops::Mul<LinExpr> for f64 {
    type Output = LinExpr;
    fn mul(self, rhs: LinExpr) -> LinExpr {
        rhs.scale(self)
    }
}

/// Complex affine expression (independent real and imaginary parts).
#[derive(Debug, Clone)]
pub struct CxExpr {
    pub re: LinExpr,
    pub im: LinExpr,
}

impl CxExpr {
    pub fn constant(c: Complex64) -> Self {
        Self { re: LinExpr::constant(c.re), im: LinExpr::constant(c.im) }
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self {
            re: self.re.scale(c.re) + self.im.scale(-c.im),
            im: self.re.scale(c.im) + self.im.scale(c.re),
        }
    }

    pub fn add(&self, other: &CxExpr) -> Self {
        Self {
            re: self.re.clone() + other.re.clone(),
            im: self.im.clone() + other.im.clone(),
        }
    }
}

/// Affine complex vector expression.
#[derive(Debug, Clone)]
pub struct CxVecExpr {
    pub entries: Vec<CxExpr>,
}

impl CxVecExpr {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn constant(v: &DVector<Complex64>) -> Self {
        Self { entries: v.iter().map(|&c| CxExpr::constant(c)).collect() }
    }

    /// A fixed complex direction scaled by one real variable.
    pub fn scaled_direction(v: VarId, dir: &DVector<Complex64>) -> Self {
        Self {
            entries: dir
                .iter()
                .map(|&d| CxExpr { re: LinExpr::term(v, d.re), im: LinExpr::term(v, d.im) })
                .collect(),
        }
    }

    /// Inner product h^H v (conjugates `h`).
    pub fn dotc_const(&self, h: &DVector<Complex64>) -> CxExpr {
        assert_eq!(h.len(), self.len(), "dimension mismatch in dotc_const");
        let mut acc = CxExpr::constant(Complex64::new(0.0, 0.0));
        for (hi, e) in h.iter().zip(&self.entries) {
            acc = acc.add(&e.scale(hi.conj()));
        }
        acc
    }

    /// Matrix-vector product M v with a constant matrix.
    pub fn mat_apply(m: &DMatrix<Complex64>, v: &CxVecExpr) -> CxVecExpr {
        assert_eq!(m.ncols(), v.len(), "dimension mismatch in mat_apply");
        let entries = (0..m.nrows())
            .map(|i| {
                let mut acc = CxExpr::constant(Complex64::new(0.0, 0.0));
                for j in 0..m.ncols() {
                    acc = acc.add(&v.entries[j].scale(m[(i, j)]));
                }
                acc
            })
            .collect();
        CxVecExpr { entries }
    }

    /// Interleaved [re0, im0, re1, im1, …] for norm cones.
    pub fn flatten(&self) -> Vec<LinExpr> {
        let mut out = Vec::with_capacity(2 * self.len());
        for e in &self.entries {
            out.push(e.re.clone());
            out.push(e.im.clone());
        }
        out
    }
}

/// Affine Hermitian matrix expression X = C + Σ_v x_v B_v with real scalar
/// variables x_v and sparse Hermitian basis matrices B_v (stored as full
/// entry lists `(row, col, value)`).
#[derive(Debug, Clone)]
pub struct HermExpr {
    pub dim: usize,
    pub basis: Vec<(usize, Vec<(usize, usize, Complex64)>)>,
    pub constant: DMatrix<Complex64>,
}

impl HermExpr {
    pub fn zero(dim: usize) -> Self {
        Self { dim, basis: Vec::new(), constant: DMatrix::zeros(dim, dim) }
    }

    /// Constant Hermitian matrix (symmetrized defensively).
    pub fn constant(c: &DMatrix<Complex64>) -> Self {
        let dim = c.nrows();
        let sym = (c + c.adjoint()).scale(0.5);
        Self { dim, basis: Vec::new(), constant: sym }
    }

    /// A fixed Hermitian matrix scaled by one real variable.
    pub fn scaled_matrix(v: VarId, s: &DMatrix<Complex64>) -> Self {
        let dim = s.nrows();
        let sym = (s + s.adjoint()).scale(0.5);
        let mut entries = Vec::new();
        for i in 0..dim {
            for j in 0..dim {
                if sym[(i, j)] != Complex64::new(0.0, 0.0) {
                    entries.push((i, j, sym[(i, j)]));
                }
            }
        }
        Self { dim, basis: vec![(v.0, entries)], constant: DMatrix::zeros(dim, dim) }
    }

    /// Real quadratic form g^H X g as a real affine expression.
    pub fn quad_form(&self, g: &DVector<Complex64>) -> LinExpr {
        assert_eq!(g.len(), self.dim, "dimension mismatch in quad_form");
        let mut expr = LinExpr::constant(crate::metrics::quad_form(g, &self.constant));
        for (v, entries) in &self.basis {
            let mut coeff = 0.0;
            for &(i, j, val) in entries {
                coeff += (g[i].conj() * val * g[j]).re;
            }
            if coeff != 0.0 {
                expr.terms.push((*v, coeff));
            }
        }
        expr
    }

    /// Real trace tr(S X) for Hermitian S.
    pub fn trace_with(&self, s: &DMatrix<Complex64>) -> LinExpr {
        assert_eq!(s.nrows(), self.dim, "dimension mismatch in trace_with");
        let mut c = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                c += (s[(i, j)] * self.constant[(j, i)]).re;
            }
        }
        let mut expr = LinExpr::constant(c);
        for (v, entries) in &self.basis {
            let mut coeff = 0.0;
            for &(i, j, val) in entries {
                coeff += (s[(j, i)] * val).re;
            }
            if coeff != 0.0 {
                expr.terms.push((*v, coeff));
            }
        }
        expr
    }

    /// Real trace of X.
    pub fn trace(&self) -> LinExpr {
        let mut expr = LinExpr::constant(crate::metrics::trace_re(&self.constant));
        for (v, entries) in &self.basis {
            let mut coeff = 0.0;
            for &(i, j, val) in entries {
                if i == j {
                    coeff += val.re;
                }
            }
            if coeff != 0.0 {
                expr.terms.push((*v, coeff));
            }
        }
        expr
    }

    /// Real trace tr(G X G^H) for a (possibly rectangular) constant G.
    pub fn congruence_trace(&self, g: &DMatrix<Complex64>) -> LinExpr {
        self.trace_with(&(g.adjoint() * g))
    }

    /// Affine expressions for (Re X_{rc}, Im X_{rc}) over the whole matrix.
    fn entry_exprs(&self) -> Vec<Vec<(LinExpr, LinExpr)>> {
        let mut grid: Vec<Vec<(LinExpr, LinExpr)>> = (0..self.dim)
            .map(|r| {
                (0..self.dim)
                    .map(|c| {
                        (
                            LinExpr::constant(self.constant[(r, c)].re),
                            LinExpr::constant(self.constant[(r, c)].im),
                        )
                    })
                    .collect()
            })
            .collect();
        for (v, entries) in &self.basis {
            for &(i, j, val) in entries {
                if val.re != 0.0 {
                    grid[i][j].0.terms.push((*v, val.re));
                }
                if val.im != 0.0 {
                    grid[i][j].1.terms.push((*v, val.im));
                }
            }
        }
        grid
    }
}

/// Cone tag for one constraint block.
#[derive(Debug, Clone, PartialEq)]
enum ConeSpec {
    Zero,
    Nonneg,
    Soc,
    Exp,
    Pow(f64),
    Psd(usize),
}

struct Row {
    coeffs: Vec<(usize, f64)>,
    rhs: f64,
}

struct Block {
    cone: ConeSpec,
    start: usize,
    len: usize,
    label: String,
}

/// Outcome classification of one conic solve.
#[derive(Debug, Clone, PartialEq)]
pub enum ConicStatus {
    Optimal,
    AlmostOptimal,
    Infeasible,
    Unbounded,
    Failed(String),
}

impl ConicStatus {
    /// True for solutions precise enough to act on.
    pub fn is_acceptable(&self) -> bool {
        matches!(self, ConicStatus::Optimal | ConicStatus::AlmostOptimal)
    }
}

/// Solution of a conic program plus an independent feasibility audit.
#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: ConicStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Worst re-evaluated constraint violation at `x` (absolute units).
    pub max_primal_residual: f64,
    /// Label of the block attaining `max_primal_residual`.
    pub worst_block: String,
    pub solve_time: f64,
    pub iterations: u32,
}

impl ConicSolution {
    pub fn value(&self, e: &LinExpr) -> f64 {
        e.terms.iter().map(|&(v, c)| c * self.x[v]).sum::<f64>() + e.constant
    }

    pub fn value_var(&self, v: VarId) -> f64 {
        self.x[v.0]
    }

    pub fn value_cx(&self, e: &CxExpr) -> Complex64 {
        Complex64::new(self.value(&e.re), self.value(&e.im))
    }

    pub fn value_cx_vec(&self, e: &CxVecExpr) -> DVector<Complex64> {
        DVector::from_iterator(e.len(), e.entries.iter().map(|c| self.value_cx(c)))
    }

    pub fn value_herm(&self, e: &HermExpr) -> DMatrix<Complex64> {
        let mut m = e.constant.clone();
        for (v, entries) in &e.basis {
            let xv = self.x[*v];
            for &(i, j, val) in entries {
                m[(i, j)] += val.scale(xv);
            }
        }
        m
    }
}

/// Conic problem builder. Constraints are appended one cone block at a
/// time; `solve` lowers to the interior-point backend.
pub struct Problem {
    var_names: Vec<String>,
    objective: LinExpr,
    rows: Vec<Row>,
    blocks: Vec<Block>,
    /// Extra iteration budget multiplier for hard instances.
    pub max_iter: u32,
}

impl Default for Problem {
    fn default() -> Self {
        Self::new()
    }
}

impl Problem {
    pub fn new() -> Self {
        Self {
            var_names: Vec::new(),
            objective: LinExpr::zero(),
            rows: Vec::new(),
            blocks: Vec::new(),
            max_iter: 200,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// New free scalar variable.
    pub fn var(&mut self, name: impl Into<String>) -> VarId {
        self.var_names.push(name.into());
        VarId(self.var_names.len() - 1)
    }

    /// New scalar variable with box bounds (added as a nonnegative block).
    pub fn var_bounded(&mut self, name: impl Into<String>, lo: f64, hi: f64) -> VarId {
        let name = name.into();
        let v = self.var(name.clone());
        self.nonneg(LinExpr::var(v) - lo, format!("{name}>=lo"));
        self.nonneg(LinExpr::constant(hi) - LinExpr::var(v), format!("{name}<=hi"));
        v
    }

    /// New complex vector variable of length `n` (2n underlying reals).
    pub fn cx_vec_var(&mut self, name: impl Into<String>, n: usize) -> CxVecExpr {
        let name = name.into();
        let entries = (0..n)
            .map(|i| CxExpr {
                re: LinExpr::var(self.var(format!("{name}[{i}].re"))),
                im: LinExpr::var(self.var(format!("{name}[{i}].im"))),
            })
            .collect();
        CxVecExpr { entries }
    }

    /// New Hermitian matrix variable: `dim` real diagonal entries plus a
    /// (re, im) pair for every strictly-lower entry.
    pub fn herm_var(&mut self, name: impl Into<String>, dim: usize) -> HermExpr {
        let name = name.into();
        let mut basis = Vec::new();
        for i in 0..dim {
            let v = self.var(format!("{name}[{i},{i}]"));
            basis.push((v.0, vec![(i, i, Complex64::new(1.0, 0.0))]));
        }
        for i in 1..dim {
            for j in 0..i {
                let vr = self.var(format!("{name}[{i},{j}].re"));
                basis.push((
                    vr.0,
                    vec![
                        (i, j, Complex64::new(1.0, 0.0)),
                        (j, i, Complex64::new(1.0, 0.0)),
                    ],
                ));
                let vi = self.var(format!("{name}[{i},{j}].im"));
                basis.push((
                    vi.0,
                    vec![
                        (i, j, Complex64::new(0.0, 1.0)),
                        (j, i, Complex64::new(0.0, -1.0)),
                    ],
                ));
            }
        }
        HermExpr { dim, basis, constant: DMatrix::zeros(dim, dim) }
    }

    pub fn set_objective(&mut self, e: LinExpr) {
        self.objective = e;
    }

    fn push_block(&mut self, cone: ConeSpec, exprs: Vec<LinExpr>, label: String) {
        let start = self.rows.len();
        let len = exprs.len();
        for e in exprs {
            self.rows.push(Row { coeffs: e.compacted(), rhs: e.constant });
        }
        self.blocks.push(Block { cone, start, len, label });
    }

    /// expr == 0.
    pub fn zero(&mut self, e: LinExpr, label: impl Into<String>) {
        self.push_block(ConeSpec::Zero, vec![e], label.into());
    }

    /// expr ≥ 0.
    pub fn nonneg(&mut self, e: LinExpr, label: impl Into<String>) {
        self.push_block(ConeSpec::Nonneg, vec![e], label.into());
    }

    /// Several expressions ≥ 0 as one block.
    pub fn nonneg_all(&mut self, es: Vec<LinExpr>, label: impl Into<String>) {
        if !es.is_empty() {
            self.push_block(ConeSpec::Nonneg, es, label.into());
        }
    }

    /// t ≥ ||x||₂.
    pub fn soc(&mut self, t: LinExpr, x: Vec<LinExpr>, label: impl Into<String>) {
        let mut exprs = Vec::with_capacity(x.len() + 1);
        exprs.push(t);
        exprs.extend(x);
        self.push_block(ConeSpec::Soc, exprs, label.into());
    }

    /// 2ab ≥ ||x||², a ≥ 0, b ≥ 0 (lowered to a second-order cone).
    pub fn rsoc(&mut self, a: LinExpr, b: LinExpr, x: Vec<LinExpr>, label: impl Into<String>) {
        let sqrt2 = std::f64::consts::SQRT_2;
        let mut exprs = vec![a.clone() + b.clone(), a - b];
        exprs.extend(x.into_iter().map(|e| e.scale(sqrt2)));
        self.push_block(ConeSpec::Soc, exprs, label.into());
    }

    /// y·e^{x/y} ≤ z with y > 0.
    pub fn exp_cone(&mut self, x: LinExpr, y: LinExpr, z: LinExpr, label: impl Into<String>) {
        self.push_block(ConeSpec::Exp, vec![x, y, z], label.into());
    }

    /// x^α · y^{1−α} ≥ |z| with x, y ≥ 0.
    pub fn pow_cone(
        &mut self,
        alpha: f64,
        x: LinExpr,
        y: LinExpr,
        z: LinExpr,
        label: impl Into<String>,
    ) {
        self.push_block(ConeSpec::Pow(alpha), vec![x, y, z], label.into());
    }

    /// s ≥ f³ for f ≥ 0, via the power cone s^{1/3}·1^{2/3} ≥ |f|.
    pub fn cubic_epigraph(&mut self, s: LinExpr, f: LinExpr, label: impl Into<String>) {
        self.pow_cone(1.0 / 3.0, s, LinExpr::constant(1.0), f, label);
    }

    /// l ≥ 1/v² for v > 0, via an auxiliary η with ηv ≥ 1 and l ≥ η².
    pub fn inverse_square_epigraph(
        &mut self,
        l: LinExpr,
        v: LinExpr,
        label: impl Into<String>,
    ) -> VarId {
        let label = label.into();
        let eta = self.var(format!("{label}.eta"));
        self.rsoc(
            LinExpr::var(eta),
            v,
            vec![LinExpr::constant(std::f64::consts::SQRT_2)],
            format!("{label}.inv"),
        );
        self.rsoc(
            l.scale(0.5),
            LinExpr::constant(1.0),
            vec![LinExpr::var(eta)],
            format!("{label}.sq"),
        );
        eta
    }

    /// Real symmetric matrix (given as affine entry expressions, row major,
    /// full square) constrained positive semidefinite.
    pub fn psd_real(&mut self, entries: &[Vec<LinExpr>], label: impl Into<String>) {
        let n = entries.len();
        let sqrt2 = std::f64::consts::SQRT_2;
        // Scaled upper-triangle entries, stacked column by column.
        let mut svec = Vec::with_capacity(n * (n + 1) / 2);
        for c in 0..n {
            for r in 0..=c {
                let e = entries[r][c].clone();
                svec.push(if r == c { e } else { e.scale(sqrt2) });
            }
        }
        self.push_block(ConeSpec::Psd(n), svec, label.into());
    }

    /// Hermitian matrix expression constrained positive semidefinite via
    /// the real embedding [[Re X, −Im X], [Im X, Re X]].
    pub fn psd(&mut self, x: &HermExpr, label: impl Into<String>) {
        let n = x.dim;
        let grid = x.entry_exprs();
        let mut embed: Vec<Vec<LinExpr>> = vec![vec![LinExpr::zero(); 2 * n]; 2 * n];
        for r in 0..n {
            for c in 0..n {
                let (re, im) = &grid[r][c];
                embed[r][c] = re.clone();
                embed[n + r][n + c] = re.clone();
                embed[r][n + c] = im.scale(-1.0);
                embed[n + r][c] = im.clone();
            }
        }
        self.psd_real(&embed, label);
    }

    /// Human-readable listing of the assembled program.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "variables: {}", self.var_names.len());
        for (i, n) in self.var_names.iter().enumerate() {
            let _ = writeln!(out, "  x{i} = {n}");
        }
        let _ = writeln!(out, "minimize: {}", self.fmt_expr_row(&self.objective.compacted(), self.objective.constant));
        for b in &self.blocks {
            let cone = match &b.cone {
                ConeSpec::Zero => "zero".to_string(),
                ConeSpec::Nonneg => "nonneg".to_string(),
                ConeSpec::Soc => "soc".to_string(),
                ConeSpec::Exp => "exp".to_string(),
                ConeSpec::Pow(a) => format!("pow({a})"),
                ConeSpec::Psd(n) => format!("psd({n})"),
            };
            let _ = writeln!(out, "[{cone}] {}:", b.label);
            for r in b.start..b.start + b.len {
                let row = &self.rows[r];
                let _ = writeln!(out, "  {}", self.fmt_expr_row(&row.coeffs, row.rhs));
            }
        }
        out
    }

    fn fmt_expr_row(&self, coeffs: &[(usize, f64)], constant: f64) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        for &(v, c) in coeffs {
            let _ = write!(s, "{}{:.6e}·x{v} ", if c >= 0.0 { "+" } else { "" }, c);
        }
        let _ = write!(s, "{}{:.6e}", if constant >= 0.0 { "+" } else { "" }, constant);
        s
    }

    /// Lowers the program to the interior-point backend and solves it.
    pub fn solve(&self) -> Result<ConicSolution, ConicError> {
        let n = self.var_names.len();
        let m = self.rows.len();
        if n == 0 {
            return Err(ConicError::Assembly("program has no variables".into()));
        }

        // Objective vector.
        let mut q = vec![0.0; n];
        for (v, c) in self.objective.compacted() {
            q[v] = c;
        }

        // A in CSC form, with A = −coefficients so that s = b − Ax equals
        // the expression value.
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        let mut b = vec![0.0; m];
        for (i, row) in self.rows.iter().enumerate() {
            b[i] = row.rhs;
            for &(v, c) in &row.coeffs {
                triplets.push((v, i, -c));
            }
        }
        triplets.sort_unstable_by_key(|&(col, row, _)| (col, row));
        let mut colptr = vec![0usize; n + 1];
        let mut rowval = Vec::with_capacity(triplets.len());
        let mut nzval = Vec::with_capacity(triplets.len());
        for &(col, row, val) in &triplets {
            colptr[col + 1] += 1;
            rowval.push(row);
            nzval.push(val);
        }
        for c in 0..n {
            colptr[c + 1] += colptr[c];
        }
        let a_mat = CscMatrix::new(m, n, colptr, rowval, nzval);
        let p_mat = CscMatrix::zeros((n, n));

        let cones: Vec<SupportedConeT<f64>> = self
            .blocks
            .iter()
            .map(|blk| match blk.cone {
                ConeSpec::Zero => SupportedConeT::ZeroConeT(blk.len),
                ConeSpec::Nonneg => SupportedConeT::NonnegativeConeT(blk.len),
                ConeSpec::Soc => SupportedConeT::SecondOrderConeT(blk.len),
                ConeSpec::Exp => SupportedConeT::ExponentialConeT(),
                ConeSpec::Pow(alpha) => SupportedConeT::PowerConeT(alpha),
                ConeSpec::Psd(dim) => SupportedConeT::PSDTriangleConeT(dim),
            })
            .collect();

        let settings = DefaultSettings::<f64> {
            verbose: false,
            max_iter: self.max_iter,
            tol_feas: 1e-8,
            tol_gap_abs: 1e-8,
            tol_gap_rel: 1e-8,
            ..DefaultSettings::default()
        };

        let mut solver = DefaultSolver::new(&p_mat, &q, &a_mat, &b, &cones, settings)
            .map_err(|e| ConicError::Assembly(format!("{e:?}")))?;
        solver.solve();

        let status = match solver.solution.status {
            SolverStatus::Solved => ConicStatus::Optimal,
            SolverStatus::AlmostSolved => ConicStatus::AlmostOptimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                ConicStatus::Infeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                ConicStatus::Unbounded
            }
            other => ConicStatus::Failed(format!("{other:?}")),
        };
        let x = solver.solution.x.clone();
        let objective = if status.is_acceptable() {
            solver.solution.obj_val + self.objective.constant
        } else {
            f64::NAN
        };
        let (max_primal_residual, worst_block) = if status.is_acceptable() {
            self.audit(&x)
        } else {
            (f64::NAN, String::new())
        };
        Ok(ConicSolution {
            status,
            x,
            objective,
            max_primal_residual,
            worst_block,
            solve_time: solver.solution.solve_time,
            iterations: solver.solution.iterations,
        })
    }

    /// Re-evaluates every block at `x`; returns the worst violation and
    /// the label of the block attaining it.
    fn audit(&self, x: &[f64]) -> (f64, String) {
        let eval = |row: &Row| -> f64 {
            row.coeffs.iter().map(|&(v, c)| c * x[v]).sum::<f64>() + row.rhs
        };
        let mut worst = 0.0f64;
        let mut worst_label = String::new();
        for blk in &self.blocks {
            let s: Vec<f64> = (blk.start..blk.start + blk.len).map(|i| eval(&self.rows[i])).collect();
            let viol = match blk.cone {
                ConeSpec::Zero => s.iter().fold(0.0f64, |a, &v| a.max(v.abs())),
                ConeSpec::Nonneg => s.iter().fold(0.0f64, |a, &v| a.max(-v)),
                ConeSpec::Soc => {
                    let norm = s[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
                    (norm - s[0]).max(0.0)
                }
                ConeSpec::Exp => {
                    let (ex, ey, ez) = (s[0], s[1], s[2]);
                    if ey > 1e-300 {
                        (ey * (ex / ey).min(700.0).exp() - ez).max(0.0)
                    } else {
                        (-ey).max(ex.max(0.0)).max((-ez).max(0.0))
                    }
                }
                ConeSpec::Pow(alpha) => {
                    let (px, py, pz) = (s[0], s[1], s[2]);
                    if px >= 0.0 && py >= 0.0 {
                        (pz.abs() - px.powf(alpha) * py.powf(1.0 - alpha)).max(0.0)
                    } else {
                        (-px).max(-py)
                    }
                }
                ConeSpec::Psd(dim) => {
                    let mut mat = DMatrix::<f64>::zeros(dim, dim);
                    let mut idx = 0;
                    let inv_sqrt2 = 1.0 / std::f64::consts::SQRT_2;
                    for c in 0..dim {
                        for r in 0..=c {
                            let v = if r == c { s[idx] } else { s[idx] * inv_sqrt2 };
                            mat[(r, c)] = v;
                            mat[(c, r)] = v;
                            idx += 1;
                        }
                    }
                    let eig = nalgebra::SymmetricEigen::new(mat);
                    (-eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)).max(0.0)
                }
            };
            if viol > worst {
                worst = viol;
                worst_label = blk.label.clone();
            }
        }
        (worst, worst_label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lp_minimum_at_bound() {
        let mut p = Problem::new();
        let x = p.var("x");
        p.nonneg(LinExpr::var(x) - 3.0, "x>=3");
        p.set_objective(LinExpr::var(x));
        let sol = p.solve().unwrap();
        assert_eq!(sol.status, ConicStatus::Optimal);
        assert_relative_eq!(sol.value_var(x), 3.0, epsilon = 1e-7);
        assert_relative_eq!(sol.objective, 3.0, epsilon = 1e-7);
        assert!(sol.max_primal_residual <= 1e-7);
    }

    #[test]
    fn lp_detects_infeasibility() {
        let mut p = Problem::new();
        let x = p.var("x");
        p.nonneg(LinExpr::var(x) - 3.0, "x>=3");
        p.nonneg(LinExpr::constant(2.0) - LinExpr::var(x), "x<=2");
        p.set_objective(LinExpr::var(x));
        let sol = p.solve().unwrap();
        assert_eq!(sol.status, ConicStatus::Infeasible);
    }

    #[test]
    fn lp_detects_unboundedness() {
        let mut p = Problem::new();
        let x = p.var("x");
        p.nonneg(LinExpr::constant(5.0) - LinExpr::var(x), "x<=5");
        p.set_objective(LinExpr::var(x));
        let sol = p.solve().unwrap();
        assert_eq!(sol.status, ConicStatus::Unbounded);
    }

    #[test]
    fn equality_and_objective_constant() {
        let mut p = Problem::new();
        let x = p.var("x");
        let y = p.var("y");
        p.zero(LinExpr::var(x) + LinExpr::var(y) - 4.0, "x+y=4");
        p.nonneg(LinExpr::var(x) - 1.0, "x>=1");
        p.nonneg(LinExpr::var(y) - 1.0, "y>=1");
        p.set_objective(LinExpr::var(x) + LinExpr::term(y, 2.0) + 10.0);
        let sol = p.solve().unwrap();
        assert_relative_eq!(sol.value_var(x), 3.0, epsilon = 1e-6);
        assert_relative_eq!(sol.value_var(y), 1.0, epsilon = 1e-6);
        assert_relative_eq!(sol.objective, 15.0, epsilon = 1e-6);
    }

    #[test]
    fn soc_euclidean_norm() {
        let mut p = Problem::new();
        let t = p.var("t");
        p.soc(
            LinExpr::var(t),
            vec![LinExpr::constant(3.0), LinExpr::constant(4.0)],
            "t>=|(3,4)|",
        );
        p.set_objective(LinExpr::var(t));
        let sol = p.solve().unwrap();
        assert_relative_eq!(sol.value_var(t), 5.0, epsilon = 1e-6);
    }

    #[test]
    fn rsoc_hyperbolic() {
        // min a s.t. 2·a·1 >= 3²  →  a = 4.5.
        let mut p = Problem::new();
        let a = p.var("a");
        p.rsoc(LinExpr::var(a), LinExpr::constant(1.0), vec![LinExpr::constant(3.0)], "2a>=9");
        p.set_objective(LinExpr::var(a));
        let sol = p.solve().unwrap();
        assert_relative_eq!(sol.value_var(a), 4.5, epsilon = 1e-6);
    }

    #[test]
    fn exp_cone_orientation() {
        // min z s.t. 1·e^{1/1} <= z  →  z = e.
        let mut p = Problem::new();
        let z = p.var("z");
        p.exp_cone(LinExpr::constant(1.0), LinExpr::constant(1.0), LinExpr::var(z), "e<=z");
        p.set_objective(LinExpr::var(z));
        let sol = p.solve().unwrap();
        assert_relative_eq!(sol.value_var(z), std::f64::consts::E, epsilon = 1e-5);

        // max x s.t. e^x <= e  →  x = 1.
        let mut p = Problem::new();
        let x = p.var("x");
        p.exp_cone(
            LinExpr::var(x),
            LinExpr::constant(1.0),
            LinExpr::constant(std::f64::consts::E),
            "e^x<=e",
        );
        p.set_objective(-LinExpr::var(x));
        let sol = p.solve().unwrap();
        assert_relative_eq!(sol.value_var(x), 1.0, epsilon = 1e-5);
    }

    #[test]
    fn power_cone_orientation_and_cubic() {
        // min s s.t. s^{1/3} >= 2  →  s = 8.
        let mut p = Problem::new();
        let s = p.var("s");
        p.pow_cone(
            1.0 / 3.0,
            LinExpr::var(s),
            LinExpr::constant(1.0),
            LinExpr::constant(2.0),
            "s^(1/3)>=2",
        );
        p.set_objective(LinExpr::var(s));
        let sol = p.solve().unwrap();
        assert_relative_eq!(sol.value_var(s), 8.0, epsilon = 1e-4);

        // Same via the cubic-epigraph helper with a variable argument.
        let mut p = Problem::new();
        let s = p.var("s");
        let f = p.var("f");
        p.nonneg(LinExpr::var(f) - 1.5, "f>=1.5");
        p.cubic_epigraph(LinExpr::var(s), LinExpr::var(f), "s>=f^3");
        p.set_objective(LinExpr::var(s) + LinExpr::var(f));
        let sol = p.solve().unwrap();
        assert_relative_eq!(sol.value_var(f), 1.5, epsilon = 1e-5);
        assert_relative_eq!(sol.value_var(s), 3.375, epsilon = 1e-4);
    }

    #[test]
    fn inverse_square_helper() {
        // min l s.t. l >= 1/v², v = 2  →  l = 0.25.
        let mut p = Problem::new();
        let l = p.var("l");
        let v = p.var("v");
        p.zero(LinExpr::var(v) - 2.0, "v=2");
        p.inverse_square_epigraph(LinExpr::var(l), LinExpr::var(v), "l>=1/v^2");
        p.set_objective(LinExpr::var(l));
        let sol = p.solve().unwrap();
        assert_relative_eq!(sol.value_var(l), 0.25, epsilon = 1e-5);
    }

    #[test]
    fn psd_triangle_ordering_is_column_major_upper() {
        // min t s.t. [[1,0,2],[0,100,0],[2,0,t]] PSD → t = 4. If the
        // scaled off-diagonal entries were packed in any other order the
        // (0,2) entry would land elsewhere and the optimum would be 0.
        let mut p = Problem::new();
        let t = p.var("t");
        let c = |v: f64| LinExpr::constant(v);
        let entries = vec![
            vec![c(1.0), c(0.0), c(2.0)],
            vec![c(0.0), c(100.0), c(0.0)],
            vec![c(2.0), c(0.0), LinExpr::var(t)],
        ];
        p.psd_real(&entries, "completion");
        p.set_objective(LinExpr::var(t));
        let sol = p.solve().unwrap();
        assert_eq!(sol.status, ConicStatus::Optimal);
        assert_relative_eq!(sol.value_var(t), 4.0, epsilon = 1e-5);
    }

    #[test]
    fn hermitian_psd_embedding() {
        // min t s.t. [[1, 2−i],[2+i, t]] ⪰ 0  →  t = |2−i|² = 5.
        let mut p = Problem::new();
        let t = p.var("t");
        let mut c = DMatrix::zeros(2, 2);
        c[(0, 0)] = Complex64::new(1.0, 0.0);
        c[(0, 1)] = Complex64::new(2.0, -1.0);
        c[(1, 0)] = Complex64::new(2.0, 1.0);
        let mut x = HermExpr::constant(&c);
        let mut e11 = DMatrix::zeros(2, 2);
        e11[(1, 1)] = Complex64::new(1.0, 0.0);
        let scaled = HermExpr::scaled_matrix(t, &e11);
        x.basis.extend(scaled.basis);
        p.psd(&x, "herm");
        p.set_objective(LinExpr::var(t));
        let sol = p.solve().unwrap();
        assert_relative_eq!(sol.value_var(t), 5.0, epsilon = 1e-5);
    }

    #[test]
    fn hermitian_variable_max_quadratic_form() {
        // max g^H X g s.t. tr X = 1, X ⪰ 0  →  ||g||², with X rank one.
        let mut p = Problem::new();
        let x = p.herm_var("X", 3);
        let g = DVector::from_vec(vec![
            Complex64::new(1.0, 0.5),
            Complex64::new(-0.3, 0.2),
            Complex64::new(0.0, -1.1),
        ]);
        p.zero(x.trace() - 1.0, "trX=1");
        p.psd(&x, "X psd");
        p.set_objective(-x.quad_form(&g));
        let sol = p.solve().unwrap();
        assert_eq!(sol.status, ConicStatus::Optimal);
        assert_relative_eq!(-sol.objective, g.norm_squared(), epsilon = 1e-5);
        let xv = sol.value_herm(&x);
        assert_relative_eq!(crate::metrics::trace_re(&xv), 1.0, epsilon = 1e-6);
        // Returned matrix is Hermitian by construction.
        assert!((&xv - xv.adjoint()).norm() < 1e-12);
    }

    #[test]
    fn herm_expr_linear_functionals_match_dense_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 4;
        let a = DMatrix::from_fn(n, n, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let c = &a * a.adjoint();
        let x = HermExpr::constant(&c);
        let g = DVector::from_fn(n, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let s_raw = DMatrix::from_fn(n, n, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let s = (&s_raw + s_raw.adjoint()).scale(0.5);
        assert_relative_eq!(
            x.quad_form(&g).constant,
            g.dotc(&(&c * &g)).re,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            x.trace_with(&s).constant,
            (&s * &c).trace().re,
            max_relative = 1e-12
        );
        let gm = DMatrix::from_fn(2, n, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        assert_relative_eq!(
            x.congruence_trace(&gm).constant,
            (&gm * &c * gm.adjoint()).trace().re,
            max_relative = 1e-12
        );
    }

    #[test]
    fn complex_vector_expressions_round_trip() {
        let mut p = Problem::new();
        let w = p.cx_vec_var("w", 2);
        let target = DVector::from_vec(vec![Complex64::new(1.0, -2.0), Complex64::new(0.5, 3.0)]);
        // Pin w to the target through zero cones.
        for (e, t) in w.entries.iter().zip(target.iter()) {
            p.zero(e.re.clone() - t.re, "re");
            p.zero(e.im.clone() - t.im, "im");
        }
        let h = DVector::from_vec(vec![Complex64::new(0.3, 0.7), Complex64::new(-1.0, 0.25)]);
        let dot = w.dotc_const(&h);
        let dummy = p.var("dummy");
        p.nonneg(LinExpr::var(dummy), "dummy>=0");
        p.set_objective(LinExpr::var(dummy));
        let sol = p.solve().unwrap();
        let got = sol.value_cx(&dot);
        let want = h.dotc(&target);
        assert_relative_eq!(got.re, want.re, epsilon = 1e-7);
        assert_relative_eq!(got.im, want.im, epsilon = 1e-7);
        assert!((sol.value_cx_vec(&w) - &target).norm() < 1e-7);
    }

    #[test]
    fn complex_norm_via_soc() {
        // min t s.t. t >= ||w − c||, w free → t = 0, w = c.
        let mut p = Problem::new();
        let w = p.cx_vec_var("w", 2);
        let t = p.var("t");
        let c = DVector::from_vec(vec![Complex64::new(2.0, 1.0), Complex64::new(-1.0, 0.5)]);
        let diff = CxVecExpr {
            entries: w
                .entries
                .iter()
                .zip(c.iter())
                .map(|(e, ci)| e.add(&CxExpr::constant(-ci)))
                .collect(),
        };
        p.soc(LinExpr::var(t), diff.flatten(), "t>=|w-c|");
        p.set_objective(LinExpr::var(t));
        let sol = p.solve().unwrap();
        assert!(sol.value_var(t).abs() < 1e-6);
        assert!((sol.value_cx_vec(&w) - &c).norm() < 1e-5);
    }

    #[test]
    fn mat_apply_and_scaled_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = DMatrix::from_fn(3, 2, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let dir = DVector::from_vec(vec![Complex64::new(0.6, -0.8), Complex64::new(0.1, 0.3)]);
        let mut p = Problem::new();
        let s = p.var("s");
        p.zero(LinExpr::var(s) - 2.5, "s=2.5");
        let w = CxVecExpr::scaled_direction(s, &dir);
        let mw = CxVecExpr::mat_apply(&m, &w);
        let dummy = p.var("d");
        p.nonneg(LinExpr::var(dummy), "d>=0");
        p.set_objective(LinExpr::var(dummy));
        let sol = p.solve().unwrap();
        let want = &m * dir.scale(2.5);
        assert!((sol.value_cx_vec(&mw) - want).norm() < 1e-6);
    }

    #[test]
    fn scaled_identity_matrix_expression() {
        let mut p = Problem::new();
        let rho = p.var("rho");
        let x = HermExpr::scaled_matrix(rho, &DMatrix::identity(3, 3));
        p.nonneg(LinExpr::var(rho) - 0.2, "rho>=0.2");
        p.set_objective(x.trace());
        let sol = p.solve().unwrap();
        assert_relative_eq!(sol.objective, 0.6, epsilon = 1e-6);
        let xv = sol.value_herm(&x);
        assert_relative_eq!(xv[(1, 1)].re, 0.2, epsilon = 1e-6);
    }

    #[test]
    fn solve_is_deterministic() {
        let build = || {
            let mut p = Problem::new();
            let x = p.herm_var("X", 3);
            let g = DVector::from_vec(vec![
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 1.0),
                Complex64::new(0.5, 0.5),
            ]);
            p.zero(x.trace() - 1.0, "tr");
            p.psd(&x, "psd");
            p.set_objective(-x.quad_form(&g));
            p.solve().unwrap()
        };
        let a = build();
        let b = build();
        assert_eq!(a.x, b.x);
        assert_eq!(a.objective, b.objective);
    }

    #[test]
    fn dump_lists_variables_and_blocks() {
        let mut p = Problem::new();
        let x = p.var("rate");
        p.nonneg(LinExpr::var(x) - 1.0, "rate>=1");
        p.exp_cone(LinExpr::var(x), LinExpr::constant(1.0), LinExpr::constant(10.0), "growth");
        let d = p.dump();
        assert!(d.contains("rate"));
        assert!(d.contains("[nonneg] rate>=1"));
        assert!(d.contains("[exp] growth"));
    }

    #[test]
    fn var_bounded_enforces_box() {
        let mut p = Problem::new();
        let x = p.var_bounded("x", -2.0, 7.0);
        p.set_objective(-LinExpr::var(x));
        let sol = p.solve().unwrap();
        assert_relative_eq!(sol.value_var(x), 7.0, epsilon = 1e-6);
    }
}
