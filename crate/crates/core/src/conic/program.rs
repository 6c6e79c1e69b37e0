//! Conic program container and a small modeling layer.
//!
//! Programs are stored in the standard primal form
//! `min c'x  s.t.  A x = b,  G x + s = h,  s in K` with `K` a product of
//! nonnegative, second-order, and PSD blocks. The [`Model`] builder assembles
//! `G`/`h`/`A`/`b` from affine expressions so callers never hand-index rows.

use super::cones::ConeSpec;

/// Sparse row: (column, coefficient) pairs.
pub type SparseRow = Vec<(usize, f64)>;

/// Variable handle issued by [`Model::var`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Affine expression `sum coef_i * x_i + constant`.
#[derive(Debug, Clone, Default)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        LinExpr { terms: vec![], constant: c }
    }

    pub fn term(v: Var, coef: f64) -> Self {
        LinExpr { terms: vec![(v.0, coef)], constant: 0.0 }
    }

    pub fn add(mut self, other: &LinExpr) -> Self {
        self.terms.extend(other.terms.iter().cloned());
        self.constant += other.constant;
        self
    }

    pub fn add_term(mut self, v: Var, coef: f64) -> Self {
        self.terms.push((v.0, coef));
        self
    }

    pub fn add_const(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn sub(self, other: &LinExpr) -> Self {
        self.add(&other.clone().scale(-1.0))
    }

    pub fn scale(mut self, k: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= k;
        }
        self.constant *= k;
        self
    }

    /// Merge duplicate columns; drop zeros.
    fn compacted(&self) -> SparseRow {
        let mut row = self.terms.clone();
        row.sort_by_key(|t| t.0);
        let mut out: SparseRow = Vec::with_capacity(row.len());
        for (c, v) in row {
            match out.last_mut() {
                Some(last) if last.0 == c => last.1 += v,
                _ => out.push((c, v)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }
}

impl From<Var> for LinExpr {
    fn from(v: Var) -> Self {
        LinExpr::term(v, 1.0)
    }
}

/// A conic program in standard primal form.
#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    pub num_vars: usize,
    pub cost: Vec<f64>,
    pub cost_constant: f64,
    pub eq_rows: Vec<SparseRow>,
    pub eq_rhs: Vec<f64>,
    /// Cone rows: s = h - G x, stored as rows of G with matching h entries.
    pub cone_rows: Vec<SparseRow>,
    pub cone_rhs: Vec<f64>,
    pub cones: Vec<ConeSpec>,
    pub warm_start: Option<Vec<f64>>,
}

impl ConicProgram {
    pub fn cone_dim(&self) -> usize {
        self.cones.iter().map(|c| c.dim()).sum()
    }

    /// Plain-text dump of objective and constraint blocks for offline
    /// inspection.
    pub fn dump_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "vars: {}", self.num_vars);
        let _ = write!(s, "min ");
        for (i, c) in self.cost.iter().enumerate() {
            if *c != 0.0 {
                let _ = write!(s, "{c:+.6e} x{i} ");
            }
        }
        let _ = writeln!(s, "{:+.6e}", self.cost_constant);
        for (r, (row, rhs)) in self.eq_rows.iter().zip(&self.eq_rhs).enumerate() {
            let _ = write!(s, "eq[{r}]: ");
            for (i, c) in row {
                let _ = write!(s, "{c:+.6e} x{i} ");
            }
            let _ = writeln!(s, "= {rhs:.6e}");
        }
        let mut at = 0usize;
        for (b, cone) in self.cones.iter().enumerate() {
            let _ = writeln!(s, "block[{b}] {cone:?} rows {}..{}", at, at + cone.dim());
            at += cone.dim();
        }
        s
    }
}

/// Incremental model builder.
#[derive(Debug, Default)]
pub struct Model {
    num_vars: usize,
    objective: LinExpr,
    eq: Vec<LinExpr>,
    nonneg: Vec<LinExpr>,
    soc: Vec<Vec<LinExpr>>,
    psd: Vec<(usize, Vec<LinExpr>)>,
    warm: Option<Vec<f64>>,
}

impl Model {
    pub fn new() -> Self {
        Model::default()
    }

    pub fn var(&mut self) -> Var {
        let v = Var(self.num_vars);
        self.num_vars += 1;
        v
    }

    pub fn vars(&mut self, k: usize) -> Vec<Var> {
        (0..k).map(|_| self.var()).collect()
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn minimize(&mut self, obj: LinExpr) {
        self.objective = obj;
    }

    /// expr == 0
    pub fn add_eq0(&mut self, expr: LinExpr) {
        self.eq.push(expr);
    }

    /// expr >= 0
    pub fn add_nonneg(&mut self, expr: LinExpr) {
        self.nonneg.push(expr);
    }

    /// lo <= var <= hi
    pub fn add_box(&mut self, v: Var, lo: f64, hi: f64) {
        self.add_nonneg(LinExpr::term(v, 1.0).add_const(-lo));
        self.add_nonneg(LinExpr::term(v, -1.0).add_const(hi));
    }

    /// ||args|| <= bound
    pub fn add_soc(&mut self, bound: LinExpr, args: Vec<LinExpr>) {
        let mut block = vec![bound];
        block.extend(args);
        self.soc.push(block);
    }

    /// ||args||^2 <= y * z with y, z >= 0 (rotated cone via the standard
    /// second-order embedding).
    pub fn add_rsoc(&mut self, y: LinExpr, z: LinExpr, args: Vec<LinExpr>) {
        let bound = y.clone().add(&z);
        let mut soc_args: Vec<LinExpr> = args.into_iter().map(|a| a.scale(2.0)).collect();
        soc_args.push(y.sub(&z));
        self.add_soc(bound, soc_args);
    }

    /// Symmetric matrix with affine entries (given as the lower triangle in
    /// column-major order, diagonal included, WITHOUT sqrt(2) factors) must
    /// be PSD.
    pub fn add_psd_lower(&mut self, order: usize, lower: Vec<LinExpr>) {
        assert_eq!(lower.len(), order * (order + 1) / 2);
        let sqrt2 = std::f64::consts::SQRT_2;
        let mut entries = Vec::with_capacity(lower.len());
        let mut idx = 0;
        for j in 0..order {
            for i in j..order {
                let e = lower[idx].clone();
                entries.push(if i == j { e } else { e.scale(sqrt2) });
                idx += 1;
            }
        }
        self.psd.push((order, entries));
    }

    pub fn set_warm_start(&mut self, x: Vec<f64>) {
        self.warm = Some(x);
    }

    pub fn build(&self) -> ConicProgram {
        let mut prog = ConicProgram {
            num_vars: self.num_vars,
            cost: vec![0.0; self.num_vars],
            cost_constant: self.objective.constant,
            warm_start: self.warm.clone(),
            ..Default::default()
        };
        for (i, c) in self.objective.compacted() {
            prog.cost[i] = c;
        }
        for e in &self.eq {
            // a'x + c = 0  ->  a'x = -c
            prog.eq_rows.push(e.compacted());
            prog.eq_rhs.push(-e.constant);
        }
        // s = h - Gx with s = expr  ->  G row = -a, h = constant.
        let push_expr = |prog: &mut ConicProgram, e: &LinExpr| {
            let row: SparseRow = e.compacted().into_iter().map(|(i, c)| (i, -c)).collect();
            prog.cone_rows.push(row);
            prog.cone_rhs.push(e.constant);
        };
        if !self.nonneg.is_empty() {
            for e in &self.nonneg {
                push_expr(&mut prog, e);
            }
            prog.cones.push(ConeSpec::NonNeg(self.nonneg.len()));
        }
        for block in &self.soc {
            for e in block {
                push_expr(&mut prog, e);
            }
            prog.cones.push(ConeSpec::Soc(block.len()));
        }
        for (order, entries) in &self.psd {
            for e in entries {
                push_expr(&mut prog, e);
            }
            prog.cones.push(ConeSpec::Psd(*order));
        }
        prog
    }

    /// Build and solve; see [`super::solver::solve_conic`].
    pub fn solve(&self, tol: f64) -> Result<super::solver::Solution, super::solver::SolverError> {
        super::solver::solve_conic(&self.build(), tol)
    }
}
