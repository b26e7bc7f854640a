//! Evaluation of formula pipelines on a discretization.
//!
//! Stack values are either per-triangle constants or reduced P1 section
//! coordinates. Matrix fibers use the Hermitian coordinates of the End E or
//! Ad E holonomy action. Two-forms are stored by their Hodge duals with the
//! orientation `i dz̄∧dz = 2 dx∧dy`: a coefficient `c` of `dz̄∧dz` has dual
//! `−2ic/λ`, so `i∫tr(α∧β̄ᵀ)` is the mass inner product of (0,1)-forms.

use super::ir::{FiberTy, FormulaIR, Slot, Storage, Term, Token, TraceSector, Ty};
use crate::bundle::CMat;
use crate::calculus::{Coeff, DiscreteOperator, Discretization, Field, FormKind};
use crate::error::{Error, Result};
use crate::harmonic::{HarmonicBasis, HarmonicKind, TangentVector};
use crate::linalg::ZERO;
use crate::spectral::Delta0Reading;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::{Arc, Mutex};

const I: C64 = C64::new(0.0, 1.0);

/// Interpretation switches of the formulas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorOptions {
    /// Shift `c` of the resolvent `(Δ₀ + c)⁻¹`.
    pub shift: f64,
    /// Reading of the Laplacian inverted in the last metric term.
    pub delta0: Delta0Reading,
    /// Declared term variants substituted for the transcription, by label
    /// such as `metric.4[minus_mu_derivative]`.
    #[serde(default)]
    pub variants: Vec<String>,
}

impl Default for TensorOptions {
    fn default() -> Self {
        Self { shift: 0.5, delta0: Delta0Reading::Functions, variants: Vec::new() }
    }
}

/// Discretization, harmonic bases and cached operators.
pub struct TensorContext<'a> {
    pub disc: &'a Discretization,
    pub tx: &'a HarmonicBasis,
    pub e: &'a HarmonicBasis,
    pub options: TensorOptions,
    ops: Mutex<HashMap<String, Arc<DiscreteOperator>>>,
}

impl<'a> TensorContext<'a> {
    pub fn new(disc: &'a Discretization, tx: &'a HarmonicBasis, e: &'a HarmonicBasis, options: TensorOptions) -> Result<Self> {
        if tx.kind != HarmonicKind::TX {
            return Err(Error::kind_mismatch(FormKind::BELTRAMI, tx.field_kind()));
        }
        if !matches!(e.kind, HarmonicKind::EndE | HarmonicKind::AdE) {
            return Err(Error::kind_mismatch(FormKind::form01(Coeff::EndE), e.field_kind()));
        }
        Ok(Self { disc, tx, e, options, ops: Mutex::new(HashMap::new()) })
    }

    /// Fiber of the bundle-valued slots.
    pub fn nu_fiber(&self) -> FiberTy {
        if self.e.kind == HarmonicKind::AdE {
            FiberTy::Ad
        } else {
            FiberTy::End
        }
    }

    pub fn nu_coeff(&self) -> Coeff {
        self.e.field_kind().coeff
    }

    /// Dimension of the combined basis, TX elements first.
    pub fn combined_dim(&self) -> usize {
        self.tx.dim() + self.e.dim()
    }

    /// Element `k` of the combined basis.
    pub fn combined_element(&self, k: usize) -> TangentVector {
        let zero = TangentVector::zero(self.disc, self.nu_coeff());
        if k < self.tx.dim() {
            TangentVector::new(self.tx.elements[k].clone(), zero.nu)
        } else {
            TangentVector::new(zero.mu, self.e.elements[k - self.tx.dim()].clone())
        }
    }

    pub fn combined_basis(&self) -> Vec<TangentVector> {
        (0..self.combined_dim()).map(|k| self.combined_element(k)).collect()
    }

    fn op(&self, key: &str, build: impl FnOnce() -> Result<DiscreteOperator>) -> Result<Arc<DiscreteOperator>> {
        if let Some(o) = self.ops.lock().unwrap().get(key) {
            return Ok(o.clone());
        }
        let o = Arc::new(build()?);
        self.ops.lock().unwrap().insert(key.to_string(), o.clone());
        Ok(o)
    }

    fn dbar_op(&self, c: Coeff) -> Result<Arc<DiscreteOperator>> {
        self.op(&format!("dbar{c:?}"), || self.disc.dbar(FormKind::function(c)))
    }
    fn partial_op(&self, c: Coeff) -> Result<Arc<DiscreteOperator>> {
        self.op(&format!("partial{c:?}"), || self.disc.partial(FormKind::function(c)))
    }
    fn dbar_adj_op(&self, c: Coeff) -> Result<Arc<DiscreteOperator>> {
        let d = self.dbar_op(c)?;
        self.op(&format!("dbar*{c:?}"), || Ok(self.disc.adjoint(&d)))
    }
    fn partial_adj_op(&self, c: Coeff) -> Result<Arc<DiscreteOperator>> {
        let d = self.partial_op(c)?;
        self.op(&format!("partial*{c:?}"), || Ok(self.disc.adjoint(&d)))
    }
    fn laplacian_op(&self, c: Coeff) -> Result<Arc<DiscreteOperator>> {
        self.op(&format!("lap{c:?}"), || self.disc.laplacian(FormKind::function(c)))
    }

    fn trace_basis(&self, sector: TraceSector) -> &HarmonicBasis {
        match sector {
            TraceSector::Tx => self.tx,
            TraceSector::End => self.e,
        }
    }
}

// ---------------------------------------------------------------------------
// values

#[derive(Clone, Debug)]
enum Data {
    Tri(Vec<C64>),
    Vert(Field),
}

#[derive(Clone, Debug)]
struct Val {
    ty: Ty,
    data: Data,
}

#[derive(Clone, Debug)]
enum V {
    Zero,
    Num(C64),
    F(Val),
}

fn fiber_coeff(f: FiberTy) -> Coeff {
    match f {
        FiberTy::Scalar => Coeff::Trivial,
        FiberTy::End => Coeff::EndE,
        FiberTy::Ad => Coeff::AdE,
    }
}

/// Section bundle of a vertex value.
fn vertex_coeff(ty: Ty) -> Coeff {
    if ty.fiber == FiberTy::Scalar && ty.weight() == (-1, 0) {
        Coeff::TX
    } else {
        fiber_coeff(ty.fiber)
    }
}

fn fiber_of_coeff(c: Coeff) -> FiberTy {
    match c {
        Coeff::EndE => FiberTy::End,
        Coeff::AdE => FiberTy::Ad,
        _ => FiberTy::Scalar,
    }
}

fn internal(msg: impl Into<String>) -> Error {
    Error::FormulaType { term: String::new(), message: msg.into() }
}

impl TensorContext<'_> {
    fn fd(&self, f: FiberTy) -> usize {
        self.disc.fiber_dim(fiber_coeff(f))
    }

    fn matrices(&self, f: FiberTy, vals: &[C64]) -> Vec<CMat> {
        let act = self.disc.action(fiber_coeff(f));
        vals.chunks(act.dim()).map(|c| act.to_matrix(c)).collect()
    }

    fn coords(&self, f: FiberTy, ms: &[CMat]) -> Vec<C64> {
        let act = self.disc.action(fiber_coeff(f));
        ms.iter().flat_map(|m| act.from_matrix(m)).collect()
    }

    fn tri_values(&self, v: &Val) -> Result<Vec<C64>> {
        match &v.data {
            Data::Tri(x) => Ok(x.clone()),
            Data::Vert(f) => self.disc.section_on_triangles(f),
        }
    }

    fn vert_field(&self, v: &Val) -> Field {
        match &v.data {
            Data::Vert(f) => f.clone(),
            Data::Tri(x) => self.disc.section_from_triangles(vertex_coeff(v.ty), x),
        }
    }

    /// Ad E coordinates embedded in End E (trace coordinate zero).
    fn promote(&self, f: FiberTy, vals: Vec<C64>) -> Vec<C64> {
        if f != FiberTy::Ad {
            return vals;
        }
        let d = self.fd(FiberTy::Ad);
        vals.chunks(d).flat_map(|c| std::iter::once(ZERO).chain(c.iter().copied())).collect()
    }

    /// End E coordinates restricted to the trace-free part.
    fn demote(&self, vals: Vec<C64>) -> Vec<C64> {
        let d = self.fd(FiberTy::End);
        vals.chunks(d).flat_map(|c| c[1..].to_vec()).collect()
    }

    fn trace_of(&self, f: FiberTy, coords: &[C64]) -> C64 {
        match f {
            FiberTy::Scalar => coords[0],
            _ => self.disc.action(fiber_coeff(f)).to_matrix(coords).trace(),
        }
    }

    /// Pointwise product or commutator of two per-triangle values.
    fn pointwise(&self, fx: FiberTy, x: &[C64], fy: FiberTy, y: &[C64], commutator: bool) -> (FiberTy, Vec<C64>) {
        let nt = self.disc.mesh.num_triangles();
        match (fx.is_matrix(), fy.is_matrix()) {
            (false, false) => (FiberTy::Scalar, x.iter().zip(y).map(|(a, b)| a * b).collect()),
            (false, true) => {
                let d = self.fd(fy);
                (fy, y.iter().enumerate().map(|(i, b)| b * x[i / d]).collect())
            }
            (true, false) => {
                let d = self.fd(fx);
                (fx, x.iter().enumerate().map(|(i, a)| a * y[i / d]).collect())
            }
            (true, true) => {
                let (mx, my) = (self.matrices(fx, x), self.matrices(fy, y));
                let prod: Vec<CMat> = (0..nt)
                    .map(|t| if commutator { &mx[t] * &my[t] - &my[t] * &mx[t] } else { &mx[t] * &my[t] })
                    .collect();
                let out = if commutator && fx == FiberTy::Ad && fy == FiberTy::Ad { FiberTy::Ad } else { FiberTy::End };
                (out, self.coords(out, &prod))
            }
        }
    }

    fn multiply(&self, x: &Val, y: &Val, commutator: bool) -> Result<Val> {
        let out = super::ir::binary_ty(if commutator { Token::Bracket } else { Token::Mul }, x.ty, y.ty)
            .ok_or_else(|| internal(format!("product of {:?} and {:?}", x.ty, y.ty)))?;
        let (xv, yv) = (self.tri_values(x)?, self.tri_values(y)?);
        let (fiber, mut vals) = self.pointwise(x.ty.fiber, &xv, y.ty.fiber, &yv, commutator);
        let one_forms = matches!((x.ty.weight(), y.ty.weight()), ((1, 0), (0, 1)) | ((0, 1), (1, 0)));
        if one_forms {
            // coefficient of dz̄∧dz, then its dual −2ic/λ
            let sign = if x.ty.weight() == (1, 0) { -1.0 } else { 1.0 };
            let d = self.fd(fiber);
            for (i, v) in vals.iter_mut().enumerate() {
                *v *= -2.0 * I * sign / self.disc.mesh.tri_density[i / d];
            }
        }
        Ok(Val { ty: Ty { fiber, ..out }, data: Data::Tri(vals) })
    }

    fn add(&self, x: &Val, y: &Val) -> Result<Val> {
        let out = super::ir::binary_ty(Token::Add, x.ty, y.ty).ok_or_else(|| internal(format!("sum of {:?} and {:?}", x.ty, y.ty)))?;
        let fiber = x.ty.fiber.join(y.ty.fiber);
        let ty = Ty { fiber, ..out };
        let get = |v: &Val| -> Result<Vec<C64>> {
            let raw = match out.storage {
                Storage::Triangle => self.tri_values(v)?,
                Storage::Vertex => self.vert_field(v).values,
            };
            Ok(if v.ty.fiber != fiber { self.promote(v.ty.fiber, raw) } else { raw })
        };
        let vals: Vec<C64> = get(x)?.iter().zip(get(y)?).map(|(a, b)| a + b).collect();
        let data = match out.storage {
            Storage::Triangle => Data::Tri(vals),
            Storage::Vertex => Data::Vert(Field { kind: FormKind::function(vertex_coeff(ty)), values: vals }),
        };
        Ok(Val { ty, data })
    }

    fn map_values(v: &Val, f: impl Fn(usize, C64) -> C64) -> Data {
        match &v.data {
            Data::Tri(x) => Data::Tri(x.iter().enumerate().map(|(i, &a)| f(i, a)).collect()),
            Data::Vert(fl) => Data::Vert(Field { kind: fl.kind, values: fl.values.iter().enumerate().map(|(i, &a)| f(i, a)).collect() }),
        }
    }

    fn apply_op(&self, op: &DiscreteOperator, kind: FormKind, vals: Vec<C64>) -> Result<Vec<C64>> {
        Ok(op.apply(&Field { kind, values: vals })?.values)
    }

    fn unary(&self, tok: Token, x: &Val) -> Result<Val> {
        let t = x.ty;
        let out = super::ir::unary_ty(tok, t).ok_or_else(|| internal(format!("{tok:?} on {t:?}")))?;
        let fc = fiber_coeff(t.fiber);
        let tri = |ty: Ty, v: Vec<C64>| Val { ty, data: Data::Tri(v) };
        let vert = |ty: Ty, f: Field| Val { ty, data: Data::Vert(f) };
        Ok(match tok {
            Token::Conj => Val { ty: out, data: Self::map_values(x, |_, a| a.conj()) },
            Token::Scale { re, im } => Val { ty: out, data: Self::map_values(x, |_, a| a * C64::new(re, im)) },
            Token::Partial | Token::Dbar => {
                let hol = tok == Token::Partial;
                match t.weight() {
                    (0, 0) | (-1, 0) => {
                        let f = self.vert_field(x);
                        let op = if hol { self.partial_op(f.kind.coeff)? } else { self.dbar_op(f.kind.coeff)? };
                        tri(out, op.apply(&f)?.values)
                    }
                    _ => {
                        // ∂ of a (0,1)-form is −i ∂̄* of it, ∂̄ of a (1,0)-form is i ∂*
                        let (op, s) = if hol { (self.dbar_adj_op(fc)?, -I) } else { (self.partial_adj_op(fc)?, I) };
                        let kind = op.domain;
                        let v = self.apply_op(&op, kind, self.tri_values(x)?)?;
                        vert(out, Field { kind: FormKind::function(fc), values: v.iter().map(|a| a * s).collect() })
                    }
                }
            }
            Token::PartialAdj | Token::DbarAdj => {
                let coeff = if t.fiber == FiberTy::Scalar && matches!(t.weight(), (0, 0) | (-1, 1)) { Coeff::TX } else { fc };
                let op = if tok == Token::PartialAdj { self.partial_adj_op(coeff)? } else { self.dbar_adj_op(coeff)? };
                let v = self.apply_op(&op, op.domain, self.tri_values(x)?)?;
                vert(out, Field { kind: FormKind::function(coeff), values: v })
            }
            Token::Star => {
                let s = match t.weight() {
                    (0, 1) | (-1, 1) => I,
                    (1, 0) | (1, -1) => -I,
                    _ => C64::new(1.0, 0.0),
                };
                Val { ty: out, data: Self::map_values(x, |_, a| a * s) }
            }
            Token::Green | Token::GreenShifted { .. } => {
                let shift = if let Token::GreenShifted { shift } = tok { shift } else { 0.0 };
                let f = self.vert_field(x);
                let lap = self.laplacian_op(f.kind.coeff)?;
                vert(out, self.disc.green_apply(&lap, &f, shift)?)
            }
            Token::ProjTx => {
                let f = Field { kind: FormKind::BELTRAMI, values: self.tri_values(x)? };
                tri(out, self.tx.project(self.disc, &f)?.values)
            }
            Token::ProjEnd | Token::ProjEndBar => {
                let bar = tok == Token::ProjEndBar;
                let mut v = self.tri_values(x)?;
                if bar {
                    v.iter_mut().for_each(|a| *a = a.conj());
                }
                let target = self.nu_fiber();
                v = match (t.fiber, target) {
                    (FiberTy::Ad, FiberTy::End) => self.promote(FiberTy::Ad, v),
                    (FiberTy::End, FiberTy::Ad) => self.demote(v),
                    _ => v,
                };
                let mut p = self.e.project(self.disc, &Field { kind: self.e.field_kind(), values: v })?.values;
                if bar {
                    p.iter_mut().for_each(|a| *a = a.conj());
                }
                tri(Ty { fiber: target, ..out }, p)
            }
            Token::InverseMetric => {
                let d = self.fd(t.fiber);
                let v = self.tri_values(x)?;
                tri(out, v.iter().enumerate().map(|(i, a)| a / self.disc.mesh.tri_density[i / d]).collect())
            }
            Token::InverseDensity => {
                let d = self.fd(t.fiber);
                match &x.data {
                    Data::Tri(_) => Val { ty: out, data: Self::map_values(x, |i, a| a / self.disc.mesh.tri_density[i / d]) },
                    Data::Vert(_) => {
                        let mesh = &self.disc.mesh;
                        Val { ty: out, data: Self::map_values(x, |i, a| a / mesh.density[self.disc.reps[i / d]]) }
                    }
                }
            }
            Token::Metric => Val { ty: out, data: Self::map_values(x, |_, a| a * C64::new(0.0, -2.0)) },
            other => return Err(internal(format!("{other:?} is not unary"))),
        })
    }

    fn integrate(&self, x: &Val) -> Result<C64> {
        if !x.ty.is_two_form() {
            return Err(internal(format!("integral of {:?}", x.ty)));
        }
        let d = self.fd(x.ty.fiber);
        let mesh = &self.disc.mesh;
        Ok(match &x.data {
            Data::Tri(v) => v.chunks(d).enumerate().map(|(t, c)| self.trace_of(x.ty.fiber, c) * (mesh.tri_density[t] * mesh.tri_area[t])).sum(),
            Data::Vert(f) => {
                let m = self.disc.mass(f.kind);
                f.values.chunks(d).enumerate().map(|(r, c)| self.trace_of(x.ty.fiber, c) * m[r * d]).sum()
            }
        })
    }

    /// `⋆ad ν⋆ α = −(ad ν)*α`, the section `−2[ν*, α]/λ` projected to P1.
    fn star_ad_star(&self, nu: &Val, a: &Val) -> Result<Val> {
        let out = super::ir::binary_ty(Token::StarAdStar, nu.ty, a.ty).ok_or_else(|| internal("⋆ad⋆ operands"))?;
        let nv: Vec<C64> = self.tri_values(nu)?.iter().map(|c| c.conj()).collect();
        let (fiber, vals) = self.pointwise(nu.ty.fiber, &nv, a.ty.fiber, &self.tri_values(a)?, true);
        let d = self.fd(fiber);
        let scaled: Vec<C64> = vals.iter().enumerate().map(|(i, v)| v * (-2.0 / self.disc.mesh.tri_density[i / d])).collect();
        let f = self.disc.section_from_triangles(fiber_coeff(fiber), &scaled);
        Ok(Val { ty: Ty { fiber, ..out }, data: Data::Vert(f) })
    }
}

// ---------------------------------------------------------------------------
// pipeline evaluation

struct Node {
    tok: Token,
    args: Vec<usize>,
    /// Bit `k` for tangent slot `k`, bit 4 for the trace argument.
    deps: u8,
}

/// Pipeline as an expression tree in postfix order.
struct Tree {
    nodes: Vec<Node>,
    root: usize,
}

fn build_tree(term: &Term) -> Result<Tree> {
    let mut nodes: Vec<Node> = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    for &tok in &term.pipeline {
        let k = super::ir::arity(tok);
        if stack.len() < k {
            return Err(Error::FormulaType { term: term.label.clone(), message: "stack underflow".into() });
        }
        let args = stack.split_off(stack.len() - k);
        let deps = match tok {
            Token::Push(s) => s.tangent().map(|(i, _)| 1u8 << i).unwrap_or(1 << 4),
            _ => args.iter().fold(0, |m, &a| m | nodes[a].deps),
        };
        nodes.push(Node { tok, args, deps });
        stack.push(nodes.len() - 1);
    }
    match stack[..] {
        [root] => Ok(Tree { nodes, root }),
        _ => Err(Error::FormulaType { term: term.label.clone(), message: "pipeline leaves more than one value".into() }),
    }
}

/// Slot bindings: per tangent slot an index into a table of tangent
/// vectors, plus the trace argument.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct Key {
    node: usize,
    idx: [u8; 5],
}

/// Memoizing evaluator of one term over a table of tangent vectors.
pub struct TermEvaluator<'c, 'a> {
    ctx: &'c TensorContext<'a>,
    term: Term,
    tree: Tree,
    nu_fiber: FiberTy,
    table: Vec<(Option<Field>, Option<Field>)>,
    memo: HashMap<Key, Rc<V>>,
}

fn nonzero(f: &Field) -> Option<Field> {
    f.values.iter().any(|v| *v != ZERO).then(|| f.clone())
}

impl<'c, 'a> TermEvaluator<'c, 'a> {
    pub fn new(ctx: &'c TensorContext<'a>, term: &Term, table: &[TangentVector]) -> Result<Self> {
        super::ir::type_check_term(term, ctx.nu_fiber())?;
        let tree = build_tree(term)?;
        let table = table.iter().map(|t| (nonzero(&t.mu), nonzero(&t.nu))).collect();
        Ok(Self { ctx, term: term.clone(), tree, nu_fiber: ctx.nu_fiber(), table, memo: HashMap::new() })
    }

    /// Tangent slots `(index, is_beltrami)` read by the term.
    pub fn slots(&self) -> Vec<(usize, bool)> {
        self.term.slots()
    }

    /// Value of the term (coefficient included) with tangent slot `k` bound
    /// to table entry `idx[k]`.
    pub fn eval(&mut self, idx: [usize; 4]) -> Result<C64> {
        let label = self.term.label.clone();
        let wrap = |e: Error| match e {
            Error::SolverBreakdown { iterations, residual } => Error::SolverBreakdown { iterations, residual },
            Error::FormulaType { message, .. } => Error::FormulaType { term: label.clone(), message },
            other => other,
        };
        let mut id = [255u8; 5];
        for k in 0..4 {
            id[k] = idx[k] as u8;
        }
        let total = match self.term.trace {
            None => self.value(self.tree.root, id).map_err(wrap)?,
            Some(sector) => {
                let dim = self.ctx.trace_basis(sector).dim();
                let mut s = ZERO;
                for i in 0..dim {
                    id[4] = i as u8;
                    s += self.value(self.tree.root, id).map_err(wrap)?;
                }
                s
            }
        };
        Ok(total * self.term.coefficient())
    }

    fn value(&mut self, node: usize, id: [u8; 5]) -> Result<C64> {
        match &*self.node_value(node, id)? {
            V::Zero => Ok(ZERO),
            V::Num(c) => Ok(*c),
            V::F(v) => Err(internal(format!("pipeline ends with a field of type {:?}", v.ty))),
        }
    }

    fn node_value(&mut self, node: usize, id: [u8; 5]) -> Result<Rc<V>> {
        let deps = self.tree.nodes[node].deps;
        let mut kid = [255u8; 5];
        for (k, slot) in kid.iter_mut().enumerate() {
            if deps & (1 << k) != 0 {
                *slot = id[k];
            }
        }
        let key = Key { node, idx: kid };
        let memoize = deps.count_ones() <= 2 && !matches!(self.tree.nodes[node].tok, Token::Push(_));
        if memoize {
            if let Some(v) = self.memo.get(&key) {
                return Ok(v.clone());
            }
        }
        let v = Rc::new(self.compute(node, id)?);
        if memoize {
            self.memo.insert(key, v.clone());
        }
        Ok(v)
    }

    fn push(&self, slot: Slot, id: [u8; 5]) -> Result<V> {
        let ty = super::ir::slot_ty(slot, self.nu_fiber, self.term.trace)?;
        let field = match slot.tangent() {
            Some((k, mu)) => {
                let (m, n) = &self.table[id[k] as usize];
                if mu { m.clone() } else { n.clone() }
            }
            None => {
                let basis = self.ctx.trace_basis(self.term.trace.expect("checked trace term"));
                Some(basis.elements[id[4] as usize].clone())
            }
        };
        Ok(match field {
            None => V::Zero,
            Some(f) => V::F(Val { ty: Ty { fiber: fiber_of_coeff(f.kind.coeff), ..ty }, data: Data::Tri(f.values) }),
        })
    }

    fn compute(&mut self, node: usize, id: [u8; 5]) -> Result<V> {
        let tok = self.tree.nodes[node].tok;
        let args = self.tree.nodes[node].args.clone();
        if let Token::Push(s) = tok {
            return self.push(s, id);
        }
        let vals: Vec<Rc<V>> = args.iter().map(|&a| self.node_value(a, id)).collect::<Result<_>>()?;
        let ctx = self.ctx;
        Ok(match (tok, &vals[..]) {
            (Token::Add, [a, b]) => match (&**a, &**b) {
                (V::Zero, x) | (x, V::Zero) => x.clone(),
                (V::Num(x), V::Num(y)) => V::Num(x + y),
                (V::F(x), V::F(y)) => V::F(ctx.add(x, y)?),
                _ => return Err(internal("sum of a number and a field")),
            },
            (Token::Mul | Token::Bracket, [a, b]) => match (&**a, &**b) {
                (V::F(x), V::F(y)) => V::F(ctx.multiply(x, y, tok == Token::Bracket)?),
                _ => V::Zero,
            },
            (Token::StarAdStar, [a, b]) => match (&**a, &**b) {
                (V::F(x), V::F(y)) => V::F(ctx.star_ad_star(x, y)?),
                _ => V::Zero,
            },
            (Token::Integrate, [a]) => match &**a {
                V::F(x) => V::Num(ctx.integrate(x)?),
                _ => V::Num(ZERO),
            },
            (Token::Scale { re, im }, [a]) => match &**a {
                V::Num(x) => V::Num(x * C64::new(re, im)),
                V::F(x) => V::F(ctx.unary(tok, x)?),
                V::Zero => V::Zero,
            },
            (_, [a]) => match &**a {
                V::F(x) => V::F(ctx.unary(tok, x)?),
                V::Zero => V::Zero,
                V::Num(_) => return Err(internal(format!("{tok:?} applied to a number"))),
            },
            _ => return Err(internal(format!("{tok:?} with {} operands", vals.len()))),
        })
    }
}

/// Value of a formula with its per-term breakdown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormulaValue {
    pub total: C64,
    pub terms: Vec<(String, C64)>,
}

/// Evaluates every term of a formula with tangent slot `k` bound to
/// `slots[k]` (missing slots are zero).
pub fn evaluate_formula(ctx: &TensorContext, formula: &FormulaIR, slots: &[&TangentVector]) -> Result<FormulaValue> {
    let zero = TangentVector::zero(ctx.disc, ctx.nu_coeff());
    let table: Vec<TangentVector> = (0..4).map(|k| slots.get(k).map(|t| (*t).clone()).unwrap_or_else(|| zero.clone())).collect();
    let mut terms = Vec::with_capacity(formula.terms.len());
    let mut total = ZERO;
    for term in &formula.terms {
        let v = TermEvaluator::new(ctx, term, &table)?.eval([0, 1, 2, 3])?;
        total += v;
        terms.push((term.label.clone(), v));
    }
    Ok(FormulaValue { total, terms })
}
