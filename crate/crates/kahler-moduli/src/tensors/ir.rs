//! Formula intermediate representation.
//!
//! A formula is a list of terms. Each term is a complex coefficient times a
//! postfix pipeline of tokens evaluated on a typed stack. Values carry their
//! tensor weight `(a, b)` in `dz^a dz̄^b`, their fiber and their storage
//! (P1 vertex values or per-triangle constants). Two-forms are stored by
//! their Hodge duals. Trace terms evaluate `tr(F P) = Σᵢ ⟨F eᵢ, eᵢ⟩` by
//! binding the argument slot to each element of a harmonic basis.

use crate::error::{Error, Result};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

/// Current version of the serialized formula documents.
pub const FORMULA_VERSION: u32 = 1;

/// Named inputs of a pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Slot {
    Mu1,
    Mu2,
    Mu3,
    Mu4,
    Nu1,
    Nu2,
    Nu3,
    Nu4,
    /// The basis element bound by a trace term.
    Arg,
}

impl Slot {
    pub const MUS: [Slot; 4] = [Slot::Mu1, Slot::Mu2, Slot::Mu3, Slot::Mu4];
    pub const NUS: [Slot; 4] = [Slot::Nu1, Slot::Nu2, Slot::Nu3, Slot::Nu4];

    /// Tangent slot index 0..4 and whether it is the Beltrami part.
    pub fn tangent(self) -> Option<(usize, bool)> {
        match self {
            Slot::Mu1 => Some((0, true)),
            Slot::Mu2 => Some((1, true)),
            Slot::Mu3 => Some((2, true)),
            Slot::Mu4 => Some((3, true)),
            Slot::Nu1 => Some((0, false)),
            Slot::Nu2 => Some((1, false)),
            Slot::Nu3 => Some((2, false)),
            Slot::Nu4 => Some((3, false)),
            Slot::Arg => None,
        }
    }
}

/// Pipeline tokens. Unary tokens act on the top of the stack, binary tokens
/// pop `b` then `a` and push the result of `a ∘ b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Token {
    Push(Slot),
    /// Pointwise conjugate transpose, swapping the weights.
    Conj,
    /// Pointwise product; two one-forms of opposite type give a two-form.
    Mul,
    /// Pointwise commutator `[a, b]` of matrix-valued values (graded for
    /// one-forms).
    Bracket,
    Add,
    Scale { re: f64, im: f64 },
    Partial,
    PartialAdj,
    Dbar,
    DbarAdj,
    Star,
    /// `Δ⁻¹`, the Green operator of `∂̄*∂̄` on sections.
    Green,
    /// `(Δ + c)⁻¹`.
    GreenShifted { shift: f64 },
    ProjTx,
    ProjEnd,
    /// Projection onto harmonic (1,0)-forms.
    ProjEndBar,
    /// `⋆ ad a ⋆ b`, evaluated as `−(ad a)* b`: the star pair acts through the
    /// conjugate transpose of `a`, so `−⋆ad ν⋆` is the adjoint of `ad ν`.
    StarAdStar,
    /// Pointwise inverse metric tensor `g̃⁻¹`, weight `(−1, −1)`.
    InverseMetric,
    /// Division by the metric density, weight preserving.
    InverseDensity,
    /// Multiplication by the metric two-form `g̃`.
    Metric,
    /// `∫ tr(·)` of a two-form.
    Integrate,
}

impl Token {
    pub fn neg() -> Token {
        Token::Scale { re: -1.0, im: 0.0 }
    }
}

/// Basis summed over by a trace term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSector {
    Tx,
    End,
}

/// Whether a trace term sums `⟨F eᵢ, eᵢ⟩` or its conjugate `⟨eᵢ, F eᵢ⟩` is
/// decided by the pipeline itself; the sector only names the basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub label: String,
    pub re: f64,
    pub im: f64,
    pub pipeline: Vec<Token>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<TraceSector>,
    /// Alternative readings explored by the audit; never used by default.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<Variant>,
}

/// An alternative pipeline for a term, such as a flipped inner sign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub label: String,
    pub pipeline: Vec<Token>,
}

impl Term {
    /// The term with its pipeline replaced by variant `k`.
    pub fn with_variant(&self, k: usize) -> Term {
        let v = &self.variants[k];
        Term {
            label: format!("{}[{}]", self.label, v.label),
            pipeline: v.pipeline.clone(),
            variants: Vec::new(),
            ..self.clone()
        }
    }

    /// Adds a variant reading.
    pub fn variant(mut self, label: &str, body: Ex) -> Term {
        self.variants.push(Variant { label: label.into(), pipeline: body.compile() });
        self
    }

    pub fn coefficient(&self) -> C64 {
        C64::new(self.re, self.im)
    }

    /// Tangent slots read by the pipeline, as `(index, is_beltrami)`.
    pub fn slots(&self) -> Vec<(usize, bool)> {
        let mut out: Vec<(usize, bool)> = self
            .pipeline
            .iter()
            .filter_map(|t| match t {
                Token::Push(s) => s.tangent(),
                _ => None,
            })
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

/// A versioned formula document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormulaIR {
    pub format: String,
    pub version: u32,
    pub name: String,
    /// Short quote identifying the display this formula transcribes.
    pub anchor: String,
    pub terms: Vec<Term>,
}

impl FormulaIR {
    pub fn new(name: &str, anchor: &str, terms: Vec<Term>) -> Self {
        Self { format: "kahler-moduli/formula".into(), version: FORMULA_VERSION, name: name.into(), anchor: anchor.into(), terms }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("formula serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: FormulaIR = serde_json::from_str(s)?;
        if f.format != "kahler-moduli/formula" || f.version != FORMULA_VERSION {
            return Err(Error::Format(format!("unsupported formula document {} v{}", f.format, f.version)));
        }
        Ok(f)
    }

    /// Labels of every declared variant, as `term[variant]`.
    pub fn variant_labels(&self) -> Vec<String> {
        self.terms.iter().flat_map(|t| (0..t.variants.len()).map(move |k| t.with_variant(k).label)).collect()
    }

    /// The formula with the listed variants substituted. Labels naming
    /// variants of other formulas are ignored.
    pub fn with_variants(&self, labels: &[String]) -> FormulaIR {
        let mut f = self.clone();
        for t in f.terms.iter_mut() {
            if let Some(k) = (0..t.variants.len()).find(|&k| labels.contains(&t.with_variant(k).label)) {
                let label = t.label.clone();
                *t = Term { label, ..t.with_variant(k) };
            }
        }
        f
    }

    pub fn term(&self, label: &str) -> Option<&Term> {
        self.terms.iter().find(|t| t.label == label)
    }

    /// Type-checks every term.
    pub fn type_check(&self, nu_fiber: FiberTy) -> Result<()> {
        for t in &self.terms {
            type_check_term(t, nu_fiber)?;
            for k in 0..t.variants.len() {
                type_check_term(&t.with_variant(k), nu_fiber)?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// types

/// Fiber of a value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FiberTy {
    Scalar,
    End,
    Ad,
}

impl FiberTy {
    pub fn is_matrix(self) -> bool {
        self != FiberTy::Scalar
    }

    /// Fiber of a product or sum of two matrix values.
    pub fn join(self, o: FiberTy) -> FiberTy {
        match (self, o) {
            (FiberTy::Scalar, x) | (x, FiberTy::Scalar) => x,
            (FiberTy::Ad, FiberTy::Ad) => FiberTy::Ad,
            _ => FiberTy::End,
        }
    }
}

/// Storage of a value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Storage {
    Vertex,
    Triangle,
}

/// Type of a stack value. Weight `(1, 1)` always denotes a two-form stored by
/// its Hodge dual.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ty {
    pub a: i8,
    pub b: i8,
    pub fiber: FiberTy,
    pub storage: Storage,
}

impl Ty {
    pub const fn tri(a: i8, b: i8, fiber: FiberTy) -> Self {
        Ty { a, b, fiber, storage: Storage::Triangle }
    }
    pub const fn vert(a: i8, b: i8, fiber: FiberTy) -> Self {
        Ty { a, b, fiber, storage: Storage::Vertex }
    }
    pub fn weight(&self) -> (i8, i8) {
        (self.a, self.b)
    }
    pub fn is_two_form(&self) -> bool {
        self.weight() == (1, 1)
    }
    /// Values with a P1 representation: functions, vector fields and duals
    /// of two-forms.
    pub fn is_function_like(&self) -> bool {
        matches!(self.weight(), (0, 0) | (1, 1)) || (self.weight() == (-1, 0) && self.fiber == FiberTy::Scalar)
    }
}

/// Type of a tangent slot.
pub fn slot_ty(slot: Slot, nu_fiber: FiberTy, trace: Option<TraceSector>) -> Result<Ty> {
    Ok(match slot {
        Slot::Mu1 | Slot::Mu2 | Slot::Mu3 | Slot::Mu4 => Ty::tri(-1, 1, FiberTy::Scalar),
        Slot::Nu1 | Slot::Nu2 | Slot::Nu3 | Slot::Nu4 => Ty::tri(0, 1, nu_fiber),
        Slot::Arg => match trace {
            Some(TraceSector::Tx) => Ty::tri(-1, 1, FiberTy::Scalar),
            Some(TraceSector::End) => Ty::tri(0, 1, nu_fiber),
            None => return Err(Error::FormulaType { term: String::new(), message: "argument slot outside a trace term".into() }),
        },
    })
}

/// Output type of a unary token, or `None` when the token does not apply.
pub fn unary_ty(tok: Token, t: Ty) -> Option<Ty> {
    use Storage::*;
    let (a, b) = t.weight();
    match tok {
        Token::Conj => Some(Ty { a: b, b: a, ..t }),
        Token::Scale { .. } => Some(t),
        Token::Partial => match (t.storage, a, b) {
            (_, 0, 0) | (Vertex, -1, 0) if t.is_function_like() || t.fiber.is_matrix() => Some(Ty::tri(a + 1, 0, t.fiber)),
            (Triangle, 0, 1) => Some(Ty::vert(1, 1, t.fiber)),
            _ => None,
        },
        Token::Dbar => match (t.storage, a, b) {
            (_, 0, 0) | (Vertex, -1, 0) if t.is_function_like() || t.fiber.is_matrix() => Some(Ty::tri(a, 1, t.fiber)),
            (Triangle, 1, 0) => Some(Ty::vert(1, 1, t.fiber)),
            _ => None,
        },
        Token::PartialAdj => match (t.storage, a, b) {
            (Triangle, 1, 0) => Some(Ty::vert(0, 0, t.fiber)),
            (Triangle, 0, 0) if t.fiber == FiberTy::Scalar => Some(Ty::vert(-1, 0, FiberTy::Scalar)),
            _ => None,
        },
        Token::DbarAdj => match (t.storage, a, b) {
            (Triangle, 0, 1) => Some(Ty::vert(0, 0, t.fiber)),
            (Triangle, -1, 1) if t.fiber == FiberTy::Scalar => Some(Ty::vert(-1, 0, FiberTy::Scalar)),
            _ => None,
        },
        Token::Star => match (a, b) {
            (0, 1) | (-1, 1) | (1, 0) | (1, -1) => Some(t),
            (1, 1) => Some(Ty { a: 0, b: 0, ..t }),
            (0, 0) => Some(Ty { a: 1, b: 1, ..t }),
            _ => None,
        },
        Token::Green | Token::GreenShifted { .. } => match (a, b) {
            (0, 0) => Some(Ty::vert(0, 0, t.fiber)),
            (-1, 0) if t.fiber == FiberTy::Scalar && t.storage == Vertex => Some(t),
            _ => None,
        },
        Token::ProjTx => (t.weight() == (-1, 1) && t.fiber == FiberTy::Scalar && t.storage == Triangle).then_some(t),
        Token::ProjEnd => (t.weight() == (0, 1) && t.fiber.is_matrix() && t.storage == Triangle).then_some(t),
        Token::ProjEndBar => (t.weight() == (1, 0) && t.fiber.is_matrix() && t.storage == Triangle).then_some(t),
        Token::InverseMetric => (t.storage == Triangle && !t.is_two_form()).then_some(Ty::tri(a - 1, b - 1, t.fiber)),
        Token::InverseDensity => (!t.is_two_form()).then_some(t),
        Token::Metric => (t.weight() == (0, 0)).then_some(Ty { a: 1, b: 1, ..t }),
        _ => None,
    }
}

/// Output type of a binary token.
pub fn binary_ty(tok: Token, x: Ty, y: Ty) -> Option<Ty> {
    match tok {
        Token::Mul | Token::Bracket => {
            if tok == Token::Bracket && !(x.fiber.is_matrix() && y.fiber.is_matrix()) {
                return None;
            }
            let (a, b) = (x.a + y.a, x.b + y.b);
            let one_forms = matches!((x.weight(), y.weight()), ((1, 0), (0, 1)) | ((0, 1), (1, 0)));
            let with_dual = x.is_two_form() as u8 + y.is_two_form() as u8;
            if (a, b) == (1, 1) && !one_forms && !(with_dual == 1 && (x.weight() == (0, 0) || y.weight() == (0, 0))) {
                return None;
            }
            if with_dual > 0 && (a, b) != (1, 1) {
                return None;
            }
            let fiber = if tok == Token::Bracket { x.fiber.join(y.fiber) } else if x.fiber.is_matrix() && y.fiber.is_matrix() { FiberTy::End } else { x.fiber.join(y.fiber) };
            Some(Ty::tri(a, b, fiber))
        }
        Token::Add => {
            if x.weight() != y.weight() {
                return None;
            }
            if x.fiber.is_matrix() != y.fiber.is_matrix() {
                return None;
            }
            let storage = if x.storage == y.storage {
                x.storage
            } else if x.is_function_like() {
                Storage::Vertex
            } else {
                Storage::Triangle
            };
            Some(Ty { storage, fiber: x.fiber.join(y.fiber), ..x })
        }
        Token::StarAdStar => (x.weight() == (0, 1) && y.weight() == (0, 1) && x.fiber.is_matrix() && y.fiber.is_matrix())
            .then_some(Ty::vert(0, 0, x.fiber.join(y.fiber))),
        _ => None,
    }
}

/// Number of stack operands of a token.
pub fn arity(tok: Token) -> usize {
    match tok {
        Token::Push(_) => 0,
        Token::Mul | Token::Bracket | Token::Add | Token::StarAdStar => 2,
        _ => 1,
    }
}

/// Item on the type-checking stack.
#[derive(Clone, Copy, Debug, PartialEq)]
enum TyItem {
    Value(Ty),
    Scalar,
}

/// Type-checks one term: every token must apply and the stack must end with
/// a single scalar.
pub fn type_check_term(term: &Term, nu_fiber: FiberTy) -> Result<()> {
    let err = |i: usize, m: String| Error::FormulaType { term: term.label.clone(), message: format!("token {i}: {m}") };
    let mut stack: Vec<TyItem> = Vec::new();
    for (i, &tok) in term.pipeline.iter().enumerate() {
        match tok {
            Token::Push(s) => {
                let t = slot_ty(s, nu_fiber, term.trace).map_err(|_| err(i, "argument slot outside a trace term".into()))?;
                stack.push(TyItem::Value(t));
            }
            Token::Integrate => match stack.pop() {
                Some(TyItem::Value(t)) if t.is_two_form() => stack.push(TyItem::Scalar),
                Some(TyItem::Scalar) if false => {}
                other => return Err(err(i, format!("integrate needs a two-form, found {other:?}"))),
            },
            Token::Add if matches!(stack.last(), Some(TyItem::Scalar)) => {
                let y = stack.pop();
                let x = stack.pop();
                if !matches!((x, y), (Some(TyItem::Scalar), Some(TyItem::Scalar))) {
                    return Err(err(i, "adding a scalar to a field".into()));
                }
                stack.push(TyItem::Scalar);
            }
            Token::Scale { .. } if matches!(stack.last(), Some(TyItem::Scalar)) => {}
            _ if arity(tok) == 1 => match stack.pop() {
                Some(TyItem::Value(t)) => {
                    let o = unary_ty(tok, t).ok_or_else(|| err(i, format!("{tok:?} does not apply to {t:?}")))?;
                    stack.push(TyItem::Value(o));
                }
                other => return Err(err(i, format!("{tok:?} needs a field operand, found {other:?}"))),
            },
            _ => {
                let y = stack.pop();
                let x = stack.pop();
                match (x, y) {
                    (Some(TyItem::Value(x)), Some(TyItem::Value(y))) => {
                        let o = binary_ty(tok, x, y).ok_or_else(|| err(i, format!("{tok:?} does not apply to {x:?}, {y:?}")))?;
                        stack.push(TyItem::Value(o));
                    }
                    other => return Err(err(i, format!("{tok:?} needs two field operands, found {other:?}"))),
                }
            }
        }
    }
    if stack != [TyItem::Scalar] {
        return Err(err(term.pipeline.len(), format!("pipeline must end with one scalar, stack is {stack:?}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// expression builder

/// Expression tree compiled to a postfix pipeline.
#[derive(Clone, Debug)]
pub struct Ex {
    tok: Token,
    args: Vec<Ex>,
}

impl Ex {
    fn op(tok: Token, args: Vec<Ex>) -> Ex {
        Ex { tok, args }
    }
    pub fn slot(s: Slot) -> Ex {
        Ex::op(Token::Push(s), vec![])
    }
    pub fn compile(&self) -> Vec<Token> {
        let mut out = Vec::new();
        self.emit(&mut out);
        out
    }
    fn emit(&self, out: &mut Vec<Token>) {
        for a in &self.args {
            a.emit(out);
        }
        out.push(self.tok);
    }
    fn un(self, tok: Token) -> Ex {
        Ex::op(tok, vec![self])
    }
    pub fn conj(self) -> Ex {
        self.un(Token::Conj)
    }
    pub fn neg(self) -> Ex {
        self.un(Token::neg())
    }
    pub fn scale(self, c: C64) -> Ex {
        self.un(Token::Scale { re: c.re, im: c.im })
    }
    pub fn partial(self) -> Ex {
        self.un(Token::Partial)
    }
    pub fn partial_adj(self) -> Ex {
        self.un(Token::PartialAdj)
    }
    pub fn dbar(self) -> Ex {
        self.un(Token::Dbar)
    }
    pub fn dbar_adj(self) -> Ex {
        self.un(Token::DbarAdj)
    }
    pub fn star(self) -> Ex {
        self.un(Token::Star)
    }
    pub fn green(self) -> Ex {
        self.un(Token::Green)
    }
    pub fn green_shifted(self, shift: f64) -> Ex {
        self.un(Token::GreenShifted { shift })
    }
    pub fn proj_tx(self) -> Ex {
        self.un(Token::ProjTx)
    }
    pub fn proj_end(self) -> Ex {
        self.un(Token::ProjEnd)
    }
    pub fn proj_end_bar(self) -> Ex {
        self.un(Token::ProjEndBar)
    }
    pub fn inv_metric(self) -> Ex {
        self.un(Token::InverseMetric)
    }
    pub fn inv_density(self) -> Ex {
        self.un(Token::InverseDensity)
    }
    pub fn metric(self) -> Ex {
        self.un(Token::Metric)
    }
    pub fn integrate(self) -> Ex {
        self.un(Token::Integrate)
    }
}

pub fn mul(a: Ex, b: Ex) -> Ex {
    Ex::op(Token::Mul, vec![a, b])
}
pub fn bracket(a: Ex, b: Ex) -> Ex {
    Ex::op(Token::Bracket, vec![a, b])
}
pub fn add(a: Ex, b: Ex) -> Ex {
    Ex::op(Token::Add, vec![a, b])
}
pub fn star_ad_star(nu: Ex, a: Ex) -> Ex {
    Ex::op(Token::StarAdStar, vec![nu, a])
}
/// `∫ tr(a ∧ b)`.
pub fn wedge(a: Ex, b: Ex) -> Ex {
    mul(a, b).integrate()
}
pub fn sum(items: Vec<Ex>) -> Ex {
    let mut it = items.into_iter();
    let first = it.next().expect("non-empty sum");
    it.fold(first, add)
}

/// Builds a term.
pub fn term(label: &str, coeff: C64, body: Ex, trace: Option<TraceSector>) -> Term {
    Term { label: label.into(), re: coeff.re, im: coeff.im, pipeline: body.compile(), trace, variants: Vec::new() }
}
