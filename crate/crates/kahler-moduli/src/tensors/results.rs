//! Evaluated tensors, symmetry defects and the sign audit.

use crate::error::{Error, Result};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const TENSOR_FORMAT: &str = "kahler-moduli/tensor";
pub const TENSOR_VERSION: u32 = 1;

/// One term's contribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermTensor {
    pub label: String,
    pub entries: Vec<C64>,
}

/// A complex matrix or 4-tensor over basis indices, row-major, with its
/// per-term breakdown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorResult {
    pub format: String,
    pub version: u32,
    pub label: String,
    /// Range of each index.
    pub dims: Vec<usize>,
    /// Names of the basis elements along every index.
    pub basis: Vec<String>,
    pub entries: Vec<C64>,
    pub terms: Vec<TermTensor>,
    pub residuals: BTreeMap<String, f64>,
}

impl TensorResult {
    pub fn new(label: &str, dims: Vec<usize>, basis: Vec<String>, terms: Vec<TermTensor>) -> Self {
        let len: usize = dims.iter().product();
        let mut entries = vec![C64::new(0.0, 0.0); len];
        for t in &terms {
            for (e, v) in entries.iter_mut().zip(&t.entries) {
                *e += v;
            }
        }
        Self { format: TENSOR_FORMAT.into(), version: TENSOR_VERSION, label: label.into(), dims, basis, entries, terms, residuals: BTreeMap::new() }
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.dims).fold(0, |acc, (i, d)| acc * d + i)
    }

    pub fn get(&self, idx: &[usize]) -> C64 {
        self.entries[self.offset(idx)]
    }

    pub fn term(&self, label: &str) -> Option<&TermTensor> {
        self.terms.iter().find(|t| t.label == label)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.entries)
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Index permutation of the conjugate symmetry: `(j,k) ↦ (k,j)` for
    /// matrices and `(1,2;3,4) ↦ (2,1;4,3)` for 4-tensors.
    pub fn swap_index(&self, flat: usize) -> usize {
        let mut idx = vec![0; self.dims.len()];
        let mut r = flat;
        for (k, d) in self.dims.iter().enumerate().rev() {
            idx[k] = r % d;
            r /= d;
        }
        let sw: Vec<usize> = match idx.len() {
            2 => vec![idx[1], idx[0]],
            4 => vec![idx[1], idx[0], idx[3], idx[2]],
            _ => idx,
        };
        self.offset(&sw)
    }

    /// `T − swapconj(T)` for a set of entries.
    pub fn antisymmetric_part(&self, entries: &[C64]) -> Vec<C64> {
        (0..entries.len()).map(|f| entries[f] - entries[self.swap_index(f)].conj()).collect()
    }

    /// `‖T − swapconj T‖ / ‖T‖`.
    pub fn hermitian_defect(&self) -> f64 {
        self.hermitian_defect_of(C64::new(1.0, 0.0))
    }

    /// Hermitian defect of `phase·T`. Matrices of (1,1)-forms such as the
    /// Ricci form are `−i` times a Hermitian matrix and use `phase = i`.
    pub fn hermitian_defect_of(&self, phase: C64) -> f64 {
        let n = self.norm();
        if n == 0.0 {
            return 0.0;
        }
        let scaled: Vec<C64> = self.entries.iter().map(|v| v * phase).collect();
        norm(&self.antisymmetric_part(&scaled)) / n
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tensor serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: TensorResult = serde_json::from_str(s)?;
        if t.format != TENSOR_FORMAT || t.version != TENSOR_VERSION {
            return Err(Error::Format(format!("unsupported tensor document {} v{}", t.format, t.version)));
        }
        if t.entries.len() != t.dims.iter().product::<usize>() {
            return Err(Error::Format("entry count does not match the index ranges".into()));
        }
        Ok(t)
    }
}

pub fn norm(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// One row of the audit table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub label: String,
    /// Frobenius norm of the term.
    pub norm: f64,
    /// Hermitian defect of the term alone.
    pub own_defect: f64,
    /// Defect of the total with only this term's sign flipped.
    pub flipped_defect: f64,
    /// Sign in the best combination.
    pub best_sign: i8,
}

/// Effect of substituting one declared variant into the transcription.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub label: String,
    pub norm: f64,
    /// Defect of the total with only this variant substituted.
    pub substituted_defect: f64,
}

/// Result of the sign and variant search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub label: String,
    pub transcribed_defect: f64,
    pub best_defect: f64,
    pub rows: Vec<AuditRow>,
    #[serde(default)]
    pub variants: Vec<VariantRow>,
    /// Variants chosen by the best combination.
    #[serde(default)]
    pub best_variants: Vec<String>,
}

impl AuditReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("audit serializes")
    }

    /// Plain-text variant table.
    pub fn table(&self) -> String {
        let mut s = format!("{:<36} {:>12} {:>12} {:>14} {:>5}\n", "term", "norm", "own defect", "flip → defect", "best");
        for r in &self.rows {
            s += &format!("{:<36} {:>12.4e} {:>12.4e} {:>14.4e} {:>5}\n", r.label, r.norm, r.own_defect, r.flipped_defect, if r.best_sign > 0 { "+" } else { "−" });
        }
        for v in &self.variants {
            let chosen = if self.best_variants.contains(&v.label) { "*" } else { "" };
            s += &format!("{:<36} {:>12.4e} {:>12} {:>14.4e} {:>5}\n", v.label, v.norm, "variant", v.substituted_defect, chosen);
        }
        s += &format!("transcribed defect {:.4e}, best {:.4e}\n", self.transcribed_defect, self.best_defect);
        s
    }
}

/// Searches all sign patterns of the terms for the least Hermitian defect.
pub fn sign_audit(t: &TensorResult) -> AuditReport {
    variant_audit(t, &vec![Vec::new(); t.terms.len()], C64::new(1.0, 0.0))
}

/// Searches all sign patterns of the terms (the first sign fixed, as a
/// global sign leaves the defect unchanged) and all choices among each
/// term's declared variants for the least Hermitian defect of `phase·T`.
/// `variants[i]` holds the evaluated variants of term `i`. The defect of
/// `Σ sₖTₖ` is a ratio of quadratic forms in `s`, so only the Gram matrices
/// of the candidates and of their antisymmetric parts are needed.
pub fn variant_audit(t: &TensorResult, variants: &[Vec<TermTensor>], phase: C64) -> AuditReport {
    let k = t.terms.len();
    // candidates: the terms, then every variant; `owner` maps back to the term
    let mut cands: Vec<&TermTensor> = t.terms.iter().collect();
    let mut owner: Vec<usize> = (0..k).collect();
    for (i, vs) in variants.iter().enumerate() {
        for v in vs {
            cands.push(v);
            owner.push(i);
        }
    }
    let m = cands.len();
    let scaled: Vec<Vec<C64>> = cands.iter().map(|c| c.entries.iter().map(|v| v * phase).collect()).collect();
    let anti: Vec<Vec<C64>> = scaled.iter().map(|x| t.antisymmetric_part(x)).collect();
    let gram = |v: &[Vec<C64>]| -> Vec<Vec<f64>> {
        (0..m).map(|a| (0..m).map(|b| v[a].iter().zip(&v[b]).map(|(x, y)| (x * y.conj()).re).sum()).collect()).collect()
    };
    let (ga, gt) = (gram(&anti), gram(&scaled));
    // a configuration picks one candidate per term with a sign
    let defect = |pick: &[usize], s: &[f64]| -> f64 {
        let q = |g: &Vec<Vec<f64>>| -> f64 { (0..k).map(|a| (0..k).map(|b| s[a] * s[b] * g[pick[a]][pick[b]]).sum::<f64>()).sum() };
        let den = q(&gt);
        if den <= 0.0 {
            return 0.0;
        }
        (q(&ga).max(0.0) / den).sqrt()
    };
    let signs_of = |mask: usize| -> Vec<f64> { (0..k).map(|i| if i > 0 && mask >> (i - 1) & 1 == 1 { -1.0 } else { 1.0 }).collect() };
    let base: Vec<usize> = (0..k).collect();
    let ones = vec![1.0; k];
    let transcribed = defect(&base, &ones);
    let options: Vec<Vec<usize>> = (0..k).map(|i| std::iter::once(i).chain((k..m).filter(|&c| owner[c] == i)).collect()).collect();
    let mut best = (transcribed, 0usize, base.clone());
    let mut pick = base.clone();
    let mut choice = vec![0usize; k];
    loop {
        for mask in 0..(1usize << k.saturating_sub(1)) {
            let d = defect(&pick, &signs_of(mask));
            if d < best.0 {
                best = (d, mask, pick.clone());
            }
        }
        // odometer over the variant choices
        let mut i = 0;
        while i < k {
            choice[i] += 1;
            if choice[i] < options[i].len() {
                pick[i] = options[i][choice[i]];
                break;
            }
            choice[i] = 0;
            pick[i] = options[i][0];
            i += 1;
        }
        if i == k {
            break;
        }
    }
    let best_signs = signs_of(best.1);
    let rows = (0..k)
        .map(|i| {
            let mut s = ones.clone();
            s[i] = -1.0;
            let n = gt[i][i].sqrt();
            AuditRow {
                label: t.terms[i].label.clone(),
                norm: n,
                own_defect: if n > 0.0 { ga[i][i].sqrt() / n } else { 0.0 },
                flipped_defect: defect(&base, &s),
                best_sign: best_signs[i] as i8,
            }
        })
        .collect();
    let variant_rows = (k..m)
        .map(|c| {
            let mut p = base.clone();
            p[owner[c]] = c;
            VariantRow { label: cands[c].label.clone(), norm: gt[c][c].sqrt(), substituted_defect: defect(&p, &ones) }
        })
        .collect();
    let best_variants = best.2.iter().filter(|&&c| c >= k).map(|&c| cands[c].label.clone()).collect();
    AuditReport { label: t.label.clone(), transcribed_defect: transcribed, best_defect: best.0, rows, variants: variant_rows, best_variants }
}
