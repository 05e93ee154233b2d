//! Fixed-effect design matrices from a model formula, and grouping factors.
//!
//! Formula grammar: terms joined by `+`; `a:b` is the interaction, `a*b`
//! expands to `a + b + a:b`; parentheses group; `poly(x, d)` adds `x`,
//! `x^2`, ..., `x^d` for a numeric covariate; `1` is the intercept (implicit)
//! and `0` removes it. Categorical covariates are dummy coded against their
//! first level in sorted order.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;

use super::RandomFactor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Atom {
    var: String,
    power: u32,
}

type Monomial = Vec<Atom>;

#[derive(Debug, Clone, Default)]
struct Terms {
    monomials: Vec<Monomial>,
    no_intercept: bool,
}

impl Terms {
    // atoms keep their written order; duplicates are detected as sets
    fn push(&mut self, m: Monomial) {
        let mut key = m.clone();
        key.sort();
        let seen = self.monomials.iter().any(|o| {
            let mut ok = o.clone();
            ok.sort();
            ok == key
        });
        if !seen {
            self.monomials.push(m);
        }
    }

    fn union(mut self, other: Terms) -> Terms {
        for m in other.monomials {
            self.push(m);
        }
        self.no_intercept |= other.no_intercept;
        self
    }

    fn interact(self, other: Terms) -> Terms {
        let mut out = Terms {
            monomials: Vec::new(),
            no_intercept: self.no_intercept || other.no_intercept,
        };
        for a in &self.monomials {
            for b in &other.monomials {
                let mut m = a.clone();
                for atom in b {
                    if !m.contains(atom) {
                        m.push(atom.clone());
                    }
                }
                out.push(m);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Number(String),
    Sym(char),
}

fn tokenize(s: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if "+*:(),".contains(c) {
            out.push(Token::Sym(c));
            i += 1;
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            out.push(Token::Number(chars[start..i].iter().collect()));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '.') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else {
            return Err(Error::Formula(format!("unexpected character '{c}'")));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.at)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.at).cloned();
        self.at += 1;
        t
    }

    fn expect(&mut self, c: char) -> Result<()> {
        match self.next() {
            Some(Token::Sym(s)) if s == c => Ok(()),
            other => Err(Error::Formula(format!("expected '{c}', found {other:?}"))),
        }
    }

    fn expr(&mut self) -> Result<Terms> {
        let mut acc = self.product()?;
        while self.peek() == Some(&Token::Sym('+')) {
            self.at += 1;
            acc = acc.union(self.product()?);
        }
        Ok(acc)
    }

    fn product(&mut self) -> Result<Terms> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some(Token::Sym(':')) => {
                    self.at += 1;
                    let rhs = self.factor()?;
                    acc = acc.interact(rhs);
                }
                Some(Token::Sym('*')) => {
                    self.at += 1;
                    let rhs = self.factor()?;
                    let both = acc.clone().interact(rhs.clone());
                    acc = acc.union(rhs).union(both);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Terms> {
        match self.next() {
            Some(Token::Sym('(')) => {
                let t = self.expr()?;
                self.expect(')')?;
                Ok(t)
            }
            Some(Token::Number(n)) if n == "1" => Ok(Terms {
                monomials: vec![Vec::new()],
                no_intercept: false,
            }),
            Some(Token::Number(n)) if n == "0" => Ok(Terms {
                monomials: Vec::new(),
                no_intercept: true,
            }),
            Some(Token::Ident(name)) if name == "poly" && self.peek() == Some(&Token::Sym('(')) => {
                self.at += 1;
                let var = match self.next() {
                    Some(Token::Ident(v)) => v,
                    other => return Err(Error::Formula(format!("poly expects a variable, found {other:?}"))),
                };
                self.expect(',')?;
                let degree: u32 = match self.next() {
                    Some(Token::Number(d)) => d.parse().map_err(|_| Error::Formula(format!("bad degree {d}")))?,
                    other => return Err(Error::Formula(format!("poly expects a degree, found {other:?}"))),
                };
                self.expect(')')?;
                if degree == 0 {
                    return Err(Error::Formula("poly degree must be positive".into()));
                }
                Ok(Terms {
                    monomials: (1..=degree)
                        .map(|power| vec![Atom { var: var.clone(), power }])
                        .collect(),
                    no_intercept: false,
                })
            }
            Some(Token::Ident(name)) => Ok(Terms {
                monomials: vec![vec![Atom { var: name, power: 1 }]],
                no_intercept: false,
            }),
            other => Err(Error::Formula(format!("unexpected token {other:?}"))),
        }
    }
}

/// Expanded model terms in column order (intercept first, then by
/// interaction order). Each term is a list of `(variable, power)` pairs.
pub fn parse_formula(formula: &str) -> Result<Vec<Vec<(String, u32)>>> {
    let mut parser = Parser {
        tokens: tokenize(formula)?,
        at: 0,
    };
    if parser.tokens.is_empty() {
        return Err(Error::Formula("empty formula".into()));
    }
    let terms = parser.expr()?;
    if parser.at != parser.tokens.len() {
        return Err(Error::Formula(format!("trailing input at token {}", parser.at)));
    }
    let mut monomials: Vec<Monomial> = terms.monomials.into_iter().filter(|m| !m.is_empty()).collect();
    monomials.sort_by_key(Vec::len);
    let mut out: Vec<Vec<(String, u32)>> = Vec::new();
    if !terms.no_intercept {
        out.push(Vec::new());
    }
    out.extend(
        monomials
            .into_iter()
            .map(|m| m.into_iter().map(|a| (a.var, a.power)).collect()),
    );
    Ok(out)
}

/// Levels in sorted order: numerically when every level parses as a
/// number, lexicographically otherwise.
pub fn sorted_levels<'a>(values: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut levels: Vec<String> = values.into_iter().map(ToString::to_string).collect();
    levels.sort();
    levels.dedup();
    let numeric: Option<Vec<f64>> = levels.iter().map(|l| l.parse::<f64>().ok()).collect();
    if let Some(nums) = numeric {
        let mut pairs: Vec<(f64, String)> = nums.into_iter().zip(levels).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
        levels = pairs.into_iter().map(|(_, l)| l).collect();
    }
    levels
}

/// Inputs for [`build_design`]: one covariate map per observation.
#[derive(Debug, Clone)]
pub struct DesignInput<'a> {
    pub ids: &'a [String],
    pub covariates: &'a [BTreeMap<String, String>],
    /// Covariates read as numbers; all others are categorical.
    pub numeric: &'a [String],
    pub formula: &'a str,
    /// Grouping factors for random effects, in model order.
    pub random: &'a [String],
    /// Drop aliased columns with a warning instead of failing.
    pub drop_aliased: bool,
}

#[derive(Debug, Clone)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    pub factors: Vec<RandomFactor>,
    pub warnings: Vec<String>,
}

fn lookup<'a>(cov: &'a BTreeMap<String, String>, var: &str, id: &str) -> Result<&'a str> {
    match cov.get(var) {
        Some(v) if !v.trim().is_empty() => Ok(v.trim()),
        _ => Err(Error::MissingLevel {
            covariate: var.to_string(),
            id: id.to_string(),
        }),
    }
}

pub fn build_design(input: &DesignInput) -> Result<Design> {
    let n = input.ids.len();
    if input.covariates.len() != n {
        return Err(Error::InvalidInput("one covariate map per observation required".into()));
    }
    let terms = parse_formula(input.formula)?;
    let mut warnings = Vec::new();

    let mut level_cache: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut columns: Vec<(String, Vec<f64>, bool)> = Vec::new();
    for term in &terms {
        let mut parts: Vec<(Vec<String>, Vec<f64>)> = vec![(Vec::new(), vec![1.0; n])];
        for (var, power) in term {
            let is_numeric = input.numeric.iter().any(|v| v == var);
            let mut next = Vec::new();
            if is_numeric {
                let mut vals = Vec::with_capacity(n);
                for (cov, id) in input.covariates.iter().zip(input.ids) {
                    let raw = lookup(cov, var, id)?;
                    let v: f64 = raw
                        .parse()
                        .map_err(|_| Error::InvalidInput(format!("covariate {var} of {id}: '{raw}' is not numeric")))?;
                    vals.push(v.powi(*power as i32));
                }
                let label = if *power == 1 { var.clone() } else { format!("{var}^{power}") };
                for (names, col) in parts {
                    let mut names = names;
                    names.push(label.clone());
                    next.push((names, col.iter().zip(&vals).map(|(a, b)| a * b).collect()));
                }
            } else {
                if *power != 1 {
                    return Err(Error::Formula(format!("poly() of categorical covariate {var}")));
                }
                let mut values = Vec::with_capacity(n);
                for (cov, id) in input.covariates.iter().zip(input.ids) {
                    values.push(lookup(cov, var, id)?);
                }
                let levels = level_cache
                    .entry(var.clone())
                    .or_insert_with(|| sorted_levels(values.iter().copied()))
                    .clone();
                for (names, col) in parts {
                    for level in &levels[1..] {
                        let mut names = names.clone();
                        names.push(format!("{var}{level}"));
                        let c = col
                            .iter()
                            .zip(&values)
                            .map(|(a, v)| if v == level { *a } else { 0.0 })
                            .collect();
                        next.push((names, c));
                    }
                }
            }
            parts = next;
        }
        for (names, col) in parts {
            let name = if names.is_empty() { "(Intercept)".to_string() } else { names.join(":") };
            columns.push((name, col, term.is_empty()));
        }
    }

    let has_intercept = columns.iter().any(|c| c.2);
    let mut kept: Vec<(String, Vec<f64>)> = Vec::new();
    // orthonormalized copies of kept columns, for alias detection
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut aliased = Vec::new();
    for (name, col, intercept) in columns {
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let all_zero = col.iter().all(|v| *v == 0.0);
        if n > 0 && !intercept && (all_zero || (hi == lo && has_intercept)) {
            warnings.push(format!("dropped zero-variance column {name}"));
            continue;
        }
        let norm0 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut r = col.clone();
        for _ in 0..2 {
            for q in &basis {
                let d: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
                for (ri, qi) in r.iter_mut().zip(q) {
                    *ri -= d * qi;
                }
            }
        }
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-9 * norm0.max(f64::MIN_POSITIVE) {
            if input.drop_aliased {
                warnings.push(format!("dropped aliased column {name}"));
                continue;
            }
            aliased.push(name);
            continue;
        }
        basis.push(r.iter().map(|v| v / norm).collect());
        kept.push((name, col));
    }
    if !aliased.is_empty() {
        return Err(Error::RankDeficientDesign(aliased));
    }
    if kept.len() >= n && n > 0 {
        return Err(Error::RankDeficientDesign(kept.into_iter().map(|c| c.0).collect()));
    }

    let k = kept.len();
    let x = DMatrix::from_fn(n, k, |i, j| kept[j].1[i]);
    let names = kept.into_iter().map(|c| c.0).collect();

    let mut factors = Vec::new();
    for var in input.random {
        let mut values = Vec::with_capacity(n);
        for (cov, id) in input.covariates.iter().zip(input.ids) {
            values.push(lookup(cov, var, id)?);
        }
        let levels = sorted_levels(values.iter().copied());
        let lookup: BTreeMap<&str, usize> = levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let index = values.iter().map(|v| lookup[v]).collect();
        factors.push(RandomFactor {
            name: var.clone(),
            levels,
            index,
        });
    }
    Ok(Design {
        x,
        names,
        factors,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cov(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn parse_star_and_poly() {
        let t = parse_formula("T*Sex").unwrap();
        assert_eq!(t.len(), 4);
        assert!(t[0].is_empty());
        assert_eq!(t[3].len(), 2);
        let t = parse_formula("poly(B2, 3):Sex + 0").unwrap();
        assert_eq!(t.len(), 3);
        assert!(t.iter().all(|m| m.len() == 2));
        assert!(parse_formula("T + ").is_err());
        assert!(parse_formula("T $ S").is_err());
    }

    #[test]
    fn two_level_interaction_columns() {
        let ids: Vec<String> = (0..6).map(|i| format!("c{i}")).collect();
        let covs = vec![
            cov(&[("T", "1"), ("Sex", "0")]),
            cov(&[("T", "2"), ("Sex", "0")]),
            cov(&[("T", "1"), ("Sex", "1")]),
            cov(&[("T", "2"), ("Sex", "1")]),
            cov(&[("T", "1"), ("Sex", "1")]),
            cov(&[("T", "2"), ("Sex", "0")]),
        ];
        let d = build_design(&DesignInput {
            ids: &ids,
            covariates: &covs,
            numeric: &[],
            formula: "T*Sex",
            random: &[],
            drop_aliased: true,
        })
        .unwrap();
        assert_eq!(d.names, ["(Intercept)", "T2", "Sex1", "T2:Sex1"]);
        assert_eq!(d.x.column(3).iter().copied().collect::<Vec<_>>(), [0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn intercept_only_and_missing_level() {
        let ids: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let covs = vec![cov(&[("S", "x")]), cov(&[("S", "y")]), cov(&[])];
        let d = build_design(&DesignInput {
            ids: &ids,
            covariates: &covs,
            numeric: &[],
            formula: "1",
            random: &[],
            drop_aliased: true,
        })
        .unwrap();
        assert_eq!(d.x.ncols(), 1);
        let err = build_design(&DesignInput {
            ids: &ids,
            covariates: &covs,
            numeric: &[],
            formula: "1",
            random: &["S".to_string()],
            drop_aliased: true,
        })
        .unwrap_err();
        assert_eq!(
            err,
            Error::MissingLevel {
                covariate: "S".into(),
                id: "c".into()
            }
        );
    }

    #[test]
    fn aliased_and_constant_columns() {
        let ids: Vec<String> = (0..5).map(|i| format!("c{i}")).collect();
        let covs: Vec<_> = (0..5)
            .map(|i| {
                let b = alloc::format!("{}", i);
                let b2 = alloc::format!("{}", 2 * i);
                cov(&[("B", &b), ("C", &b2), ("K", "3")])
            })
            .collect();
        let numeric = vec!["B".to_string(), "C".to_string(), "K".to_string()];
        let mut input = DesignInput {
            ids: &ids,
            covariates: &covs,
            numeric: &numeric,
            formula: "B + C + K",
            random: &[],
            drop_aliased: true,
        };
        let d = build_design(&input).unwrap();
        assert_eq!(d.names, ["(Intercept)", "B"]);
        assert_eq!(d.warnings.len(), 2);
        input.drop_aliased = false;
        assert_eq!(build_design(&input).unwrap_err(), Error::RankDeficientDesign(vec!["C".into()]));
    }

    #[test]
    fn numeric_level_order() {
        assert_eq!(sorted_levels(["10", "9", "1"]), ["1", "9", "10"]);
        assert_eq!(sorted_levels(["b", "a", "b"]), ["a", "b"]);
    }
}
