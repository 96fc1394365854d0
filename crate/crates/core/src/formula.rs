//! Model formulas: `response ~ term + term ...` where a term is a product of
//! integer powers of variables, and the design matrices they induce.
//!
//! ```text
//! formula  := response "~" rhs
//! response := ident | "surv(" ident "," ident ")"
//! rhs      := item (("+" | "-") item)*      "-" only before "1"
//! item     := "1" | term
//! term     := factor ("*" factor)*
//! factor   := ident ("^" uint)?
//! ```

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub const INTERCEPT_LABEL: &str = "(Intercept)";

/// Product of variables raised to positive integer powers. Factors are kept
/// sorted by name with powers consolidated.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Term {
    factors: Vec<(String, u32)>,
}

impl Term {
    pub fn new<S: AsRef<str>>(factors: impl IntoIterator<Item = (S, u32)>) -> Result<Self> {
        let mut map: BTreeMap<String, u32> = BTreeMap::new();
        for (name, power) in factors {
            if power == 0 {
                return Err(Error::Syntax { pos: 0, msg: "power must be at least 1".into() });
            }
            *map.entry(name.as_ref().to_string()).or_default() += power;
        }
        if map.is_empty() {
            return Err(Error::Syntax { pos: 0, msg: "empty term".into() });
        }
        Ok(Term { factors: map.into_iter().collect() })
    }

    pub fn var(name: &str) -> Self {
        Term { factors: vec![(name.to_string(), 1)] }
    }

    pub fn factors(&self) -> &[(String, u32)] {
        &self.factors
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factors.iter().any(|(v, _)| v == name)
    }

    /// A single variable at power one.
    pub fn as_plain_variable(&self) -> Option<&str> {
        match self.factors.as_slice() {
            [(v, 1)] => Some(v),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (name, power)) in self.factors.iter().enumerate() {
            if i > 0 {
                f.write_str("*")?;
            }
            if *power == 1 {
                write!(f, "{name}")?;
            } else {
                write!(f, "{name}^{power}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Single(String),
    Survival { time: String, event: String },
}

impl fmt::Display for Response {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Response::Single(y) => f.write_str(y),
            Response::Survival { time, event } => write!(f, "surv({time}, {event})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelFormula {
    pub response: Response,
    pub terms: Vec<Term>,
    pub intercept: bool,
}

impl ModelFormula {
    pub fn parse(text: &str) -> Result<Self> {
        Parser::new(text)?.formula()
    }

    pub fn new(response: Response, terms: Vec<Term>, intercept: bool) -> Self {
        ModelFormula { response, terms, intercept }
    }

    pub fn is_survival(&self) -> bool {
        matches!(self.response, Response::Survival { .. })
    }

    /// Number of design columns.
    pub fn width(&self) -> usize {
        self.terms.len() + usize::from(self.intercept)
    }

    /// Coefficient labels in design-column order.
    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.width());
        if self.intercept {
            out.push(INTERCEPT_LABEL.to_string());
        }
        out.extend(self.terms.iter().map(Term::label));
        out
    }

    /// Distinct variables on the right-hand side, in first-use order.
    pub fn predictor_variables(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for t in &self.terms {
            for (v, _) in &t.factors {
                if !out.contains(&v.as_str()) {
                    out.push(v);
                }
            }
        }
        out
    }

    pub fn bind(&self, d: &Dataset) -> Result<BoundFormula> {
        let index = |name: &str| d.index_of(name).ok_or_else(|| Error::UnknownColumn(name.to_string()));
        let terms = self
            .terms
            .iter()
            .map(|t| t.factors.iter().map(|(v, p)| Ok((index(v)?, *p))).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let response = match &self.response {
            Response::Single(y) => BoundResponse::Single(index(y)?),
            Response::Survival { time, event } => BoundResponse::Survival { time: index(time)?, event: index(event)? },
        };
        Ok(BoundFormula { intercept: self.intercept, terms, response })
    }
}

impl fmt::Display for ModelFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ~ ", self.response)?;
        if self.terms.is_empty() {
            return f.write_str(if self.intercept { "1" } else { "-1" });
        }
        let rhs: Vec<String> = self.terms.iter().map(Term::to_string).collect();
        f.write_str(&rhs.join(" + "))?;
        if !self.intercept && !self.is_survival() {
            f.write_str(" - 1")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for ModelFormula {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelFormula::parse(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundResponse {
    Single(usize),
    Survival { time: usize, event: usize },
}

/// A formula resolved against a dataset's column indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundFormula {
    pub intercept: bool,
    pub terms: Vec<Vec<(usize, u32)>>,
    pub response: BoundResponse,
}

impl BoundFormula {
    pub fn width(&self) -> usize {
        self.terms.len() + usize::from(self.intercept)
    }

    /// Term columns that involve column `col`.
    pub fn terms_with(&self, col: usize) -> Vec<usize> {
        let offset = usize::from(self.intercept);
        (0..self.terms.len()).filter(|&t| self.terms[t].iter().any(|(c, _)| *c == col)).map(|t| t + offset).collect()
    }

    pub fn references(&self, col: usize) -> bool {
        self.terms.iter().any(|t| t.iter().any(|(c, _)| *c == col))
    }

    /// Fill `out` with the design row obtained from `value(column)`.
    #[inline]
    pub fn row_into(&self, value: impl Fn(usize) -> f64, out: &mut [f64]) {
        let mut k = 0;
        if self.intercept {
            out[0] = 1.0;
            k = 1;
        }
        for term in &self.terms {
            out[k] = term.iter().map(|&(c, p)| value(c).powi(p as i32)).product();
            k += 1;
        }
    }

    /// Linear predictor for one row of `d`, with column `swap.0` replaced by
    /// `swap.1`.
    #[inline]
    pub fn linear_predictor(&self, d: &Dataset, row: usize, beta: &[f64], swap: Option<(usize, f64)>) -> f64 {
        let value = |c: usize| match swap {
            Some((sc, v)) if sc == c => v,
            _ => d.value(row, c),
        };
        let mut acc = 0.0;
        let mut k = 0;
        if self.intercept {
            acc += beta[0];
            k = 1;
        }
        for term in &self.terms {
            let x: f64 = term.iter().map(|&(c, p)| value(c).powi(p as i32)).product();
            acc += beta[k] * x;
            k += 1;
        }
        acc
    }

    pub fn design_matrix(&self, d: &Dataset) -> Result<DMatrix<f64>> {
        let rows: Vec<usize> = (0..d.n_rows()).collect();
        self.design_rows(d, &rows)
    }

    /// Design matrix restricted to `rows`. Errors on any non-finite cell the
    /// formula touches.
    pub fn design_rows(&self, d: &Dataset, rows: &[usize]) -> Result<DMatrix<f64>> {
        for term in &self.terms {
            for &(c, _) in term {
                check_filled(d, c, rows)?;
            }
        }
        let k = self.width();
        let mut m = DMatrix::zeros(rows.len(), k);
        let mut buf = vec![0.0; k];
        for (i, &r) in rows.iter().enumerate() {
            self.row_into(|c| d.value(r, c), &mut buf);
            for j in 0..k {
                m[(i, j)] = buf[j];
            }
        }
        Ok(m)
    }

    pub fn response_vector(&self, d: &Dataset, rows: &[usize]) -> Result<DVector<f64>> {
        match self.response {
            BoundResponse::Single(y) => {
                check_filled(d, y, rows)?;
                Ok(DVector::from_iterator(rows.len(), rows.iter().map(|&r| d.value(r, y))))
            }
            BoundResponse::Survival { .. } => Err(Error::Config("survival response has no single outcome vector".into())),
        }
    }
}

fn check_filled(d: &Dataset, c: usize, rows: &[usize]) -> Result<()> {
    let col = d.column(c);
    match rows.iter().find(|&&r| !col.values[r].is_finite()) {
        Some(&row) => Err(Error::MissingCell { column: col.name.clone(), row }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(u64),
    Plus,
    Minus,
    Star,
    Caret,
    Tilde,
    LParen,
    RParen,
    Comma,
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    len: usize,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let tok = match c {
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '^' => Tok::Caret,
            '~' => Tok::Tilde,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            c if c.is_ascii_digit() => {
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                let v = s.parse().map_err(|_| Error::Syntax { pos: start, msg: format!("number `{s}` too large") })?;
                out.push((Tok::Num(v), start));
                continue;
            }
            c if c.is_alphabetic() || c == '_' || c == '.' => {
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '.') {
                    i += 1;
                }
                out.push((Tok::Ident(chars[start..i].iter().collect()), start));
                continue;
            }
            other => return Err(Error::Syntax { pos: start, msg: format!("unexpected character `{other}`") }),
        };
        out.push((tok, start));
        i += 1;
    }
    Ok(out)
}

impl Parser {
    fn new(text: &str) -> Result<Self> {
        Ok(Parser { toks: lex(text)?, pos: 0, len: text.chars().count() })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map_or(self.len, |t| t.1)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Syntax { pos: self.here(), msg: msg.into() })
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.0.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.err("expected a variable name"),
        }
    }

    fn formula(mut self) -> Result<ModelFormula> {
        let response = self.response()?;
        self.expect(Tok::Tilde, "`~`")?;
        let survival = matches!(response, Response::Survival { .. });
        let mut terms: Vec<Term> = Vec::new();
        let mut intercept = !survival;
        let mut first = true;
        loop {
            let negate = if first {
                if self.peek() == Some(&Tok::Minus) {
                    self.pos += 1;
                    true
                } else {
                    false
                }
            } else {
                match self.next() {
                    None => break,
                    Some(Tok::Plus) => false,
                    Some(Tok::Minus) => true,
                    Some(_) => {
                        self.pos -= 1;
                        return self.err("expected `+` or `-`");
                    }
                }
            };
            first = false;
            match self.peek() {
                Some(Tok::Num(1)) => {
                    self.pos += 1;
                    if survival && !negate {
                        return self.err("survival formulas have no intercept");
                    }
                    intercept = !negate;
                }
                Some(Tok::Num(_)) => return self.err("only `1` may appear as a constant term"),
                Some(Tok::Ident(_)) if !negate => {
                    let at = self.here();
                    let t = self.term()?;
                    if terms.contains(&t) {
                        return Err(Error::Syntax { pos: at, msg: format!("duplicate term `{t}`") });
                    }
                    terms.push(t);
                }
                Some(Tok::Ident(_)) => return self.err("only `1` may be removed with `-`"),
                None => return self.err("unexpected end of formula"),
                Some(_) => return self.err("expected a term"),
            }
        }
        if survival && terms.is_empty() {
            return self.err("survival formula needs at least one term");
        }
        Ok(ModelFormula { response, terms, intercept })
    }

    fn response(&mut self) -> Result<Response> {
        let name = self.ident()?;
        if name == "surv" && self.peek() == Some(&Tok::LParen) {
            self.pos += 1;
            let time = self.ident()?;
            self.expect(Tok::Comma, "`,`")?;
            let event = self.ident()?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(Response::Survival { time, event });
        }
        Ok(Response::Single(name))
    }

    fn term(&mut self) -> Result<Term> {
        let mut factors = Vec::new();
        loop {
            let name = self.ident()?;
            let mut power = 1u32;
            if self.peek() == Some(&Tok::Caret) {
                self.pos += 1;
                match self.next() {
                    Some(Tok::Num(0)) => {
                        self.pos -= 1;
                        return self.err("power must be at least 1");
                    }
                    Some(Tok::Num(p)) if p <= 64 => power = p as u32,
                    _ => {
                        self.pos -= 1;
                        return self.err("expected an integer power between 1 and 64");
                    }
                }
            }
            factors.push((name, power));
            if self.peek() == Some(&Tok::Star) {
                self.pos += 1;
            } else {
                break;
            }
        }
        Term::new(factors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Column, VariableKind::*, VariableRole::*};
    use proptest::prelude::*;

    fn ds(cols: &[(&str, Vec<f64>)]) -> Dataset {
        Dataset::new(cols.iter().map(|(n, v)| Column::complete(n, Continuous, CompleteCovariate, v.clone())).collect())
            .unwrap()
    }

    #[test]
    fn quadratic_formula() {
        let f = ModelFormula::parse("y ~ x + x^2").unwrap();
        assert_eq!(f.response, Response::Single("y".into()));
        assert_eq!(f.terms, vec![Term::var("x"), Term::new([("x", 2)]).unwrap()]);
        assert!(f.intercept);
        assert_eq!(f.to_string(), "y ~ x + x^2");
    }

    #[test]
    fn interaction_formula() {
        let f = ModelFormula::parse("y ~ x1 + x2 + x1*x2").unwrap();
        assert_eq!(f.terms[2], Term::new([("x1", 1), ("x2", 1)]).unwrap());
        let g = ModelFormula::parse("y~x1+x2+x2 * x1").unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn survival_formula() {
        let f = ModelFormula::parse("surv(w,d) ~ x1 + x2").unwrap();
        assert_eq!(f.response, Response::Survival { time: "w".into(), event: "d".into() });
        assert!(!f.intercept);
        assert_eq!(f.to_string(), "surv(w, d) ~ x1 + x2");
        assert!(ModelFormula::parse("surv(w,d) ~ 1 + x").is_err());
    }

    #[test]
    fn powers_consolidate() {
        let a = ModelFormula::parse("y ~ x*x").unwrap();
        let b = ModelFormula::parse("y ~ x^2").unwrap();
        assert_eq!(a, b);
        assert_eq!(ModelFormula::parse("y ~ x*x^2*z").unwrap().terms[0].to_string(), "x^3*z");
    }

    #[test]
    fn intercept_control() {
        assert!(!ModelFormula::parse("y ~ x - 1").unwrap().intercept);
        assert!(!ModelFormula::parse("y ~ -1 + x").unwrap().intercept);
        let f = ModelFormula::parse("y ~ 1").unwrap();
        assert!(f.intercept && f.terms.is_empty());
    }

    #[test]
    fn syntax_errors() {
        for bad in ["y ~ x^0", "y x", "y ~ x +", "y ~ x $ z", "y ~ 2", "y ~ x - z", "y ~ x + x", "~ x"] {
            let e = ModelFormula::parse(bad).unwrap_err();
            assert!(matches!(e, Error::Syntax { .. }), "{bad}: {e}");
        }
        match ModelFormula::parse("y ~ x^0").unwrap_err() {
            Error::Syntax { pos, .. } => assert_eq!(pos, 6),
            _ => unreachable!(),
        }
    }

    #[test]
    fn design_rows() {
        let d = ds(&[("x", vec![2.0]), ("y", vec![0.0])]);
        let f = ModelFormula::parse("y ~ x + x^2").unwrap().bind(&d).unwrap();
        assert_eq!(f.design_matrix(&d).unwrap().row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 4.0]);

        let d = ds(&[("x1", vec![3.0]), ("x2", vec![0.0]), ("y", vec![0.0])]);
        let f = ModelFormula::parse("y ~ x1 + x2 + x1*x2").unwrap().bind(&d).unwrap();
        assert_eq!(f.design_matrix(&d).unwrap().row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 3.0, 0.0, 0.0]);

        let d = ds(&[("y", vec![5.0, 6.0])]);
        let f = ModelFormula::parse("y ~ 1").unwrap().bind(&d).unwrap();
        let m = f.design_matrix(&d).unwrap();
        assert_eq!((m.nrows(), m.ncols()), (2, 1));
        assert!(m.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn design_rejects_missing_and_unknown() {
        let mut x = Column::complete("x", Continuous, PartialCovariate, vec![1.0, f64::NAN]);
        x.observed[1] = false;
        let d = Dataset::new(vec![x, Column::complete("y", Continuous, Outcome, vec![0.0, 0.0])]).unwrap();
        let f = ModelFormula::parse("y ~ x").unwrap().bind(&d).unwrap();
        assert!(matches!(f.design_matrix(&d), Err(Error::MissingCell { row: 1, .. })));
        assert!(matches!(ModelFormula::parse("y ~ q").unwrap().bind(&d), Err(Error::UnknownColumn(_))));
    }

    fn arb_formula() -> impl Strategy<Value = ModelFormula> {
        let names = prop::sample::select(vec!["a", "b", "x1", "x_2", "z.k"]);
        let term = prop::collection::vec((names, 1u32..4), 1..4).prop_map(|f| Term::new(f).unwrap());
        (prop::collection::vec(term, 0..5), any::<bool>(), any::<bool>()).prop_map(|(terms, intercept, surv)| {
            let mut uniq: Vec<Term> = Vec::new();
            for t in terms {
                if !uniq.contains(&t) {
                    uniq.push(t);
                }
            }
            if surv && !uniq.is_empty() {
                ModelFormula::new(Response::Survival { time: "w".into(), event: "d".into() }, uniq, false)
            } else {
                ModelFormula::new(Response::Single("y".into()), uniq, intercept)
            }
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(f in arb_formula()) {
            prop_assert_eq!(ModelFormula::parse(&f.to_string()).unwrap(), f);
        }

        #[test]
        fn doubling_a_linear_variable(xs in prop::collection::vec(-5.0f64..5.0, 1..10), zs in prop::collection::vec(-5.0f64..5.0, 10)) {
            let n = xs.len();
            let zs = &zs[..n];
            let d1 = ds(&[("x", xs.clone()), ("z", zs.to_vec()), ("y", vec![0.0; n])]);
            let d2 = ds(&[("x", xs.iter().map(|v| 2.0 * v).collect()), ("z", zs.to_vec()), ("y", vec![0.0; n])]);
            let f = ModelFormula::parse("y ~ x + z + x*z + z^2 + x^2").unwrap();
            let m1 = f.bind(&d1).unwrap().design_matrix(&d1).unwrap();
            let m2 = f.bind(&d2).unwrap().design_matrix(&d2).unwrap();
            // columns: 1, x, z, x*z, z^2, x^2
            for r in 0..n {
                for (c, factor) in [(0, 1.0), (1, 2.0), (2, 1.0), (3, 2.0), (4, 1.0), (5, 4.0)] {
                    prop_assert!((m2[(r, c)] - factor * m1[(r, c)]).abs() <= 1e-12 * (1.0 + m1[(r, c)].abs()));
                }
            }
        }

        #[test]
        fn changing_a_variable_touches_only_its_terms(
            f in arb_formula(),
            vals in prop::array::uniform5(0.5f64..3.0),
            which in 0usize..5,
            delta in 0.1f64..2.0,
        ) {
            let names = ["a", "b", "x1", "x_2", "z.k"];
            let cols = |shift: f64| -> Vec<(&str, Vec<f64>)> {
                let mut c: Vec<(&str, Vec<f64>)> = names
                    .iter()
                    .enumerate()
                    .map(|(i, n)| (*n, vec![vals[i] + if i == which { shift } else { 0.0 }]))
                    .collect();
                c.extend([("y", vec![0.0]), ("w", vec![1.0]), ("d", vec![1.0])]);
                c
            };
            let (d1, d2) = (ds(&cols(0.0)), ds(&cols(delta)));
            let b = f.bind(&d1).unwrap();
            let (m1, m2) = (b.design_matrix(&d1).unwrap(), b.design_matrix(&d2).unwrap());
            let touched = b.terms_with(d1.index_of(names[which]).unwrap());
            for c in 0..b.width() {
                prop_assert_eq!(m1[(0, c)] != m2[(0, c)], touched.contains(&c), "column {}", c);
            }
        }
    }
}
