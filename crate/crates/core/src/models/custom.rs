//! User-defined models from a JSON description: coordinate expressions for
//! the embedding and the scale, plus chart axes. Everything geometric is
//! finite-differenced, so the only requirements on the expressions are
//! smoothness, unit norm of `phi`, and positivity of `sigma` — both checked
//! on a sample grid at construction.
//!
//! The expression language is small: numbers, chart variables `t1..td`,
//! `+ - * / ^` (with `^` binding right), unary minus, parentheses, the
//! constants `pi` and `e`, and one-argument functions `sin cos tan asin
//! acos atan sinh cosh tanh exp log sqrt abs`.

use nalgebra::DVector;
use serde_json::{Map, Value};

use crate::geometry::{ChartAxis, ManifoldModel};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Func {
    Sin,
    Cos,
    Tan,
    Asin,
    Acos,
    Atan,
    Sinh,
    Cosh,
    Tanh,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Func {
    fn by_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "asin" => Func::Asin,
            "acos" => Func::Acos,
            "atan" => Func::Atan,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "tanh" => Func::Tanh,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tan => x.tan(),
            Func::Asin => x.asin(),
            Func::Acos => x.acos(),
            Func::Atan => x.atan(),
            Func::Sinh => x.sinh(),
            Func::Cosh => x.cosh(),
            Func::Tanh => x.tanh(),
            Func::Exp => x.exp(),
            Func::Log => x.ln(),
            Func::Sqrt => x.sqrt(),
            Func::Abs => x.abs(),
        }
    }
}

#[derive(Clone, Debug)]
enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    fn eval(&self, t: &[f64]) -> f64 {
        match self {
            Expr::Num(x) => *x,
            Expr::Var(i) => t[*i],
            Expr::Neg(a) => -a.eval(t),
            Expr::Add(a, b) => a.eval(t) + b.eval(t),
            Expr::Sub(a, b) => a.eval(t) - b.eval(t),
            Expr::Mul(a, b) => a.eval(t) * b.eval(t),
            Expr::Div(a, b) => a.eval(t) / b.eval(t),
            Expr::Pow(a, b) => a.eval(t).powf(b.eval(t)),
            Expr::Call(f, a) => f.apply(a.eval(t)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push(Token::Plus);
                i += 1;
            }
            '-' => {
                out.push(Token::Minus);
                i += 1;
            }
            '*' => {
                out.push(Token::Star);
                i += 1;
            }
            '/' => {
                out.push(Token::Slash);
                i += 1;
            }
            '^' => {
                out.push(Token::Caret);
                i += 1;
            }
            '(' => {
                out.push(Token::LParen);
                i += 1;
            }
            ')' => {
                out.push(Token::RParen);
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && matches!(bytes[i] as char, '0'..='9' | '.') {
                    i += 1;
                }
                // Exponent suffix, with optional sign.
                if i < bytes.len() && matches!(bytes[i] as char, 'e' | 'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && matches!(bytes[j] as char, '+' | '-') {
                        j += 1;
                    }
                    if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let x: f64 = text.parse().map_err(|_| {
                    Error::InvalidInput(format!("malformed number `{text}` in expression"))
                })?;
                out.push(Token::Num(x));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && matches!(bytes[i] as char, 'a'..='z' | 'A'..='Z' | '0'..='9' | '_')
                {
                    i += 1;
                }
                out.push(Token::Ident(src[start..i].to_string()));
            }
            _ => {
                return Err(Error::InvalidInput(format!(
                    "unexpected character `{c}` in expression"
                )))
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    dim: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Token) -> Result<()> {
        match self.bump() {
            Some(t) if t == want => Ok(()),
            other => Err(Error::InvalidInput(format!(
                "expected {want:?} in expression, found {other:?}"
            ))),
        }
    }

    // expr := term (('+'|'-') term)*
    fn expr(&mut self) -> Result<Expr> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.pos += 1;
                    acc = Expr::Add(Box::new(acc), Box::new(self.term()?));
                }
                Some(Token::Minus) => {
                    self.pos += 1;
                    acc = Expr::Sub(Box::new(acc), Box::new(self.term()?));
                }
                _ => return Ok(acc),
            }
        }
    }

    // term := unary (('*'|'/') unary)*
    fn term(&mut self) -> Result<Expr> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.pos += 1;
                    acc = Expr::Mul(Box::new(acc), Box::new(self.unary()?));
                }
                Some(Token::Slash) => {
                    self.pos += 1;
                    acc = Expr::Div(Box::new(acc), Box::new(self.unary()?));
                }
                _ => return Ok(acc),
            }
        }
    }

    // unary := '-' unary | power  (so -x^2 = -(x^2))
    fn unary(&mut self) -> Result<Expr> {
        if self.peek() == Some(&Token::Minus) {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    // power := atom ('^' unary)?  (right-associative)
    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek() == Some(&Token::Caret) {
            self.pos += 1;
            return Ok(Expr::Pow(Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.bump() {
            Some(Token::Num(x)) => Ok(Expr::Num(x)),
            Some(Token::LParen) => {
                let inner = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(inner)
            }
            Some(Token::Ident(name)) => {
                if let Some(f) = Func::by_name(&name) {
                    self.expect(Token::LParen)?;
                    let arg = self.expr()?;
                    self.expect(Token::RParen)?;
                    return Ok(Expr::Call(f, Box::new(arg)));
                }
                match name.as_str() {
                    "pi" => return Ok(Expr::Num(std::f64::consts::PI)),
                    "e" => return Ok(Expr::Num(std::f64::consts::E)),
                    _ => {}
                }
                if let Some(rest) = name.strip_prefix('t') {
                    if let Ok(k) = rest.parse::<usize>() {
                        if k >= 1 && k <= self.dim {
                            return Ok(Expr::Var(k - 1));
                        }
                        return Err(Error::InvalidInput(format!(
                            "variable `{name}` out of range for a {}-dimensional chart",
                            self.dim
                        )));
                    }
                }
                Err(Error::InvalidInput(format!("unknown identifier `{name}` in expression")))
            }
            other => Err(Error::InvalidInput(format!(
                "expected a value in expression, found {other:?}"
            ))),
        }
    }
}

/// Parse one expression over chart variables `t1..t<dim>`.
fn parse_expr(src: &str, dim: usize) -> Result<Expr> {
    let tokens = tokenize(src)?;
    let mut p = Parser { tokens: &tokens, pos: 0, dim };
    let e = p.expr()?;
    if p.pos != tokens.len() {
        return Err(Error::InvalidInput(format!(
            "trailing tokens after expression in `{src}`"
        )));
    }
    Ok(e)
}

/// A model assembled from expression strings; all geometry is numeric.
pub struct CustomModel {
    name: String,
    ambient: usize,
    axes: Vec<ChartAxis>,
    phi_exprs: Vec<Expr>,
    sigma_expr: Expr,
}

impl CustomModel {
    /// Build from a JSON object:
    ///
    /// ```json
    /// {
    ///   "name": "my-model",
    ///   "ambient_dim": 3,
    ///   "axes": [{"lo": 0.0, "hi": 3.141592653589793, "periodic": true}],
    ///   "phi": ["cos(t1)^2", "sqrt(2)*cos(t1)*sin(t1)", "sin(t1)^2"],
    ///   "sigma": "exp(-0.25*sin(t1)^2)"
    /// }
    /// ```
    ///
    /// `phi` must be unit-norm and `sigma` positive; both are checked on a
    /// deterministic sample grid.
    pub fn from_json(obj: &Map<String, Value>) -> Result<CustomModel> {
        for key in obj.keys() {
            if !matches!(key.as_str(), "name" | "ambient_dim" | "axes" | "phi" | "sigma") {
                return Err(Error::InvalidInput(format!("unknown model key `{key}`")));
            }
        }
        let name = match obj.get("name") {
            None => "custom".to_string(),
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(Error::InvalidInput("model name must be a string".into())),
        };
        let ambient = obj
            .get("ambient_dim")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::InvalidInput("missing integer `ambient_dim`".into()))?
            as usize;
        let axes_val = obj
            .get("axes")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::InvalidInput("missing array `axes`".into()))?;
        let mut axes = Vec::with_capacity(axes_val.len());
        for av in axes_val {
            let ao = av
                .as_object()
                .ok_or_else(|| Error::InvalidInput("each axis must be an object".into()))?;
            for key in ao.keys() {
                if !matches!(key.as_str(), "lo" | "hi" | "periodic") {
                    return Err(Error::InvalidInput(format!("unknown axis key `{key}`")));
                }
            }
            let lo = ao
                .get("lo")
                .and_then(Value::as_f64)
                .ok_or_else(|| Error::InvalidInput("axis needs numeric `lo`".into()))?;
            let hi = ao
                .get("hi")
                .and_then(Value::as_f64)
                .ok_or_else(|| Error::InvalidInput("axis needs numeric `hi`".into()))?;
            let periodic = ao.get("periodic").and_then(Value::as_bool).unwrap_or(false);
            if !(hi > lo) {
                return Err(Error::InvalidInput(format!("axis needs hi > lo, got [{lo}, {hi}]")));
            }
            axes.push(ChartAxis::new(lo, hi, periodic));
        }
        let d = axes.len();
        if d == 0 {
            return Err(Error::InvalidInput("model needs at least one chart axis".into()));
        }
        if ambient < d + 2 {
            return Err(Error::InvalidInput(format!(
                "ambient dimension must exceed the chart dimension by at least 2, \
                 got ambient {ambient} with {d} axes"
            )));
        }
        let phi_val = obj
            .get("phi")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::InvalidInput("missing array `phi`".into()))?;
        if phi_val.len() != ambient {
            return Err(Error::InvalidInput(format!(
                "`phi` must list {ambient} coordinate expressions, got {}",
                phi_val.len()
            )));
        }
        let mut phi_exprs = Vec::with_capacity(ambient);
        for pv in phi_val {
            let src = pv
                .as_str()
                .ok_or_else(|| Error::InvalidInput("`phi` entries must be strings".into()))?;
            phi_exprs.push(parse_expr(src, d)?);
        }
        let sigma_src = obj
            .get("sigma")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::InvalidInput("missing string `sigma`".into()))?;
        let sigma_expr = parse_expr(sigma_src, d)?;

        let model = CustomModel { name, ambient, axes, phi_exprs, sigma_expr };
        model.check_on_grid()?;
        Ok(model)
    }

    /// Sample the chart and reject embeddings that are not unit norm or
    /// scales that are not positive.
    fn check_on_grid(&self) -> Result<()> {
        let d = self.axes.len();
        let per_axis = match d {
            1 => 64,
            2 => 12,
            _ => 5,
        };
        let total = per_axis_pow(per_axis, d);
        for flat in 0..total {
            let mut rem = flat;
            let mut t = Vec::with_capacity(d);
            for ax in &self.axes {
                let k = rem % per_axis;
                rem /= per_axis;
                // Offset from cell centers so endpoints are avoided.
                t.push(ax.lo + ax.span() * (k as f64 + 0.5) / per_axis as f64);
            }
            let norm = self.phi(&t).norm();
            if (norm - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidInput(format!(
                    "`phi` must be unit-norm on the chart; |phi| = {norm:.12} at {t:?}"
                )));
            }
            let s = self.sigma(&t);
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "`sigma` must be positive and finite on the chart; got {s} at {t:?}"
                )));
            }
        }
        Ok(())
    }
}

fn per_axis_pow(base: usize, exp: usize) -> usize {
    (0..exp).fold(1usize, |acc, _| acc.saturating_mul(base))
}

impl ManifoldModel for CustomModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.axes.len()
    }

    fn ambient_dim(&self) -> usize {
        self.ambient
    }

    fn axes(&self) -> Vec<ChartAxis> {
        self.axes.clone()
    }

    fn phi(&self, t: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.ambient, self.phi_exprs.iter().map(|e| e.eval(t)))
    }

    fn sigma(&self, t: &[f64]) -> f64 {
        self.sigma_expr.eval(t)
    }
}
