//! Leaf-payoff expressions over the terminal walk value `w`.
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '×' | '/' | '÷') unary)*
//! unary := ('-' | '−') unary | atom
//! atom  := number | 'w' | '(' expr ')' | func '(' expr (',' expr)* ')'
//! func  := min | max | abs | clip
//! ```

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    W,
    Neg(Box<Expr>),
    Bin(Op, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Func {
    Min,
    Max,
    Abs,
    Clip,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(Op),
    LParen,
    RParen,
    Comma,
}

fn lex(src: &str) -> Result<Vec<Tok>, String> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push(Tok::Op(Op::Add));
                i += 1
            }
            '-' | '−' => {
                out.push(Tok::Op(Op::Sub));
                i += 1
            }
            '*' | '×' => {
                out.push(Tok::Op(Op::Mul));
                i += 1
            }
            '/' | '÷' => {
                out.push(Tok::Op(Op::Div));
                i += 1
            }
            '(' => {
                out.push(Tok::LParen);
                i += 1
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1
            }
            ',' => {
                out.push(Tok::Comma);
                i += 1
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let s: String = chars[start..i].iter().collect();
                let v = s.parse::<f64>().map_err(|_| format!("bad number `{s}`"))?;
                out.push(Tok::Num(v));
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                out.push(Tok::Ident(chars[start..i].iter().collect()));
            }
            other => return Err(format!("unexpected character `{other}`")),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, t: Tok) -> Result<(), String> {
        match self.next() {
            Some(ref got) if *got == t => Ok(()),
            got => Err(format!("expected {t:?}, found {got:?}")),
        }
    }

    fn expr(&mut self) -> Result<Expr, String> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(op @ (Op::Add | Op::Sub))) = self.peek().cloned() {
            self.pos += 1;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, String> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(op @ (Op::Mul | Op::Div))) = self.peek().cloned() {
            self.pos += 1;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, String> {
        if let Some(Tok::Op(Op::Sub)) = self.peek() {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, String> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                let func = match name.as_str() {
                    "w" => return Ok(Expr::W),
                    "min" => Func::Min,
                    "max" => Func::Max,
                    "abs" => Func::Abs,
                    "clip" => Func::Clip,
                    other => return Err(format!("unknown identifier `{other}`")),
                };
                self.expect(Tok::LParen)?;
                let mut args = vec![self.expr()?];
                while let Some(Tok::Comma) = self.peek() {
                    self.pos += 1;
                    args.push(self.expr()?);
                }
                self.expect(Tok::RParen)?;
                let ok = match func {
                    Func::Abs => args.len() == 1,
                    Func::Clip => args.len() == 3,
                    Func::Min | Func::Max => args.len() >= 2,
                };
                if !ok {
                    return Err(format!("wrong number of arguments to `{name}`"));
                }
                Ok(Expr::Call(func, args))
            }
            other => Err(format!("unexpected token {other:?}")),
        }
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, String> {
        let mut p = Parser {
            toks: lex(src)?,
            pos: 0,
        };
        let e = p.expr()?;
        if p.pos != p.toks.len() {
            return Err(format!("trailing input at token {}", p.pos));
        }
        Ok(e)
    }

    pub fn eval(&self, w: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::W => w,
            Expr::Neg(e) => -e.eval(w),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(w), b.eval(w));
                match op {
                    Op::Add => a + b,
                    Op::Sub => a - b,
                    Op::Mul => a * b,
                    Op::Div => a / b,
                }
            }
            Expr::Call(f, args) => {
                let v: Vec<f64> = args.iter().map(|e| e.eval(w)).collect();
                match f {
                    Func::Abs => v[0].abs(),
                    Func::Min => v.iter().copied().fold(f64::INFINITY, f64::min),
                    Func::Max => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    Func::Clip => v[0].max(v[1]).min(v[2]),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, w: f64) -> f64 {
        Expr::parse(s).unwrap().eval(w)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", 0.0), 7.0);
        assert_eq!(ev("(1 + 2) * 3", 0.0), 9.0);
        assert_eq!(ev("8 / 4 / 2", 0.0), 1.0);
        assert_eq!(ev("5 - 3 - 1", 0.0), 1.0);
        assert_eq!(ev("-w * 2", 3.0), -6.0);
        assert_eq!(ev("2 × w ÷ 4 − 1", 4.0), 1.0);
    }

    #[test]
    fn functions() {
        assert_eq!(ev("clip(w, -1, 1)", 3.0), 1.0);
        assert_eq!(ev("clip(w, -1, 1)", -0.25), -0.25);
        assert_eq!(ev("max(w - 1, 0)", 1.5), 0.5);
        assert_eq!(ev("min(w, 2, -3)", 0.0), -3.0);
        assert_eq!(ev("abs(w) * w", -2.0), -4.0);
        assert_eq!(ev("1e-1 + 2.5E1", 0.0), 25.1);
    }

    #[test]
    fn rejects_malformed() {
        for s in [
            "",
            "w +",
            "foo(w)",
            "clip(w, 1)",
            "abs(w, 2)",
            "(w",
            "w w",
            "2 $ 3",
            "min(w)",
        ] {
            assert!(Expr::parse(s).is_err(), "{s}");
        }
    }
}
