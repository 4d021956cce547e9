//! Minimal S-expression reader for the SMT-LIB v2 subset the pipeline
//! exchanges with solver subprocesses.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sexpr {
    Atom(String),
    List(Vec<Sexpr>),
}

impl Sexpr {
    pub fn atom(&self) -> Option<&str> {
        match self {
            Sexpr::Atom(a) => Some(a),
            Sexpr::List(_) => None,
        }
    }

    pub fn list(&self) -> Option<&[Sexpr]> {
        match self {
            Sexpr::Atom(_) => None,
            Sexpr::List(items) => Some(items),
        }
    }
}

impl fmt::Display for Sexpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sexpr::Atom(a) => f.write_str(a),
            Sexpr::List(items) => {
                f.write_str("(")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Parses a whole script into top-level expressions. `;` comments run to
/// end of line; `|symbols|` and `"strings"` are single atoms.
pub fn parse_all(text: &str) -> Result<Vec<Sexpr>, String> {
    let tokens = tokenize(text)?;
    let mut pos = 0;
    let mut out = Vec::new();
    while pos < tokens.len() {
        let (expr, next) = parse_one(&tokens, pos)?;
        out.push(expr);
        pos = next;
    }
    Ok(out)
}

fn parse_one(tokens: &[String], pos: usize) -> Result<(Sexpr, usize), String> {
    match tokens.get(pos).map(|s| s.as_str()) {
        None => Err("unexpected end of input".into()),
        Some("(") => {
            let mut items = Vec::new();
            let mut cursor = pos + 1;
            loop {
                match tokens.get(cursor).map(|s| s.as_str()) {
                    None => return Err("unbalanced parenthesis".into()),
                    Some(")") => return Ok((Sexpr::List(items), cursor + 1)),
                    Some(_) => {
                        let (expr, next) = parse_one(tokens, cursor)?;
                        items.push(expr);
                        cursor = next;
                    }
                }
            }
        }
        Some(")") => Err("unexpected ')'".into()),
        Some(atom) => Ok((Sexpr::Atom(atom.to_string()), pos + 1)),
    }
}

fn tokenize(text: &str) -> Result<Vec<String>, String> {
    let mut tokens = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            ';' => {
                for ch in chars.by_ref() {
                    if ch == '\n' {
                        break;
                    }
                }
            }
            '(' | ')' => {
                tokens.push(c.to_string());
                chars.next();
            }
            '"' => {
                let mut atom = String::from('"');
                chars.next();
                loop {
                    match chars.next() {
                        None => return Err("unterminated string".into()),
                        Some('"') => {
                            // SMT-LIB escapes a quote by doubling it.
                            if chars.peek() == Some(&'"') {
                                atom.push('"');
                                chars.next();
                            } else {
                                atom.push('"');
                                break;
                            }
                        }
                        Some(ch) => atom.push(ch),
                    }
                }
                tokens.push(atom);
            }
            '|' => {
                let mut atom = String::from('|');
                chars.next();
                loop {
                    match chars.next() {
                        None => return Err("unterminated quoted symbol".into()),
                        Some('|') => {
                            atom.push('|');
                            break;
                        }
                        Some(ch) => atom.push(ch),
                    }
                }
                tokens.push(atom);
            }
            _ if c.is_whitespace() => {
                chars.next();
            }
            _ => {
                let mut atom = String::new();
                while let Some(&ch) = chars.peek() {
                    if ch.is_whitespace() || ch == '(' || ch == ')' || ch == ';' {
                        break;
                    }
                    atom.push(ch);
                    chars.next();
                }
                tokens.push(atom);
            }
        }
    }
    Ok(tokens)
}
