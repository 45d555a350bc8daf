use super::ast::Pos;
use super::{ParseError, ParseErrorKind};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Name(String),
    Num(f64),
    Str(String),
    Op(&'static str),
    Newline,
    Indent,
    Dedent,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

const OPS: [&str; 16] = ["==", "!=", "<=", ">=", "(", ")", ",", ":", "=", "<", ">", "+", "-", "*", "/", "["];

fn err(kind: ParseErrorKind, line: usize, col: usize, msg: impl Into<String>) -> ParseError {
    ParseError { kind, message: msg.into(), pos: Pos { line, col } }
}

/// Splits source into tokens with Python-style indentation tokens.
/// Newlines inside parentheses are ignored.
pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let mut indents = vec![0usize];
    let mut depth = 0usize;
    let mut open_parens: Vec<Pos> = Vec::new();
    let mut last_line = 1;

    for (li, raw_line) in src.lines().enumerate() {
        let line = li + 1;
        last_line = line;
        let chars: Vec<char> = raw_line.chars().collect();
        let mut i = 0;

        let trimmed = raw_line.trim_start();
        let continues = depth == 0 && trimmed.starts_with('=') && !trimmed.starts_with("==");
        if continues && out.last().is_some_and(|t: &Token| t.tok == Tok::Newline) {
            // a line starting with '=' continues the previous assignment target
            out.pop();
            i = raw_line.len() - trimmed.len();
        } else if depth == 0 {
            let mut width = 0;
            while i < chars.len() && (chars[i] == ' ' || chars[i] == '\t') {
                if chars[i] == '\t' {
                    return Err(err(ParseErrorKind::Lexical, line, i + 1, "tabs are not allowed in indentation"));
                }
                width += 1;
                i += 1;
            }
            if i == chars.len() || chars[i] == '#' {
                continue;
            }
            let current = *indents.last().expect("indent stack");
            if width > current {
                indents.push(width);
                out.push(Token { tok: Tok::Indent, pos: Pos { line, col: 1 } });
            } else {
                while width < *indents.last().expect("indent stack") {
                    indents.pop();
                    out.push(Token { tok: Tok::Dedent, pos: Pos { line, col: 1 } });
                }
                if width != *indents.last().expect("indent stack") {
                    return Err(err(ParseErrorKind::Syntax, line, width + 1, "inconsistent indentation"));
                }
            }
        }

        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            let pos = Pos { line, col };
            if c == ' ' || c == '\t' {
                i += 1;
            } else if c == '#' {
                break;
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token { tok: Tok::Name(chars[start..i].iter().collect()), pos });
            } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
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
                let text: String = chars[start..i].iter().collect();
                let v: f64 = text
                    .parse()
                    .map_err(|_| err(ParseErrorKind::Lexical, line, col, format!("invalid number '{text}'")))?;
                if !v.is_finite() {
                    return Err(err(ParseErrorKind::Lexical, line, col, format!("number '{text}' is out of range")));
                }
                out.push(Token { tok: Tok::Num(v), pos });
            } else if c == '"' || c == '\'' {
                let mut s = String::new();
                i += 1;
                let mut closed = false;
                while i < chars.len() {
                    let d = chars[i];
                    if d == c {
                        closed = true;
                        i += 1;
                        break;
                    }
                    if d == '\\' && i + 1 < chars.len() {
                        i += 1;
                        s.push(match chars[i] {
                            'n' => '\n',
                            't' => '\t',
                            other => other,
                        });
                    } else {
                        s.push(d);
                    }
                    i += 1;
                }
                if !closed {
                    return Err(err(ParseErrorKind::Lexical, line, col, "unterminated string"));
                }
                out.push(Token { tok: Tok::Str(s), pos });
            } else {
                let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
                let Some(op) = OPS.iter().find(|op| rest.starts_with(**op)) else {
                    return Err(err(ParseErrorKind::Lexical, line, col, format!("unexpected character '{c}'")));
                };
                if *op == "[" {
                    return Err(err(ParseErrorKind::Banned, line, col, "indexing and lists are not supported"));
                }
                match *op {
                    "(" => {
                        depth += 1;
                        open_parens.push(pos);
                    }
                    ")" => {
                        if depth == 0 {
                            return Err(err(ParseErrorKind::Syntax, line, col, "unmatched ')'"));
                        }
                        depth -= 1;
                        open_parens.pop();
                    }
                    _ => {}
                }
                i += op.len();
                out.push(Token { tok: Tok::Op(op), pos });
            }
        }
        if depth == 0 && out.last().is_some_and(|t| t.tok != Tok::Newline && t.tok != Tok::Indent && t.tok != Tok::Dedent) {
            out.push(Token { tok: Tok::Newline, pos: Pos { line, col: chars.len() + 1 } });
        }
    }
    if let Some(p) = open_parens.first() {
        return Err(err(ParseErrorKind::Syntax, p.line, p.col, "unclosed '('"));
    }
    let end = Pos { line: last_line + 1, col: 1 };
    while indents.len() > 1 {
        indents.pop();
        out.push(Token { tok: Tok::Dedent, pos: end });
    }
    out.push(Token { tok: Tok::Eof, pos: end });
    Ok(out)
}
