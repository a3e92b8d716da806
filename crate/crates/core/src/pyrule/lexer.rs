use super::{ParseError, ParseErrorKind, Pos};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Name(String),
    Str(String),
    Int(i64),
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

const OPS: [&str; 45] = [
    "**=", "//=", ">>=", "<<=", "...", "==", "!=", "<=", ">=", "**", "//", "->", "+=", "-=", "*=", "/=",
    "%=", "&=", "|=", "^=", ":=", "<<", ">>", "(", ")", "[", "]", "{", "}", ",", ":", ".", "=", "<", ">",
    "@", "+", "-", "*", "/", "%", "|", "&", "^", "~",
];

pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    Lexer::new(src).run()
}

struct Lexer<'a> {
    chars: Vec<char>,
    i: usize,
    line: usize,
    col: usize,
    depth: usize,
    indents: Vec<usize>,
    out: Vec<Token>,
    _src: &'a str,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            chars: src.replace("\r\n", "\n").replace('\r', "\n").chars().collect(),
            i: 0,
            line: 1,
            col: 1,
            depth: 0,
            indents: vec![0],
            out: Vec::new(),
            _src: src,
        }
    }

    fn pos(&self) -> Pos {
        Pos { line: self.line, col: self.col }
    }

    fn peek(&self, off: usize) -> Option<char> {
        self.chars.get(self.i + off).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.get(self.i).copied()?;
        self.i += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn err(&self, pos: Pos, message: impl Into<String>) -> ParseError {
        ParseError { kind: ParseErrorKind::Syntax(message.into()), pos }
    }

    fn push(&mut self, tok: Tok, pos: Pos) {
        self.out.push(Token { tok, pos });
    }

    fn run(mut self) -> Result<Vec<Token>, ParseError> {
        let mut at_line_start = true;
        loop {
            if at_line_start && self.depth == 0 {
                at_line_start = false;
                // Measure indentation; blank and comment-only lines are skipped.
                let mut width = 0;
                while let Some(c) = self.peek(0) {
                    match c {
                        ' ' => width += 1,
                        '\t' => width = (width / 8 + 1) * 8,
                        '\x0c' => width = 0,
                        _ => break,
                    }
                    self.bump();
                }
                match self.peek(0) {
                    None => break,
                    Some('\n') => {
                        self.bump();
                        at_line_start = true;
                        continue;
                    }
                    Some('#') => {
                        while self.peek(0).is_some_and(|c| c != '\n') {
                            self.bump();
                        }
                        continue;
                    }
                    _ => {}
                }
                let pos = self.pos();
                let current = *self.indents.last().unwrap();
                if width > current {
                    self.indents.push(width);
                    self.push(Tok::Indent, pos);
                } else {
                    while width < *self.indents.last().unwrap() {
                        self.indents.pop();
                        self.push(Tok::Dedent, pos);
                    }
                    if width != *self.indents.last().unwrap() {
                        return Err(self.err(pos, "inconsistent dedent"));
                    }
                }
            }
            let Some(c) = self.peek(0) else { break };
            let pos = self.pos();
            match c {
                '\n' => {
                    self.bump();
                    if self.depth == 0 {
                        if !matches!(self.out.last().map(|t| &t.tok), Some(Tok::Newline) | None) {
                            self.push(Tok::Newline, pos);
                        }
                        at_line_start = true;
                    }
                }
                ' ' | '\t' | '\x0c' => {
                    self.bump();
                }
                '#' => {
                    while self.peek(0).is_some_and(|c| c != '\n') {
                        self.bump();
                    }
                }
                '\\' if self.peek(1) == Some('\n') => {
                    self.bump();
                    self.bump();
                }
                '"' | '\'' => {
                    let s = self.string(c)?;
                    self.push(Tok::Str(s), pos);
                }
                c if c.is_ascii_digit() => {
                    let mut text = String::new();
                    while let Some(d) = self.peek(0).filter(|d| d.is_ascii_alphanumeric() || *d == '_' || *d == '.') {
                        text.push(d);
                        self.bump();
                    }
                    let digits: String = text.chars().filter(|c| *c != '_').collect();
                    let n = digits
                        .parse::<i64>()
                        .map_err(|_| self.err(pos, format!("unsupported numeric literal `{text}`")))?;
                    self.push(Tok::Int(n), pos);
                }
                c if c.is_alphabetic() || c == '_' => {
                    let mut name = String::new();
                    while let Some(d) = self.peek(0).filter(|d| d.is_alphanumeric() || *d == '_') {
                        name.push(d);
                        self.bump();
                    }
                    self.push(Tok::Name(name), pos);
                }
                _ => {
                    let rest: String = self.chars[self.i..self.chars.len().min(self.i + 3)].iter().collect();
                    let Some(op) = OPS.iter().find(|op| rest.starts_with(**op)) else {
                        return Err(self.err(pos, format!("unexpected character `{c}`")));
                    };
                    for _ in 0..op.chars().count() {
                        self.bump();
                    }
                    match *op {
                        "(" | "[" | "{" => self.depth += 1,
                        ")" | "]" | "}" => self.depth = self.depth.saturating_sub(1),
                        _ => {}
                    }
                    self.push(Tok::Op(op), pos);
                }
            }
        }
        let pos = self.pos();
        if !matches!(self.out.last().map(|t| &t.tok), Some(Tok::Newline) | None) {
            self.push(Tok::Newline, pos);
        }
        while self.indents.len() > 1 {
            self.indents.pop();
            self.push(Tok::Dedent, pos);
        }
        self.push(Tok::Eof, pos);
        Ok(self.out)
    }

    fn string(&mut self, quote: char) -> Result<String, ParseError> {
        let start = self.pos();
        let triple = self.peek(1) == Some(quote) && self.peek(2) == Some(quote);
        let n = if triple { 3 } else { 1 };
        for _ in 0..n {
            self.bump();
        }
        let mut out = String::new();
        loop {
            let Some(c) = self.peek(0) else {
                return Err(self.err(start, "unterminated string literal"));
            };
            if c == quote && (!triple || (self.peek(1) == Some(quote) && self.peek(2) == Some(quote))) {
                for _ in 0..n {
                    self.bump();
                }
                return Ok(out);
            }
            if c == '\n' && !triple {
                return Err(self.err(start, "unterminated string literal"));
            }
            self.bump();
            if c == '\\' {
                let Some(e) = self.bump() else {
                    return Err(self.err(start, "unterminated string literal"));
                };
                out.push(match e {
                    'n' => '\n',
                    't' => '\t',
                    'r' => '\r',
                    '0' => '\0',
                    '\n' => continue,
                    other => other,
                });
            } else {
                out.push(c);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(src: &str) -> Vec<Tok> {
        tokenize(src).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn indentation_produces_indent_and_dedent() {
        let t = toks("def f(ctx):\n    pass\n");
        assert!(t.contains(&Tok::Indent));
        assert!(t.contains(&Tok::Dedent));
        assert_eq!(t.last(), Some(&Tok::Eof));
    }

    #[test]
    fn newlines_inside_brackets_are_joined() {
        let t = toks("f(a,\n  b)\n");
        assert_eq!(t.iter().filter(|t| **t == Tok::Newline).count(), 1);
        assert!(!t.contains(&Tok::Indent));
    }

    #[test]
    fn string_escapes_and_comments() {
        let t = toks("x = \"a\\\"b\"  # comment\n");
        assert!(t.contains(&Tok::Str("a\"b".into())));
    }

    #[test]
    fn bad_dedent_reports_position() {
        let err = tokenize("if a:\n    x\n  y\n").unwrap_err();
        assert_eq!(err.pos.line, 3);
    }

    #[test]
    fn unterminated_string_is_an_error() {
        assert!(tokenize("\"abc\n").is_err());
    }
}
