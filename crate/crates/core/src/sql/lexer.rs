use super::error::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    /// Bare word: keyword or unquoted identifier.
    Word(String),
    /// Identifier quoted with backticks or brackets.
    QuotedIdent(String, char),
    /// Double-quoted token; string or identifier depending on dialect.
    DoubleQuoted(String),
    String(String),
    Number(String),
    Symbol(&'static str),
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub offset: usize,
}

impl Token {
    pub fn describe(&self) -> String {
        match &self.kind {
            TokenKind::Word(w) => format!("`{w}`"),
            TokenKind::QuotedIdent(w, _) | TokenKind::DoubleQuoted(w) => format!("quoted `{w}`"),
            TokenKind::String(s) => format!("string '{s}'"),
            TokenKind::Number(n) => format!("number {n}"),
            TokenKind::Symbol(s) => format!("`{s}`"),
            TokenKind::Eof => "end of input".to_string(),
        }
    }
}

const SYMBOLS: &[&str] = &[
    "==", "!=", "<>", "<=", ">=", "||", "=", "<", ">", "+", "-", "*", "/", "%", "(", ")", ",", ".", ";",
];

pub fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'-' && bytes.get(i + 1) == Some(&b'-') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'*') {
            let end = text[i + 2..]
                .find("*/")
                .ok_or_else(|| ParseError::syntax(i, "end of comment `*/`", "end of input"))?;
            i += end + 4;
            continue;
        }
        let start = i;
        match c {
            b'\'' | b'"' | b'`' => {
                let (content, next) = read_quoted(text, i, c as char)?;
                let kind = match c {
                    b'\'' => TokenKind::String(content),
                    b'"' => TokenKind::DoubleQuoted(content),
                    _ => TokenKind::QuotedIdent(content, '`'),
                };
                tokens.push(Token { kind, offset: start });
                i = next;
            }
            b'[' => {
                let end = text[i + 1..]
                    .find(']')
                    .ok_or_else(|| ParseError::syntax(i, "closing `]`", "end of input"))?;
                tokens.push(Token {
                    kind: TokenKind::QuotedIdent(text[i + 1..i + 1 + end].to_string(), '['),
                    offset: start,
                });
                i += end + 2;
            }
            b'0'..=b'9' => {
                i = scan_number(bytes, i);
                tokens.push(Token {
                    kind: TokenKind::Number(text[start..i].to_string()),
                    offset: start,
                });
            }
            b'.' if bytes.get(i + 1).is_some_and(u8::is_ascii_digit)
                && !matches!(tokens.last().map(|t| &t.kind), Some(TokenKind::Word(_)) | Some(TokenKind::QuotedIdent(..)) | Some(TokenKind::DoubleQuoted(_)) | Some(TokenKind::Symbol(")"))) =>
            {
                i = scan_number(bytes, i);
                tokens.push(Token {
                    kind: TokenKind::Number(text[start..i].to_string()),
                    offset: start,
                });
            }
            c if c.is_ascii_alphabetic() || c == b'_' || c >= 0x80 => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'$' || bytes[i] >= 0x80)
                {
                    i += 1;
                }
                tokens.push(Token {
                    kind: TokenKind::Word(text[start..i].to_string()),
                    offset: start,
                });
            }
            _ => {
                let sym = SYMBOLS
                    .iter()
                    .find(|s| text[i..].starts_with(**s))
                    .ok_or_else(|| ParseError::syntax(i, "a token", &format!("character `{}`", text[i..].chars().next().unwrap_or(' '))))?;
                tokens.push(Token {
                    kind: TokenKind::Symbol(sym),
                    offset: start,
                });
                i += sym.len();
            }
        }
    }
    tokens.push(Token {
        kind: TokenKind::Eof,
        offset: text.len(),
    });
    Ok(tokens)
}

fn scan_number(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
    }
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        let mut j = i + 1;
        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
            j += 1;
        }
        if j < bytes.len() && bytes[j].is_ascii_digit() {
            i = j;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
        }
    }
    i
}

/// Read a quoted token starting at `start`; a doubled quote escapes itself.
fn read_quoted(text: &str, start: usize, quote: char) -> Result<(String, usize), ParseError> {
    let mut out = String::new();
    let mut chars = text[start + 1..].char_indices().peekable();
    while let Some((off, ch)) = chars.next() {
        if ch == quote {
            if chars.peek().map(|(_, c)| *c) == Some(quote) {
                out.push(quote);
                chars.next();
                continue;
            }
            return Ok((out, start + 1 + off + ch.len_utf8()));
        }
        out.push(ch);
    }
    Err(ParseError::syntax(start, &format!("closing {quote}"), "end of input"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(s: &str) -> Vec<TokenKind> {
        tokenize(s).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn lexes_literals_and_symbols() {
        assert_eq!(
            kinds("a<>'it''s' 1.5e3 \"x\""),
            vec![
                TokenKind::Word("a".into()),
                TokenKind::Symbol("<>"),
                TokenKind::String("it's".into()),
                TokenKind::Number("1.5e3".into()),
                TokenKind::DoubleQuoted("x".into()),
                TokenKind::Eof
            ]
        );
    }

    #[test]
    fn qualified_names_are_not_numbers() {
        assert_eq!(
            kinds("T1.name"),
            vec![
                TokenKind::Word("T1".into()),
                TokenKind::Symbol("."),
                TokenKind::Word("name".into()),
                TokenKind::Eof
            ]
        );
        assert_eq!(kinds(".5")[0], TokenKind::Number(".5".into()));
    }

    #[test]
    fn unterminated_string_reports_offset() {
        let err = tokenize("SELECT 'abc").unwrap_err();
        assert_eq!(err.offset(), Some(7));
    }
}
