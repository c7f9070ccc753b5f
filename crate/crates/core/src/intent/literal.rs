//! A small parser for the Python dictionary/list literals the prompt
//! templates ask the LM to emit. Strict JSON is accepted as a subset.

use std::fmt::Write as _;

use super::IntentError;

/// A parsed literal. Dictionaries keep source order.
#[derive(Debug, Clone, PartialEq)]
pub enum PyValue {
    Str(String),
    Num(f64),
    Bool(bool),
    None,
    List(Vec<PyValue>),
    Dict(Vec<(PyValue, PyValue)>),
}

impl PyValue {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            PyValue::Str(s) => Some(s),
            _ => None,
        }
    }

    /// A dict whose keys are strings and whose values are lists of strings.
    pub fn as_string_list_dict(&self) -> Result<Vec<(String, Vec<String>)>, IntentError> {
        let PyValue::Dict(items) = self else {
            return Err(IntentError::Parse("expected a dictionary".into()));
        };
        items
            .iter()
            .map(|(k, v)| {
                let key = k
                    .as_str()
                    .ok_or_else(|| IntentError::Parse("dictionary key is not a string".into()))?;
                let values = match v {
                    PyValue::List(xs) => xs
                        .iter()
                        .map(|x| {
                            x.as_str().map(str::to_owned).ok_or_else(|| {
                                IntentError::Parse(format!("non-string entry under {key:?}"))
                            })
                        })
                        .collect::<Result<Vec<_>, _>>()?,
                    PyValue::Str(s) => vec![s.clone()],
                    _ => {
                        return Err(IntentError::Parse(format!(
                            "value under {key:?} is not a list of strings"
                        )))
                    }
                };
                Ok((key.to_owned(), values))
            })
            .collect()
    }

    /// A dict mapping strings to strings.
    pub fn as_string_dict(&self) -> Result<Vec<(String, String)>, IntentError> {
        let PyValue::Dict(items) = self else {
            return Err(IntentError::Parse("expected a dictionary".into()));
        };
        items
            .iter()
            .map(|(k, v)| match (k.as_str(), v.as_str()) {
                (Some(k), Some(v)) => Ok((k.to_owned(), v.to_owned())),
                _ => Err(IntentError::Parse("mapping entries must be strings".into())),
            })
            .collect()
    }

    pub fn as_string_list(&self) -> Result<Vec<String>, IntentError> {
        let PyValue::List(items) = self else {
            return Err(IntentError::Parse("expected a list".into()));
        };
        items
            .iter()
            .map(|x| {
                x.as_str()
                    .map(str::to_owned)
                    .ok_or_else(|| IntentError::Parse("list entry is not a string".into()))
            })
            .collect()
    }
}

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    src: &'a str,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: &str) -> IntentError {
        IntentError::Parse(format!(
            "{msg} at offset {} in {:?}",
            self.pos,
            truncate(self.src)
        ))
    }

    fn skip_ws(&mut self) {
        while let Some(&c) = self.chars.get(self.pos) {
            if c.is_whitespace() {
                self.pos += 1;
            } else if c == '#' {
                while self.chars.get(self.pos).is_some_and(|&c| c != '\n') {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn value(&mut self) -> Result<PyValue, IntentError> {
        self.skip_ws();
        match self.peek() {
            Some('{') => self.dict(),
            Some('[') | Some('(') => self.list(),
            Some('\'') | Some('"') => self.string().map(PyValue::Str),
            Some(c) if c == '-' || c == '+' || c == '.' || c.is_ascii_digit() => self.number(),
            Some(c) if c.is_alphabetic() => {
                let start = self.pos;
                while self.peek().is_some_and(|c| c.is_alphanumeric() || c == '_') {
                    self.pos += 1;
                }
                let word: String = self.chars[start..self.pos].iter().collect();
                match word.as_str() {
                    "True" | "true" => Ok(PyValue::Bool(true)),
                    "False" | "false" => Ok(PyValue::Bool(false)),
                    "None" | "null" => Ok(PyValue::None),
                    _ => {
                        self.pos = start;
                        Err(self.err(&format!("unexpected identifier {word:?}")))
                    }
                }
            }
            Some(_) => Err(self.err("unexpected character")),
            None => Err(self.err("unexpected end of input")),
        }
    }

    fn dict(&mut self) -> Result<PyValue, IntentError> {
        self.pos += 1;
        let mut items = Vec::new();
        loop {
            if self.eat('}') {
                return Ok(PyValue::Dict(items));
            }
            let key = self.value()?;
            if !self.eat(':') {
                return Err(self.err("expected ':'"));
            }
            let val = self.value()?;
            items.push((key, val));
            if self.eat(',') {
                continue;
            }
            if self.eat('}') {
                return Ok(PyValue::Dict(items));
            }
            return Err(self.err("expected ',' or '}'"));
        }
    }

    fn list(&mut self) -> Result<PyValue, IntentError> {
        let close = if self.peek() == Some('[') { ']' } else { ')' };
        self.pos += 1;
        let mut items = Vec::new();
        loop {
            if self.eat(close) {
                return Ok(PyValue::List(items));
            }
            items.push(self.value()?);
            if self.eat(',') {
                continue;
            }
            if self.eat(close) {
                return Ok(PyValue::List(items));
            }
            return Err(self.err("expected ',' or closing bracket"));
        }
    }

    fn string(&mut self) -> Result<String, IntentError> {
        let mut out = String::new();
        // Adjacent literals concatenate, as in Python.
        loop {
            let quote = self.peek().ok_or_else(|| self.err("expected string"))?;
            self.pos += 1;
            loop {
                let c = self.peek().ok_or_else(|| self.err("unterminated string"))?;
                self.pos += 1;
                if c == quote {
                    break;
                }
                if c == '\\' {
                    let e = self.peek().ok_or_else(|| self.err("dangling escape"))?;
                    self.pos += 1;
                    match e {
                        'n' => out.push('\n'),
                        't' => out.push('\t'),
                        'r' => out.push('\r'),
                        '0' => out.push('\0'),
                        '\n' => {}
                        'u' => {
                            let hex: String = self.chars.iter().skip(self.pos).take(4).collect();
                            let code = u32::from_str_radix(&hex, 16)
                                .ok()
                                .and_then(char::from_u32)
                                .ok_or_else(|| self.err("bad unicode escape"))?;
                            self.pos += 4;
                            out.push(code);
                        }
                        other => out.push(other),
                    }
                } else {
                    out.push(c);
                }
            }
            let save = self.pos;
            self.skip_ws();
            if !matches!(self.peek(), Some('\'') | Some('"')) {
                self.pos = save;
                return Ok(out);
            }
        }
    }

    fn number(&mut self) -> Result<PyValue, IntentError> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_digit() || "+-.eE_".contains(c))
        {
            self.pos += 1;
        }
        let text: String = self.chars[start..self.pos]
            .iter()
            .filter(|&&c| c != '_')
            .collect();
        text.parse::<f64>()
            .map(PyValue::Num)
            .map_err(|_| self.err("bad number"))
    }
}

fn truncate(s: &str) -> String {
    let mut out: String = s.chars().take(60).collect();
    if s.chars().count() > 60 {
        out.push('…');
    }
    out
}

/// Parses exactly one literal; trailing non-whitespace is an error.
pub fn parse_literal(text: &str) -> Result<PyValue, IntentError> {
    let mut p = Parser {
        chars: text.chars().collect(),
        pos: 0,
        src: text,
    };
    let v = p.value()?;
    p.skip_ws();
    if p.pos != p.chars.len() {
        return Err(p.err("trailing characters after literal"));
    }
    Ok(v)
}

/// Removes Markdown code-fence lines (```` ``` ```` or ```` ```python ````).
pub fn strip_code_fences(text: &str) -> String {
    text.lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Byte spans of balanced top-level `{...}` blocks. Quotes are tracked only
/// inside a block, so apostrophes in surrounding prose are harmless.
pub fn brace_blocks(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'{' {
            i += 1;
            continue;
        }
        match matching_brace(bytes, i) {
            Some(end) => {
                out.push((i, end + 1));
                i = end + 1;
            }
            None => i += 1,
        }
    }
    out
}

fn matching_brace(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut quote: Option<u8> = None;
    let mut i = start;
    while i < bytes.len() {
        let b = bytes[i];
        match quote {
            Some(q) => {
                if b == b'\\' {
                    i += 1;
                } else if b == q {
                    quote = None;
                }
            }
            None => match b {
                b'\'' | b'"' => quote = Some(b),
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(i);
                    }
                }
                _ => {}
            },
        }
        i += 1;
    }
    None
}

/// The block assigned to `name = {...}`, taking the last such assignment.
pub fn named_block<'t>(text: &'t str, name: &str) -> Option<&'t str> {
    let mut found = None;
    let mut from = 0;
    while let Some(off) = text[from..].find(name) {
        let at = from + off;
        from = at + name.len();
        let preceded_ok = text[..at]
            .chars()
            .next_back()
            .is_none_or(|c| !(c.is_alphanumeric() || c == '_'));
        let rest = text[from..].trim_start();
        if !preceded_ok || !rest.starts_with('=') {
            continue;
        }
        let after_eq = rest[1..].trim_start();
        if !after_eq.starts_with('{') {
            continue;
        }
        let start = text.len() - after_eq.len();
        if let Some(end) = matching_brace(text.as_bytes(), start) {
            found = Some(&text[start..=end]);
        }
    }
    found
}

/// Python `repr` of a string (single-quoted unless that needs escaping).
pub fn py_repr_str(s: &str) -> String {
    let quote = if s.contains('\'') && !s.contains('"') {
        '"'
    } else {
        '\''
    };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c => out.push(c),
        }
    }
    out.push(quote);
    out
}

/// `['a', 'b']`, as Python prints a list of strings.
pub fn py_list(items: &[String]) -> String {
    let inner: Vec<String> = items.iter().map(|s| py_repr_str(s)).collect();
    format!("[{}]", inner.join(", "))
}

/// Multi-line `{key: [values]}` rendering used inside prompts.
pub fn py_dict_of_lists(entries: &[(String, Vec<String>)]) -> String {
    if entries.is_empty() {
        return "{}".into();
    }
    let mut out = String::from("{\n");
    for (k, vs) in entries {
        let _ = writeln!(out, "    {}: {},", py_repr_str(k), py_list(vs));
    }
    out.push('}');
    out
}
