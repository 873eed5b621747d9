use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{PieError, Result};

pub const START: &str = "[";
pub const END: &str = "]";

/// Stand-in for a space inside a character-level sequence.
pub const CHAR_SPACE: &str = "\u{2581}";

const ESCAPED_START: &str = "-LSB-";
const ESCAPED_END: &str = "-RSB-";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TokenMode {
    #[default]
    Word,
    Char,
}

impl TokenMode {
    /// Separator used when several tokens are stored as one string.
    pub fn joiner(self) -> &'static str {
        match self {
            TokenMode::Word => " ",
            TokenMode::Char => "",
        }
    }

    /// Splits a stored multi-token string (an insert payload) into tokens.
    pub fn split_payload(self, payload: &str) -> Vec<String> {
        match self {
            TokenMode::Word => payload
                .split(' ')
                .filter(|t| !t.is_empty())
                .map(str::to_owned)
                .collect(),
            TokenMode::Char => payload.chars().map(String::from).collect(),
        }
    }

    pub fn join_tokens<S: AsRef<str>>(self, tokens: &[S]) -> String {
        let mut out = String::new();
        for (i, t) in tokens.iter().enumerate() {
            if i > 0 {
                out.push_str(self.joiner());
            }
            out.push_str(t.as_ref());
        }
        out
    }
}

impl std::str::FromStr for TokenMode {
    type Err = PieError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(TokenMode::Word),
            "char" => Ok(TokenMode::Char),
            other => Err(PieError::Config(format!("unknown token mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(String);

impl Token {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.is_empty() {
            return Err(PieError::InvalidInput("empty token".into()));
        }
        if text.chars().any(char::is_whitespace) {
            return Err(PieError::InvalidInput(format!(
                "token {text:?} contains whitespace"
            )));
        }
        Ok(Token(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn char_len(&self) -> usize {
        self.0.chars().count()
    }

    pub fn is_boundary(&self) -> bool {
        self.0 == START || self.0 == END
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// A token sequence, normally wrapped in `[` ... `]` boundary markers.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    tokens: Vec<Token>,
    mode: TokenMode,
    boundary_wrapped: bool,
}

impl TokenSequence {
    /// Tokenizes a line and wraps it in boundary markers.
    ///
    /// Word mode splits on spaces. Char mode makes each character a token and
    /// maps spaces to [`CHAR_SPACE`]. Literal bracket tokens are escaped so the
    /// markers never occur inside the sequence.
    pub fn from_line(line: &str, mode: TokenMode) -> Result<Self> {
        let mut tokens = vec![Token(START.into())];
        match mode {
            TokenMode::Word => {
                for w in line.split_whitespace() {
                    tokens.push(Token(escape(w).into_owned()));
                }
            }
            TokenMode::Char => {
                let trimmed = line.split_whitespace().collect::<Vec<_>>().join(" ");
                for c in trimmed.chars() {
                    let t = if c == ' ' {
                        CHAR_SPACE.to_owned()
                    } else {
                        escape(&c.to_string()).into_owned()
                    };
                    tokens.push(Token(t));
                }
            }
        }
        tokens.push(Token(END.into()));
        Ok(TokenSequence {
            tokens,
            mode,
            boundary_wrapped: true,
        })
    }

    /// Wraps already-split tokens in boundary markers.
    pub fn wrap<S: AsRef<str>>(words: &[S], mode: TokenMode) -> Result<Self> {
        let mut tokens = Vec::with_capacity(words.len() + 2);
        tokens.push(Token(START.into()));
        for w in words {
            let t = Token::new(w.as_ref())?;
            if t.is_boundary() {
                return Err(PieError::InvalidInput(format!(
                    "boundary marker {t} inside sequence"
                )));
            }
            tokens.push(t);
        }
        tokens.push(Token(END.into()));
        Ok(TokenSequence {
            tokens,
            mode,
            boundary_wrapped: true,
        })
    }

    /// Builds a sequence from tokens that already carry boundary markers.
    pub fn from_wrapped_tokens(tokens: Vec<Token>, mode: TokenMode) -> Result<Self> {
        let seq = TokenSequence {
            tokens,
            mode,
            boundary_wrapped: true,
        };
        seq.check_wrapped()?;
        Ok(seq)
    }

    /// An unwrapped sequence, for raw alignment use.
    pub fn unwrapped(tokens: Vec<Token>, mode: TokenMode) -> Self {
        TokenSequence {
            tokens,
            mode,
            boundary_wrapped: false,
        }
    }

    pub fn check_wrapped(&self) -> Result<()> {
        let n = self.tokens.len();
        let ok = self.boundary_wrapped
            && n >= 2
            && self.tokens[0].as_str() == START
            && self.tokens[n - 1].as_str() == END
            && self.tokens[1..n - 1].iter().all(|t| !t.is_boundary());
        if ok {
            Ok(())
        } else {
            Err(PieError::InvalidInput(
                "sequence is not wrapped in boundary markers".into(),
            ))
        }
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// Tokens without the boundary markers.
    pub fn inner(&self) -> &[Token] {
        if self.boundary_wrapped && self.tokens.len() >= 2 {
            &self.tokens[1..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }

    pub fn mode(&self) -> TokenMode {
        self.mode
    }

    pub fn is_boundary_wrapped(&self) -> bool {
        self.boundary_wrapped
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Inverse of [`TokenSequence::from_line`].
    pub fn detokenize(&self) -> String {
        let inner = self.inner();
        match self.mode {
            TokenMode::Word => inner
                .iter()
                .map(|t| unescape(t.as_str()))
                .collect::<Vec<_>>()
                .join(" "),
            TokenMode::Char => inner
                .iter()
                .map(|t| {
                    if t.as_str() == CHAR_SPACE {
                        " "
                    } else {
                        unescape(t.as_str())
                    }
                })
                .collect(),
        }
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self.tokens.iter().map(Token::as_str).collect();
        f.write_str(&parts.join(" "))
    }
}

fn escape(t: &str) -> std::borrow::Cow<'_, str> {
    match t {
        START => ESCAPED_START.into(),
        END => ESCAPED_END.into(),
        other => other.into(),
    }
}

fn unescape(t: &str) -> &str {
    match t {
        ESCAPED_START => START,
        ESCAPED_END => END,
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn char_mode_wraps_each_character() {
        let s = TokenSequence::from_line("cat", TokenMode::Char).unwrap();
        let toks: Vec<&str> = s.tokens().iter().map(Token::as_str).collect();
        assert_eq!(toks, ["[", "c", "a", "t", "]"]);
        assert_eq!(s.detokenize(), "cat");
    }

    #[test]
    fn literal_brackets_are_escaped() {
        let s = TokenSequence::from_line("a [ b ]", TokenMode::Word).unwrap();
        s.check_wrapped().unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!(s.detokenize(), "a [ b ]");
    }

    #[test]
    fn char_mode_keeps_spaces() {
        let s = TokenSequence::from_line("ab  cd", TokenMode::Char).unwrap();
        assert_eq!(s.inner().len(), 5);
        assert_eq!(s.detokenize(), "ab cd");
    }

    #[test]
    fn token_rejects_whitespace_and_empty() {
        assert!(Token::new("").is_err());
        assert!(Token::new("a b").is_err());
        assert!(Token::new("ab").is_ok());
    }

    #[test]
    fn wrap_rejects_inner_markers() {
        assert!(TokenSequence::wrap(&["a", "]"], TokenMode::Word).is_err());
    }
}
