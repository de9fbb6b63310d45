//! Minimal s-expression reader with line/column tracking.
//!
//! Atoms are bare tokens (no string escapes needed by the program grammar);
//! `;` starts a comment running to the end of the line.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sexp {
    Atom { text: String, pos: Pos },
    List { items: Vec<Sexp>, pos: Pos },
}

impl Sexp {
    pub fn pos(&self) -> Pos {
        match self {
            Sexp::Atom { pos, .. } | Sexp::List { pos, .. } => *pos,
        }
    }

    pub fn atom(&self) -> Option<&str> {
        match self {
            Sexp::Atom { text, .. } => Some(text),
            Sexp::List { .. } => None,
        }
    }

    pub fn list(&self) -> Option<&[Sexp]> {
        match self {
            Sexp::List { items, .. } => Some(items),
            Sexp::Atom { .. } => None,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum SexpError {
    #[error("{pos}: unexpected closing parenthesis")]
    UnexpectedClose { pos: Pos },
    #[error("{pos}: unclosed parenthesis")]
    UnclosedParen { pos: Pos },
}

/// Reads every top-level form in `text`.
pub fn read_all(text: &str) -> Result<Vec<Sexp>, SexpError> {
    let mut stack: Vec<(Pos, Vec<Sexp>)> = Vec::new();
    let mut top: Vec<Sexp> = Vec::new();
    let mut atom_start: Option<(Pos, usize)> = None;
    let mut line = 1usize;
    let mut col = 1usize;
    let mut comment = false;

    let push = |stack: &mut Vec<(Pos, Vec<Sexp>)>, top: &mut Vec<Sexp>, s: Sexp| {
        if let Some((_, items)) = stack.last_mut() {
            items.push(s);
        } else {
            top.push(s);
        }
    };

    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        let ch = b as char;
        let here = Pos { line, col };
        if comment {
            if ch == '\n' {
                comment = false;
            }
        } else {
            let delim = ch.is_ascii_whitespace() || ch == '(' || ch == ')' || ch == ';';
            if delim {
                if let Some((pos, start)) = atom_start.take() {
                    push(&mut stack, &mut top, Sexp::Atom { text: text[start..i].to_string(), pos });
                }
                match ch {
                    '(' => stack.push((here, Vec::new())),
                    ')' => {
                        let (pos, items) = stack.pop().ok_or(SexpError::UnexpectedClose { pos: here })?;
                        push(&mut stack, &mut top, Sexp::List { items, pos });
                    }
                    ';' => comment = true,
                    _ => {}
                }
            } else if atom_start.is_none() {
                atom_start = Some((here, i));
            }
        }
        if ch == '\n' {
            line += 1;
            col = 1;
        } else {
            col += 1;
        }
    }
    if let Some((pos, start)) = atom_start.take() {
        push(&mut stack, &mut top, Sexp::Atom { text: text[start..].to_string(), pos });
    }
    if let Some((pos, _)) = stack.first() {
        return Err(SexpError::UnclosedParen { pos: *pos });
    }
    Ok(top)
}

impl fmt::Display for Sexp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sexp::Atom { text, .. } => f.write_str(text),
            Sexp::List { items, .. } => {
                f.write_str("(")?;
                for (i, it) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{it}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_nested_forms() {
        let forms = read_all("(a (b 1) c) ; trailing\n(d)").unwrap();
        assert_eq!(forms.len(), 2);
        assert_eq!(forms[0].to_string(), "(a (b 1) c)");
        assert_eq!(forms[1].to_string(), "(d)");
    }

    #[test]
    fn tracks_positions() {
        let forms = read_all("\n  (x)").unwrap();
        assert_eq!(forms[0].pos(), Pos { line: 2, col: 3 });
    }

    #[test]
    fn reports_unbalanced() {
        assert!(matches!(read_all("(a"), Err(SexpError::UnclosedParen { .. })));
        assert!(matches!(read_all(")"), Err(SexpError::UnexpectedClose { .. })));
    }
}
