use super::DataError;
use std::fmt;

/// One additive term of a model formula.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Var(String),
    /// `a:b[:c...]`
    Interaction(Vec<String>),
    /// `x^2`, numeric only
    Square(String),
}

impl Term {
    pub fn variables(&self) -> Vec<&str> {
        match self {
            Term::Var(v) | Term::Square(v) => vec![v.as_str()],
            Term::Interaction(vs) => vs.iter().map(String::as_str).collect(),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "{v}"),
            Term::Interaction(vs) => write!(f, "{}", vs.join(":")),
            Term::Square(v) => write!(f, "{v}^2"),
        }
    }
}

/// Right-hand side of a model formula, e.g. `gender + program + math + gender:program`.
/// The intercept is implicit; `1` or an empty string means intercept only.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Formula {
    pub terms: Vec<Term>,
}

fn check_name(name: &str, src: &str) -> Result<String, DataError> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_alphanumeric() || c == '_' || c == '.');
    if ok {
        Ok(name.to_string())
    } else {
        Err(DataError::Formula(format!(
            "bad variable name {name:?} in {src:?}"
        )))
    }
}

impl Formula {
    pub fn parse(src: &str) -> Result<Formula, DataError> {
        let body = src.rsplit_once('~').map_or(src, |(_, rhs)| rhs).trim();
        if body.is_empty() || body == "1" {
            return Ok(Formula::default());
        }
        let mut terms = Vec::new();
        for raw in body.split('+') {
            let raw = raw.trim();
            if raw == "1" {
                continue;
            }
            let term = if raw.contains(':') {
                let parts = raw
                    .split(':')
                    .map(|p| check_name(p.trim(), src))
                    .collect::<Result<Vec<_>, _>>()?;
                Term::Interaction(parts)
            } else if let Some((base, power)) = raw.split_once('^') {
                if power.trim() != "2" {
                    return Err(DataError::Formula(format!(
                        "only squares are supported, got {raw:?}"
                    )));
                }
                Term::Square(check_name(base.trim(), src)?)
            } else {
                Term::Var(check_name(raw, src)?)
            };
            if !terms.contains(&term) {
                terms.push(term);
            }
        }
        Ok(Formula { terms })
    }

    /// Distinct variables in order of first appearance.
    pub fn variables(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for v in self.terms.iter().flat_map(Term::variables) {
            if !out.contains(&v) {
                out.push(v);
            }
        }
        out
    }

    pub fn without(&self, dropped: &Formula) -> Formula {
        Formula {
            terms: self
                .terms
                .iter()
                .filter(|t| !dropped.terms.contains(t))
                .cloned()
                .collect(),
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "1");
        }
        let parts: Vec<String> = self.terms.iter().map(Term::to_string).collect();
        write!(f, "{}", parts.join(" + "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_terms() {
        let f = Formula::parse("gender + program + math + gender:program + size^2").unwrap();
        assert_eq!(
            f.terms,
            vec![
                Term::Var("gender".into()),
                Term::Var("program".into()),
                Term::Var("math".into()),
                Term::Interaction(vec!["gender".into(), "program".into()]),
                Term::Square("size".into()),
            ]
        );
        assert_eq!(f.variables(), vec!["gender", "program", "math", "size"]);
        assert_eq!(
            f.to_string(),
            "gender + program + math + gender:program + size^2"
        );
    }

    #[test]
    fn intercept_only_and_lhs() {
        assert!(Formula::parse("1").unwrap().terms.is_empty());
        assert!(Formula::parse("").unwrap().terms.is_empty());
        let f = Formula::parse("y ~ x + 1").unwrap();
        assert_eq!(f.terms, vec![Term::Var("x".into())]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Formula::parse("x^3").is_err());
        assert!(Formula::parse("x + + z").is_err());
        assert!(Formula::parse("a*b").is_err());
    }

    #[test]
    fn without_removes_terms() {
        let full = Formula::parse("a + b + a:b").unwrap();
        let drop = Formula::parse("a:b").unwrap();
        assert_eq!(full.without(&drop).to_string(), "a + b");
    }
}
