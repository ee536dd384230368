//! Pixel selections: `all`, a half-open range `a..b` or a list `i,j,k`.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use eopt::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum PixelSelection {
    #[default]
    All,
    Range(usize, usize),
    List(Vec<usize>),
}

impl PixelSelection {
    /// Explicit indices, or `None` for all pixels.
    pub fn indices(&self) -> Option<Vec<usize>> {
        match self {
            PixelSelection::All => None,
            PixelSelection::Range(a, b) => Some((*a..*b).collect()),
            PixelSelection::List(v) => Some(v.clone()),
        }
    }

    /// Contiguous range within `n` pixels.
    pub fn range(&self, n: usize) -> Result<Range<usize>> {
        match self {
            PixelSelection::All => Ok(0..n),
            PixelSelection::Range(a, b) => Ok(*a..*b),
            PixelSelection::List(_) => Err(Error::Config("this subcommand needs `all` or a range a..b".into())),
        }
    }
}

impl FromStr for PixelSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |why: &str| Error::Config(format!("pixel selection {s:?}: {why}"));
        let num = |t: &str| t.trim().parse::<usize>().map_err(|e| bad(&e.to_string()));
        if s == "all" {
            return Ok(PixelSelection::All);
        }
        if let Some((a, b)) = s.split_once("..") {
            let (a, b) = (num(a)?, num(b)?);
            if a >= b {
                return Err(bad("empty range"));
            }
            return Ok(PixelSelection::Range(a, b));
        }
        let list = s.split(',').map(num).collect::<Result<Vec<_>>>()?;
        Ok(PixelSelection::List(list))
    }
}

impl fmt::Display for PixelSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PixelSelection::All => f.write_str("all"),
            PixelSelection::Range(a, b) => write!(f, "{a}..{b}"),
            PixelSelection::List(v) => {
                let parts: Vec<String> = v.iter().map(|i| i.to_string()).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_render() {
        for text in ["all", "3..9", "4", "1,5,2"] {
            let sel: PixelSelection = text.parse().unwrap();
            assert_eq!(sel.to_string(), text);
        }
        assert_eq!("2..4".parse::<PixelSelection>().unwrap().indices(), Some(vec![2, 3]));
        assert_eq!(PixelSelection::All.range(5).unwrap(), 0..5);
        assert!("1,2".parse::<PixelSelection>().unwrap().range(5).is_err());
        for bad in ["", "4..4", "a..3", "1,,2", "-1"] {
            assert!(bad.parse::<PixelSelection>().is_err(), "{bad}");
        }
    }
}
