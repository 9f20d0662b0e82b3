use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MunitError, Result};

/// One side of the translation pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    One,
    Two,
}

impl Domain {
    pub const BOTH: [Domain; 2] = [Domain::One, Domain::Two];

    /// Zero-based index.
    pub fn index(self) -> usize {
        match self {
            Domain::One => 0,
            Domain::Two => 1,
        }
    }

    /// One-based number as used in file names and on the command line.
    pub fn number(self) -> usize {
        self.index() + 1
    }

    pub fn other(self) -> Domain {
        match self {
            Domain::One => Domain::Two,
            Domain::Two => Domain::One,
        }
    }

    pub fn from_number(n: usize) -> Result<Domain> {
        match n {
            1 => Ok(Domain::One),
            2 => Ok(Domain::Two),
            _ => Err(MunitError::Invalid(format!("domain must be 1 or 2, got {n}"))),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for Domain {
    type Err = MunitError;

    fn from_str(s: &str) -> Result<Self> {
        let n: usize = s
            .trim()
            .parse()
            .map_err(|_| MunitError::Invalid(format!("domain must be 1 or 2, got `{s}`")))?;
        Domain::from_number(n)
    }
}
