use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The 20 standard amino acids, in the usual alphabetical one-letter order
/// of their three-letter names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ResidueType {
    Ala,
    Arg,
    Asn,
    Asp,
    Cys,
    Gln,
    Glu,
    Gly,
    His,
    Ile,
    Leu,
    Lys,
    Met,
    Phe,
    Pro,
    Ser,
    Thr,
    Trp,
    Tyr,
    Val,
}

pub const NUM_RESIDUE_TYPES: usize = 20;

const ONE: [char; NUM_RESIDUE_TYPES] = [
    'A', 'R', 'N', 'D', 'C', 'Q', 'E', 'G', 'H', 'I', 'L', 'K', 'M', 'F', 'P', 'S', 'T', 'W', 'Y',
    'V',
];

const THREE: [&str; NUM_RESIDUE_TYPES] = [
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE", "LEU", "LYS", "MET",
    "PHE", "PRO", "SER", "THR", "TRP", "TYR", "VAL",
];

impl ResidueType {
    pub const ALL: [ResidueType; NUM_RESIDUE_TYPES] = [
        ResidueType::Ala,
        ResidueType::Arg,
        ResidueType::Asn,
        ResidueType::Asp,
        ResidueType::Cys,
        ResidueType::Gln,
        ResidueType::Glu,
        ResidueType::Gly,
        ResidueType::His,
        ResidueType::Ile,
        ResidueType::Leu,
        ResidueType::Lys,
        ResidueType::Met,
        ResidueType::Phe,
        ResidueType::Pro,
        ResidueType::Ser,
        ResidueType::Thr,
        ResidueType::Trp,
        ResidueType::Tyr,
        ResidueType::Val,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn one_letter(self) -> char {
        ONE[self.index()]
    }

    pub fn three_letter(self) -> &'static str {
        THREE[self.index()]
    }

    pub fn from_one_letter(c: char) -> Result<Self, Error> {
        ONE.iter()
            .position(|&x| x == c.to_ascii_uppercase())
            .map(|i| Self::ALL[i])
            .ok_or_else(|| Error::UnknownResidue(c.to_string()))
    }

    pub fn from_three_letter(s: &str) -> Result<Self, Error> {
        let up = s.trim().to_ascii_uppercase();
        THREE
            .iter()
            .position(|&x| x == up)
            .map(|i| Self::ALL[i])
            .ok_or_else(|| Error::UnknownResidue(s.to_string()))
    }
}

impl fmt::Display for ResidueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.three_letter())
    }
}

impl FromStr for ResidueType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Self::from_one_letter(c),
            _ => Self::from_three_letter(s),
        }
    }
}

/// Parses a one-letter sequence string such as `"ACDG"`.
pub fn parse_sequence(s: &str) -> Result<Vec<ResidueType>, Error> {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .map(ResidueType::from_one_letter)
        .collect()
}

pub fn sequence_string(seq: &[ResidueType]) -> String {
    seq.iter().map(|r| r.one_letter()).collect()
}
