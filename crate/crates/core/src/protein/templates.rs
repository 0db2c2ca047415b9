//! Idealized rigid-group geometry per residue type.
//!
//! Each residue is split into up to eight rigid groups: backbone, pre-ω, φ,
//! ψ and χ1..χ4. A group's atoms have fixed local coordinates; the group is
//! placed by its default frame relative to its parent followed by a rotation
//! about the local x-axis by the group's torsion.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::Matrix3;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::residue::{ResidueType, NUM_RESIDUE_TYPES};
use crate::error::{Error, Result};
use crate::geom::{Rigid, Rotation, Vec3};

pub const ATOMS_PER_RESIDUE: usize = 14;
pub const NUM_TORSIONS: usize = 7;
pub const TEMPLATE_FORMAT: &str = "fourdfold-templates";
pub const TEMPLATE_VERSION: u32 = 1;

/// Torsion slot indices.
pub const OMEGA: usize = 0;
pub const PHI: usize = 1;
pub const PSI: usize = 2;
pub const CHI1: usize = 3;

const BUNDLED: &str = include_str!("../../data/residue_templates.json");

#[derive(Clone, Debug)]
pub struct RigidGroup {
    pub index: usize,
    pub torsion: Option<usize>,
    pub parent: Option<usize>,
    /// Default transform from this group's frame to its parent's frame.
    pub default_frame: Rigid,
    /// `(atom14 slot, local coordinates in Å)`.
    pub atoms: Vec<(usize, Vec3)>,
}

#[derive(Clone, Debug)]
pub struct ResidueTemplate {
    pub residue: ResidueType,
    pub atom_names: Vec<String>,
    pub chi_atoms: Vec<[usize; 4]>,
    pub symmetric_chi: Vec<usize>,
    pub renaming_swaps: Vec<(usize, usize)>,
    pub groups: Vec<RigidGroup>,
}

impl ResidueTemplate {
    pub fn atom_slot(&self, name: &str) -> Option<usize> {
        self.atom_names.iter().position(|a| a == name)
    }

    pub fn num_atoms(&self) -> usize {
        self.atom_names.len()
    }

    pub fn num_chi(&self) -> usize {
        self.chi_atoms.len()
    }

    /// Torsions defined by residue type alone; ω and φ additionally require a
    /// preceding residue.
    pub fn torsion_mask(&self) -> [bool; NUM_TORSIONS] {
        let mut m = [true, true, true, false, false, false, false];
        for k in 0..self.num_chi() {
            m[CHI1 + k] = true;
        }
        m
    }

    pub fn group(&self, index: usize) -> Option<&RigidGroup> {
        self.groups.iter().find(|g| g.index == index)
    }
}

#[derive(Clone, Debug)]
pub struct RigidGroupTemplates {
    pub version: u32,
    pub checksum: String,
    residues: Vec<ResidueTemplate>,
}

#[derive(Deserialize)]
struct RawFile {
    format: String,
    version: u32,
    checksum: String,
    residues: serde_json::Value,
}

#[derive(Deserialize)]
struct RawResidue {
    atoms14: Vec<String>,
    chi_atoms: Vec<Vec<String>>,
    symmetric_chi: Vec<usize>,
    renaming_swaps: BTreeMap<String, String>,
    groups: Vec<RawGroup>,
}

#[derive(Deserialize)]
struct RawGroup {
    index: usize,
    torsion: Option<usize>,
    parent: Option<usize>,
    atoms: Vec<RawAtom>,
    frame: RawFrame,
}

#[derive(Deserialize)]
struct RawAtom {
    name: String,
    pos: [f64; 3],
}

#[derive(Deserialize)]
struct RawFrame {
    rot: [[f64; 3]; 3],
    trans: [f64; 3],
}

/// SHA-256 over the compact serialization of the `residues` object (keys
/// sorted).
pub fn residues_checksum(residues: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(residues).expect("value serializes");
    Sha256::digest(canonical.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl RigidGroupTemplates {
    /// The bundled table, parsed once.
    pub fn standard() -> &'static RigidGroupTemplates {
        static CELL: OnceLock<RigidGroupTemplates> = OnceLock::new();
        CELL.get_or_init(|| {
            RigidGroupTemplates::from_json_str(BUNDLED).expect("bundled templates are valid")
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: RawFile = serde_json::from_str(text)?;
        if raw.format != TEMPLATE_FORMAT {
            return Err(Error::Parse(format!(
                "unexpected template format '{}'",
                raw.format
            )));
        }
        if raw.version != TEMPLATE_VERSION {
            return Err(Error::Parse(format!(
                "unsupported template version {}",
                raw.version
            )));
        }
        let found = residues_checksum(&raw.residues);
        if found != raw.checksum {
            return Err(Error::Checksum {
                expected: raw.checksum,
                found,
            });
        }
        let map: BTreeMap<String, RawResidue> = serde_json::from_value(raw.residues)?;
        let mut residues = Vec::with_capacity(NUM_RESIDUE_TYPES);
        for rt in ResidueType::ALL {
            let r = map.get(rt.three_letter()).ok_or_else(|| {
                Error::Parse(format!("template table lacks {}", rt.three_letter()))
            })?;
            residues.push(convert_residue(rt, r)?);
        }
        Ok(RigidGroupTemplates {
            version: raw.version,
            checksum: found,
            residues,
        })
    }

    pub fn get(&self, r: ResidueType) -> &ResidueTemplate {
        &self.residues[r.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ResidueTemplate> {
        self.residues.iter()
    }
}

fn convert_residue(rt: ResidueType, r: &RawResidue) -> Result<ResidueTemplate> {
    if r.atoms14.len() > ATOMS_PER_RESIDUE {
        return Err(Error::Parse(format!("{rt}: more than 14 atoms")));
    }
    let slot = |name: &str| -> Result<usize> {
        r.atoms14
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| Error::Parse(format!("{rt}: unknown atom {name}")))
    };
    let mut chi_atoms = Vec::new();
    for quad in &r.chi_atoms {
        if quad.len() != 4 {
            return Err(Error::Parse(format!("{rt}: chi definition needs 4 atoms")));
        }
        chi_atoms.push([
            slot(&quad[0])?,
            slot(&quad[1])?,
            slot(&quad[2])?,
            slot(&quad[3])?,
        ]);
    }
    let mut renaming_swaps = Vec::new();
    for (a, b) in &r.renaming_swaps {
        renaming_swaps.push((slot(a)?, slot(b)?));
    }
    let mut groups = Vec::new();
    for g in &r.groups {
        let m = Matrix3::from_fn(|i, j| g.frame.rot[i][j]);
        let rot = Rotation::from_matrix_unchecked(m);
        if rot.orthonormality_error() > 1e-9 {
            return Err(Error::Parse(format!(
                "{rt}: group {} frame not orthonormal",
                g.index
            )));
        }
        let atoms = g
            .atoms
            .iter()
            .map(|a| Ok((slot(&a.name)?, Vec3::new(a.pos[0], a.pos[1], a.pos[2]))))
            .collect::<Result<Vec<_>>>()?;
        groups.push(RigidGroup {
            index: g.index,
            torsion: g.torsion,
            parent: g.parent,
            default_frame: Rigid::new(rot, Vec3::new(g.frame.trans[0], g.frame.trans[1], g.frame.trans[2])),
            atoms,
        });
    }
    groups.sort_by_key(|g| g.index);
    Ok(ResidueTemplate {
        residue: rt,
        atom_names: r.atoms14.clone(),
        chi_atoms,
        symmetric_chi: r.symmetric_chi.clone(),
        renaming_swaps,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_heavy_atom_in_exactly_one_group() {
        let t = RigidGroupTemplates::standard();
        for res in t.iter() {
            let mut count = vec![0; res.num_atoms()];
            for g in &res.groups {
                for (slot, _) in &g.atoms {
                    count[*slot] += 1;
                }
            }
            assert!(count.iter().all(|&c| c == 1), "{}: {count:?}", res.residue);
            assert_eq!(&res.atom_names[..4], &["N", "CA", "C", "O"]);
        }
    }

    #[test]
    fn backbone_group_has_ca_at_origin() {
        for res in RigidGroupTemplates::standard().iter() {
            let bb = res.group(0).unwrap();
            let ca = bb.atoms.iter().find(|(s, _)| *s == 1).unwrap().1;
            assert_eq!(ca, Vec3::zeros());
            for slot in [0, 2] {
                assert!(bb.atoms.iter().any(|(s, _)| *s == slot));
            }
        }
    }

    #[test]
    fn glycine_and_alanine_have_no_chi() {
        let t = RigidGroupTemplates::standard();
        assert_eq!(t.get(ResidueType::Gly).num_chi(), 0);
        assert_eq!(t.get(ResidueType::Ala).num_chi(), 0);
        assert_eq!(t.get(ResidueType::Arg).num_chi(), 4);
        assert_eq!(t.get(ResidueType::Trp).num_atoms(), 14);
    }

    #[test]
    fn tampered_table_fails_checksum() {
        let tampered = BUNDLED.replacen("1.526", "1.527", 1);
        assert!(matches!(
            RigidGroupTemplates::from_json_str(&tampered),
            Err(Error::Checksum { .. })
        ));
    }
}
