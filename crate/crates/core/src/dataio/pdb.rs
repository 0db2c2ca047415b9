use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::protein::{
    frames_from_backbone, state_atoms, torsions_from_atoms, AtomSet, ProteinState, ResidueType,
    RigidGroupTemplates, Trajectory, ATOMS_PER_RESIDUE, NUM_TORSIONS, OMEGA, PHI, SLOT_C, SLOT_CA,
    SLOT_N,
};

/// PDB files carry no time axis; this spacing (ps) is assigned on read.
pub const PDB_DEFAULT_DT: f64 = 1.0;

struct ParsedResidue {
    kind: ResidueType,
    key: (i32, char),
    atoms: [Option<Vec3>; ATOMS_PER_RESIDUE],
}

fn field(line: &str, start: usize, end: usize) -> &str {
    let end = end.min(line.len());
    if start >= end {
        return "";
    }
    line.get(start..end).unwrap_or("").trim()
}

fn parse_f64(line: &str, start: usize, end: usize, lineno: usize) -> Result<f64> {
    field(line, start, end)
        .parse()
        .map_err(|_| Error::Parse(format!("line {lineno}: bad coordinate field")))
}

/// Parses every model into per-residue atom tables. Only the first chain of
/// each model is kept; hydrogens, terminal oxygens and other atoms outside
/// the heavy-atom layout are ignored, as are alternate locations other than
/// blank, `A` or `1`.
fn parse_models(text: &str) -> Result<Vec<Vec<ParsedResidue>>> {
    let templates = RigidGroupTemplates::standard();
    let mut models = Vec::new();
    let mut current: Vec<ParsedResidue> = Vec::new();
    let mut chain: Option<char> = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let record = field(line, 0, 6);
        match record {
            "MODEL" | "ENDMDL" => {
                if !current.is_empty() {
                    models.push(std::mem::take(&mut current));
                }
                chain = None;
            }
            "ATOM" | "HETATM" => {
                if line.len() < 54 {
                    return Err(Error::Parse(format!("line {lineno}: truncated atom record")));
                }
                let altloc = line[16..17].chars().next().unwrap_or(' ');
                if !matches!(altloc, ' ' | 'A' | '1') {
                    continue;
                }
                let resname = field(line, 17, 20);
                let kind = match ResidueType::from_three_letter(resname) {
                    Ok(k) => k,
                    Err(e) if record == "ATOM" => return Err(e),
                    Err(_) => continue,
                };
                let ch = line[21..22].chars().next().unwrap_or(' ');
                match chain {
                    None => chain = Some(ch),
                    Some(c) if c != ch => continue,
                    _ => {}
                }
                let resseq: i32 = field(line, 22, 26)
                    .parse()
                    .map_err(|_| Error::Parse(format!("line {lineno}: bad residue number")))?;
                let icode = line[26..27].chars().next().unwrap_or(' ');
                let key = (resseq, icode);
                let pos = Vec3::new(
                    parse_f64(line, 30, 38, lineno)?,
                    parse_f64(line, 38, 46, lineno)?,
                    parse_f64(line, 46, 54, lineno)?,
                );
                if current.last().map(|r| r.key) != Some(key) {
                    current.push(ParsedResidue {
                        kind,
                        key,
                        atoms: [None; ATOMS_PER_RESIDUE],
                    });
                }
                let res = current.last_mut().expect("pushed above");
                if res.kind != kind {
                    return Err(Error::Parse(format!(
                        "line {lineno}: residue {resseq} changes type"
                    )));
                }
                if let Some(slot) = templates.get(kind).atom_slot(field(line, 12, 16)) {
                    res.atoms[slot].get_or_insert(pos);
                }
            }
            _ => {}
        }
    }
    if !current.is_empty() {
        models.push(current);
    }
    Ok(models)
}

fn model_state(model: usize, residues: &[ParsedResidue]) -> Result<ProteinState> {
    let templates = RigidGroupTemplates::standard();
    let seq: Vec<ResidueType> = residues.iter().map(|r| r.kind).collect();
    let mut atoms = AtomSet::empty(residues.len());
    let mut frames = Vec::with_capacity(residues.len());
    for (i, r) in residues.iter().enumerate() {
        let need = |slot: usize, name: &str| {
            r.atoms[slot].ok_or_else(|| Error::MissingBackbone {
                model,
                residue: i + 1,
                atom: name.to_string(),
            })
        };
        let (n, ca, c) = (need(SLOT_N, "N")?, need(SLOT_CA, "CA")?, need(SLOT_C, "C")?);
        frames.push(frames_from_backbone(&n, &ca, &c)?);
        for (slot, p) in r.atoms.iter().enumerate() {
            if let Some(p) = p {
                atoms.coords[i][slot] = *p;
                atoms.exists[i][slot] = true;
            }
        }
    }
    let torsions = torsions_from_atoms(&seq, &atoms, templates)?;
    ProteinState::new(seq, frames, torsions)
}

/// Builds a trajectory from multi-model PDB text. Model and residue numbers
/// in errors are 1-based positions in the file.
pub fn trajectory_from_pdb(text: &str) -> Result<Trajectory> {
    let models = parse_models(text)?;
    if models.is_empty() {
        return Err(Error::Parse("no atom records found".into()));
    }
    let mut states: Vec<ProteinState> = Vec::with_capacity(models.len());
    for (k, residues) in models.iter().enumerate() {
        let state = model_state(k + 1, residues)?;
        if let Some(first) = states.first() {
            if first.sequence != state.sequence {
                return Err(Error::SequenceMismatch(format!(
                    "model {} has {} residues differing from model 1",
                    k + 1,
                    state.len()
                )));
            }
        }
        states.push(state);
    }
    Trajectory::new(states, PDB_DEFAULT_DT)
}

pub fn read_pdb(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    trajectory_from_pdb(&text)
}

/// Atoms whose rigid group hangs below a masked torsion are left out, so
/// missing side chains stay missing.
fn visible_slots(
    kind: ResidueType,
    mask: &[bool; NUM_TORSIONS],
    templates: &RigidGroupTemplates,
) -> [bool; ATOMS_PER_RESIDUE] {
    let tmpl = templates.get(kind);
    let mut visible = [false; ATOMS_PER_RESIDUE];
    for g in &tmpl.groups {
        let mut ok = true;
        let mut cur = Some(g.index);
        while let Some(idx) = cur {
            let group = tmpl.group(idx).expect("parent group exists");
            if let Some(k) = group.torsion {
                if k != OMEGA && k != PHI && !mask[k] {
                    ok = false;
                }
            }
            cur = group.parent;
        }
        for (slot, _) in &g.atoms {
            visible[*slot] = ok;
        }
    }
    visible
}

fn atom_name_field(name: &str) -> String {
    if name.len() < 4 {
        format!(" {name:<3}")
    } else {
        name.to_string()
    }
}

/// Multi-model PDB text: one MODEL per state, chain A, occupancy 1.00.
/// Atom serials restart at 1 in each model.
pub fn pdb_string(traj: &Trajectory) -> Result<String> {
    traj.validate()?;
    let templates = RigidGroupTemplates::standard();
    let mut out = String::new();
    for (m, state) in traj.states.iter().enumerate() {
        let atoms = state_atoms(state, templates)?;
        writeln!(out, "MODEL     {:>4}", m + 1).expect("string write");
        let mut serial = 0usize;
        for (i, &kind) in state.sequence.iter().enumerate() {
            let tmpl = templates.get(kind);
            let visible = visible_slots(kind, &state.torsions[i].mask, templates);
            for (slot, name) in tmpl.atom_names.iter().enumerate() {
                if !visible[slot] {
                    continue;
                }
                let p = atoms.coords[i][slot];
                if !p.iter().all(|x| x.is_finite()) {
                    return Err(Error::NonFinite(format!("atom {name} of residue {}", i + 1)));
                }
                serial += 1;
                let element = &name[..1];
                writeln!(
                    out,
                    "ATOM  {:>5} {} {:>3} A{:>4}    {:>8.3}{:>8.3}{:>8.3}{:>6.2}{:>6.2}          {:>2}",
                    serial,
                    atom_name_field(name),
                    kind.three_letter(),
                    i + 1,
                    p.x,
                    p.y,
                    p.z,
                    1.0,
                    0.0,
                    element
                )
                .expect("string write");
            }
        }
        writeln!(out, "TER").expect("string write");
        writeln!(out, "ENDMDL").expect("string write");
    }
    writeln!(out, "END").expect("string write");
    Ok(out)
}

pub fn write_pdb(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = pdb_string(traj)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
