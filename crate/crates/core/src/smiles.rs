//! SMILES parsing into a validated molecular graph.
//!
//! Covers the organic subset (B, C, N, O, P, S, F, Cl, Br, I), aromatic
//! lowercase forms, bracket atoms with charge and explicit hydrogen count,
//! bond symbols `- = # :`, parenthesized branches, ring closures (single
//! digit and `%nn`), and dot-separated components. Stereochemistry, isotopes
//! and wildcard atoms are outside the subset and raise
//! [`ParseError::Unsupported`].
//!
//! Implicit hydrogens follow the usual default valences (B 3, C 4, N 3,
//! O 2, P 3, S 2, halogens 1, Si 4). Aromatic bonds count 1.5 toward an
//! atom's bond-order sum, except at aromatic O/S where they count 1.0 (the
//! lone-pair donor convention; otherwise furan and thiophene would fail the
//! valence check). The per-atom sum is floored before comparing against the
//! default valence, so ring-fusion carbons with three aromatic bonds pass.

use std::collections::HashMap;
use thiserror::Error;

use crate::autodiff::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Element {
    C,
    N,
    O,
    S,
    F,
    Cl,
    Br,
    I,
    P,
    B,
    Si,
    Other,
}

impl Element {
    /// One-hot bin in the node-feature layout.
    pub fn feature_bin(self) -> usize {
        match self {
            Element::C => 0,
            Element::N => 1,
            Element::O => 2,
            Element::S => 3,
            Element::F => 4,
            Element::Cl => 5,
            Element::Br => 6,
            Element::I => 7,
            Element::P => 8,
            Element::B => 9,
            Element::Si => 10,
            Element::Other => 11,
        }
    }

    /// Default valence used for implicit-hydrogen assignment; `None` for
    /// elements outside the organic-subset table (no check, no implicit H).
    pub fn default_valence(self) -> Option<u32> {
        match self {
            Element::B => Some(3),
            Element::C => Some(4),
            Element::N => Some(3),
            Element::O => Some(2),
            Element::P => Some(3),
            Element::S => Some(2),
            Element::F | Element::Cl | Element::Br | Element::I => Some(1),
            Element::Si => Some(4),
            Element::Other => None,
        }
    }

    fn from_symbol(sym: &str) -> Option<Element> {
        Some(match sym {
            "C" => Element::C,
            "N" => Element::N,
            "O" => Element::O,
            "S" => Element::S,
            "F" => Element::F,
            "Cl" => Element::Cl,
            "Br" => Element::Br,
            "I" => Element::I,
            "P" => Element::P,
            "B" => Element::B,
            "Si" => Element::Si,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// One-hot bin in the bond-feature layout.
    pub fn feature_bin(self) -> usize {
        match self {
            BondOrder::Single => 0,
            BondOrder::Double => 1,
            BondOrder::Triple => 2,
            BondOrder::Aromatic => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub element: Element,
    /// Clamped to [-2, 2] at parse time; larger written charges parse fine.
    pub formal_charge: i32,
    pub is_aromatic: bool,
    pub implicit_h: u32,
    /// Count of heavy-atom neighbors; kept consistent with the bond list.
    pub degree: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
    pub is_conjugated: bool,
    /// Set by ring perception (`molgraph::apply_ring_flags`).
    pub in_ring: bool,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if atom == self.a {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MolGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    /// Neighbor atom indices per atom, ascending.
    pub adjacency: Vec<Vec<usize>>,
}

impl MolGraph {
    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_between(&self, i: usize, j: usize) -> Option<&Bond> {
        self.bonds
            .iter()
            .find(|b| (b.a == i && b.b == j) || (b.a == j && b.b == i))
    }

    /// True when the atom belongs to some perceived ring (any incident bond
    /// is flagged in-ring).
    pub fn atom_in_ring(&self, i: usize) -> bool {
        self.bonds
            .iter()
            .any(|b| b.in_ring && (b.a == i || b.b == i))
    }

    /// Connected-component count (dot-separated inputs are disconnected).
    pub fn num_components(&self) -> usize {
        let n = self.n_atoms();
        let mut seen = vec![false; n];
        let mut count = 0;
        for start in 0..n {
            if seen[start] {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(u) = stack.pop() {
                for &v in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        count
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("empty SMILES input")]
    EmptyInput,
    #[error("input is not ASCII")]
    NonAscii,
    #[error("unclosed ring index {0}")]
    UnclosedRing(u32),
    #[error("unmatched parenthesis")]
    UnmatchedParen,
    #[error("unknown atom symbol '{0}'")]
    UnknownAtom(String),
    #[error(
        "valence violation on atom {atom}: bond-order sum {order_sum} exceeds allowed {allowed}"
    )]
    ValenceViolation {
        atom: usize,
        order_sum: u32,
        allowed: u32,
    },
    #[error("empty component (stray dot)")]
    EmptyComponent,
    #[error("unsupported SMILES feature '{0}' (stereochemistry, isotopes and wildcards are outside the subset)")]
    Unsupported(char),
    #[error("unexpected character '{0}' at byte {1}")]
    UnexpectedChar(char, usize),
    #[error("dangling bond symbol")]
    DanglingBond,
    #[error("ring closure {0} would duplicate an existing bond or form a self-loop")]
    BadRingClosure(u32),
    #[error("conflicting bond symbols on ring closure {0}")]
    RingBondConflict(u32),
    #[error("malformed bracket atom")]
    BadBracket,
}

// `explicit_h: Some(_)` doubles as the bracket-atom marker: bracket atoms
// state their hydrogen count and skip the valence check.
struct PendingAtom {
    element: Element,
    aromatic: bool,
    charge: i32,
    explicit_h: Option<u32>,
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    atoms: Vec<PendingAtom>,
    bonds: Vec<(usize, usize, Option<BondOrder>)>,
    prev: Option<usize>,
    pending_bond: Option<BondOrder>,
    branch_stack: Vec<usize>,
    ring_open: HashMap<u32, (usize, Option<BondOrder>)>,
    atoms_in_component: usize,
}

impl<'a> Parser<'a> {
    fn new(input: &'a str) -> Self {
        Parser {
            bytes: input.as_bytes(),
            pos: 0,
            atoms: Vec::new(),
            bonds: Vec::new(),
            prev: None,
            pending_bond: None,
            branch_stack: Vec::new(),
            ring_open: HashMap::new(),
            atoms_in_component: 0,
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.peek();
        if b.is_some() {
            self.pos += 1;
        }
        b
    }

    fn push_atom(&mut self, atom: PendingAtom) {
        let idx = self.atoms.len();
        self.atoms.push(atom);
        self.atoms_in_component += 1;
        if let Some(p) = self.prev {
            let order = self.pending_bond.take();
            self.bonds.push((p, idx, order));
        }
        self.prev = Some(idx);
    }

    fn organic_atom(&mut self, first: u8) -> Result<(), ParseError> {
        let (element, aromatic, consumed) = match first {
            b'C' if self.peek() == Some(b'l') => (Element::Cl, false, 1),
            b'B' if self.peek() == Some(b'r') => (Element::Br, false, 1),
            b'B' => (Element::B, false, 0),
            b'C' => (Element::C, false, 0),
            b'N' => (Element::N, false, 0),
            b'O' => (Element::O, false, 0),
            b'P' => (Element::P, false, 0),
            b'S' => (Element::S, false, 0),
            b'F' => (Element::F, false, 0),
            b'I' => (Element::I, false, 0),
            b'b' => (Element::B, true, 0),
            b'c' => (Element::C, true, 0),
            b'n' => (Element::N, true, 0),
            b'o' => (Element::O, true, 0),
            b'p' => (Element::P, true, 0),
            b's' => (Element::S, true, 0),
            _ => return Err(ParseError::UnknownAtom((first as char).to_string())),
        };
        self.pos += consumed;
        self.push_atom(PendingAtom {
            element,
            aromatic,
            charge: 0,
            explicit_h: None,
        });
        Ok(())
    }

    fn bracket_atom(&mut self) -> Result<(), ParseError> {
        // '[' already consumed
        let mut b = self.bump().ok_or(ParseError::BadBracket)?;
        if b.is_ascii_digit() {
            return Err(ParseError::Unsupported(b as char)); // isotope
        }
        if b == b'*' {
            return Err(ParseError::Unsupported('*'));
        }
        let mut sym = String::new();
        let aromatic;
        if b.is_ascii_lowercase() {
            sym.push(b as char);
            // two-letter aromatic symbols (se, as)
            if let Some(next) = self.peek() {
                if next.is_ascii_lowercase() && matches!(sym.as_str(), "s" | "a") {
                    let two = format!("{}{}", sym, next as char);
                    if two == "se" || two == "as" {
                        sym = two;
                        self.pos += 1;
                    }
                }
            }
            aromatic = true;
            let known = matches!(
                sym.as_str(),
                "b" | "c" | "n" | "o" | "p" | "s" | "se" | "as"
            );
            if !known {
                return Err(ParseError::UnknownAtom(sym));
            }
        } else if b.is_ascii_uppercase() {
            sym.push(b as char);
            if let Some(next) = self.peek() {
                if next.is_ascii_lowercase() && next != b'H' {
                    // Take a second letter only if it cannot be the explicit-H
                    // marker; 'H' is never lowercase here.
                    sym.push(next as char);
                    self.pos += 1;
                }
            }
            aromatic = false;
        } else {
            return Err(ParseError::BadBracket);
        }

        let element = if aromatic {
            match sym.as_str() {
                "b" => Element::B,
                "c" => Element::C,
                "n" => Element::N,
                "o" => Element::O,
                "p" => Element::P,
                "s" => Element::S,
                _ => Element::Other,
            }
        } else {
            Element::from_symbol(&sym).unwrap_or(Element::Other)
        };

        let mut explicit_h: u32 = 0;
        let mut charge: i32 = 0;
        loop {
            b = self.bump().ok_or(ParseError::BadBracket)?;
            match b {
                b']' => break,
                b'@' => return Err(ParseError::Unsupported('@')),
                b'H' => {
                    explicit_h = 1;
                    if let Some(d) = self.peek().filter(u8::is_ascii_digit) {
                        explicit_h = (d - b'0') as u32;
                        self.pos += 1;
                    }
                }
                b'+' | b'-' => {
                    let sign: i32 = if b == b'+' { 1 } else { -1 };
                    let mut magnitude = 1;
                    if let Some(d) = self.peek().filter(u8::is_ascii_digit) {
                        magnitude = (d - b'0') as i32;
                        self.pos += 1;
                    } else {
                        while self.peek() == Some(b) {
                            magnitude += 1;
                            self.pos += 1;
                        }
                    }
                    charge = sign * magnitude;
                }
                _ => return Err(ParseError::BadBracket),
            }
        }

        self.push_atom(PendingAtom {
            element,
            aromatic,
            charge: charge.clamp(-2, 2),
            explicit_h: Some(explicit_h),
        });
        Ok(())
    }

    fn ring_closure(&mut self, index: u32) -> Result<(), ParseError> {
        let current = match self.prev {
            Some(p) => p,
            None => return Err(ParseError::UnexpectedChar('0', self.pos)),
        };
        let symbol = self.pending_bond.take();
        match self.ring_open.remove(&index) {
            None => {
                self.ring_open.insert(index, (current, symbol));
            }
            Some((open_atom, open_symbol)) => {
                if open_atom == current {
                    return Err(ParseError::BadRingClosure(index));
                }
                let order = match (open_symbol, symbol) {
                    (Some(x), Some(y)) if x != y => {
                        return Err(ParseError::RingBondConflict(index))
                    }
                    (Some(x), _) | (_, Some(x)) => Some(x),
                    (None, None) => None,
                };
                if self.bonds.iter().any(|&(a, b, _)| {
                    (a, b) == (open_atom, current) || (a, b) == (current, open_atom)
                }) {
                    return Err(ParseError::BadRingClosure(index));
                }
                self.bonds.push((open_atom, current, order));
            }
        }
        Ok(())
    }

    fn end_component(&mut self) -> Result<(), ParseError> {
        if self.atoms_in_component == 0 {
            return Err(ParseError::EmptyComponent);
        }
        if self.pending_bond.is_some() {
            return Err(ParseError::DanglingBond);
        }
        if !self.branch_stack.is_empty() {
            return Err(ParseError::UnmatchedParen);
        }
        if let Some((&index, _)) = self.ring_open.iter().next() {
            return Err(ParseError::UnclosedRing(index));
        }
        self.prev = None;
        self.atoms_in_component = 0;
        Ok(())
    }

    fn run(&mut self) -> Result<(), ParseError> {
        while let Some(b) = self.bump() {
            match b {
                b'A'..=b'Z' => self.organic_atom(b)?,
                b'b' | b'c' | b'n' | b'o' | b'p' | b's' => self.organic_atom(b)?,
                b'[' => self.bracket_atom()?,
                b'-' => self.set_bond(BondOrder::Single)?,
                b'=' => self.set_bond(BondOrder::Double)?,
                b'#' => self.set_bond(BondOrder::Triple)?,
                b':' => self.set_bond(BondOrder::Aromatic)?,
                b'/' | b'\\' | b'@' | b'*' => return Err(ParseError::Unsupported(b as char)),
                b'(' => {
                    let p = self.prev.ok_or(ParseError::UnexpectedChar('(', self.pos))?;
                    self.branch_stack.push(p);
                }
                b')' => {
                    if self.pending_bond.is_some() {
                        return Err(ParseError::DanglingBond);
                    }
                    let p = self.branch_stack.pop().ok_or(ParseError::UnmatchedParen)?;
                    self.prev = Some(p);
                }
                b'0'..=b'9' => self.ring_closure((b - b'0') as u32)?,
                b'%' => {
                    let d1 = self.bump().filter(u8::is_ascii_digit);
                    let d2 = self.bump().filter(u8::is_ascii_digit);
                    match (d1, d2) {
                        (Some(a), Some(c)) => {
                            let index = ((a - b'0') as u32) * 10 + (c - b'0') as u32;
                            self.ring_closure(index)?;
                        }
                        _ => return Err(ParseError::UnexpectedChar('%', self.pos)),
                    }
                }
                b'.' => self.end_component()?,
                other if other.is_ascii_lowercase() => {
                    return Err(ParseError::UnknownAtom((other as char).to_string()))
                }
                other => return Err(ParseError::UnexpectedChar(other as char, self.pos)),
            }
        }
        self.end_component()
    }

    fn set_bond(&mut self, order: BondOrder) -> Result<(), ParseError> {
        if self.prev.is_none() || self.pending_bond.is_some() {
            return Err(ParseError::DanglingBond);
        }
        self.pending_bond = Some(order);
        Ok(())
    }
}

/// Bond-order contribution to an atom's valence sum, in tenths to stay in
/// integer arithmetic. Aromatic counts 15 except at aromatic O/S where the
/// ring bond is dative-like and counts 10.
fn order_tenths(order: BondOrder, at: &PendingAtom) -> u32 {
    match order {
        BondOrder::Single => 10,
        BondOrder::Double => 20,
        BondOrder::Triple => 30,
        BondOrder::Aromatic => {
            if at.aromatic && matches!(at.element, Element::O | Element::S) {
                10
            } else {
                15
            }
        }
    }
}

/// Parse a SMILES string into a [`MolGraph`].
///
/// Ring flags on bonds start out `false`; run ring perception
/// ([`crate::molgraph::perceive_rings`] / [`crate::molgraph::apply_ring_flags`])
/// to fill them in.
pub fn parse_smiles(input: &str) -> Result<MolGraph, ParseError> {
    if input.is_empty() {
        return Err(ParseError::EmptyInput);
    }
    if !input.is_ascii() {
        return Err(ParseError::NonAscii);
    }
    let mut parser = Parser::new(input);
    parser.run()?;

    let n = parser.atoms.len();
    // Resolve unspecified bond orders: aromatic when both ends are aromatic
    // atoms, single otherwise.
    let resolved: Vec<(usize, usize, BondOrder)> = parser
        .bonds
        .iter()
        .map(|&(a, b, order)| {
            let order = order.unwrap_or({
                if parser.atoms[a].aromatic && parser.atoms[b].aromatic {
                    BondOrder::Aromatic
                } else {
                    BondOrder::Single
                }
            });
            (a, b, order)
        })
        .collect();

    // Per-atom bond-order sums (tenths), then implicit hydrogens + valence.
    let mut order_sums = vec![0u32; n];
    for &(a, b, order) in &resolved {
        order_sums[a] += order_tenths(order, &parser.atoms[a]);
        order_sums[b] += order_tenths(order, &parser.atoms[b]);
    }

    let mut atoms = Vec::with_capacity(n);
    for (i, pa) in parser.atoms.iter().enumerate() {
        let floored = order_sums[i] / 10;
        let implicit_h = if let Some(h) = pa.explicit_h {
            h
        } else {
            match pa.element.default_valence() {
                Some(v) => {
                    let allowed = v + pa.charge.unsigned_abs();
                    if floored > allowed {
                        return Err(ParseError::ValenceViolation {
                            atom: i,
                            order_sum: floored,
                            allowed,
                        });
                    }
                    v.saturating_sub(floored)
                }
                None => 0,
            }
        };
        atoms.push(Atom {
            element: pa.element,
            formal_charge: pa.charge,
            is_aromatic: pa.aromatic,
            implicit_h,
            degree: 0,
        });
    }

    let mut adjacency = vec![Vec::new(); n];
    let mut bonds = Vec::with_capacity(resolved.len());
    for &(a, b, order) in &resolved {
        adjacency[a].push(b);
        adjacency[b].push(a);
        bonds.push(Bond {
            a,
            b,
            order,
            is_conjugated: false,
            in_ring: false,
        });
    }
    for (i, nbrs) in adjacency.iter_mut().enumerate() {
        nbrs.sort_unstable();
        atoms[i].degree = nbrs.len() as u32;
    }

    // Conjugation: aromatic bonds, plus single bonds whose both endpoints
    // carry some double/triple/aromatic bond.
    let mut has_multiple = vec![false; n];
    for bond in &bonds {
        if bond.order != BondOrder::Single {
            has_multiple[bond.a] = true;
            has_multiple[bond.b] = true;
        }
    }
    for bond in &mut bonds {
        bond.is_conjugated = match bond.order {
            BondOrder::Aromatic => true,
            BondOrder::Single => has_multiple[bond.a] && has_multiple[bond.b],
            _ => false,
        };
    }

    Ok(MolGraph {
        atoms,
        bonds,
        adjacency,
    })
}

/// Node-feature layout: element one-hot (12), degree one-hot (0-5),
/// formal-charge one-hot (-2..=+2), implicit-H one-hot (0-4, clamped),
/// aromatic flag, in-ring flag.
pub const ELEMENT_BINS: usize = 12;
pub const DEGREE_BINS: usize = 6;
pub const CHARGE_BINS: usize = 5;
pub const HYDROGEN_BINS: usize = 5;
pub const NODE_FEATURES: usize = ELEMENT_BINS + DEGREE_BINS + CHARGE_BINS + HYDROGEN_BINS + 2;

/// Per-atom feature matrix, shape `n x NODE_FEATURES`. Deterministic; ring
/// flags reflect whatever ring perception has stamped on the graph.
pub fn node_features(g: &MolGraph) -> Tensor {
    let n = g.n_atoms();
    let mut x = Tensor::zeros(n, NODE_FEATURES);
    for (i, atom) in g.atoms.iter().enumerate() {
        let row = x.row_mut(i);
        row[atom.element.feature_bin()] = 1.0;
        let degree_bin = (atom.degree as usize).min(DEGREE_BINS - 1);
        row[ELEMENT_BINS + degree_bin] = 1.0;
        let charge_bin = (atom.formal_charge.clamp(-2, 2) + 2) as usize;
        row[ELEMENT_BINS + DEGREE_BINS + charge_bin] = 1.0;
        let h_bin = (atom.implicit_h as usize).min(HYDROGEN_BINS - 1);
        row[ELEMENT_BINS + DEGREE_BINS + CHARGE_BINS + h_bin] = 1.0;
        let flags = ELEMENT_BINS + DEGREE_BINS + CHARGE_BINS + HYDROGEN_BINS;
        row[flags] = if atom.is_aromatic { 1.0 } else { 0.0 };
        row[flags + 1] = if g.atom_in_ring(i) { 1.0 } else { 0.0 };
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ethane() {
        let g = parse_smiles("CC").unwrap();
        assert_eq!(g.n_atoms(), 2);
        assert_eq!(g.bonds.len(), 1);
        assert_eq!(g.bonds[0].order, BondOrder::Single);
        assert_eq!(g.atoms[0].implicit_h, 3);
        assert_eq!(g.atoms[1].implicit_h, 3);
    }

    #[test]
    fn benzene() {
        let g = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(g.n_atoms(), 6);
        assert_eq!(g.bonds.len(), 6);
        for atom in &g.atoms {
            assert!(atom.is_aromatic);
            assert_eq!(atom.degree, 2);
            assert_eq!(atom.implicit_h, 1);
        }
        for bond in &g.bonds {
            assert_eq!(bond.order, BondOrder::Aromatic);
            assert!(bond.is_conjugated);
        }
    }

    #[test]
    fn unclosed_ring_is_an_error() {
        assert_eq!(parse_smiles("C1CC"), Err(ParseError::UnclosedRing(1)));
    }

    #[test]
    fn unmatched_parens() {
        assert_eq!(parse_smiles("C(C"), Err(ParseError::UnmatchedParen));
        assert_eq!(parse_smiles("CC)C"), Err(ParseError::UnmatchedParen));
    }

    #[test]
    fn stereo_and_isotopes_rejected() {
        assert_eq!(parse_smiles("C/C=C/C"), Err(ParseError::Unsupported('/')));
        assert_eq!(parse_smiles("[13C]"), Err(ParseError::Unsupported('1')));
        assert_eq!(parse_smiles("[C@H](N)C"), Err(ParseError::Unsupported('@')));
        assert_eq!(parse_smiles("*CC"), Err(ParseError::Unsupported('*')));
    }

    #[test]
    fn valence_violation() {
        assert!(matches!(
            parse_smiles("C(C)(C)(C)(C)C"),
            Err(ParseError::ValenceViolation { .. })
        ));
        // pentavalent nitrogen written bare
        assert!(matches!(
            parse_smiles("N(=O)(=O)C"),
            Err(ParseError::ValenceViolation { .. })
        ));
    }

    #[test]
    fn charges_clamp_but_parse() {
        let g = parse_smiles("[Fe+3]").unwrap();
        assert_eq!(g.atoms[0].element, Element::Other);
        assert_eq!(g.atoms[0].formal_charge, 2); // clamped
        let g = parse_smiles("[O-2]").unwrap();
        assert_eq!(g.atoms[0].formal_charge, -2);
        let g = parse_smiles("[N+](C)(C)(C)C").unwrap();
        assert_eq!(g.atoms[0].formal_charge, 1);
    }

    #[test]
    fn explicit_h_in_brackets() {
        let g = parse_smiles("[NH4+]").unwrap();
        assert_eq!(g.atoms[0].implicit_h, 4);
        assert_eq!(g.atoms[0].formal_charge, 1);
        let g = parse_smiles("[nH]1cccc1").unwrap();
        assert_eq!(g.atoms[0].implicit_h, 1);
        assert!(g.atoms[0].is_aromatic);
    }

    #[test]
    fn dots_split_components() {
        let g = parse_smiles("CC.O").unwrap();
        assert_eq!(g.n_atoms(), 3);
        assert_eq!(g.bonds.len(), 1);
        assert_eq!(g.num_components(), 2);
        assert_eq!(parse_smiles("CC."), Err(ParseError::EmptyComponent));
        assert_eq!(parse_smiles(".CC"), Err(ParseError::EmptyComponent));
        assert_eq!(parse_smiles("C..C"), Err(ParseError::EmptyComponent));
    }

    #[test]
    fn two_letter_elements() {
        let g = parse_smiles("ClCCBr").unwrap();
        assert_eq!(g.atoms[0].element, Element::Cl);
        assert_eq!(g.atoms[3].element, Element::Br);
        assert_eq!(g.atoms[0].implicit_h, 0);
    }

    #[test]
    fn percent_ring_closure() {
        let g = parse_smiles("C%12CCCCC%12").unwrap();
        assert_eq!(g.n_atoms(), 6);
        assert_eq!(g.bonds.len(), 6);
    }

    #[test]
    fn explicit_bond_before_ring_digit() {
        let g = parse_smiles("C=1CCCCC=1").unwrap();
        assert_eq!(g.bonds.len(), 6);
        assert_eq!(g.bond_between(0, 5).unwrap().order, BondOrder::Double);
        assert_eq!(
            parse_smiles("C=1CCCCC#1"),
            Err(ParseError::RingBondConflict(1))
        );
    }

    #[test]
    fn aromatic_ring_closure_bond_defaults_aromatic() {
        let g = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(g.bond_between(0, 5).unwrap().order, BondOrder::Aromatic);
    }

    #[test]
    fn biphenyl_bridge_is_single() {
        let g = parse_smiles("c1ccccc1-c1ccccc1").unwrap();
        assert_eq!(g.n_atoms(), 12);
        assert_eq!(g.bonds.len(), 13);
        assert_eq!(
            g.bond_between(5, 6).map(|b| b.order),
            Some(BondOrder::Single)
        );
    }

    #[test]
    fn furan_and_thiophene_parse() {
        let furan = parse_smiles("c1ccoc1").unwrap();
        let o = furan
            .atoms
            .iter()
            .find(|a| a.element == Element::O)
            .unwrap();
        assert_eq!(o.implicit_h, 0);
        let thiophene = parse_smiles("c1ccsc1").unwrap();
        let s = thiophene
            .atoms
            .iter()
            .find(|a| a.element == Element::S)
            .unwrap();
        assert_eq!(s.implicit_h, 0);
    }

    #[test]
    fn naphthalene_fusion_carbons() {
        let g = parse_smiles("c1ccc2ccccc2c1").unwrap();
        assert_eq!(g.n_atoms(), 10);
        assert_eq!(g.bonds.len(), 11);
        let fused: Vec<_> = g.atoms.iter().filter(|a| a.implicit_h == 0).collect();
        assert_eq!(fused.len(), 2);
    }

    #[test]
    fn conjugation_rule() {
        // butadiene: central single bond flanked by doubles is conjugated
        let g = parse_smiles("C=CC=C").unwrap();
        let central = g.bond_between(1, 2).unwrap();
        assert_eq!(central.order, BondOrder::Single);
        assert!(central.is_conjugated);
        // butane: nothing conjugated
        let g = parse_smiles("CCCC").unwrap();
        assert!(g.bonds.iter().all(|b| !b.is_conjugated));
    }

    #[test]
    fn duplicate_ring_bond_rejected() {
        assert_eq!(parse_smiles("C1C1"), Err(ParseError::BadRingClosure(1)));
        assert_eq!(parse_smiles("C11"), Err(ParseError::BadRingClosure(1)));
    }

    #[test]
    fn unknown_symbols() {
        assert_eq!(
            parse_smiles("CXC"),
            Err(ParseError::UnknownAtom("X".into()))
        );
        assert_eq!(parse_smiles(""), Err(ParseError::EmptyInput));
    }

    #[test]
    fn dangling_bond_symbols() {
        assert_eq!(parse_smiles("CC="), Err(ParseError::DanglingBond));
        assert_eq!(parse_smiles("C(=)C"), Err(ParseError::DanglingBond));
        assert_eq!(parse_smiles("=CC"), Err(ParseError::DanglingBond));
    }

    #[test]
    fn methane_node_features() {
        let g = parse_smiles("C").unwrap();
        let x = node_features(&g);
        assert_eq!(x.shape(), (1, NODE_FEATURES));
        assert_eq!(x.get(0, Element::C.feature_bin()), 1.0);
        assert_eq!(x.get(0, ELEMENT_BINS), 1.0); // degree 0
        assert_eq!(x.get(0, ELEMENT_BINS + DEGREE_BINS + 2), 1.0); // charge 0
                                                                   // 4 implicit H -> bin 4
        assert_eq!(x.get(0, ELEMENT_BINS + DEGREE_BINS + CHARGE_BINS + 4), 1.0);
        let flags = ELEMENT_BINS + DEGREE_BINS + CHARGE_BINS + HYDROGEN_BINS;
        assert_eq!(x.get(0, flags), 0.0);
        assert_eq!(x.get(0, flags + 1), 0.0);
    }

    #[test]
    fn deterministic_parse() {
        let a = parse_smiles("CC(=O)Nc1ccccc1").unwrap();
        let b = parse_smiles("CC(=O)Nc1ccccc1").unwrap();
        assert_eq!(a.n_atoms(), b.n_atoms());
        for (x, y) in a.bonds.iter().zip(&b.bonds) {
            assert_eq!((x.a, x.b, x.order), (y.a, y.b, y.order));
        }
    }
}
