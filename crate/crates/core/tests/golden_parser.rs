//! Golden expectations for the fixed parse corpus, derived by hand from the
//! grammar and the default-valence rules. Each row pins atom count, bond
//! count, connected components, total implicit hydrogens, aromatic-atom
//! count, perceived ring count, and net formal charge.

use pagtn_core::corpus::PARSE_CORPUS;
use pagtn_core::molgraph::perceive_rings;
use pagtn_core::smiles::{node_features, parse_smiles, NODE_FEATURES};

struct Golden {
    smiles: &'static str,
    atoms: usize,
    bonds: usize,
    components: usize,
    implicit_h: u32,
    aromatic: usize,
    rings: usize,
    charge: i32,
}

const GOLDEN: [Golden; 25] = [
    // methane: carbon alone carries its full valence as hydrogens
    Golden {
        smiles: "C",
        atoms: 1,
        bonds: 0,
        components: 1,
        implicit_h: 4,
        aromatic: 0,
        rings: 0,
        charge: 0,
    },
    Golden {
        smiles: "CC",
        atoms: 2,
        bonds: 1,
        components: 1,
        implicit_h: 6,
        aromatic: 0,
        rings: 0,
        charge: 0,
    },
    Golden {
        smiles: "C=C",
        atoms: 2,
        bonds: 1,
        components: 1,
        implicit_h: 4,
        aromatic: 0,
        rings: 0,
        charge: 0,
    },
    // hydrogen cyanide: C keeps one H, N none
    Golden {
        smiles: "C#N",
        atoms: 2,
        bonds: 1,
        components: 1,
        implicit_h: 1,
        aromatic: 0,
        rings: 0,
        charge: 0,
    },
    Golden {
        smiles: "CCO",
        atoms: 3,
        bonds: 2,
        components: 1,
        implicit_h: 6,
        aromatic: 0,
        rings: 0,
        charge: 0,
    },
    // ammonium: bracket atom, explicit H4, +1
    Golden {
        smiles: "[NH4+]",
        atoms: 1,
        bonds: 0,
        components: 1,
        implicit_h: 4,
        aromatic: 0,
        rings: 0,
        charge: 1,
    },
    // acetate: carboxylate O carries the charge, methyl keeps 3 H
    Golden {
        smiles: "[O-]C(=O)C",
        atoms: 4,
        bonds: 3,
        components: 1,
        implicit_h: 3,
        aromatic: 0,
        rings: 0,
        charge: -1,
    },
    Golden {
        smiles: "c1ccccc1",
        atoms: 6,
        bonds: 6,
        components: 1,
        implicit_h: 6,
        aromatic: 6,
        rings: 1,
        charge: 0,
    },
    Golden {
        smiles: "C1CC1",
        atoms: 3,
        bonds: 3,
        components: 1,
        implicit_h: 6,
        aromatic: 0,
        rings: 1,
        charge: 0,
    },
    Golden {
        smiles: "C1CCCCC1",
        atoms: 6,
        bonds: 6,
        components: 1,
        implicit_h: 12,
        aromatic: 0,
        rings: 1,
        charge: 0,
    },
    // pyridine: ring nitrogen has no H
    Golden {
        smiles: "c1ccncc1",
        atoms: 6,
        bonds: 6,
        components: 1,
        implicit_h: 5,
        aromatic: 6,
        rings: 1,
        charge: 0,
    },
    // naphthalene: two fused 6-rings, fusion carbons carry no H
    Golden {
        smiles: "c1ccc2ccccc2c1",
        atoms: 10,
        bonds: 11,
        components: 1,
        implicit_h: 8,
        aromatic: 10,
        rings: 2,
        charge: 0,
    },
    // biphenyl: bridge carbons lose their H to the single bond
    Golden {
        smiles: "c1ccccc1-c1ccccc1",
        atoms: 12,
        bonds: 13,
        components: 1,
        implicit_h: 10,
        aromatic: 12,
        rings: 2,
        charge: 0,
    },
    Golden {
        smiles: "CC(C)C",
        atoms: 4,
        bonds: 3,
        components: 1,
        implicit_h: 10,
        aromatic: 0,
        rings: 0,
        charge: 0,
    },
    // N-methylacetamide: amide N keeps one H
    Golden {
        smiles: "CC(=O)NC",
        atoms: 5,
        bonds: 4,
        components: 1,
        implicit_h: 7,
        aromatic: 0,
        rings: 0,
        charge: 0,
    },
    // kekulized benzene: alternating bonds, no aromatic flags, still a ring
    Golden {
        smiles: "C1=CC=CC=C1",
        atoms: 6,
        bonds: 6,
        components: 1,
        implicit_h: 6,
        aromatic: 0,
        rings: 1,
        charge: 0,
    },
    Golden {
        smiles: "CCCCCCCC",
        atoms: 8,
        bonds: 7,
        components: 1,
        implicit_h: 18,
        aromatic: 0,
        rings: 0,
        charge: 0,
    },
    Golden {
        smiles: "CC(Cl)(Br)F",
        atoms: 5,
        bonds: 4,
        components: 1,
        implicit_h: 3,
        aromatic: 0,
        rings: 0,
        charge: 0,
    },
    Golden {
        smiles: "CC.O",
        atoms: 3,
        bonds: 1,
        components: 2,
        implicit_h: 8,
        aromatic: 0,
        rings: 0,
        charge: 0,
    },
    // salt: two bare ions, no hydrogens anywhere
    Golden {
        smiles: "[Na+].[Cl-]",
        atoms: 2,
        bonds: 0,
        components: 2,
        implicit_h: 0,
        aromatic: 0,
        rings: 0,
        charge: 0,
    },
    Golden {
        smiles: "C%12CCCCC%12",
        atoms: 6,
        bonds: 6,
        components: 1,
        implicit_h: 12,
        aromatic: 0,
        rings: 1,
        charge: 0,
    },
    // benzonitrile: nitrile C and attachment c carry no H
    Golden {
        smiles: "N#Cc1ccccc1",
        atoms: 8,
        bonds: 8,
        components: 1,
        implicit_h: 5,
        aromatic: 6,
        rings: 1,
        charge: 0,
    },
    Golden {
        smiles: "OCC(O)CO",
        atoms: 6,
        bonds: 5,
        components: 1,
        implicit_h: 8,
        aromatic: 0,
        rings: 0,
        charge: 0,
    },
    Golden {
        smiles: "[CH3-]",
        atoms: 1,
        bonds: 0,
        components: 1,
        implicit_h: 3,
        aromatic: 0,
        rings: 0,
        charge: -1,
    },
    Golden {
        smiles: "S=C=S",
        atoms: 3,
        bonds: 2,
        components: 1,
        implicit_h: 0,
        aromatic: 0,
        rings: 0,
        charge: 0,
    },
];

#[test]
fn corpus_constant_matches_golden_table() {
    let corpus: Vec<&str> = GOLDEN.iter().map(|g| g.smiles).collect();
    assert_eq!(corpus, PARSE_CORPUS.to_vec());
}

#[test]
fn golden_counts() {
    for g in &GOLDEN {
        let graph = parse_smiles(g.smiles).unwrap_or_else(|e| {
            panic!("{} failed to parse: {e}", g.smiles);
        });
        assert_eq!(graph.n_atoms(), g.atoms, "{}: atom count", g.smiles);
        assert_eq!(graph.bonds.len(), g.bonds, "{}: bond count", g.smiles);
        assert_eq!(
            graph.num_components(),
            g.components,
            "{}: components",
            g.smiles
        );
        let h: u32 = graph.atoms.iter().map(|a| a.implicit_h).sum();
        assert_eq!(h, g.implicit_h, "{}: implicit hydrogens", g.smiles);
        let aromatic = graph.atoms.iter().filter(|a| a.is_aromatic).count();
        assert_eq!(aromatic, g.aromatic, "{}: aromatic atoms", g.smiles);
        let rings = perceive_rings(&graph);
        assert_eq!(rings.n_rings(), g.rings, "{}: ring count", g.smiles);
        let charge: i32 = graph.atoms.iter().map(|a| a.formal_charge).sum();
        assert_eq!(charge, g.charge, "{}: net charge", g.smiles);
    }
}

#[test]
fn golden_degree_consistency() {
    for g in &GOLDEN {
        let graph = parse_smiles(g.smiles).unwrap();
        for (i, atom) in graph.atoms.iter().enumerate() {
            let incident = graph.bonds.iter().filter(|b| b.a == i || b.b == i).count();
            assert_eq!(atom.degree as usize, incident, "{} atom {i}", g.smiles);
            assert_eq!(graph.adjacency[i].len(), incident, "{} atom {i}", g.smiles);
        }
    }
}

#[test]
fn one_hot_blocks_sum_to_one_over_corpus() {
    for g in &GOLDEN {
        let graph = parse_smiles(g.smiles).unwrap();
        let x = node_features(&graph);
        assert_eq!(x.cols, NODE_FEATURES);
        for i in 0..x.rows {
            let row = x.row(i);
            // element(12) + degree(6) + charge(5) + hydrogens(5) + 2 flags
            let blocks = [(0usize, 12usize), (12, 18), (18, 23), (23, 28)];
            for (start, end) in blocks {
                let s: f64 = row[start..end].iter().sum();
                assert_eq!(s, 1.0, "{} atom {i} block {start}..{end}", g.smiles);
            }
            for &flag in &row[28..30] {
                assert!(flag == 0.0 || flag == 1.0);
            }
        }
    }
}
