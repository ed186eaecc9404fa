//! Deterministic synthetic molecule corpora.
//!
//! No dataset files ship with the crate, so benchmarks and the acceptance
//! experiments generate their own molecules: multi-ring systems for the
//! ring-membership task, an ESOL-scale regression set with a
//! structure-determined target, and mixed small molecules for property
//! sweeps. Everything is seeded and reproducible.

use crate::molgraph::{all_pairs_shortest, perceive_rings};
use crate::rng::SplitMix64;
use crate::smiles::{parse_smiles, Element};

/// Fixed parse corpus exercised by the golden parser test and the
/// path-feature rule checks.
pub const PARSE_CORPUS: [&str; 25] = [
    "C",
    "CC",
    "C=C",
    "C#N",
    "CCO",
    "[NH4+]",
    "[O-]C(=O)C",
    "c1ccccc1",
    "C1CC1",
    "C1CCCCC1",
    "c1ccncc1",
    "c1ccc2ccccc2c1",
    "c1ccccc1-c1ccccc1",
    "CC(C)C",
    "CC(=O)NC",
    "C1=CC=CC=C1",
    "CCCCCCCC",
    "CC(Cl)(Br)F",
    "CC.O",
    "[Na+].[Cl-]",
    "C%12CCCCC%12",
    "N#Cc1ccccc1",
    "OCC(O)CO",
    "[CH3-]",
    "S=C=S",
];

enum RingKind {
    Aromatic6,
    Aromatic5,
    Aliphatic(usize),
}

/// Tokens for one ring's atoms, renderable into SMILES.
struct RingSpec {
    tokens: Vec<String>,
}

fn gen_ring(rng: &mut SplitMix64) -> RingSpec {
    let kind = match rng.next_index(10) {
        0..=4 => RingKind::Aromatic6,
        5..=6 => RingKind::Aromatic5,
        _ => RingKind::Aliphatic(5 + rng.next_index(3)),
    };
    // Entry (0) and exit (last) atoms stay carbon: both may carry an extra
    // inter-ring bond, which only carbon's valence absorbs.
    let tokens = match kind {
        RingKind::Aromatic6 => {
            let mut t: Vec<String> = vec!["c".into(); 6];
            for _ in 0..rng.next_index(3) {
                let pos = 1 + rng.next_index(4);
                t[pos] = "n".into();
            }
            t
        }
        RingKind::Aromatic5 => {
            let mut t: Vec<String> = vec!["c".into(); 5];
            let hetero = ["o", "s", "[nH]"][rng.next_index(3)];
            let pos = 1 + rng.next_index(3);
            t[pos] = hetero.into();
            t
        }
        RingKind::Aliphatic(m) => {
            let mut t: Vec<String> = vec!["C".into(); m];
            for _ in 0..rng.next_index(3) {
                let pos = 1 + rng.next_index(m - 2);
                if t[pos] == "C" && t[(pos + m - 1) % m] == "C" && t[(pos + 1) % m] == "C" {
                    t[pos] = ["N", "O", "S"][rng.next_index(3)].into();
                }
            }
            t
        }
    };
    RingSpec { tokens }
}

/// Render a ring entered at token 0 and exited at the last token. A branch
/// only ever lands on an interior carbon, where valence has room for it.
fn render_ring(
    spec: &RingSpec,
    digit: usize,
    branch: Option<&str>,
    rng: &mut SplitMix64,
) -> String {
    let m = spec.tokens.len();
    let branch_pos = branch.map(|_| 1 + rng.next_index(m - 2));
    let mut out = String::new();
    for (i, tok) in spec.tokens.iter().enumerate() {
        out.push_str(tok);
        if i == 0 || i == m - 1 {
            out.push_str(&digit.to_string());
        }
        if branch_pos == Some(i) && (tok == "c" || tok == "C") {
            if let Some(b) = branch {
                out.push('(');
                out.push_str(b);
                out.push(')');
            }
        }
    }
    out
}

/// Naphthalene-style fused aromatic pair, optionally with ring nitrogens.
fn render_fused(rng: &mut SplitMix64, d1: usize, d2: usize) -> String {
    let mut atoms: Vec<String> = vec!["c".into(); 10];
    for _ in 0..rng.next_index(3) {
        // fusion atoms (3, 8), entry (0) and exit (9) stay carbon
        let pos = [1, 2, 4, 5, 6, 7][rng.next_index(6)];
        atoms[pos] = "n".into();
    }
    format!(
        "{}{}{}{}{}{}{}{}{}{}{}{}{}{}",
        atoms[0],
        d1,
        atoms[1],
        atoms[2],
        atoms[3],
        d2,
        atoms[4],
        atoms[5],
        atoms[6],
        atoms[7],
        atoms[8],
        d2,
        atoms[9],
        d1
    )
}

const LINKERS: [&str; 6] = ["", "C", "CC", "CCC", "O", "CO"];
const BRANCHES: [&str; 6] = ["C", "O", "N", "F", "Cl", "CC"];

/// Molecules with at least two perceived rings: fused aromatics, ring pairs
/// and triples joined by short linkers, mixed heteroatoms and substituents.
pub fn ring_corpus(n: usize, seed: u64) -> Vec<String> {
    let mut rng = SplitMix64::new(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let smiles = gen_multi_ring(&mut rng);
        if let Ok(g) = parse_smiles(&smiles) {
            if perceive_rings(&g).n_rings() >= 2 {
                out.push(smiles);
                continue;
            }
        }
        unreachable!("ring generator emitted an invalid molecule: {smiles}");
    }
    out
}

fn gen_multi_ring(rng: &mut SplitMix64) -> String {
    let mut digit = 1;
    let mut parts: Vec<String> = Vec::new();
    let mut rings_made = 0;
    let want = if rng.next_f64() < 0.7 { 2 } else { 3 };

    while rings_made < want {
        let remaining = want - rings_made;
        if remaining >= 2 && rng.next_f64() < 0.25 {
            let piece = render_fused(rng, digit, digit + 1);
            digit += 2;
            rings_made += 2;
            parts.push(piece);
        } else {
            let spec = gen_ring(rng);
            let branch = if rng.next_f64() < 0.4 {
                Some(BRANCHES[rng.next_index(BRANCHES.len())])
            } else {
                None
            };
            let piece = render_ring(&spec, digit, branch, rng);
            digit += 1;
            rings_made += 1;
            parts.push(piece);
        }
    }
    // join with explicit single bonds through optional linkers
    let mut smiles = parts[0].clone();
    for part in &parts[1..] {
        let linker = LINKERS[rng.next_index(LINKERS.len())];
        smiles.push('-');
        if !linker.is_empty() {
            smiles.push_str(linker);
            smiles.push('-');
        }
        smiles.push_str(part);
    }
    smiles
}

/// Straight carbon chains (8-20 atoms) with sparse heteroatoms, for
/// locality and attention-mask demonstrations.
pub fn chain_corpus(n: usize, seed: u64) -> Vec<String> {
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|_| {
            let len = 8 + rng.next_index(13);
            let mut s = String::new();
            for i in 0..len {
                if i > 0 && i + 1 < len && rng.next_f64() < 0.1 {
                    s.push_str(["O", "N"][rng.next_index(2)]);
                } else {
                    s.push('C');
                }
            }
            s
        })
        .collect()
}

const TAILS: [&str; 8] = ["C", "CC", "CCC", "CCCC", "O", "CO", "CCO", "N"];

/// Long-diameter molecules: two ring systems bridged by an 8-14 atom chain,
/// or a bare 15-24 atom chain. Their ends sit farther apart than a stacked
/// local-attention receptive field reaches.
fn gen_long_molecule(rng: &mut SplitMix64) -> String {
    if rng.next_f64() < 0.6 {
        let a = render_ring(&gen_ring(rng), 1, None, rng);
        let b = render_ring(&gen_ring(rng), 2, None, rng);
        let bridge = "C".repeat(8 + rng.next_index(7));
        format!("{a}-{bridge}-{b}")
    } else {
        let len = 15 + rng.next_index(10);
        let mut s = String::new();
        for i in 0..len {
            if i > 0 && i + 1 < len && rng.next_f64() < 0.12 {
                s.push_str(["O", "N"][rng.next_index(2)]);
            } else {
                s.push('C');
            }
        }
        s
    }
}

fn gen_small_molecule(rng: &mut SplitMix64) -> String {
    match rng.next_index(10) {
        0..=1 => {
            // plain or branched chain with optional hetero tail
            let len = 2 + rng.next_index(9);
            let mut s = String::new();
            for i in 0..len {
                s.push('C');
                if i > 0 && i + 1 < len && rng.next_f64() < 0.25 {
                    s.push('(');
                    s.push_str(BRANCHES[rng.next_index(3)]);
                    s.push(')');
                }
            }
            if rng.next_f64() < 0.5 {
                s.push_str(["O", "N", "Cl", "Br"][rng.next_index(4)]);
            }
            s
        }
        2..=3 => {
            // functional-group templates with a chain prefix
            let core = [
                "C(=O)C", "C(=O)O", "C(=O)N", "C=CC", "C(=O)OC", "C#N", "C(=O)NCC", "OC(=O)CC",
            ][rng.next_index(8)];
            let prefix_len = 1 + rng.next_index(5);
            let mut s = "C".repeat(prefix_len);
            s.push_str(core);
            s
        }
        4..=6 => {
            // one ring plus substituent and tail
            let spec = gen_ring(rng);
            let branch = if rng.next_f64() < 0.5 {
                Some(BRANCHES[rng.next_index(BRANCHES.len())])
            } else {
                None
            };
            let ring = render_ring(&spec, 1, branch, rng);
            let tail = TAILS[rng.next_index(TAILS.len())];
            if rng.next_f64() < 0.25 {
                ring
            } else {
                format!("{ring}-{tail}")
            }
        }
        7 => gen_multi_ring(rng),
        8 => gen_long_molecule(rng),
        _ => {
            // disconnected salts and single atoms
            [
                "C",
                "O",
                "CC.O",
                "[Na+].[Cl-]",
                "[NH4+].[Cl-]",
                "CO.CO",
                "[K+].[O-]C(=O)C",
            ][rng.next_index(7)]
            .to_string()
        }
    }
}

/// Mixed small molecules covering chains, rings, charges and disconnected
/// components; every output parses.
pub fn random_molecules(n: usize, seed: u64) -> Vec<String> {
    let mut rng = SplitMix64::new(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let s = gen_small_molecule(&mut rng);
        debug_assert!(parse_smiles(&s).is_ok(), "generator emitted {s}");
        out.push(s);
    }
    out
}

/// Structural score driving the synthetic regression target: a weighted mix
/// of size, aromaticity, ring count, heteroatom and halogen content, mean
/// degree, and the fraction of node pairs farther apart than 3 bonds (the
/// long-range term).
pub fn structure_score(smiles: &str) -> f64 {
    let g = parse_smiles(smiles).expect("corpus molecules parse");
    let rings = perceive_rings(&g);
    let apsp = all_pairs_shortest(&g);
    let n = g.n_atoms() as f64;
    let aromatic = g.atoms.iter().filter(|a| a.is_aromatic).count() as f64;
    let hetero = g
        .atoms
        .iter()
        .filter(|a| matches!(a.element, Element::N | Element::O))
        .count() as f64;
    let halogen = g
        .atoms
        .iter()
        .filter(|a| {
            matches!(
                a.element,
                Element::F | Element::Cl | Element::Br | Element::I
            )
        })
        .count() as f64;
    let mean_degree = if g.n_atoms() > 0 {
        g.atoms.iter().map(|a| a.degree as f64).sum::<f64>() / n
    } else {
        0.0
    };
    let mut far = 0.0;
    let total_pairs = (g.n_atoms() * g.n_atoms().saturating_sub(1)).max(1) as f64;
    for i in 0..g.n_atoms() {
        for j in 0..g.n_atoms() {
            if i != j {
                let dij = apsp.dist(i, j);
                if !(0..=3).contains(&dij) {
                    far += 1.0;
                }
            }
        }
    }
    let far_frac = far / total_pairs;

    -0.45 * n + 1.1 * (aromatic / n.max(1.0)) - 0.9 * rings.n_rings() as f64 + 0.85 * hetero
        - 0.7 * halogen
        - 0.6 * mean_degree
        - 4.5 * far_frac
}

/// An ESOL-scale regression corpus: `n` molecules with a solubility-like
/// target `y = -3.05 + 2.1 * z + noise`, where `z` standardizes
/// [`structure_score`] over the generated set and the noise is seeded
/// Gaussian with the given standard deviation.
pub fn regression_corpus(n: usize, seed: u64, noise_std: f64) -> Vec<(String, f64)> {
    let molecules = random_molecules(n, seed);
    let scores: Vec<f64> = molecules.iter().map(|s| structure_score(s)).collect();
    let mean = scores.iter().sum::<f64>() / n as f64;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt().max(1e-9);

    let mut rng = SplitMix64::new(seed ^ 0x6E6F_6973);
    molecules
        .into_iter()
        .zip(scores)
        .map(|(smiles, score)| {
            let z = (score - mean) / std;
            let y = -3.05 + 2.1 * z + noise_std * rng.next_normal();
            (smiles, y)
        })
        .collect()
}

/// Write a (smiles, target) list as a two-column CSV.
pub fn write_csv(path: &std::path::Path, rows: &[(String, f64)]) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "smiles,target")?;
    for (s, y) in rows {
        writeln!(f, "{s},{y}")?;
    }
    Ok(())
}
