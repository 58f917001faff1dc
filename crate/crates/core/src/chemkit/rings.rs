//! Smallest set of smallest rings.
//!
//! For every ring bond the shortest cycle through it is a candidate. Candidates
//! are taken smallest first while they stay linearly independent over GF(2)
//! in bond-incidence space, until the cyclomatic number is reached.

use std::collections::VecDeque;

/// A ring as atoms in cycle order and the bonds between consecutive atoms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ring {
    pub atoms: Vec<usize>,
    pub bonds: Vec<usize>,
}

impl Ring {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// `adj[a]` holds `(neighbor, bond index)`.
pub fn sssr(n_atoms: usize, n_bonds: usize, adj: &[Vec<(usize, usize)>]) -> Vec<Ring> {
    let components = count_components(n_atoms, adj);
    let target = (n_bonds + components).saturating_sub(n_atoms);
    if target == 0 {
        return Vec::new();
    }
    let mut ends = vec![(0, 0); n_bonds];
    for (a, nbrs) in adj.iter().enumerate() {
        for &(b, bi) in nbrs {
            if a < b {
                ends[bi] = (a, b);
            }
        }
    }
    let mut candidates: Vec<Ring> = Vec::new();
    for (bi, &(a, b)) in ends.iter().enumerate() {
        if let Some(ring) = shortest_cycle(a, b, bi, adj) {
            let mut key = ring.bonds.clone();
            key.sort_unstable();
            if !candidates.iter().any(|r| {
                let mut k = r.bonds.clone();
                k.sort_unstable();
                k == key
            }) {
                candidates.push(ring);
            }
        }
    }
    candidates.sort_by(|x, y| {
        let mut kx = x.bonds.clone();
        let mut ky = y.bonds.clone();
        kx.sort_unstable();
        ky.sort_unstable();
        x.len().cmp(&y.len()).then(kx.cmp(&ky))
    });

    let words = n_bonds.div_ceil(64);
    let mut basis: Vec<(usize, Vec<u64>)> = Vec::new();
    let mut out = Vec::new();
    for ring in candidates {
        if out.len() == target {
            break;
        }
        let mut v = vec![0u64; words];
        for &bi in &ring.bonds {
            v[bi / 64] ^= 1 << (bi % 64);
        }
        if reduce(&mut v, &basis) {
            let pivot = first_bit(&v).expect("nonzero vector");
            basis.push((pivot, v));
            out.push(ring);
        }
    }
    out
}

fn first_bit(v: &[u64]) -> Option<usize> {
    v.iter()
        .enumerate()
        .find(|(_, w)| **w != 0)
        .map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
}

/// Eliminates against the basis; true if something independent remains.
fn reduce(v: &mut [u64], basis: &[(usize, Vec<u64>)]) -> bool {
    loop {
        let Some(p) = first_bit(v) else {
            return false;
        };
        match basis.iter().find(|(q, _)| *q == p) {
            Some((_, row)) => v.iter_mut().zip(row).for_each(|(a, b)| *a ^= b),
            None => return true,
        }
    }
}

fn count_components(n: usize, adj: &[Vec<(usize, usize)>]) -> usize {
    let mut seen = vec![false; n];
    let mut count = 0;
    for s in 0..n {
        if seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(a) = stack.pop() {
            for &(b, _) in &adj[a] {
                if !seen[b] {
                    seen[b] = true;
                    stack.push(b);
                }
            }
        }
    }
    count
}

/// Shortest path from `a` to `b` avoiding bond `skip`, closed into a cycle.
fn shortest_cycle(a: usize, b: usize, skip: usize, adj: &[Vec<(usize, usize)>]) -> Option<Ring> {
    let mut prev: Vec<Option<(usize, usize)>> = vec![None; adj.len()];
    let mut seen = vec![false; adj.len()];
    seen[a] = true;
    let mut queue = VecDeque::from([a]);
    while let Some(x) = queue.pop_front() {
        if x == b {
            break;
        }
        for &(y, bi) in &adj[x] {
            if bi != skip && !seen[y] {
                seen[y] = true;
                prev[y] = Some((x, bi));
                queue.push_back(y);
            }
        }
    }
    if !seen[b] {
        return None;
    }
    let mut atoms = vec![b];
    let mut bonds = Vec::new();
    let mut cur = b;
    while let Some((p, bi)) = prev[cur] {
        bonds.push(bi);
        atoms.push(p);
        cur = p;
    }
    bonds.push(skip);
    Some(Ring { atoms, bonds })
}
