//! Generative grammar oracle for SMILES validity over the alphabet
//! {C, O, N, (, ), 1, =}.
//!
//! Strings are produced from the grammar
//!   chain   := batom (bond? batom)*
//!   batom   := atom (ring | branch)*
//!   ring    := bond? '1'
//!   branch  := '(' bond? chain ')'
//! and then interpreted into atoms and bonds for the valence check.

#[derive(Clone, Debug)]
pub enum Item {
    Ring(u8),
    Branch(u8, Vec<(u8, Batom)>),
}

#[derive(Clone, Debug)]
pub struct Batom {
    pub elem: char,
    pub items: Vec<Item>,
}

pub fn bond_str(b: u8) -> &'static str {
    match b {
        0 => "",
        _ => "=",
    }
}

pub fn chains(max: usize) -> Vec<(String, Vec<(u8, Batom)>)> {
    let mut out = Vec::new();
    for (s, a) in batoms(max) {
        out.push((s.clone(), vec![(0, a.clone())]));
        extend_chain(&s, vec![(0, a)], max, &mut out);
    }
    out
}

pub fn extend_chain(s: &str, c: Vec<(u8, Batom)>, max: usize, out: &mut Vec<(String, Vec<(u8, Batom)>)>) {
    for bond in [0u8, 1] {
        let prefix = format!("{s}{}", bond_str(bond));
        if prefix.len() >= max {
            continue;
        }
        for (t, a) in batoms(max - prefix.len()) {
            let mut c2 = c.clone();
            c2.push((bond, a));
            let s2 = format!("{prefix}{t}");
            out.push((s2.clone(), c2.clone()));
            extend_chain(&s2, c2, max, out);
        }
    }
}

pub fn batoms(max: usize) -> Vec<(String, Batom)> {
    let mut out = Vec::new();
    if max == 0 {
        return out;
    }
    for elem in ['C', 'O', 'N'] {
        let a = Batom { elem, items: vec![] };
        out.push((elem.to_string(), a.clone()));
        extend_items(&elem.to_string(), a, max, &mut out);
    }
    out
}

pub fn extend_items(s: &str, a: Batom, max: usize, out: &mut Vec<(String, Batom)>) {
    for bond in [0u8, 1] {
        let t = format!("{s}{}1", bond_str(bond));
        if t.len() <= max {
            let mut a2 = a.clone();
            a2.items.push(Item::Ring(bond));
            out.push((t.clone(), a2.clone()));
            extend_items(&t, a2, max, out);
        }
        let open = format!("{s}({}", bond_str(bond));
        if open.len() + 2 <= max {
            for (c, ch) in chains(max - open.len() - 1) {
                let t = format!("{open}{c})");
                let mut a2 = a.clone();
                a2.items.push(Item::Branch(bond, ch));
                out.push((t.clone(), a2.clone()));
                extend_items(&t, a2, max, out);
            }
        }
    }
}

#[derive(Default)]
pub struct Interp {
    elems: Vec<char>,
    bonds: Vec<(usize, usize, u8)>,
    open: Option<(usize, u8)>,
    ok: bool,
}

impl Interp {
    fn bond(&mut self, a: usize, b: usize, order: u8) {
        if a == b || self.bonds.iter().any(|&(x, y, _)| (x, y) == (a, b) || (x, y) == (b, a)) {
            self.ok = false;
        }
        self.bonds.push((a, b, order));
    }

    fn chain(&mut self, prev: Option<(usize, u8)>, c: &[(u8, Batom)]) {
        let mut prev = prev;
        for (bond, a) in c {
            let idx = self.elems.len();
            self.elems.push(a.elem);
            if let Some((p, b0)) = prev {
                self.bond(p, idx, 1 + b0.max(*bond));
            }
            for item in &a.items {
                match item {
                    Item::Ring(b) => match self.open.take() {
                        None => self.open = Some((idx, *b)),
                        Some((o, ob)) => self.bond(o, idx, 1 + ob.max(*b)),
                    },
                    Item::Branch(b, ch) => self.chain(Some((idx, *b)), ch),
                }
            }
            prev = Some((idx, 0));
        }
    }

    pub fn valid(c: &[(u8, Batom)]) -> bool {
        let mut it = Interp {
            ok: true,
            ..Default::default()
        };
        it.chain(None, c);
        if !it.ok || it.open.is_some() {
            return false;
        }
        (0..it.elems.len()).all(|i| {
            let used: u8 = it
                .bonds
                .iter()
                .filter(|&&(a, b, _)| a == i || b == i)
                .map(|&(_, _, o)| o)
                .sum();
            let max = match it.elems[i] {
                'C' => 4,
                'N' => 3,
                _ => 2,
            };
            used <= max
        })
    }
}

pub fn all_strings(alphabet: &[char], max: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    let mut frontier = vec![String::new()];
    for _ in 0..max {
        let mut next = Vec::new();
        for s in &frontier {
            for &c in alphabet {
                next.push(format!("{s}{c}"));
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}
