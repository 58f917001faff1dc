use serde::{Deserialize, Serialize};

/// Elements accepted by the parser. Anything else is rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    H,
    C,
    N,
    O,
    F,
    P,
    S,
    Cl,
    Br,
    I,
}

impl Element {
    pub const ALL: [Element; 10] = [
        Element::H,
        Element::C,
        Element::N,
        Element::O,
        Element::F,
        Element::P,
        Element::S,
        Element::Cl,
        Element::Br,
        Element::I,
    ];

    pub fn from_symbol(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.symbol() == s)
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::H => "H",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
            Element::P => "P",
            Element::S => "S",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    pub fn atomic_number(self) -> u8 {
        match self {
            Element::H => 1,
            Element::C => 6,
            Element::N => 7,
            Element::O => 8,
            Element::F => 9,
            Element::P => 15,
            Element::S => 16,
            Element::Cl => 17,
            Element::Br => 35,
            Element::I => 53,
        }
    }

    /// Standard atomic weight in Da.
    pub fn mass(self) -> f64 {
        match self {
            Element::H => 1.008,
            Element::C => 12.011,
            Element::N => 14.007,
            Element::O => 15.999,
            Element::F => 18.998,
            Element::P => 30.974,
            Element::S => 32.06,
            Element::Cl => 35.45,
            Element::Br => 79.904,
            Element::I => 126.904,
        }
    }

    /// Members of the organic subset, writable without brackets.
    pub fn organic(self) -> bool {
        !matches!(self, Element::H)
    }

    pub fn can_be_aromatic(self) -> bool {
        matches!(
            self,
            Element::C | Element::N | Element::O | Element::P | Element::S
        )
    }

    /// Allowed total valences for a given formal charge, ascending.
    /// Empty when the charge state is not supported.
    pub fn valences(self, charge: i8) -> &'static [u8] {
        use Element::*;
        match (self, charge) {
            (H, 0) => &[1],
            (H, 1 | -1) => &[0],
            (C, 0) => &[4],
            (C, 1 | -1) => &[3],
            (N, 0) => &[3],
            (N, 1) => &[4],
            (N, -1) => &[2],
            (O, 0) => &[2],
            (O, 1) => &[3],
            (O, -1) => &[1],
            (S, 0) => &[2, 4, 6],
            (S, 1) => &[3, 5],
            (S, -1) => &[1, 3, 5],
            (P, 0) => &[3, 5],
            (P, 1) => &[4],
            (P, -1) => &[2],
            (F | Cl | Br | I, 0) => &[1],
            (F | Cl | Br | I, -1) => &[0],
            _ => &[],
        }
    }

    pub fn max_valence(self, charge: i8) -> Option<u8> {
        self.valences(charge).last().copied()
    }

    /// Smallest allowed valence at or above `used`.
    pub fn fit_valence(self, charge: i8, used: u8) -> Option<u8> {
        self.valences(charge).iter().copied().find(|&v| v >= used)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbols_round_trip() {
        for e in Element::ALL {
            assert_eq!(Element::from_symbol(e.symbol()), Some(e));
        }
        assert_eq!(Element::from_symbol("Fe"), None);
    }

    #[test]
    fn fit_picks_next_valence() {
        assert_eq!(Element::S.fit_valence(0, 3), Some(4));
        assert_eq!(Element::C.fit_valence(0, 5), None);
        assert_eq!(Element::N.max_valence(1), Some(4));
        assert_eq!(Element::C.max_valence(2), None);
    }
}
