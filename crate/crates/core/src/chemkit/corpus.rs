//! Built-in molecule sets for tests, demos and smoke runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{parse, random_smiles};

/// Marketed drugs, metabolites and small reference compounds.
pub const DRUGS: &[&str] = &[
    "CC(=O)Oc1ccccc1C(=O)O",
    "CN1C=NC2=C1C(=O)N(C(=O)N2C)C",
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "CC(=O)Nc1ccc(O)cc1",
    "CN1CCC[C@H]1c2cccnc2",
    "COc1ccc2[nH]cc(CCNC(C)=O)c2c1",
    "CC(C)NCC(O)COc1cccc2ccccc12",
    "CN(C)CCCN1c2ccccc2CCc3ccccc13",
    "Clc1ccc(cc1)C(c2ccccc2)N3CCN(CC3)CCOCC(=O)O",
    "CC(C)(C)NCC(O)c1ccc(O)c(CO)c1",
    "OC(=O)CCCc1ccc(N(CCCl)CCCl)cc1",
    "CCN(CC)CC(=O)Nc1c(C)cccc1C",
    "NC(=O)N1c2ccccc2C=Cc3ccccc13",
    "CN1CCN(CC1)C2=Nc3ccccc3Oc4ccc(Cl)cc24",
    "O=C(O)c1ccccc1O",
    "CC12CCC3C(CCC4=CC(=O)CCC34C)C1CCC2O",
    "Cn1cnc2c1c(=O)[nH]c(=O)n2C",
    "CCOC(=O)C1=C(C)NC(C)=C(C1c2cccc(c2)[N+](=O)[O-])C(=O)OC",
    "COc1ccc(cc1)C(=O)CC(=O)c2ccc(cc2)C(C)(C)C",
    "NS(=O)(=O)c1cc(C(=O)O)c(NCc2ccco2)cc1Cl",
    "CC(C)C(=O)Nc1ccc(cc1)[N+](=O)[O-]",
    "OC(CN1C=NC=N1)(CN2C=NC=N2)c3ccc(F)cc3F",
    "CS(=O)(=O)Nc1ccc(cc1)C(O)CNC(C)C",
    "Fc1ccc(cc1)C(=O)CCCN2CCC(O)(CC2)c3ccc(Cl)cc3",
    "CCCc1nc(C)c2n1[nH]c(nc2=O)-c3cc(ccc3OCC)S(=O)(=O)N4CCN(C)CC4",
    "COC(=O)C1=CC=CC=C1",
    "C1CCC(CC1)NC(=O)Nc2ccccc2",
    "CC(=O)OCC(=O)C1(O)CCC2C3CCC4=CC(=O)C=CC4(C)C3C(O)CC21C",
    "Nc1nc(N)c2nc(cnc2n1)CN(C)c3ccc(cc3)C(=O)NC(CCC(O)=O)C(O)=O",
    "CC1(C)SC2C(NC(=O)Cc3ccccc3)C(=O)N2C1C(=O)O",
    "c1ccc2c(c1)c3ccccc3[nH]2",
    "OC(=O)c1cccnc1",
    "NC(N)=NC(=N)N(C)C",
    "CCOc1ccc(NC(C)=O)cc1",
    "Oc1ccc(cc1)C2(OC(=O)c3ccccc23)c4ccc(O)cc4",
    "CC(C)(C)c1ccc(cc1)C(O)CCCN2CCC(CC2)C(O)(c3ccccc3)c4ccccc4",
    "COc1cc(Cc2cnc(N)nc2N)cc(OC)c1OC",
    "Cc1onc(c1C(=O)NC2C3SC(C)(C)C(N3C2=O)C(O)=O)-c4ccccc4",
    "Clc1ccccc1C2(NC)CCCCC2=O",
    "O=C1CN=C(c2ccccc2)c3cc(Cl)ccc3N1",
    "CN1C(=O)CN=C(c2ccccc2)c3cc(Cl)ccc13",
    "NCCc1ccc(O)c(O)c1",
    "NCCc1c[nH]c2ccc(O)cc12",
    "CNCC(O)c1ccc(O)c(O)c1",
    "C=CCN1CCC23c4c5ccc(O)c4OC2C(=O)CCC3(O)C1C5",
    "COc1ccc2nc([nH]c2c1)S(=O)Cc3ncc(C)c(OC)c3C",
    "CC(=O)Nc1nnc(s1)S(N)(=O)=O",
    "Nc1ccc(cc1)S(=O)(=O)Nc2ccnc(n2)C",
    "Cc1ccc(cc1)S(=O)(=O)NC(=O)NCCCC",
    "OCC1OC(O)C(O)C(O)C1O",
    "OC(=O)CC(O)(CC(O)=O)C(O)=O",
    "C(C(=O)O)N",
    "CC(N)C(=O)O",
    "N[C@@H](Cc1ccccc1)C(=O)O",
    "CSCCC(N)C(=O)O",
    "NC(CCC(=O)O)C(=O)O",
    "O=C(O)/C=C/C(=O)O",
    "CC/C=C\\CCO",
    "ClC(Cl)(Cl)Cl",
    "FC(F)(F)c1ccc(Oc2ccc(Cl)cc2)cc1",
    "BrCCBr",
    "ICC(=O)N",
    "CC#N",
    "C1CC1",
    "C1CCOC1",
    "c1ccsc1",
    "c1ccoc1",
    "c1cn[nH]c1",
    "c1ncncn1",
    "O=P(O)(O)O",
    "CP(=O)(O)OC",
    "C[S+](C)[O-]",
    "[NH4+].[Cl-]",
];

/// Thirty-two short molecules used for overfitting runs.
pub const TOY: &[&str] = &[
    "CCO",
    "CC(=O)O",
    "c1ccccc1",
    "CCN",
    "CC(C)O",
    "c1ccncc1",
    "CCOC(=O)C",
    "OC(=O)c1ccccc1",
    "CC(=O)Nc1ccccc1",
    "CCCC",
    "CC=O",
    "COC",
    "CN(C)C",
    "C1CCCCC1",
    "C1CCNCC1",
    "C1CCOCC1",
    "Oc1ccccc1",
    "Nc1ccccc1",
    "Cc1ccccc1",
    "ClCCl",
    "CC(C)C",
    "CCCCO",
    "CCC(=O)O",
    "NC(=O)C",
    "CS(C)=O",
    "C#CC",
    "C=CC=C",
    "OCCO",
    "NCCN",
    "c1ccoc1",
    "c1ccsc1",
    "CC(N)C(=O)O",
];

/// `n` SMILES: the reference set first, then randomized atom orderings of it.
pub fn corpus(n: usize, seed: u64) -> Vec<String> {
    let mols: Vec<_> = DRUGS
        .iter()
        .map(|s| parse(s).expect("reference SMILES parse"))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<String> = DRUGS.iter().take(n).map(|s| s.to_string()).collect();
    let mut i = 0;
    while out.len() < n {
        out.push(random_smiles(&mols[i % mols.len()], &mut rng));
        i += 1;
    }
    out
}
