/// Chemical symbols indexed by atomic number - 1.
pub const SYMBOLS: [&str; 118] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K",
    "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb",
    "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I", "Xe", "Cs",
    "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta",
    "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa",
    "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt",
    "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
];

pub fn is_element(symbol: &str) -> bool {
    SYMBOLS.contains(&symbol)
}

pub fn symbol_for(atomic_number: usize) -> Option<&'static str> {
    atomic_number.checked_sub(1).and_then(|i| SYMBOLS.get(i).copied())
}

/// Guesses element symbols from a CamelCase file stem such as `CuNi` or
/// `SiC_1994`. Only alphabetic runs that decompose entirely into valid
/// symbols contribute, so `Cu_mishin` yields `[Cu]` and `Mendelev` nothing.
pub fn guess_elements(stem: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for run in stem.split(|c: char| !c.is_ascii_alphabetic()).filter(|r| !r.is_empty()) {
        if let Some(symbols) = decompose(run) {
            for s in symbols {
                if !out.iter().any(|o| o == s) {
                    out.push(s.to_string());
                }
            }
        }
    }
    out
}

fn decompose(run: &str) -> Option<Vec<&str>> {
    if run.is_empty() {
        return Some(Vec::new());
    }
    let bytes = run.as_bytes();
    if !bytes[0].is_ascii_uppercase() {
        return None;
    }
    if bytes.len() >= 2 && bytes[1].is_ascii_lowercase() && is_element(&run[..2]) {
        if let Some(mut rest) = decompose(&run[2..]) {
            rest.insert(0, &run[..2]);
            return Some(rest);
        }
    }
    if is_element(&run[..1]) {
        if let Some(mut rest) = decompose(&run[1..]) {
            rest.insert(0, &run[..1]);
            return Some(rest);
        }
    }
    None
}
