//! Simulation designs shipped with the binary.

const BUNDLED: &[(&str, &str)] = &[
    ("fig1_dense", include_str!("../designs/fig1_dense.txt")),
    ("fig1_sparse", include_str!("../designs/fig1_sparse.txt")),
    ("fig2_dense", include_str!("../designs/fig2_dense.txt")),
    ("fig2_sparse", include_str!("../designs/fig2_sparse.txt")),
    (
        "table3_analog",
        include_str!("../designs/table3_analog.txt"),
    ),
];

pub fn names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
