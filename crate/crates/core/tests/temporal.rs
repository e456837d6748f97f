mod common;

use common::temporal;

#[test]
fn k2_beats_k1_on_isolated_errors() {
    let (k1, k2) = temporal::k1_k2_f1();
    assert!(k2 > k1, "k=1 {k1} k=2 {k2}");
}

#[test]
fn hand_simulated_sequence() {
    assert!(temporal::hand_simulated_matches());
}
