use std::sync::OnceLock;

use aegis_core::iepl::fixtures::trial_charter;
use aegis_core::ilk::verify_chain;
use aegis_harness::chain_fuzz::{mutate_entry, sample_log, SampleLog};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn log() -> &'static SampleLog {
    static LOG: OnceLock<SampleLog> = OnceLock::new();
    LOG.get_or_init(|| sample_log(&trial_charter()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn single_field_mutation_is_caught_where_it_happened(idx in any::<prop::sample::Index>(), seed in any::<u64>()) {
        let log = log();
        let i = idx.index(log.entries.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let Some((field, m)) = mutate_entry(&log.entries[i], &mut rng) else {
            return Ok(());
        };
        let mut entries = log.entries.clone();
        entries[i] = m;
        let r = verify_chain(&entries, Some(&log.keys));
        prop_assert!(!r.intact, "{field} at {i} went unnoticed");
        prop_assert_eq!(r.first_broken_sequence, Some(log.entries[i].sequence), "{}", field);
    }
}

#[test]
fn truncation_and_reordering_are_caught() {
    let log = log();
    let mut swapped = log.entries.clone();
    swapped.swap(3, 4);
    assert_eq!(
        verify_chain(&swapped, Some(&log.keys)).first_broken_sequence,
        Some(log.entries[3].sequence)
    );
    let mut dropped = log.entries.clone();
    dropped.remove(5);
    assert_eq!(
        verify_chain(&dropped, Some(&log.keys)).first_broken_sequence,
        Some(log.entries[5].sequence)
    );
}
