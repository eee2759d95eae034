mod common;

use proptest::prelude::*;

use common::*;
use fluxlayer::intent::{allocate, FillPolicy};
use fluxlayer::ledger::{AssetId, ChainId};
use fluxlayer::markets::{optimal_arb_size, AmmPool, ArbDirection};
use fluxlayer::num::ratio;
use fluxlayer::settlement::{Behavior, RecordState};

fn pool(x: u128, y: u128, fee: u32) -> AmmPool {
    AmmPool::new(1, ChainId(1), AssetId(0), AssetId(1), x, y, fee).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn random_event_sequences_keep_every_invariant(ops in ops_strategy(60)) {
        run_sequence(&ops).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn quotes_match_rational_reference(
        x in 1u128..1_000_000_000_000,
        y in 1u128..1_000_000_000_000,
        a in 0u128..1_000_000_000_000,
        fee in 0u32..=1000,
        x_in in any::<bool>(),
    ) {
        let p = pool(x, y, fee);
        let (asset, r_in, r_out) = if x_in { (AssetId(0), x, y) } else { (AssetId(1), y, x) };
        let q = p.quote_exact_in(asset, a).unwrap();
        prop_assert_eq!(q.amount_out, reference_out(r_in, r_out, a, fee));
        if a > 0 {
            let (next, _) = p.swap(asset, a).unwrap();
            prop_assert!(next.k() >= p.k());
        }
    }

    #[test]
    fn min_input_is_tight(
        x in 1_000u128..1_000_000_000,
        y in 1_000u128..1_000_000_000,
        frac in 1u128..999,
        fee in 0u32..=1000,
    ) {
        let p = pool(x, y, fee);
        let out = y * frac / 1000;
        if let Some(a) = p.min_input_for_output(AssetId(0), out).unwrap() {
            prop_assert!(reference_out(x, y, a, fee) >= out);
            if a > 0 {
                prop_assert!(reference_out(x, y, a - 1, fee) < out);
            }
        }
    }

    #[test]
    fn arb_size_sits_next_to_the_grid_optimum(
        x in 1_000_000u128..100_000_000,
        y in 1_000_000u128..100_000_000,
        fee in 0u32..=100,
        gap_bps in -3000i64..3000,
    ) {
        let p = pool(x, y, fee);
        // external price = spot * (1 + gap), as p/q
        let (num, den) = ((y as i128) * (10_000 + gap_bps as i128), (x as i128) * 10_000);
        let ext = ratio(num, den);
        let opt = optimal_arb_size(&p, &ext);
        let grid = grid_search(&p, num as u128, den as u128, 1);
        match grid.direction {
            ArbDirection::None => prop_assert_eq!(opt.direction, ArbDirection::None),
            d => {
                prop_assert_eq!(opt.direction, d);
                prop_assert!(opt.amount_in.abs_diff(grid.amount_in) <= grid.step);
                prop_assert!(opt.expected_profit > fluxlayer::num::Rational::from_integer(0.into()));
            }
        }
    }

    #[test]
    fn greedy_allocation_equals_enumeration(
        caps in proptest::collection::vec(1u128..6, 0..7),
        remaining in 1u128..15,
        min in proptest::option::of(1u128..5),
    ) {
        let policy = match min {
            None => FillPolicy::AllOrNothing,
            Some(m) if m <= remaining => FillPolicy::Fragmentable { min_fragment: m },
            Some(_) => FillPolicy::Fragmentable { min_fragment: remaining },
        };
        let floor = match policy { FillPolicy::Fragmentable { min_fragment } => min_fragment, _ => 1 };
        let caps: Vec<u128> = caps.into_iter().filter(|&c| c >= floor).collect();
        prop_assert_eq!(allocate(policy, remaining, &caps), brute_force_allocate(policy, remaining, &caps));
    }

    #[test]
    fn larger_books_accept_an_undominated_prefix(
        entries in proptest::collection::vec((0u32..6, 0u64..5, 1u128..40), 7..40),
        remaining in 1u128..300,
        min in proptest::option::of(1u128..20),
    ) {
        let entries: Vec<BookEntry> = entries.into_iter().map(|(price_rank, tick, cap)| BookEntry { price_rank, tick, cap }).collect();
        let policy = match min {
            None => FillPolicy::AllOrNothing,
            Some(m) => FillPolicy::Fragmentable { min_fragment: m.min(remaining) },
        };
        let (_l, mut book, id) = matching_fixture(policy, remaining);
        let got = match_via_book(&mut book, id, &entries);
        let filled: u128 = got.iter().map(|(_, a)| a).sum();
        prop_assert!(filled <= remaining);
        if policy == FillPolicy::AllOrNothing {
            prop_assert!(filled == 0 || filled == remaining);
        }
        let accepted: Vec<usize> = got.iter().map(|(i, _)| *i).collect();
        let key = |i: usize| (entries[i].price_rank, entries[i].tick, i);
        let min_cap = match policy { FillPolicy::Fragmentable { min_fragment } => min_fragment, _ => 1 };
        for (_, a) in &got {
            prop_assert!(*a >= min_cap);
        }
        let left = remaining - filled;
        prop_assert!(left == 0 || left >= min_cap);
        for i in 0..entries.len() {
            if accepted.contains(&i) || entries[i].cap < min_cap {
                continue;
            }
            for &a in &accepted {
                prop_assert!(key(a) < key(i), "offer {} accepted over better offer {}", a, i);
            }
        }
    }

    #[test]
    fn settlement_records_end_exactly_once(
        vals in proptest::collection::vec((0u8..3, 1u128..20, 1u64..6), 1..10),
        timeout in 1u64..12,
        opens in proptest::collection::vec(0u64..10, 1..4),
        online in 0usize..3,
    ) {
        let specs: Vec<VSpec> = vals
            .into_iter()
            .map(|(b, stake, delay)| VSpec {
                behavior: [Behavior::Honest, Behavior::Offline, Behavior::Equivocating][b as usize],
                stake,
                delay,
            })
            .collect();
        let online: Vec<u32> = [1, 2, 3][..online].to_vec();
        let r = run_trace(&specs, timeout, &online, &opens, 30).map_err(TestCaseError::fail)?;
        for (i, (state, _)) in r.outcomes.iter().enumerate() {
            if online.len() >= 2 {
                prop_assert!(state.is_terminal(), "record {} stuck in {:?}", i + 1, state);
            } else {
                // without the signer threshold nothing leaves custody
                prop_assert!(matches!(state, RecordState::Locked | RecordState::Attested));
            }
        }
    }
}
