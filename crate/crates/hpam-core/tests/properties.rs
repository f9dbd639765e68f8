//! Randomized property tests for the core invariants.

use std::collections::{BTreeMap, BTreeSet};

use hpam_core::hpoa::{brute_force_hpoa, compute_hpoa, EssentialEvent, EssentialEventSet};
use hpam_core::measure::{preimage, pushforward, sigma_closure, FiniteProbSpace, SpaceSkeleton};
use hpam_core::rational::{format_rational, parse_rational, rat, Rat};
use proptest::prelude::*;

fn outcome_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("o{i}")).collect()
}

/// Nonnegative masses normalized to total 1.
fn masses_strategy(n: usize) -> impl Strategy<Value = Vec<Rat>> {
    proptest::collection::vec(0u8..100, n)
        .prop_filter("mass must be positive somewhere", |raw| {
            raw.iter().any(|r| *r > 0)
        })
        .prop_map(|raw| {
            let total: u32 = raw.iter().map(|r| *r as u32).sum();
            raw.into_iter()
                .map(|r| rat(r as i64, total as i64))
                .collect()
        })
}

fn discrete_space(n: usize) -> impl Strategy<Value = FiniteProbSpace> {
    masses_strategy(n).prop_map(move |masses| {
        FiniteProbSpace::discrete(
            "s",
            outcome_labels(n).into_iter().zip(masses).collect(),
        )
        .unwrap()
    })
}

/// Nonempty subsets of `n` outcomes, encoded as bitmasks.
fn subset_strategy(n: usize) -> impl Strategy<Value = BTreeSet<String>> {
    (1u32..(1 << n)).prop_map(move |mask| {
        (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| format!("o{i}"))
            .collect()
    })
}

fn generators_strategy(n: usize) -> impl Strategy<Value = Vec<BTreeSet<String>>> {
    proptest::collection::vec(subset_strategy(n), 1..4)
}

proptest! {
    #[test]
    fn sigma_closure_is_idempotent(n in 2usize..7, generators in (2usize..7).prop_flat_map(generators_strategy)) {
        let generators: Vec<BTreeSet<String>> = generators
            .into_iter()
            .map(|g| g.into_iter().filter(|o| {
                o[1..].parse::<usize>().unwrap() < n
            }).collect::<BTreeSet<_>>())
            .filter(|g: &BTreeSet<String>| !g.is_empty())
            .collect();
        prop_assume!(!generators.is_empty());
        let outcomes = outcome_labels(n);
        let once = sigma_closure(&outcomes, &generators).unwrap();
        let twice = sigma_closure(&outcomes, &once).unwrap();
        prop_assert_eq!(&once, &twice);
        // the closure is a partition refining every generator
        let union: BTreeSet<&String> = once.iter().flatten().collect();
        prop_assert_eq!(union.len(), n);
        for g in &generators {
            for cell in &once {
                let inside = cell.intersection(g).count();
                prop_assert!(inside == 0 || inside == cell.len());
            }
        }
    }

    #[test]
    fn pushforward_conserves_mass(space in (2usize..8).prop_flat_map(discrete_space), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = space.outcomes().len();
        let k = rng.gen_range(1..=n);
        let mut mapping = BTreeMap::new();
        for (i, o) in space.outcomes().iter().enumerate() {
            let g = if i < k { i } else { rng.gen_range(0..k) };
            mapping.insert(o.clone(), format!("d{g}"));
        }
        let dst = SpaceSkeleton::discrete("d", (0..k).map(|g| format!("d{g}")).collect()).unwrap();
        let pushed = pushforward(&space, &mapping, &dst).unwrap();
        let total: Rat = pushed.masses().iter().sum();
        prop_assert_eq!(total, rat(1, 1));
        for (atom, mass) in pushed.atoms().iter().zip(pushed.masses()) {
            let src_mass = space.measure_of_members(&preimage(&mapping, atom)).unwrap();
            prop_assert_eq!(&src_mass, mass);
        }
    }

    #[test]
    fn quotient_matches_oracle(
        (space, events) in (2usize..7).prop_flat_map(|n| {
            (discrete_space(n), proptest::collection::vec(subset_strategy(n), 1..4))
        })
    ) {
        let essentials = EssentialEventSet::new(
            "s",
            events
                .into_iter()
                .enumerate()
                .map(|(i, members)| EssentialEvent { name: format!("e{i}"), members })
                .collect(),
        );
        let fast = compute_hpoa(&space, &essentials, false).unwrap();
        let slow = brute_force_hpoa(&space, &essentials, false).unwrap();
        let fast_cells: BTreeSet<BTreeSet<String>> = fast.cells().into_iter().collect();
        let slow_cells: BTreeSet<BTreeSet<String>> = slow.cells().into_iter().collect();
        prop_assert_eq!(fast_cells, slow_cells);
        prop_assert_eq!(
            fast.quotient.masses().iter().sum::<Rat>(),
            rat(1, 1)
        );
    }

    #[test]
    fn adding_events_only_refines(
        (space, events) in (2usize..7).prop_flat_map(|n| {
            (discrete_space(n), proptest::collection::vec(subset_strategy(n), 2..4))
        })
    ) {
        let make = |evs: &[BTreeSet<String>]| {
            EssentialEventSet::new(
                "s",
                evs.iter()
                    .enumerate()
                    .map(|(i, m)| EssentialEvent { name: format!("e{i}"), members: m.clone() })
                    .collect(),
            )
        };
        let small = compute_hpoa(&space, &make(&events[..1]), false).unwrap();
        let large = compute_hpoa(&space, &make(&events), false).unwrap();
        // every cell of the larger-event-set quotient sits inside one cell of
        // the smaller one
        for fine in large.cells() {
            prop_assert!(small.cells().iter().any(|coarse| fine.is_subset(coarse)));
        }
    }

    #[test]
    fn rational_text_round_trips(num in 0i64..10_000, den in 1i64..10_000) {
        let r = rat(num, den);
        let text = format_rational(&r);
        prop_assert_eq!(parse_rational(&text).unwrap(), r);
    }
}
