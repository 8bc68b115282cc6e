mod common;

use std::collections::BTreeSet;

use adlcoach_core::domains::ADL_DOMAINS;
use adlcoach_core::profiles::{
    avg_rating, candidates, load_store, select_style, KbEntry, Profile, ProfileStore,
};
use proptest::prelude::*;

const TABLE: [(&str, u32, &str, f64); 10] = [
    ("3b1", 27, "Female", 3.41),
    ("3b108", 64, "Male", 2.73),
    ("3b77", 71, "Female", 3.23),
    ("3b84", 84, "Male", 2.57),
    ("3b86", 52, "Male", 3.53),
    ("4d18", 86, "Female", 3.58),
    ("4d23", 60, "Male", 3.78),
    ("4d26", 96, "Female", 3.54),
    ("4d29", 42, "Female", 1.74),
    ("4d4", 63, "Female", 3.07),
];

#[test]
fn fixture_store_mirrors_the_profile_table() {
    let store = common::store();
    assert_eq!(store.len(), 10);
    for (id, age, gender, avg) in TABLE {
        let p = store.profile(id).unwrap_or_else(|| panic!("{id} missing"));
        assert_eq!(p.age_years, age);
        assert_eq!(p.gender, gender);
        let got = avg_rating(p).unwrap();
        if id == "4d29" {
            // 1.74 is not a 2-dp mean of at most 18 integer ratings; the
            // fixture uses the nearest reachable value
            assert!((got - avg).abs() <= 0.01 + 1e-9, "{id}: {got}");
        } else {
            assert_eq!(got, avg, "{id}");
        }
        assert!(p.rating("bathing").is_some() && p.rating("dressing").is_some());
    }
}

#[test]
fn no_mean_of_eighteen_or_fewer_integers_rounds_to_1_74() {
    for n in 1u64..=18 {
        for s in n..=4 * n {
            assert_ne!(adlcoach_core::round_half_up_2dp(s, n), 1.74, "{s}/{n}");
        }
    }
}

#[test]
fn avg_rating_examples() {
    let mk = |vals: &[u8]| Profile {
        id: "p".into(),
        age_years: 40,
        gender: "Female".into(),
        ratings: ADL_DOMAINS.iter().zip(vals).map(|(d, &v)| (d.to_string(), v)).collect(),
        notes: Default::default(),
        race: None,
    };
    assert_eq!(avg_rating(&mk(&[2, 3, 4])).unwrap(), 3.0);
    assert_eq!(avg_rating(&mk(&[4; 18])).unwrap(), 4.0);
    let mut v = vec![4u8; 12];
    v.extend([3; 5]);
    v.push(2);
    assert_eq!(avg_rating(&mk(&v)).unwrap(), 3.61);
    assert!(avg_rating(&mk(&[])).is_err());
}

#[test]
fn empty_directory_is_an_empty_store() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_store(dir.path()).unwrap().is_empty());
}

#[test]
fn missing_directory_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_store(&dir.path().join("absent")).unwrap_err();
    assert!(matches!(err, adlcoach_core::profiles::ProfileError::Io { .. }), "{err}");
}

#[test]
fn dangling_kb_reference_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("profiles.json"), "[]").unwrap();
    std::fs::write(
        dir.path().join("kb.jsonl"),
        r#"{"profile_id":"zzz","domain":"bathing","intent":"generic","style":"direct","text":"x"}"#,
    )
    .unwrap();
    let err = load_store(dir.path()).unwrap_err().to_string();
    assert!(err.contains("kb.jsonl") && err.contains("zzz"), "{err}");
}

fn arb_store() -> impl Strategy<Value = ProfileStore> {
    let profile = (0u32..100, prop::collection::btree_map(0usize..18, 1u8..=4, 1..18));
    prop::collection::vec(profile, 1..5).prop_flat_map(|ps| {
        let n = ps.len();
        let entries = prop::collection::vec(
            (0..n, 0usize..4, 0usize..5, "[a-z ]{1,20}"),
            0..30,
        );
        (Just(ps), entries).prop_map(|(ps, entries)| {
            let profiles: Vec<Profile> = ps
                .iter()
                .enumerate()
                .map(|(i, (age, ratings))| Profile {
                    id: format!("p{i}"),
                    age_years: *age,
                    gender: "Male".into(),
                    ratings: ratings.iter().map(|(&d, &r)| (ADL_DOMAINS[d].to_string(), r)).collect(),
                    notes: Default::default(),
                    race: None,
                })
                .collect();
            let intents = ["generic", "challenges", "helper", "preference", "equipment"];
            let kb = entries
                .into_iter()
                .map(|(p, d, i, text)| KbEntry {
                    id: String::new(),
                    profile_id: profiles[p].id.clone(),
                    domain: ADL_DOMAINS[d].to_string(),
                    intent: intents[i].to_string(),
                    style: select_style(&profiles[p]),
                    text: format!("t{text}"),
                })
                .collect();
            ProfileStore::new(profiles, kb).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn avg_rating_stays_in_range(ratings in prop::collection::vec(1u8..=4, 1..18)) {
        let p = Profile {
            id: "p".into(),
            age_years: 50,
            gender: "Male".into(),
            ratings: ADL_DOMAINS.iter().zip(&ratings).map(|(d, &r)| (d.to_string(), r)).collect(),
            notes: Default::default(),
            race: None,
        };
        let a = avg_rating(&p).unwrap();
        prop_assert!((1.0..=4.0).contains(&a));
    }

    #[test]
    fn candidates_match_filter_oracle(
        store in arb_store(),
        pick in 0usize..5,
        d in 0usize..4,
        excluded in prop::collection::btree_set(prop::sample::select(vec!["generic", "challenges", "helper", "preference", "equipment"]), 0..3),
    ) {
        let ids: Vec<String> = store.profiles().map(|p| p.id.clone()).collect();
        let pid = &ids[pick % ids.len()];
        let excluded: BTreeSet<String> = excluded.into_iter().map(String::from).collect();
        let got = candidates(&store, pid, ADL_DOMAINS[d], &excluded).unwrap();
        let oracle: Vec<KbEntry> = store
            .kb()
            .iter()
            .filter(|e| &e.profile_id == pid && e.domain == ADL_DOMAINS[d] && !excluded.contains(&e.intent))
            .cloned()
            .collect();
        prop_assert_eq!(got, oracle);
    }

    #[test]
    fn save_then_load_is_a_fixpoint(store in arb_store()) {
        let dir = tempfile::tempdir().unwrap();
        store.save(dir.path()).unwrap();
        let back = load_store(dir.path()).unwrap();
        prop_assert_eq!(back.kb(), store.kb());
        let a: Vec<_> = back.profiles().cloned().collect();
        let b: Vec<_> = store.profiles().cloned().collect();
        prop_assert_eq!(a, b);
    }
}
